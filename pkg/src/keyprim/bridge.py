"""
Keypoint bridge: turns labelled 3D object keypoints into a terminal pose.

Keypoint labels: ``K_i`` (interaction), ``K_p1`` and ``K_p2`` (positional,
``K_p1`` being the opening/mouth centre and ``K_p2`` the base centre) and any
number of ``K_b`` (boundary). An object's axis ``Z`` points from ``K_p2`` to
``K_p1``.

Interaction positions are transferred between instances of the target
(master) object in the x-y plane about ``K_p1``: a master keypoint ``A`` on
one instance and its counterpart ``B`` on another fix a rotation ``theta``
and a scale ``|OB| / |OA|``, which are applied to the interaction point.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

from .manifold import Pose, pose_distance, quat_from_axis_angle, quat_from_matrix, quat_mul, quat_to_matrix

LABELS = ("K_i", "K_p1", "K_p2")
ROLES = ("master", "slave")
_DEGENERATE = 1e-12


@dataclass(frozen=True)
class KeypointSet:
    object_id: str
    role: str
    points: dict  # label -> (3,) array for K_i, K_p1, K_p2
    boundary: tuple = ()

    def __post_init__(self):
        if self.role not in ROLES:
            raise ValueError(f"role must be one of {ROLES}, got {self.role!r}")
        pts = {}
        for label in LABELS:
            if label not in self.points:
                raise ValueError(f"object {self.object_id!r} lacks keypoint {label}")
            pts[label] = _point(self.points[label], label)
        bnd = tuple(_point(b, "K_b") for b in self.boundary)
        if np.array_equal(pts["K_p1"], pts["K_p2"]):
            raise ValueError(f"object {self.object_id!r}: K_p1 and K_p2 coincide")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "boundary", bnd)

    def get(self, label: str) -> np.ndarray:
        return self.points[label]

    @property
    def axis(self) -> np.ndarray:
        z = self.points["K_p1"] - self.points["K_p2"]
        return z / np.linalg.norm(z)

    def constraint_points(self) -> list[np.ndarray]:
        """Every keypoint except ``K_p1``, which serves as the origin."""
        return [self.points["K_i"], self.points["K_p2"], *self.boundary]

    def mapped(self, fn: Callable[[np.ndarray], np.ndarray]) -> "KeypointSet":
        return KeypointSet(self.object_id, self.role, {k: fn(v) for k, v in self.points.items()},
                           tuple(fn(b) for b in self.boundary))

    def to_dict(self) -> dict:
        kp = {k: v.tolist() for k, v in self.points.items()}
        kp["K_b"] = [b.tolist() for b in self.boundary]
        return {"id": self.object_id, "role": self.role, "keypoints": kp}


def _point(p, label: str) -> np.ndarray:
    arr = np.asarray(p, dtype=float).reshape(-1)
    if arr.size != 3:
        raise ValueError(f"keypoint {label} must have 3 coordinates")
    if not np.all(np.isfinite(arr)):
        raise ValueError(f"keypoint {label} has NaN or Inf coordinates")
    return arr


def keypoint_set_from_dict(d: dict) -> KeypointSet:
    kp = dict(d["keypoints"])
    boundary = kp.pop("K_b", [])
    if boundary and np.ndim(boundary) == 1:
        boundary = [boundary]
    return KeypointSet(str(d.get("id", "")), d.get("role", "master"), kp, tuple(boundary))


def object_pose(ks: KeypointSet):
    """Object pose from keypoints: origin K_p2, z toward K_p1, x toward the
    first boundary keypoint (orthogonalised), y = z cross x."""
    origin = ks.get("K_p2")
    axis = ks.get("K_p1") - origin
    n = np.linalg.norm(axis)
    if n == 0.0:
        raise ValueError(f"object {ks.object_id!r}: K_p1 coincides with K_p2")
    z = axis / n
    x = None
    if ks.boundary:
        v = ks.boundary[0] - origin
        v = v - (v @ z) * z
        if np.linalg.norm(v) > 1e-12:
            x = v / np.linalg.norm(v)
    if x is None:
        helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
        x = helper - (helper @ z) * z
        x /= np.linalg.norm(x)
    y = np.cross(z, x)
    return origin, quat_from_matrix(np.column_stack([x, y, z]))


# ---------------------------------------------------------------- camera

@dataclass(frozen=True)
class CameraModel:
    intrinsics: np.ndarray
    rotation: np.ndarray = field(default_factory=lambda: np.eye(3))
    translation: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        K = np.asarray(self.intrinsics, dtype=float)
        R = np.asarray(self.rotation, dtype=float)
        t = np.asarray(self.translation, dtype=float).reshape(3)
        if K.shape != (3, 3) or np.any(np.tril(K, -1) != 0) or K[0, 0] <= 0 or K[1, 1] <= 0:
            raise ValueError("intrinsics must be upper-triangular with positive focal lengths")
        if R.shape != (3, 3) or not np.allclose(R.T @ R, np.eye(3), atol=1e-9):
            raise ValueError("extrinsic rotation must be orthonormal")
        object.__setattr__(self, "intrinsics", K)
        object.__setattr__(self, "rotation", R)
        object.__setattr__(self, "translation", t)

    @classmethod
    def from_dict(cls, d: dict) -> "CameraModel":
        return cls(d["intrinsics"], d.get("rotation", np.eye(3)), d.get("translation", np.zeros(3)))

    def to_dict(self) -> dict:
        return {"intrinsics": self.intrinsics.tolist(), "rotation": self.rotation.tolist(),
                "translation": self.translation.tolist()}


def backproject(cam: CameraModel, u: float, v: float, z: float) -> np.ndarray:
    """World point seen at pixel ``(u, v)`` with depth ``z`` (pinhole model)."""
    if not z > 0:
        raise ValueError(f"depth must be positive, got {z}")
    ray = np.linalg.solve(cam.intrinsics, np.array([u, v, 1.0]))
    return cam.rotation @ (z * ray) + cam.translation


def project(cam: CameraModel, point) -> tuple[float, float, float]:
    """Pixel coordinates and depth of a world point."""
    pc = cam.rotation.T @ (np.asarray(point, dtype=float) - cam.translation)
    uvw = cam.intrinsics @ pc
    return float(uvw[0] / uvw[2]), float(uvw[1] / uvw[2]), float(pc[2])


# ---------------------------------------------------------------- normalisation

def _signed_angle(a, b) -> float:
    return float(np.arctan2(a[0] * b[1] - a[1] * b[0], a[0] * b[0] + a[1] * b[1]))


def normalize_interaction_keypoint(O, A, B, C) -> np.ndarray:
    """Corrected interaction point ``D`` for the relation A -> B about ``O``.

    In the x-y plane ``OD`` is ``OC`` rotated by the signed angle from ``OA``
    to ``OB`` and scaled by ``|OB| / |OA|``; ``D`` keeps the height of ``C``.
    """
    O, A, B, C = (np.asarray(p, dtype=float) for p in (O, A, B, C))
    oa, ob, oc = (A - O)[:2], (B - O)[:2], (C - O)[:2]
    na, nc = np.linalg.norm(oa), np.linalg.norm(oc)
    if na <= _DEGENERATE:
        raise ValueError("OA has no extent in the x-y plane")
    if nc <= _DEGENERATE:
        raise ValueError("OC has no extent in the x-y plane")
    theta = _signed_angle(oa, ob)
    ratio = np.linalg.norm(ob) / na
    c, s = np.cos(theta), np.sin(theta)
    od = ratio * np.array([c * oc[0] - s * oc[1], s * oc[0] + c * oc[1]])
    return np.array([O[0] + od[0], O[1] + od[1], C[2]])


def transfer_point(src: KeypointSet, dst: KeypointSet, point) -> np.ndarray:
    """Carry ``point`` (world coordinates near ``src``) onto master instance ``dst``.

    Each constraint keypoint pair with x-y extent gives one corrected
    position about ``K_p1``; the corrections are averaged. Heights are kept
    relative to ``K_p1``.
    """
    point = np.asarray(point, dtype=float)
    o_src, o_dst = src.get("K_p1"), dst.get("K_p1")
    rel = point - o_src
    zero = np.zeros(3)
    out = []
    for a, b in zip(src.constraint_points(), dst.constraint_points()):
        ra, rb = a - o_src, b - o_dst
        if np.linalg.norm(ra[:2]) <= _DEGENERATE or np.linalg.norm(rb[:2]) <= _DEGENERATE:
            continue
        if np.linalg.norm(rel[:2]) <= _DEGENERATE:
            out.append(rel.copy())
            continue
        out.append(normalize_interaction_keypoint(zero, ra, rb, rel))
    d = rel if not out else np.mean(out, axis=0)
    return o_dst + d


# ---------------------------------------------------------------- interaction statistics

@dataclass(frozen=True)
class InteractionStats:
    pos_mean: np.ndarray  # interaction point relative to the reference master's K_p1
    pos_var: np.ndarray
    angle_mean: float
    angle_var: float
    reference_master: KeypointSet

    def to_dict(self) -> dict:
        return {"pos_mean": self.pos_mean.tolist(), "pos_var": self.pos_var.tolist(),
                "angle_mean": self.angle_mean, "angle_var": self.angle_var,
                "reference_master": self.reference_master.to_dict()}

    @classmethod
    def from_dict(cls, d: dict) -> "InteractionStats":
        return cls(np.asarray(d["pos_mean"], dtype=float), np.asarray(d["pos_var"], dtype=float),
                   float(d["angle_mean"]), float(d["angle_var"]),
                   keypoint_set_from_dict(d["reference_master"]))


def axis_angle_between(a, b) -> float:
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    return float(np.arctan2(np.linalg.norm(np.cross(a, b)), a @ b))


def _sort_key(pair) -> tuple:
    master, slave = pair
    vals = []
    for ks in (master, slave):
        for label in LABELS:
            vals.extend(ks.get(label).tolist())
        for b in ks.boundary:
            vals.extend(b.tolist())
    return tuple(vals)


def mean_master(masters: Sequence[KeypointSet]) -> KeypointSet:
    points = {label: np.mean([m.get(label) for m in masters], axis=0) for label in LABELS}
    nb = min(len(m.boundary) for m in masters)
    boundary = tuple(np.mean([m.boundary[i] for m in masters], axis=0) for i in range(nb))
    return KeypointSet("reference", "master", points, boundary)


def learn_interaction_stats(final_frames: Sequence[tuple[KeypointSet, KeypointSet]],
                            reference_master: KeypointSet | None = None) -> InteractionStats:
    """Statistics of the final interaction state over demonstrations.

    Each demo's slave interaction keypoint is transferred onto the reference
    master (default: the keypoint-wise mean of the demo masters); its offset
    from the reference ``K_p1`` and the angle between the master and slave
    axes are then averaged.
    """
    if len(final_frames) < 2:
        raise ValueError("interaction statistics need at least two final frames")
    frames = sorted(final_frames, key=_sort_key)
    ref = reference_master or mean_master([m for m, _ in frames])
    rel, angles = [], []
    for master, slave in frames:
        corrected = transfer_point(master, ref, slave.get("K_i"))
        rel.append(corrected - ref.get("K_p1"))
        angles.append(axis_angle_between(master.axis, slave.axis))
    rel = np.array(rel)
    angles = np.array(angles)
    return InteractionStats(rel.mean(axis=0), rel.var(axis=0, ddof=1),
                            float(angles.mean()), float(angles.var(ddof=1)), ref)


# ---------------------------------------------------------------- terminal pose

@dataclass(frozen=True)
class TerminalPose:
    pose: Pose
    interaction_point: np.ndarray
    z_axis: np.ndarray
    candidate_index: int
    n_candidates: int

    def to_dict(self) -> dict:
        return {"position": self.pose.position.tolist(), "orientation": self.pose.orientation.tolist(),
                "interaction_point": self.interaction_point.tolist(), "z_axis": self.z_axis.tolist(),
                "candidate_index": self.candidate_index, "n_candidates": self.n_candidates}


def perpendicular_basis(z) -> tuple[np.ndarray, np.ndarray]:
    z = np.asarray(z, dtype=float)
    helper = np.array([1.0, 0.0, 0.0]) if abs(z[0]) < 0.9 else np.array([0.0, 1.0, 0.0])
    e1 = helper - (helper @ z) * z
    e1 /= np.linalg.norm(e1)
    return e1, np.cross(z, e1)


def cone_axes(z_master, alpha: float, angle_step: float) -> np.ndarray:
    """Unit axes at angle ``alpha`` from ``z_master``, azimuth every ``angle_step``."""
    if not angle_step > 0:
        raise ValueError("angle_step must be positive")
    n = int(np.ceil(2.0 * np.pi / angle_step - 1e-9))
    e1, e2 = perpendicular_basis(z_master)
    phi = angle_step * np.arange(n)
    ring = np.outer(np.cos(phi), e1) + np.outer(np.sin(phi), e2)
    return np.cos(alpha) * np.asarray(z_master)[None, :] + np.sin(alpha) * ring


def align_z(q_start, z_target) -> np.ndarray:
    """Orientation obtained by the smallest rotation carrying the z-axis of
    ``q_start`` onto ``z_target``."""
    z0 = quat_to_matrix(q_start)[:, 2]
    z1 = np.asarray(z_target, dtype=float) / np.linalg.norm(z_target)
    axis = np.cross(z0, z1)
    s, c = np.linalg.norm(axis), float(z0 @ z1)
    if s <= 1e-15:
        if c > 0:
            return np.asarray(q_start, dtype=float)
        axis = perpendicular_basis(z0)[0]
    return quat_mul(quat_from_axis_angle(axis, np.arctan2(s, c)), q_start)


def endpose_estimate(master: KeypointSet, stats: InteractionStats, start: Pose, seed: int = 0,
                     n_pos_samples: int = 1, angle_step: float = np.deg2rad(2.0), w_rot: float = 0.1,
                     slave: KeypointSet | None = None) -> TerminalPose:
    """Terminal pose of the manipulated object against a new master instance.

    Interaction positions are sampled from the learnt statistics, carried onto
    ``master``, and the sample nearest the carried mean is kept. Candidate
    object axes on the cone at the mean interaction angle around the master
    axis are enumerated every ``angle_step``; the candidate orientation
    nearest ``start`` wins. If ``slave`` keypoints are given the returned pose
    is the object frame (origin ``K_p2``) whose interaction keypoint lands on
    the target; otherwise the pose sits on the interaction point itself.
    """
    if n_pos_samples < 1:
        raise ValueError("n_pos_samples must be >= 1")
    if start.dim != 3:
        raise ValueError("start pose must be 3D")
    rng = np.random.default_rng(seed)
    ref = stats.reference_master
    origin = ref.get("K_p1")
    draws = stats.pos_mean + rng.standard_normal((n_pos_samples, 3)) * np.sqrt(np.maximum(stats.pos_var, 0.0))
    target_mean = transfer_point(ref, master, origin + stats.pos_mean)
    moved = [transfer_point(ref, master, origin + d) for d in draws]
    u_target = moved[int(np.argmin([np.linalg.norm(m - target_mean) for m in moved]))]

    axes = cone_axes(master.axis, stats.angle_mean, angle_step)
    cands = [align_z(start.orientation, z) for z in axes]
    dists = [pose_distance(Pose(u_target, q), start, w_rot) for q in cands]
    best = int(np.argmin(dists))
    q = cands[best]

    position = u_target
    if slave is not None:
        o, qs = object_pose(slave)
        offset = quat_to_matrix(qs).T @ (slave.get("K_i") - o)
        position = u_target - quat_to_matrix(q) @ offset
    return TerminalPose(Pose(position, q), u_target, axes[best], best, len(axes))


# ---------------------------------------------------------------- scenario files

@dataclass
class Scenario:
    master: KeypointSet
    stats: InteractionStats
    start: Pose
    slave: KeypointSet | None = None
    camera: CameraModel | None = None
    options: dict = field(default_factory=dict)


def _pose_from_dict(d: dict) -> Pose:
    return Pose(d["position"], d.get("orientation", [1.0, 0.0, 0.0, 0.0]))


def scenario_from_dict(doc: dict) -> Scenario:
    """Parse a scenario document.

    Keys: ``master`` (keypoint object), optional ``slave``, either ``stats``
    or ``final_frames`` (list of ``{"master": ..., "slave": ...}``),
    ``start_pose`` (``position`` and ``orientation`` as ``[w, x, y, z]``),
    optional ``camera`` (keypoints then given as ``[u, v, depth]``) and
    optional ``options`` (``seed``, ``n_pos_samples``, ``angle_step_deg``,
    ``w_rot``).
    """
    cam = CameraModel.from_dict(doc["camera"]) if doc.get("camera") else None

    def obj(d):
        ks = keypoint_set_from_dict(d)
        if cam is not None:
            ks = ks.mapped(lambda p: backproject(cam, p[0], p[1], p[2]))
        return ks

    for key in ("master", "start_pose"):
        if key not in doc:
            raise ValueError(f"scenario lacks field {key!r}")
    master = obj(doc["master"])
    slave = obj(doc["slave"]) if doc.get("slave") else None
    if "stats" in doc:
        stats = InteractionStats.from_dict(doc["stats"])
    elif "final_frames" in doc:
        stats = learn_interaction_stats([(obj(f["master"]), obj(f["slave"])) for f in doc["final_frames"]])
    else:
        raise ValueError("scenario needs either 'stats' or 'final_frames'")
    return Scenario(master, stats, _pose_from_dict(doc["start_pose"]), slave, cam, dict(doc.get("options", {})))


def run_scenario(sc: Scenario, seed: int | None = None, **overrides) -> TerminalPose:
    opts = {"seed": 0, "n_pos_samples": 1, "angle_step_deg": 2.0, "w_rot": 0.1}
    opts.update(sc.options)
    opts.update(overrides)
    if seed is not None:
        opts["seed"] = seed
    return endpose_estimate(sc.master, sc.stats, sc.start, seed=int(opts["seed"]),
                            n_pos_samples=int(opts["n_pos_samples"]),
                            angle_step=np.deg2rad(float(opts["angle_step_deg"])),
                            w_rot=float(opts["w_rot"]), slave=sc.slave)
