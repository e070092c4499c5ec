"""
Demonstration ingestion: handwriting CSV/JSON, keypoint streams, bundles.

Demo CSV columns are ``demo_id,t,x,y`` with optional ``z`` and, after it,
optional ``qw,qx,qy,qz``; one row per sample, demos in order of first
appearance. Keypoint streams are JSON documents::

    {"camera": {...optional...},
     "frames": [{"t": 0.0,
                 "objects": [{"id": "mug_a", "role": "slave",
                              "keypoints": {"K_i": [x, y, z], "K_p1": [...],
                                            "K_p2": [...], "K_b": [[...], ...]}}]}]}

With a ``camera`` block the keypoint triples are ``[u, v, depth]`` pixels
and are back-projected on load.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .bridge import CameraModel, KeypointSet, backproject, keypoint_set_from_dict, object_pose
from .manifold import (
    PoseTrajectory,
    TaskFrame,
    quat_exp,
    quat_from_axis_angle,
    quat_log,
    quat_mul,
    quat_to_matrix,
)

FORMAT_VERSION = 1


class DataFormatError(ValueError):
    """Malformed input file; the message names the offending line or field."""


@dataclass(frozen=True)
class KeypointFrame:
    t: float
    slave: KeypointSet
    master: KeypointSet | None = None


@dataclass
class DemoBundle:
    demos: list[PoseTrajectory]
    frames: list[list[TaskFrame]]
    reference_frames: list[TaskFrame]
    final_frames: list[tuple[KeypointSet, KeypointSet]] = field(default_factory=list)
    meta: dict = field(default_factory=dict)

    @property
    def dim(self) -> int:
        return self.demos[0].dim


# ---------------------------------------------------------------- frames

def endpoint_frames(traj: PoseTrajectory) -> list[TaskFrame]:
    """Start and end frames attached to a trajectory's first and last poses."""
    return [TaskFrame.from_pose(traj.pose(0)), TaskFrame.from_pose(traj.pose(len(traj) - 1))]


def mean_endpoint_frames(demos: Sequence[PoseTrajectory]) -> list[TaskFrame]:
    """Identity-rotation frames at the mean start and mean end positions."""
    d = demos[0].dim
    start = np.mean([x.positions[0] for x in demos], axis=0)
    end = np.mean([x.positions[-1] for x in demos], axis=0)
    return [TaskFrame(np.eye(d), start), TaskFrame(np.eye(d), end)]


def make_bundle(demos: Sequence[PoseTrajectory], meta: dict | None = None) -> DemoBundle:
    demos = [d.normalized() for d in demos]
    if len({d.dim for d in demos}) != 1:
        raise DataFormatError("all demonstrations must share one spatial dimension")
    frames = [endpoint_frames(d) for d in demos]
    if demos[0].dim == 2:
        ref = mean_endpoint_frames(demos)
    else:
        ref = endpoint_frames(demos[0])
    return DemoBundle(demos, frames, ref, meta=dict(meta or {}))


def workspace_diameter(demos: Sequence[PoseTrajectory]) -> float:
    pts = np.vstack([d.positions for d in demos])
    return float(np.linalg.norm(pts.max(axis=0) - pts.min(axis=0)))


def perturb_task(frames: Sequence[TaskFrame], seed: int, translation_scale: float,
                 rotation_scale: float, diameter: float | None = None) -> list[TaskFrame]:
    """Seeded rigid perturbation of every frame.

    Each origin moves by a vector drawn uniformly from the ball of radius
    ``translation_scale * diameter``; each frame rotates about its origin by
    an angle drawn uniformly from ``[-rotation_scale, rotation_scale]``
    (about z in 2D, about a random axis in 3D).
    """
    if translation_scale < 0 or rotation_scale < 0:
        raise ValueError("perturbation scales must be non-negative")
    if diameter is None:
        origins = np.array([f.b for f in frames])
        diameter = float(np.max(np.linalg.norm(origins[:, None] - origins[None], axis=2))) if len(frames) > 1 else 1.0
    rng = np.random.default_rng(seed)
    out = []
    for f in frames:
        d = f.dim
        direction = rng.standard_normal(d)
        direction /= np.linalg.norm(direction)
        radius = translation_scale * diameter * rng.random() ** (1.0 / d)
        angle = rotation_scale * rng.uniform(-1.0, 1.0)
        if d == 2:
            c, s = np.cos(angle), np.sin(angle)
            R = np.array([[c, -s], [s, c]])
        else:
            axis = rng.standard_normal(3)
            R = quat_to_matrix(quat_from_axis_angle(axis, angle))
        if translation_scale == 0 and rotation_scale == 0:
            out.append(f)
            continue
        out.append(TaskFrame(R @ f.A, f.b + radius * direction))
    return out


# ---------------------------------------------------------------- handwriting IO

def _check_finite(values, where: str):
    if not np.all(np.isfinite(values)):
        raise DataFormatError(f"{where}: NaN or Inf coordinate")


def read_handwriting_csv(text: str) -> list[PoseTrajectory]:
    reader = csv.reader(io.StringIO(text))
    header = next(reader, None)
    if header is None:
        raise DataFormatError("line 1: empty file")
    header = [h.strip() for h in header]
    required = ["demo_id", "t", "x", "y"]
    if header[:4] != required:
        raise DataFormatError(f"line 1: expected header {','.join(required)}, got {','.join(header)}")
    extra = header[4:]
    if extra not in ([], ["z"], ["z", "qw", "qx", "qy", "qz"]):
        raise DataFormatError(f"line 1: unexpected columns {','.join(extra)}")
    rows: dict[str, list[list[float]]] = {}
    for lineno, row in enumerate(reader, start=2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(header):
            raise DataFormatError(f"line {lineno}: expected {len(header)} fields, got {len(row)}")
        try:
            values = [float(v) for v in row[1:]]
        except ValueError as exc:
            raise DataFormatError(f"line {lineno}: {exc}") from None
        _check_finite(values, f"line {lineno}")
        rows.setdefault(row[0].strip(), []).append(values)
    if not rows:
        raise DataFormatError("no samples found")
    demos = []
    for demo_id, vals in rows.items():
        arr = np.array(vals)
        if arr.shape[0] < 2:
            raise DataFormatError(f"demo {demo_id!r}: needs at least two samples")
        if np.any(np.diff(arr[:, 0]) <= 0):
            raise DataFormatError(f"demo {demo_id!r}: field t must be strictly increasing")
        pos = arr[:, 1:3 + min(len(extra), 1)]
        quats = arr[:, 4:8] if len(extra) == 5 else None
        try:
            demos.append(PoseTrajectory(arr[:, 0], pos, quats))
        except ValueError as exc:
            raise DataFormatError(f"demo {demo_id!r}: {exc}") from None
    return demos


def write_handwriting_csv(demos: Sequence[PoseTrajectory], ids: Sequence[str] | None = None) -> str:
    ids = ids or [str(i) for i in range(len(demos))]
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    dim = demos[0].dim
    w.writerow(["demo_id", "t", "x", "y"] + (["z", "qw", "qx", "qy", "qz"] if dim == 3 else []))
    for demo_id, d in zip(ids, demos):
        rows = d.positions if dim == 2 else np.hstack([d.positions, d.orientations])
        for t, r in zip(d.times, rows):
            w.writerow([demo_id, repr(float(t))] + [repr(float(v)) for v in r])
    return buf.getvalue()


def load_handwriting(path) -> DemoBundle:
    """Load handwriting demos from CSV (``demo_id,t,x,y``) or a bundle JSON."""
    path = Path(path)
    text = path.read_text()
    if path.suffix.lower() == ".json":
        return bundle_from_dict(json.loads(text))
    demos = read_handwriting_csv(text)
    return make_bundle(demos, {"source": path.name})


def save_handwriting(path, bundle_or_demos) -> None:
    demos = bundle_or_demos.demos if isinstance(bundle_or_demos, DemoBundle) else bundle_or_demos
    Path(path).write_text(write_handwriting_csv(demos))


def bundle_to_dict(bundle: DemoBundle) -> dict:
    return {
        "kind": "demo_bundle",
        "format_version": FORMAT_VERSION,
        "demos": [
            {
                "times": d.times.tolist(),
                "positions": d.positions.tolist(),
                "orientations": None if d.orientations is None else d.orientations.tolist(),
            }
            for d in bundle.demos
        ],
        "frames": [[{"A": f.A.tolist(), "b": f.b.tolist()} for f in fs] for fs in bundle.frames],
        "reference_frames": [{"A": f.A.tolist(), "b": f.b.tolist()} for f in bundle.reference_frames],
        "meta": bundle.meta,
    }


def bundle_from_dict(d: dict) -> DemoBundle:
    if d.get("kind") != "demo_bundle":
        raise DataFormatError(f"field kind: expected 'demo_bundle', got {d.get('kind')!r}")
    if d.get("format_version") != FORMAT_VERSION:
        raise DataFormatError(f"field format_version: unsupported {d.get('format_version')!r}")
    demos = []
    for i, dd in enumerate(d["demos"]):
        try:
            demos.append(PoseTrajectory(dd["times"], dd["positions"], dd.get("orientations")))
        except (KeyError, ValueError) as exc:
            raise DataFormatError(f"demos[{i}]: {exc}") from None
    frames = [[TaskFrame(f["A"], f["b"]) for f in fs] for fs in d["frames"]]
    ref = [TaskFrame(f["A"], f["b"]) for f in d["reference_frames"]]
    return DemoBundle(demos, frames, ref, meta=d.get("meta", {}))


# ---------------------------------------------------------------- keypoint streams

def extract_demo_trajectory(seq: Sequence[KeypointFrame]):
    """Pose trajectory of the manipulated (slave) object plus the final frame's
    ``(master, slave)`` keypoint sets."""
    if len(seq) < 2:
        raise DataFormatError("keypoint sequence needs at least two frames")
    times = np.array([f.t for f in seq], dtype=float)
    if np.any(np.diff(times) <= 0):
        raise DataFormatError("keypoint frame timestamps must be strictly increasing")
    positions, quats = [], []
    for f in seq:
        o, q = object_pose(f.slave)
        positions.append(o)
        quats.append(q)
    traj = PoseTrajectory(times, np.array(positions), np.array(quats))
    last = seq[-1]
    return traj, (last.master, last.slave)


def parse_keypoint_sequence(doc: dict) -> list[KeypointFrame]:
    cam = CameraModel.from_dict(doc["camera"]) if doc.get("camera") else None
    frames = []
    for i, fd in enumerate(doc.get("frames", [])):
        where = f"frames[{i}]"
        if "t" not in fd:
            raise DataFormatError(f"{where}: missing field 't'")
        slave = master = None
        for j, od in enumerate(fd.get("objects", [])):
            try:
                ks = keypoint_set_from_dict(od)
            except (KeyError, ValueError) as exc:
                raise DataFormatError(f"{where}.objects[{j}]: {exc}") from None
            if cam is not None:
                ks = ks.mapped(lambda p: backproject(cam, p[0], p[1], p[2]))
            if ks.role == "slave":
                slave = ks
            else:
                master = ks
        if slave is None:
            raise DataFormatError(f"{where}: no slave object")
        frames.append(KeypointFrame(float(fd["t"]), slave, master))
    return frames


def load_keypoint_sequence(path) -> list[KeypointFrame]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise DataFormatError(f"line {exc.lineno}: {exc.msg}") from None
    return parse_keypoint_sequence(doc)


# ---------------------------------------------------------------- synthetic fixtures

def _min_jerk(n: int) -> np.ndarray:
    s = np.linspace(0.0, 1.0, n)
    return 10 * s ** 3 - 15 * s ** 4 + 6 * s ** 5


def _pen_timing(n: int) -> np.ndarray:
    # pen strokes start and stop gently but cruise at a fairly even speed
    return 0.5 * (_min_jerk(n) + np.linspace(0.0, 1.0, n))


def g_shape(n: int = 200, scale: float = 1.0, rotation: float = 0.0, wobble=(0.0, 0.0),
            offset=(0.0, 0.0)) -> np.ndarray:
    """Points of a handwritten-style letter G.

    The stroke starts at the upper right, runs counter-clockwise round the
    bowl, rises on the right side and finishes with the inward bar.
    """
    u = _pen_timing(n)
    arc_end = 2.0 * np.pi + 0.15
    theta0 = np.deg2rad(50.0)
    bar_len = 0.6
    arc_len = arc_end - theta0
    total = arc_len + bar_len
    s = u * total
    pts = np.empty((n, 2))
    on_arc = s <= arc_len
    th = theta0 + s[on_arc]
    r = 1.0 + wobble[0] * np.sin(2.0 * th) + wobble[1] * np.cos(3.0 * th)
    pts[on_arc] = np.column_stack([r * np.cos(th), 1.1 * r * np.sin(th)])
    corner = np.array([np.cos(arc_end), 1.1 * np.sin(arc_end)]) * (
        1.0 + wobble[0] * np.sin(2.0 * arc_end) + wobble[1] * np.cos(3.0 * arc_end))
    pts[~on_arc] = corner + np.outer(s[~on_arc] - arc_len, [-1.0, 0.0])
    c, sn = np.cos(rotation), np.sin(rotation)
    R = np.array([[c, -sn], [sn, c]])
    return scale * pts @ R.T + np.asarray(offset)


def synthetic_gshape_demos(n_demos: int = 6, n_points: int = 200, seed: int = 7,
                           drift: float = 0.5) -> list[PoseTrajectory]:
    """Six G-shaped demonstrations (by default) in the style of a handwriting set.

    Besides small random distortions of the letter, each demo's end
    point drifts by up to ``drift`` per axis relative to its start, so the
    start/end relation varies across demonstrations.
    """
    rng = np.random.default_rng(seed)
    demos = []
    ramp = _min_jerk(n_points)
    for _ in range(n_demos):
        pts = g_shape(
            n_points,
            scale=rng.uniform(0.95, 1.05),
            rotation=rng.uniform(-0.04, 0.04),
            wobble=rng.uniform(-0.03, 0.03, size=2),
            offset=rng.uniform(-0.3, 0.3, size=2),
        )
        pts = pts + np.outer(ramp, rng.uniform(-drift, drift, size=2))
        demos.append(PoseTrajectory(np.linspace(0.0, 1.0, n_points), pts))
    return demos


def synthetic_pour_demo(start, start_q, end, end_q, n: int = 120, lift: float = 0.12) -> PoseTrajectory:
    """Lift-carry-tilt motion between two poses with a smooth vertical arc."""
    s = _min_jerk(n)
    start, end = np.asarray(start, dtype=float), np.asarray(end, dtype=float)
    pos = start + np.outer(s, end - start)
    pos[:, 2] += lift * np.sin(np.pi * s)
    dv = quat_log(start_q, end_q)
    tilt = np.clip((s - 0.4) / 0.6, 0.0, 1.0)
    tilt = tilt * tilt * (3 - 2 * tilt)
    quats = np.array([quat_exp(start_q, w * dv) for w in tilt])
    return PoseTrajectory(np.linspace(0.0, 1.0, n), pos, quats)


def mug_keypoints(object_id: str, role: str, origin, orientation, height: float = 0.10,
                  radius: float = 0.04) -> KeypointSet:
    """Keypoints of a cylindrical mug with bottom centre ``origin``.

    ``K_p2`` is the bottom centre, ``K_p1`` the top centre, ``K_i`` the rim
    point along the mug's local x-axis; the boundary holds the base edge
    along x followed by rim points at 90, 180 and 270 degrees.
    """
    R = quat_to_matrix(orientation)
    o = np.asarray(origin, dtype=float)

    def at(local):
        return o + R @ np.asarray(local, dtype=float)

    rim = [at([radius * np.cos(a), radius * np.sin(a), height]) for a in np.deg2rad([90.0, 180.0, 270.0])]
    return KeypointSet(
        object_id, role,
        {"K_p2": o.copy(), "K_p1": at([0.0, 0.0, height]), "K_i": at([radius, 0.0, height])},
        tuple([at([radius, 0.0, 0.0])] + rim),
    )


# pour geometry: slave spout just above and beside the master rim, slave tilted past horizontal
_POUR_OFFSET = np.array([-0.03, 0.0, 0.045])
_POUR_TILT = np.deg2rad(115.0)


def pour_final_state(master: KeypointSet, rng=None, jitter: float = 0.0, tilt_jitter: float = 0.0):
    """Slave mug keypoints in a pouring state over ``master``, plus the slave pose."""
    rng = rng or np.random.default_rng(0)
    _, qm = object_pose(master)
    Rm = quat_to_matrix(qm)
    tilt = _POUR_TILT + tilt_jitter * rng.uniform(-1.0, 1.0)
    # tilt about the master's y-axis so the slave's spout (local +x) points down into the master
    qs = quat_mul(quat_from_axis_angle(Rm[:, 1], tilt), qm)
    spout_target = master.get("K_p1") + Rm @ (_POUR_OFFSET + jitter * rng.uniform(-1.0, 1.0, size=3))
    probe = mug_keypoints("slave", "slave", np.zeros(3), qs)
    origin = spout_target - probe.get("K_i")
    slave = mug_keypoints("slave", "slave", origin, qs)
    return slave, (origin, qs)


def synthetic_pour_dataset(n_demos: int = 6, seed: int = 3):
    """Pouring demonstrations with varied cup placements.

    Returns ``(demos, final_frames)``: slave pose trajectories from a grasp
    pose on the table to the pouring pose, and the ``(master, slave)``
    keypoint sets of each demo's last frame.
    """
    rng = np.random.default_rng(seed)
    demos, finals = [], []
    for i in range(n_demos):
        m_pos = np.array([0.55, 0.15, 0.0]) + rng.uniform(-0.05, 0.05, size=3) * [1, 1, 0]
        m_q = quat_from_axis_angle([0.0, 0.0, 1.0], rng.uniform(-0.3, 0.3))
        master = mug_keypoints(f"master_{i}", "master", m_pos, m_q)
        slave, (end, end_q) = pour_final_state(master, rng, jitter=0.004, tilt_jitter=np.deg2rad(4.0))
        start = np.array([0.40, -0.20, 0.0]) + rng.uniform(-0.04, 0.04, size=3) * [1, 1, 0]
        start_q = quat_from_axis_angle([0.0, 0.0, 1.0], rng.uniform(-0.3, 0.3))
        demos.append(synthetic_pour_demo(start, start_q, end, end_q))
        finals.append((master, slave))
    return demos, finals
