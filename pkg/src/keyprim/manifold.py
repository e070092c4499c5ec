"""
Unit-quaternion geometry and rigid task frames.

Quaternions are stored as ``(w, x, y, z)`` numpy arrays and kept in the
canonical half-sphere ``w >= 0``. Tangent vectors are full rotation vectors
(angle times axis) expressed in the body frame of the base point, so

    Log(base, q) = rotvec(base^-1 * q)
    Exp(base, v) = base * exp(v)

Two-dimensional poses carry the identity orientation and never touch the
quaternion code paths.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

IDENTITY = np.array([1.0, 0.0, 0.0, 0.0])

# below this rotation-vector norm the exp/log series forms are used
_SMALL_ANGLE = 1e-12


def quat_canonical(q) -> np.ndarray:
    """Normalise ``q`` and flip it into the ``w >= 0`` half-sphere."""
    q = np.asarray(q, dtype=float)
    norm = np.linalg.norm(q)
    if not np.isfinite(norm) or norm < 1e-12:
        raise ValueError("quaternion must have finite, non-zero norm")
    q = q / norm
    if q[0] < 0.0:
        q = -q
    return q


def quat_conj(q) -> np.ndarray:
    q = np.asarray(q, dtype=float)
    return np.array([q[0], -q[1], -q[2], -q[3]])


def quat_mul(a, b) -> np.ndarray:
    """Hamilton product ``a * b`` (not canonicalised)."""
    aw, ax, ay, az = a
    bw, bx, by, bz = b
    return np.array([
        aw * bw - ax * bx - ay * by - az * bz,
        aw * bx + ax * bw + ay * bz - az * by,
        aw * by - ax * bz + ay * bw + az * bx,
        aw * bz + ax * by - ay * bx + az * bw,
    ])


def quat_from_axis_angle(axis, angle: float) -> np.ndarray:
    axis = np.asarray(axis, dtype=float)
    axis = axis / np.linalg.norm(axis)
    return quat_canonical(np.concatenate([[np.cos(angle / 2.0)], np.sin(angle / 2.0) * axis]))


def _exp_identity(v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    theta = np.linalg.norm(v)
    if theta < _SMALL_ANGLE:
        # second-order series keeps the result unit-norm to machine precision
        return np.concatenate([[1.0 - theta * theta / 8.0], 0.5 * v])
    return np.concatenate([[np.cos(theta / 2.0)], np.sin(theta / 2.0) / theta * v])


def _log_identity(q) -> np.ndarray:
    q = quat_canonical(q)
    vec = q[1:]
    n = np.linalg.norm(vec)
    if n < _SMALL_ANGLE:
        return 2.0 * vec / q[0]
    return 2.0 * np.arctan2(n, q[0]) / n * vec


def quat_log(base, q) -> np.ndarray:
    """Rotation vector taking ``base`` to ``q``; its norm is at most pi."""
    return _log_identity(quat_mul(quat_conj(quat_canonical(base)), quat_canonical(q)))


def quat_exp(base, v) -> np.ndarray:
    """Move from ``base`` along the rotation vector ``v``."""
    v = np.asarray(v, dtype=float)
    if not np.all(np.isfinite(v)):
        raise ValueError("tangent vector must be finite")
    return quat_canonical(quat_mul(quat_canonical(base), _exp_identity(v)))


def quat_angle(a, b) -> float:
    """Geodesic rotation angle between two orientations, in [0, pi].

    Evaluated with a formula that is bitwise symmetric in its arguments.
    """
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    a = a / np.linalg.norm(a)
    b = b / np.linalg.norm(b)
    dot = abs(a[0] * b[0] + a[1] * b[1] + a[2] * b[2] + a[3] * b[3])
    vec = a[0] * b[1:] - b[0] * a[1:] - np.cross(a[1:], b[1:])
    return float(2.0 * np.arctan2(np.linalg.norm(vec), dot))


def quat_to_matrix(q) -> np.ndarray:
    w, x, y, z = quat_canonical(q)
    return np.array([
        [1 - 2 * (y * y + z * z), 2 * (x * y - w * z), 2 * (x * z + w * y)],
        [2 * (x * y + w * z), 1 - 2 * (x * x + z * z), 2 * (y * z - w * x)],
        [2 * (x * z - w * y), 2 * (y * z + w * x), 1 - 2 * (x * x + y * y)],
    ])


def quat_from_matrix(R) -> np.ndarray:
    """Shepperd's method; ``R`` must be a proper rotation."""
    R = np.asarray(R, dtype=float)
    tr = np.trace(R)
    if tr > 0:
        s = 2.0 * np.sqrt(tr + 1.0)
        q = [0.25 * s, (R[2, 1] - R[1, 2]) / s, (R[0, 2] - R[2, 0]) / s, (R[1, 0] - R[0, 1]) / s]
    elif R[0, 0] > R[1, 1] and R[0, 0] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[0, 0] - R[1, 1] - R[2, 2])
        q = [(R[2, 1] - R[1, 2]) / s, 0.25 * s, (R[0, 1] + R[1, 0]) / s, (R[0, 2] + R[2, 0]) / s]
    elif R[1, 1] > R[2, 2]:
        s = 2.0 * np.sqrt(1.0 + R[1, 1] - R[0, 0] - R[2, 2])
        q = [(R[0, 2] - R[2, 0]) / s, (R[0, 1] + R[1, 0]) / s, 0.25 * s, (R[1, 2] + R[2, 1]) / s]
    else:
        s = 2.0 * np.sqrt(1.0 + R[2, 2] - R[0, 0] - R[1, 1])
        q = [(R[1, 0] - R[0, 1]) / s, (R[0, 2] + R[2, 0]) / s, (R[1, 2] + R[2, 1]) / s, 0.25 * s]
    return quat_canonical(q)


def rotvec_to_matrix(v) -> np.ndarray:
    return quat_to_matrix(_exp_identity(v))


def quat_mean(qs, weights=None, iters: int = 50, tol: float = 1e-14) -> np.ndarray:
    """Weighted Karcher mean on S^3 by fixed-point iteration in the tangent space."""
    qs = [quat_canonical(q) for q in qs]
    if weights is None:
        weights = np.full(len(qs), 1.0 / len(qs))
    weights = np.asarray(weights, dtype=float) / np.sum(weights)
    mean = qs[int(np.argmax(weights))]
    for _ in range(iters):
        step = sum(w * quat_log(mean, q) for w, q in zip(weights, qs))
        mean = quat_exp(mean, step)
        if np.linalg.norm(step) < tol:
            break
    return mean


def transport_matrix(src, dst) -> np.ndarray:
    """Linear map taking body-frame rotation vectors at ``src`` to body-frame
    rotation vectors at ``dst``; it is the rotation ``dst^-1 * src``."""
    return quat_to_matrix(quat_mul(quat_conj(quat_canonical(dst)), quat_canonical(src)))


def parallel_transport(src, dst, M) -> np.ndarray:
    """Carry a tangent-space matrix (e.g. a covariance) from ``src`` to ``dst``.

    The transport is an orthogonal conjugation, so symmetry and the
    eigenvalue spectrum of ``M`` are preserved.
    """
    L = transport_matrix(src, dst)
    out = L @ np.asarray(M, dtype=float) @ L.T
    return 0.5 * (out + out.T)


@dataclass(frozen=True)
class Pose:
    position: np.ndarray
    orientation: np.ndarray = field(default_factory=lambda: IDENTITY.copy())

    def __post_init__(self):
        pos = np.asarray(self.position, dtype=float).reshape(-1)
        if pos.size not in (2, 3):
            raise ValueError(f"pose position must be 2D or 3D, got {pos.size}")
        if not np.all(np.isfinite(pos)):
            raise ValueError("pose position must be finite")
        object.__setattr__(self, "position", pos)
        object.__setattr__(self, "orientation", quat_canonical(self.orientation))

    @property
    def dim(self) -> int:
        return self.position.size


def pose_distance(a: Pose, b: Pose, w_rot: float = 0.1) -> float:
    """Translation distance plus ``w_rot`` times the geodesic rotation angle."""
    if a.dim != b.dim:
        raise ValueError(f"pose dimension mismatch: {a.dim} vs {b.dim}")
    if w_rot < 0:
        raise ValueError("w_rot must be non-negative")
    return float(np.linalg.norm(a.position - b.position) + w_rot * quat_angle(a.orientation, b.orientation))


def polar_rotation(A) -> np.ndarray:
    """Closest proper rotation to ``A`` (orthogonal polar factor)."""
    U, _, Vt = np.linalg.svd(A)
    R = U @ Vt
    if np.linalg.det(R) < 0:
        U[:, -1] *= -1
        R = U @ Vt
    return R


@dataclass(frozen=True)
class TaskFrame:
    """Affine local coordinate system ``x_global = A x_local + b``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.array(self.A, dtype=float)
        b = np.array(self.b, dtype=float).reshape(-1)
        if A.shape != (b.size, b.size):
            raise ValueError(f"frame shapes disagree: A {A.shape}, b {b.shape}")
        if not (np.all(np.isfinite(A)) and np.all(np.isfinite(b))):
            raise ValueError("frame must be finite")
        if abs(np.linalg.det(A)) < 1e-12:
            raise ValueError("frame linear map is singular")
        A.setflags(write=False)
        b.setflags(write=False)
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @classmethod
    def identity(cls, dim: int) -> "TaskFrame":
        return cls(np.eye(dim), np.zeros(dim))

    @classmethod
    def from_pose(cls, pose: Pose) -> "TaskFrame":
        """Rigid frame located at ``pose``."""
        if pose.dim == 2:
            return cls(np.eye(2), pose.position)
        return cls(quat_to_matrix(pose.orientation), pose.position)

    @property
    def dim(self) -> int:
        return self.b.size

    @property
    def rigid(self) -> bool:
        return bool(np.allclose(self.A.T @ self.A, np.eye(self.dim), atol=1e-9))

    @property
    def rotation(self) -> np.ndarray:
        if self.rigid and np.linalg.det(self.A) > 0:
            return self.A
        return polar_rotation(self.A)

    @property
    def quaternion(self) -> np.ndarray:
        if self.dim == 2:
            return IDENTITY.copy()
        return quat_from_matrix(self.rotation)

    def origin_pose(self) -> Pose:
        return Pose(self.b, self.quaternion)


def frame_apply(f: TaskFrame, p: Pose) -> Pose:
    """Map a pose from frame-local to global coordinates."""
    if f.dim != p.dim:
        raise ValueError(f"frame is {f.dim}D but pose is {p.dim}D")
    pos = f.A @ p.position + f.b
    if p.dim == 2:
        return Pose(pos)
    return Pose(pos, quat_mul(f.quaternion, p.orientation))


def frame_invert(f: TaskFrame) -> TaskFrame:
    if f.rigid:
        Ainv = f.A.T
    else:
        Ainv = np.linalg.inv(f.A)
    return TaskFrame(Ainv, -Ainv @ f.b)


def frame_compose(outer: TaskFrame, inner: TaskFrame) -> TaskFrame:
    """Frame equivalent to applying ``inner`` then ``outer``."""
    return TaskFrame(outer.A @ inner.A, outer.A @ inner.b + outer.b)


@dataclass(frozen=True)
class PoseTrajectory:
    """Time-stamped positions ``(N, d)`` and, for ``d == 3``, unit quaternions ``(N, 4)``."""

    times: np.ndarray
    positions: np.ndarray
    orientations: np.ndarray | None = None

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float).reshape(-1)
        pos = np.asarray(self.positions, dtype=float)
        if pos.ndim != 2 or pos.shape[0] != t.size or pos.shape[1] not in (2, 3):
            raise ValueError(f"positions must be (N, 2|3) matching {t.size} times, got {pos.shape}")
        if not (np.all(np.isfinite(t)) and np.all(np.isfinite(pos))):
            raise ValueError("trajectory contains NaN or Inf")
        quats = None
        if pos.shape[1] == 3:
            if self.orientations is None:
                quats = np.tile(IDENTITY, (t.size, 1))
            else:
                quats = np.asarray(self.orientations, dtype=float).reshape(t.size, 4)
                if not np.all(np.isfinite(quats)):
                    raise ValueError("trajectory contains NaN or Inf")
                quats = np.array([quat_canonical(q) for q in quats])
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "positions", pos)
        object.__setattr__(self, "orientations", quats)

    def __len__(self) -> int:
        return self.times.size

    @property
    def dim(self) -> int:
        return self.positions.shape[1]

    def pose(self, i: int) -> Pose:
        if self.orientations is None:
            return Pose(self.positions[i])
        return Pose(self.positions[i], self.orientations[i])

    def normalized(self) -> "PoseTrajectory":
        """Copy with time rescaled so the first and last stamps are exactly 0 and 1."""
        t = self.times
        if t.size < 2 or t[-1] <= t[0]:
            raise ValueError("need at least two increasing timestamps to normalise")
        tn = (t - t[0]) / (t[-1] - t[0])
        tn[0], tn[-1] = 0.0, 1.0
        return PoseTrajectory(tn, self.positions, self.orientations)


def trajectory_apply(f: TaskFrame, traj: PoseTrajectory) -> PoseTrajectory:
    """Map every pose of ``traj`` through ``f``."""
    if f.dim != traj.dim:
        raise ValueError(f"frame is {f.dim}D but trajectory is {traj.dim}D")
    pos = traj.positions @ f.A.T + f.b
    if traj.dim == 2:
        return PoseTrajectory(traj.times, pos)
    qf = f.quaternion
    return PoseTrajectory(traj.times, pos, np.array([quat_mul(qf, q) for q in traj.orientations]))
