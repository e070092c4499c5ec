"""Shape-preservation metrics for generated trajectories."""

from __future__ import annotations

from dataclasses import asdict, dataclass
from typing import Sequence

import numpy as np

from .manifold import PoseTrajectory, TaskFrame

# resampling targets this close (relative to path length) to a vertex snap onto it
_SNAP = 1e-9


def _positions(traj) -> np.ndarray:
    if isinstance(traj, PoseTrajectory):
        return traj.positions
    return np.asarray(traj, dtype=float)


def resample_arclength(points, n: int) -> np.ndarray:
    """``n`` points evenly spaced in arc length along the polyline ``points``."""
    pts = _positions(points)
    if pts.shape[0] < 2:
        raise ValueError("need at least two points to resample")
    seg = np.linalg.norm(np.diff(pts, axis=0), axis=1)
    cum = np.concatenate([[0.0], np.cumsum(seg)])
    total = cum[-1]
    if total == 0.0:
        return np.repeat(pts[:1], n, axis=0)
    targets = np.linspace(0.0, total, n)
    out = np.empty((n, pts.shape[1]))
    for i, s in enumerate(targets):
        j = int(np.searchsorted(cum, s, side="right")) - 1
        j = min(max(j, 0), len(seg) - 1)
        near = j if abs(s - cum[j]) <= abs(cum[j + 1] - s) else j + 1
        if abs(s - cum[near]) <= _SNAP * total:
            out[i] = pts[near]
            continue
        f = (s - cum[j]) / seg[j] if seg[j] > 0 else 0.0
        out[i] = pts[j] + f * (pts[j + 1] - pts[j])
    return out


def _segment_cosines(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    cos = np.empty(a.shape[0])
    for i, (u, v) in enumerate(zip(a, b)):
        nu, nv = np.linalg.norm(u), np.linalg.norm(v)
        if nu == 0.0 or nv == 0.0:
            cos[i] = 1.0 if nu == nv else 0.0
            continue
        dot = float(u @ v)
        cross = np.cross(u, v) if u.size == 3 else u[0] * v[1] - u[1] * v[0]
        if np.all(np.asarray(cross) == 0.0):
            cos[i] = np.sign(dot)  # exactly (anti)parallel
        else:
            cos[i] = np.clip(dot / (nu * nv), -1.0, 1.0)
    return cos


def topological_similarity(gen, ref, n: int | None = None) -> float:
    """Mean cosine between corresponding segments, in percent.

    Both paths are resampled to ``n`` points evenly spaced in arc length
    (default: the reference length) so speed profiles do not matter.
    """
    g, r = _positions(gen), _positions(ref)
    if g.shape[0] < 2 or r.shape[0] < 2:
        raise ValueError("topological similarity needs at least two points per trajectory")
    n = n or r.shape[0]
    g = resample_arclength(g, n)
    r = resample_arclength(r, n)
    cos = _segment_cosines(np.diff(g, axis=0), np.diff(r, axis=0))
    return float(np.sum(cos) / (n - 1) * 100.0)


def smoothness(traj, dt: float | None = None) -> float:
    """Mean magnitude of the discrete second difference divided by ``dt**2``.

    ``dt`` defaults to the (uniform) sample spacing of a :class:`PoseTrajectory`
    and to 1 for a bare array.
    """
    x = _positions(traj)
    if x.shape[0] < 3:
        raise ValueError("smoothness needs at least three points")
    if dt is None:
        if isinstance(traj, PoseTrajectory):
            steps = np.diff(traj.times)
            if np.ptp(steps) > 1e-9 * abs(steps.mean()):
                raise ValueError("smoothness requires uniform time steps")
            dt = float(steps.mean())
        else:
            dt = 1.0
    acc = x[2:] - 2.0 * x[1:-1] + x[:-2]
    return float(np.sum(np.linalg.norm(acc, axis=1)) / (x.shape[0] - 2) / dt ** 2)


def endpoint_error(gen, anchors: Sequence[TaskFrame]) -> float:
    """Largest deviation of the start/end positions from the first/last frame origins."""
    if len(anchors) != 2:
        raise ValueError("endpoint error needs exactly two anchor frames")
    x = _positions(gen)
    return float(max(np.linalg.norm(x[0] - anchors[0].b), np.linalg.norm(x[-1] - anchors[1].b)))


@dataclass(frozen=True)
class MetricReport:
    c_s: float
    kappa_s: float
    endpoint_error: float
    n_points: int

    def to_dict(self) -> dict:
        return asdict(self)


def evaluate(gen: PoseTrajectory, ref, anchors: Sequence[TaskFrame], dt: float | None = None) -> MetricReport:
    return MetricReport(
        c_s=topological_similarity(gen, ref),
        kappa_s=smoothness(gen, dt),
        endpoint_error=endpoint_error(gen, anchors),
        n_points=len(gen),
    )
