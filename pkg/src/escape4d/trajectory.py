"""Trajectory geometry: exit alignment, occupancy grids, HII, Fréchet distance,
path metrics, distance-to-exit curves, survival curves and audio segmentation.

A trajectory is one point per recorded step (post-action position) preceded by
the start position.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.integrate import trapezoid

from . import _kernels as K
from .core import Side, Vec2
from .engine import TrajectoryLog

EXIT_THRESHOLD = 1.5
CURVE_POINTS = 101
DEFAULT_BINS = 16

_ROTATION = {"N": 0.0, "E": 90.0, "S": 180.0, "W": -90.0}


def _as_points(points) -> np.ndarray:
    if isinstance(points, AlignedTrajectory):
        return points.points
    arr = np.asarray([(p.x, p.y) if isinstance(p, Vec2) else p for p in points], dtype=float)
    return arr.reshape(-1, 2)


def _as_xy(p) -> np.ndarray:
    return np.array([p.x, p.y]) if isinstance(p, Vec2) else np.asarray(p, dtype=float)


# ---------------------------------------------------------------------------
# extraction from logs


def log_points(log: TrajectoryLog) -> np.ndarray:
    """Start position followed by each recorded post-action position, shape (n+1, 2)."""
    pts = [(log.start_pose.position.x, log.start_pose.position.y)]
    pts.extend((r.pose_after.position.x, r.pose_after.position.y) for r in log.records)
    return np.asarray(pts, dtype=float)


def log_timestamps(log: TrajectoryLog) -> np.ndarray:
    return np.asarray([0.0] + [r.clock_after for r in log.records])


def log_audio_flags(log: TrajectoryLog) -> np.ndarray:
    return np.asarray([False] + [r.audio_active for r in log.records], dtype=bool)


# ---------------------------------------------------------------------------
# alignment


@dataclass(frozen=True)
class AlignedTrajectory:
    """Points in a frame where the exit lies on the top edge (+y).

    ``extent`` is the rotated room size; points lie in ``[0, w] x [0, d]``.
    """

    points: np.ndarray
    timestamps: np.ndarray
    audio_active: np.ndarray
    extent: tuple[float, float]

    def __post_init__(self):
        if not (len(self.points) == len(self.timestamps) == len(self.audio_active)):
            raise ValueError("points, timestamps and audio flags must have equal length")

    def __len__(self) -> int:
        return len(self.points)


def rotate_about_center(points, side: str | Side, extent: tuple[float, float]) -> tuple[np.ndarray, tuple[float, float]]:
    """Rotate counterclockwise about the room center so ``side`` maps to north."""
    side = Side(side).value if not isinstance(side, Side) else side.value
    theta = math.radians(_ROTATION[side])
    w, d = extent
    pts = _as_points(points) - np.array([w / 2.0, d / 2.0])
    c, s = math.cos(theta), math.sin(theta)
    # exact quarter turns avoid 1e-16 noise
    c, s = round(c), round(s)
    rot = pts @ np.array([[c, s], [-s, c]])
    new_extent = (d, w) if side in ("E", "W") else (w, d)
    return rot + np.array([new_extent[0] / 2.0, new_extent[1] / 2.0]), new_extent


def align_to_exit(points, exit_side: str | Side, extent: tuple[float, float] = (10.0, 10.0),
                  timestamps=None, audio_active=None) -> AlignedTrajectory:
    pts, new_extent = rotate_about_center(points, exit_side, extent)
    n = len(pts)
    ts = np.zeros(n) if timestamps is None else np.asarray(timestamps, dtype=float)
    flags = np.zeros(n, dtype=bool) if audio_active is None else np.asarray(audio_active, dtype=bool)
    return AlignedTrajectory(pts, ts, flags, new_extent)


def align_log(log: TrajectoryLog, extent: tuple[float, float] = (10.0, 10.0)) -> AlignedTrajectory:
    return align_to_exit(log_points(log), log.exit_side, extent, log_timestamps(log), log_audio_flags(log))


# ---------------------------------------------------------------------------
# occupancy


@dataclass(frozen=True)
class DensityGrid:
    B: int
    mass: np.ndarray
    counts: np.ndarray

    @property
    def log_map(self) -> np.ndarray:
        return np.log1p(self.counts)


def density(traj, B: int = DEFAULT_BINS, extent: tuple[float, float] | None = None) -> DensityGrid:
    """Occupancy histogram on a BxB grid; ``mass`` sums to one.

    Rows index y (row 0 at the bottom), columns index x.
    """
    if B < 2:
        raise ValueError("B must be at least 2")
    pts = _as_points(traj)
    if len(pts) == 0:
        raise ValueError("empty trajectory")
    if extent is None:
        extent = traj.extent if isinstance(traj, AlignedTrajectory) else (10.0, 10.0)
    w, d = extent
    ix = np.clip(np.floor(pts[:, 0] / w * B).astype(int), 0, B - 1)
    iy = np.clip(np.floor(pts[:, 1] / d * B).astype(int), 0, B - 1)
    counts = np.zeros((B, B))
    np.add.at(counts, (iy, ix), 1.0)
    return DensityGrid(B, counts / counts.sum(), counts)


def mean_grid(grids: list[DensityGrid]) -> DensityGrid:
    """Average of per-run mass maps (each run weighted equally)."""
    if not grids:
        raise ValueError("no grids")
    mass = np.mean([g.mass for g in grids], axis=0)
    counts = np.sum([g.counts for g in grids], axis=0)
    return DensityGrid(grids[0].B, mass, counts)


@dataclass(frozen=True)
class HII:
    raw: float
    norm: float


def hii(grid) -> HII:
    """Herfindahl-Hirschman concentration, raw and rescaled to [0, 1]."""
    p = np.asarray(getattr(grid, "mass", grid), dtype=float).ravel()
    C = p.size
    raw = float(np.sum(p * p))
    norm = (raw - 1.0 / C) / (1.0 - 1.0 / C)
    return HII(raw, float(min(1.0, max(0.0, norm))))


# ---------------------------------------------------------------------------
# Fréchet


def frechet(P, Q) -> float:
    """Discrete Fréchet distance between two polylines."""
    p, q = _as_points(P), _as_points(Q)
    if len(p) == 0 or len(q) == 0:
        raise ValueError("both point lists must be non-empty")
    dist = np.hypot(p[:, None, 0] - q[None, :, 0], p[:, None, 1] - q[None, :, 1])
    return float(K.frechet_dp(dist))


def beeline(start, goal, n: int) -> np.ndarray:
    """``n`` evenly spaced points on the straight segment start -> goal."""
    s, g = _as_xy(start), _as_xy(goal)
    t = np.linspace(0.0, 1.0, max(n, 2))[:, None]
    return s + t * (g - s)


# ---------------------------------------------------------------------------
# path metrics


@dataclass(frozen=True)
class PathMetrics:
    steps: int
    time: float
    path_len: float
    turn: int
    frechet: float
    min_dist: float
    path_eff: float
    prog_eff: float
    mono: float


def path_metrics(traj, exit, reference=None, steps: int | None = None, time: float | None = None) -> PathMetrics:
    """Geometric efficiency of a trajectory toward ``exit``.

    ``reference`` defaults to the start->exit beeline sampled with as many
    points as the trajectory. ``path_eff`` is clipped to 1 because the agent
    radius lets a run finish short of the exit point.
    """
    pts = _as_points(traj)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    goal = _as_xy(exit)
    seg = np.diff(pts, axis=0)
    seg_len = np.hypot(seg[:, 0], seg[:, 1])
    path_len = float(seg_len.sum())
    if path_len == 0:
        raise ValueError("zero-length path")
    D = np.hypot(pts[:, 0] - goal[0], pts[:, 1] - goal[1])
    moving = seg[seg_len > 0]
    turn = int(np.count_nonzero(np.einsum("ij,ij->i", moving[1:], moving[:-1]) < 0)) if len(moving) > 1 else 0
    ref = beeline(pts[0], goal, len(pts)) if reference is None else _as_points(reference)
    if time is None:
        time = float(traj.timestamps[-1]) if isinstance(traj, AlignedTrajectory) else 0.0
    return PathMetrics(
        steps=len(pts) - 1 if steps is None else steps,
        time=float(time),
        path_len=path_len,
        turn=turn,
        frechet=frechet(pts, ref),
        min_dist=float(D.min()),
        path_eff=min(1.0, float(D[0]) / path_len),
        prog_eff=float(D[0] - D[-1]) / path_len,
        mono=float(np.mean(np.diff(D) < 0)),
    )


def log_path_metrics(log: TrajectoryLog) -> PathMetrics:
    return path_metrics(log_points(log), log.exit, steps=log.outcome.steps_recorded, time=log.final_clock)


# ---------------------------------------------------------------------------
# curves


@dataclass(frozen=True)
class DistanceCurve:
    grid: np.ndarray
    values: np.ndarray
    auc: float


def resample(values, n: int = CURVE_POINTS) -> np.ndarray:
    v = np.asarray(values, dtype=float)
    src = np.linspace(0.0, 1.0, len(v))
    return np.interp(np.linspace(0.0, 1.0, n), src, v)


def distance_curve(traj, exit, n: int = CURVE_POINTS) -> DistanceCurve:
    """Distance to exit over normalized step index, resampled to ``n`` points."""
    pts = _as_points(traj)
    if len(pts) < 2:
        raise ValueError("need at least two points")
    goal = _as_xy(exit)
    D = np.hypot(pts[:, 0] - goal[0], pts[:, 1] - goal[1])
    grid = np.linspace(0.0, 1.0, n)
    vals = resample(D, n)
    return DistanceCurve(grid, vals, float(trapezoid(vals, grid)))


def survival_curve(curves, tau: float = EXIT_THRESHOLD) -> tuple[np.ndarray, np.ndarray]:
    """Fraction of runs not yet within ``tau`` of the exit at each grid time."""
    curves = list(curves)
    if not curves:
        raise ValueError("need at least one run")
    grid = curves[0].grid
    reach = np.full(len(curves), np.inf)
    for k, c in enumerate(curves):
        hit = np.flatnonzero(c.values <= tau)
        if hit.size:
            reach[k] = grid[hit[0]]
    S = np.mean(reach[None, :] > grid[:, None], axis=1)
    return grid, S


def audio_segments(log: TrajectoryLog) -> tuple[np.ndarray, np.ndarray]:
    """Per-step positions split by whether trigger audio was playing, order kept."""
    pts = log_points(log)[1:]
    flags = np.asarray([r.audio_active for r in log.records], dtype=bool)
    return pts[flags].reshape(-1, 2), pts[~flags].reshape(-1, 2)
