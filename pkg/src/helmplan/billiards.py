"""Billiard ray dynamics: specular tracing, phase-space survival statistics,
trapped/visible set estimation and the ray-based solution-operator norm.

Rays move in straight lines (constant coefficients) and reflect specularly
off obstacle boundaries.  A ray "exits" the first time it crosses the PML
onset radius.  Survival times over a sampled phase-space grid estimate the
volume function V(t) whose generalized inverse at k^{-(d-1)} gives the
resolvent-norm heuristic rho_hat(k).

The inner loop is vectorized over ray batches with compaction (exited rays
are dropped each bounce), which keeps dense grids tractable in pure numpy.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass

import numpy as np
from scipy.spatial import cKDTree

from .geometry import Scene

EPS_TAN = 1e-8          # |xi . n| below this counts as a glancing hit
MAX_BOUNCE = 10**6
DEFAULT_T_MAX = 50.0
DEFAULT_M = 128
TRAPPED = math.inf       # exit_time sentinel for rays surviving to t_max


@dataclass(frozen=True)
class RayState:
    x: tuple[float, float]
    xi: tuple[float, float]

    def __post_init__(self):
        norm = math.hypot(*self.xi)
        if abs(norm - 1.0) > 1e-9:
            raise ValueError("direction must be a unit vector")


@dataclass
class Trajectory:
    """Events are (time, point, incoming xi, outgoing xi) at reflections."""

    start: RayState
    events: list
    exit_time: float   # first PML-entry time, or TRAPPED (= inf)

    @property
    def survived(self) -> bool:
        return not math.isfinite(self.exit_time)


@dataclass
class PhaseSampleGrid:
    points: np.ndarray            # (N, 2)
    directions: np.ndarray        # (M, 2)
    delta: float
    survival: np.ndarray | None = None   # (N, M) once filled


@dataclass
class SurvivalProfile:
    """Left-continuous step function V~(t) = delta^3 #{(i,j): t_ij >= t}."""

    times: np.ndarray     # distinct survival times, ascending
    volume: np.ndarray    # V~ evaluated at those times (non-increasing)
    delta: float
    total_pairs: int

    @property
    def v0(self) -> float:
        """V~(0) = delta^3 * (#points * #directions)."""
        return self.delta**3 * self.total_pairs

    def inverse(self, s: float) -> float | None:
        """sup{t : V~(t) >= s}; ties broken toward larger t; None when even
        V~(0+) < s."""
        idx = np.nonzero(self.volume >= s)[0]
        if len(idx) == 0:
            return None
        return float(self.times[idx[-1]])


def _exit_time(X: np.ndarray, D: np.ndarray, radius: float) -> np.ndarray:
    """Time for |X + t D| to first reach the given radius (X inside)."""
    b = np.einsum("ij,ij->i", X, D)
    c = np.einsum("ij,ij->i", X, X) - radius**2
    disc = np.maximum(b * b - c, 0.0)
    return -b + np.sqrt(disc)


def _obstacle_hit(scene: Scene, X: np.ndarray, D: np.ndarray, t_min: float):
    """Nearest obstacle intersection over all obstacles."""
    t_best = np.full(len(X), np.inf)
    n_best = np.zeros_like(X)
    for obs in scene.obstacles:
        t, n = obs.ray_intersect_batch(X, D, t_min)
        closer = t < t_best
        t_best = np.where(closer, t, t_best)
        n_best = np.where(closer[:, None], n, n_best)
    return t_best, n_best


def _trace_batch(
    scene: Scene,
    X: np.ndarray,
    D: np.ndarray,
    t_max: float,
    visit_collector: list | None = None,
):
    """Trace all rays to PML entry or t_max; returns exit times (TRAPPED
    where the horizon was reached).  Optionally collects traversed segments
    (start, end) per bounce for visibility estimation."""
    n = len(X)
    eps = 1e-9 * scene.diameter
    exit_times = np.full(n, TRAPPED)
    X = X.copy()
    D = D.copy()
    t_acc = np.zeros(n)
    idx = np.arange(n)

    for bounce in range(MAX_BOUNCE):
        if len(idx) == 0:
            break
        t_obs, normals = _obstacle_hit(scene, X, D, eps)
        t_out = _exit_time(X, D, scene.R_pml_minus)

        t_step = np.minimum(t_obs, t_out)
        over = t_acc + t_step > t_max
        exits = (~over) & (t_out <= t_obs)
        reflects = (~over) & ~exits

        if visit_collector is not None:
            seg_end = X + np.minimum(t_step, t_max - t_acc)[:, None] * D
            visit_collector.append((X.copy(), seg_end))

        exit_times[idx[exits]] = t_acc[exits] + t_out[exits]
        # rays past the horizon keep the TRAPPED sentinel

        keep = reflects
        if not np.any(keep):
            break
        idx = idx[keep]
        hit = X[keep] + t_obs[keep, None] * D[keep]
        dn = np.einsum("ij,ij->i", D[keep], normals[keep])
        t_acc = t_acc[keep] + t_obs[keep]
        X = hit
        Dk = D[keep]
        # glancing hits pass straight through; transversal hits reflect
        glancing = np.abs(dn) < EPS_TAN
        refl = Dk - 2.0 * dn[:, None] * normals[keep]
        refl /= np.linalg.norm(refl, axis=1, keepdims=True)
        D = np.where(glancing[:, None], Dk, refl)
    else:
        raise RuntimeError(f"ray exceeded {MAX_BOUNCE} reflections (degenerate trap)")
    return exit_times


def trace_ray(scene: Scene, state: RayState, t_max: float = DEFAULT_T_MAX) -> Trajectory:
    """Trace a single ray, recording each reflection event."""
    eps = 1e-9 * scene.diameter
    x = np.asarray(state.x, dtype=float)
    xi = np.asarray(state.xi, dtype=float)
    events = []
    t_acc = 0.0
    for bounce in range(MAX_BOUNCE):
        t_obs, n = _obstacle_hit(scene, x[None, :], xi[None, :], eps)
        t_obs, n = t_obs[0], n[0]
        t_out = _exit_time(x[None, :], xi[None, :], scene.R_pml_minus)[0]
        t_step = min(t_obs, t_out)
        if t_acc + t_step > t_max:
            return Trajectory(state, events, TRAPPED)
        if t_out <= t_obs:
            return Trajectory(state, events, t_acc + t_out)
        hit = x + t_obs * xi
        dn = float(xi @ n)
        t_acc += t_obs
        if abs(dn) < EPS_TAN:
            x = hit
            continue
        xi_out = xi - 2.0 * dn * n
        xi_out = xi_out / np.linalg.norm(xi_out)
        events.append((t_acc, hit.copy(), xi.copy(), xi_out.copy()))
        x, xi = hit, xi_out
    raise RuntimeError(f"ray exceeded {MAX_BOUNCE} reflections (degenerate trap)")


def sample_phase_space(scene: Scene, delta_s: float, M: int = DEFAULT_M) -> PhaseSampleGrid:
    """Square lattice of spacing delta_s over Omega inside the PML onset,
    with M equally spaced directions 2*pi*j/M."""
    if delta_s <= 0:
        raise ValueError("delta_s must be positive")
    if M < 8:
        raise ValueError("need at least 8 directions")
    R = scene.R_pml_minus
    m = int(math.floor(R / delta_s))
    coords = delta_s * np.arange(-m, m + 1)
    gx, gy = np.meshgrid(coords, coords, indexing="ij")
    pts = np.column_stack([gx.ravel(), gy.ravel()])
    r = np.hypot(pts[:, 0], pts[:, 1])
    # the domain is open: points on the obstacle boundary are not in it, and
    # a ray launched exactly on the boundary traces a degenerate trajectory
    keep = (r < R) & (scene.obstacle_distance(pts) > 1e-9 * scene.diameter)
    angles = 2.0 * np.pi * np.arange(M) / M
    dirs = np.column_stack([np.cos(angles), np.sin(angles)])
    return PhaseSampleGrid(points=pts[keep], directions=dirs, delta=delta_s)


def fill_survival(
    scene: Scene,
    grid: PhaseSampleGrid,
    t_max: float = DEFAULT_T_MAX,
    chunk: int = 200_000,
) -> PhaseSampleGrid:
    """t_ij = min(t_max, first PML-entry time) for every grid pair."""
    N, M = len(grid.points), len(grid.directions)
    X = np.repeat(grid.points, M, axis=0)
    D = np.tile(grid.directions, (N, 1))
    out = np.empty(N * M)
    for lo in range(0, N * M, chunk):
        hi = min(lo + chunk, N * M)
        out[lo:hi] = _trace_batch(scene, X[lo:hi], D[lo:hi], t_max)
    grid.survival = np.minimum(out, t_max).reshape(N, M)
    return grid


def classify_regions(
    scene: Scene,
    grid: PhaseSampleGrid,
    t_max: float = DEFAULT_T_MAX,
    inflation: float | None = None,
) -> dict[str, np.ndarray]:
    """Trapped points K_hat = {x_i : max_j t_ij = t_max} and visible points
    V_hat = points of Omega visited by rays launched from K_hat, outside an
    inflated neighborhood of K_hat."""
    if grid.survival is None:
        raise ValueError("survival matrix not filled")
    if inflation is None:
        inflation = 2.0 * grid.delta
    trapped_mask = grid.survival.max(axis=1) >= t_max - 1e-12
    K_hat = grid.points[trapped_mask]
    if len(K_hat) == 0:
        return {"K_hat": K_hat, "V_hat": np.empty((0, 2))}

    # Re-trace from the trapped points and rasterize traversed segments.
    M = len(grid.directions)
    X = np.repeat(K_hat, M, axis=0)
    D = np.tile(grid.directions, (len(K_hat), 1))
    segments: list = []
    _trace_batch(scene, X, D, t_max, visit_collector=segments)

    visited: set[tuple[int, int]] = set()
    inv = 1.0 / grid.delta
    for (a, b) in segments:
        lengths = np.linalg.norm(b - a, axis=1)
        counts = np.maximum((lengths * inv).astype(int) + 1, 2)
        for start, end, cnt in zip(a, b, counts):
            ts = np.linspace(0.0, 1.0, cnt)
            pts = start[None, :] + ts[:, None] * (end - start)[None, :]
            cells = np.round(pts * inv).astype(int)
            visited.update(map(tuple, cells))

    pts = np.array(sorted(visited), dtype=float) * grid.delta
    r = np.hypot(pts[:, 0], pts[:, 1])
    keep = (r < scene.R_pml_minus) & ~scene.inside_obstacle(pts)
    pts = pts[keep]
    if len(pts):
        tree = cKDTree(K_hat)
        dist, _ = tree.query(pts, k=1)
        pts = pts[dist > inflation]
    return {"K_hat": K_hat, "V_hat": pts}


def survival_volume(grid: PhaseSampleGrid) -> SurvivalProfile:
    if grid.survival is None:
        raise ValueError("survival matrix not filled")
    flat = np.sort(grid.survival.ravel())
    times, first = np.unique(flat, return_index=True)
    # V~(t_m) counts pairs with t_ij >= t_m
    counts = len(flat) - first
    vol = grid.delta**3 * counts
    return SurvivalProfile(times=times, volume=vol, delta=grid.delta, total_pairs=len(flat))


def estimate_rho(profile: SurvivalProfile, k: float, d: int = 2) -> float:
    """rho_hat = max(k, k * V~^{-1}(k^{-(d-1)})), the ray heuristic for the
    solution-operator norm; clamped below by k (nontrapping floor)."""
    if k <= 0:
        raise ValueError("k must be positive")
    s = k ** (-(d - 1))
    tinv = profile.inverse(s)
    if tinv is None:
        warnings.warn(
            f"survival volume never reaches {s:.3g}; falling back to rho ~ k",
            stacklevel=2,
        )
        return float(k)
    return float(max(k, k * tinv))
