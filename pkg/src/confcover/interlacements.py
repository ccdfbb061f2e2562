"""Tilted random interlacements seen from a finite set.

On a finite ``K`` the interlacement at level ``u`` is a Poisson number, with
mean ``u cap(K)``, of independent tilted walks started from the normalised
equilibrium measure of ``K``.  Ordering the trajectories by their arrival
level (unit-rate Poisson arrivals divided by ``cap(K)``) couples all levels
at once and gives the cover level ``U_x`` of every site.

Only the forward half of each doubly infinite trajectory is simulated: its
backward half never visits ``K``.  Walks are killed when they leave the cube
``[-R_out, R_out]^d``, the same cube on which the equilibrium measure is solved,
so sampling is exact for that killed walk.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .errors import LevelCapReached, LevelsIncomplete, ValidationError
from .greens import green_origin
from .potential import EquilibriumMeasure
from .tilted import SiteIndex, TiltField, _flat_index, _sample_cum, _sup_norm, _tilted_step, first_entrance, interlacement_levels


@dataclass(eq=False)
class InterlacementSample:
    u: float
    trace: np.ndarray
    trajectory_count: int
    arrival_levels: np.ndarray
    vacant: np.ndarray = field(repr=False, default=None)


@dataclass(eq=False)
class CoverLevels:
    """Per-site cover levels over the target (``inf`` = not covered below ``u_cap``)."""

    levels: np.ndarray
    set_level: float
    trajectory_count: int
    u_cap: float
    steps: int = 0

    @property
    def complete(self):
        return bool(np.all(np.isfinite(self.levels)))

    def covered_below(self, u):
        return self.levels <= u


@nb.njit(cache=True, nogil=True)
def _trace_kernel(starts, cum, n_traj, r_out, vals, org, shape, strides, kgrid, korg, kshape, kstrides, n_target, rng):
    d = starts.shape[1]
    seen = np.zeros(n_target, dtype=np.bool_)
    x = np.empty(d, dtype=np.int64)
    w = np.empty(2 * d)
    for _ in range(n_traj):
        i = _sample_cum(cum, rng)
        for a in range(d):
            x[a] = starts[i, a]
        while True:
            f = _flat_index(x, korg, kshape, kstrides)
            if f >= 0:
                t = kgrid[f]
                if t >= 0:
                    seen[t] = True
            _tilted_step(x, vals, org, shape, strides, rng, w)
            if _sup_norm(x) > r_out:
                break
    return seen


def _check(psi, eq):
    if psi.d < 3:
        raise ValidationError("interlacements need d >= 3")
    if eq.capacity <= 0:
        raise ValidationError("equilibrium measure has zero mass")


def sample_trace(psi: TiltField, K, u: float, eq: EquilibriumMeasure, rng, r_out: int) -> InterlacementSample:
    """Trace of the interlacement at level ``u`` on the finite set ``K``."""
    if u < 0:
        raise ValidationError("u must be >= 0")
    _check(psi, eq)
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    n = int(rng.poisson(u * eq.capacity)) if u > 0 else 0
    levels = np.sort(rng.random(n) * u)
    starts, cum = eq.sampling_table()
    idx = SiteIndex(K)
    seen = _trace_kernel(starts, cum, n, int(r_out), *psi.lookup(), *idx.lookup(), len(K), rng)
    return InterlacementSample(float(u), K[seen], n, levels, ~seen)


def cover_levels(
    psi: TiltField, target_coords, eq_target: EquilibriumMeasure, u_cap: float, rng, r_out: int,
    stop_when_covered: bool = True, raise_on_cap: bool = True,
) -> CoverLevels:
    """Per-site cover levels ``U_x`` and the set cover level ``max U_x``."""
    _check(psi, eq_target)
    T = np.atleast_2d(np.asarray(target_coords, dtype=np.int64))
    starts, cum = eq_target.sampling_table()
    idx = SiteIndex(T)
    levels, ntraj, last, steps = interlacement_levels(
        starts, cum, float(eq_target.capacity), float(u_cap), bool(stop_when_covered), int(r_out),
        *psi.lookup(), *idx.lookup(), len(T), rng,
    )
    complete = bool(np.all(np.isfinite(levels)))
    res = CoverLevels(levels, float(levels.max()) if complete else math.inf, int(ntraj), float(u_cap), int(steps))
    if not complete and raise_on_cap:
        raise LevelCapReached(res)
    return res


def rho_threshold(rho: float, alpha: float, n_target: int, d: int = 3) -> float:
    """``(1 - rho) g(0) / alpha * log|Lambda_N|``."""
    return (1 - rho) * green_origin(d) / alpha * math.log(n_target)


def scattering_scale(rho: float, n_target: int, d: int = 3) -> float:
    """``|Lambda_N|^{4 rho / (d - 2)}``."""
    return n_target ** (4 * rho / (d - 2))


def rho_set(levels: CoverLevels, rho: float, target_coords, alpha: float, d: int = 3):
    """Sites still vacant at level ``(1 - rho) g(0) alpha^-1 log|Lambda_N|``.

    Returns ``(indices, summary)`` with the cardinality and the smallest
    pairwise Euclidean distance (``inf`` for fewer than two sites).
    """
    if not 0 < rho < 1:
        raise ValidationError("rho must lie in (0, 1)")
    T = np.atleast_2d(np.asarray(target_coords))
    u = rho_threshold(rho, alpha, len(T), d)
    if not levels.complete and levels.u_cap < u:
        raise LevelsIncomplete(f"levels simulated up to {levels.u_cap:.4g} < threshold {u:.4g}")
    idx = np.flatnonzero(levels.levels > u)
    summary = {"threshold": u, "cardinality": int(len(idx)), "min_distance": min_pairwise_distance(T[idx])}
    return idx, summary


def min_pairwise_distance(points) -> float:
    pts = np.atleast_2d(np.asarray(points, dtype=float))
    if len(pts) < 2:
        return math.inf
    from scipy.spatial import cKDTree

    dist, _ = cKDTree(pts).query(pts, k=2)
    return float(dist[:, 1].min())


def entrance_law(psi: TiltField, K, eq_outer: EquilibriumMeasure, n_traj: int, rng, r_out: int):
    """First-entrance sites in ``K`` of trajectories started from a larger set's equilibrium measure.

    Returns counts over ``K`` (trajectories missing ``K`` are dropped).
    """
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    starts, cum = eq_outer.sampling_table()
    idx = SiteIndex(K)
    first = first_entrance(starts, cum, int(n_traj), int(r_out), *psi.lookup(), *idx.lookup(), rng)
    return np.bincount(first[first >= 0], minlength=len(K))


def expected_rho_cardinality(phi2, u, d=3):
    """``sum_x exp(-u phi^2(x) / g(0))``, the replacement of ``cap({x})`` by ``phi^2 / g(0)``."""
    return float(np.sum(np.exp(-u * np.asarray(phi2) / green_origin(d))))
