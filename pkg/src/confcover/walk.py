"""The confined walk on ``D_N``: stepping, stationary starts, cover runs, segment covering."""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numba as nb
import numpy as np

from .domain import ShapeSpec, build_domain
from .errors import BudgetExhausted, ValidationError
from .greens import green_origin
from .rng import run_replicas, stream
from .spectral import ConfinedKernel, EigenPair, confined_kernel, solve_principal_eigenpair


@dataclass(frozen=True)
class WalkConfig:
    """``start`` is ``"stationary"`` or a site index; ``t_max`` bounds the step count."""

    t_max: int
    seed: int = 0
    replica_id: int = 0
    start: object = "stationary"

    def __post_init__(self):
        if self.t_max < 1:
            raise ValidationError("t_max must be >= 1")
        if self.start != "stationary" and not isinstance(self.start, (int, np.integer)):
            raise ValidationError("start must be 'stationary' or a site index")


@dataclass(eq=False)
class CoverResult:
    """First-hit times over the target (``-1`` = not hit within the run)."""

    hit_time: np.ndarray
    cover_time: int | None
    trajectory_length: int
    start: int
    target_sites: np.ndarray = field(repr=False)

    @property
    def covered(self):
        return self.cover_time is not None


def default_t_max(eig: EigenPair, target) -> int:
    """``ceil(20 g(0) alpha^-1 N^d log|Lambda_N|)`` with the discrete minimum of ``phi^2``."""
    d, N = eig.domain.d, eig.domain.N
    alpha = float(np.min(eig.phi[target.sites] ** 2))
    g0 = green_origin(d) if d >= 3 else 1.0
    return int(math.ceil(20 * g0 / alpha * N**d * math.log(max(target.size, 2))))


# ---------------------------------------------------------------- compiled


@nb.njit(cache=True, nogil=True)
def _pick(cum_row, u):
    j = 0
    last = cum_row.shape[0] - 1
    while j < last and cum_row[j] <= u:
        j += 1
    return j


@nb.njit(cache=True, nogil=True)
def _sample_index(cum, rng):
    u = rng.random() * cum[cum.shape[0] - 1]
    lo, hi = 0, cum.shape[0] - 1
    while lo < hi:
        mid = (lo + hi) // 2
        if cum[mid] > u:
            hi = mid
        else:
            lo = mid + 1
    return lo


@nb.njit(cache=True, nogil=True)
def _cover_kernel(cum, nbrs, tmap, m, x0, t_max, rng):
    hit = np.full(m, -1, dtype=np.int64)
    remaining = m
    x = x0
    k = tmap[x]
    if k >= 0:
        hit[k] = 0
        remaining -= 1
    t = 0
    last = cum.shape[1] - 1
    while remaining > 0 and t < t_max:
        u = rng.random() * cum[x, last]
        x = nbrs[x, _pick(cum[x], u)]
        t += 1
        k = tmap[x]
        if k >= 0 and hit[k] < 0:
            hit[k] = t
            remaining -= 1
    return hit, t


@nb.njit(cache=True, nogil=True)
def _step_counts(cum, x, draws, rng):
    counts = np.zeros(cum.shape[1], dtype=np.int64)
    last = cum.shape[1] - 1
    for _ in range(draws):
        counts[_pick(cum[x], rng.random() * cum[x, last])] += 1
    return counts


@nb.njit(cache=True, nogil=True)
def _stationary_counts(cum2, draws, rng):
    counts = np.zeros(cum2.shape[0], dtype=np.int64)
    for _ in range(draws):
        counts[_sample_index(cum2, rng)] += 1
    return counts


@nb.njit(cache=True, nogil=True)
def _occupation(cum, nbrs, x0, steps, rng):
    counts = np.zeros(cum.shape[0], dtype=np.int64)
    x = x0
    last = cum.shape[1] - 1
    for _ in range(steps):
        x = nbrs[x, _pick(cum[x], rng.random() * cum[x, last])]
        counts[x] += 1
    return counts


@nb.njit(cache=True, nogil=True)
def _confined_shell(cum, nbrs, shell, side, x0, samples, rng):
    """Fraction of confined walks from ``x0`` whose first shell visit has ``side == 1``."""
    last = cum.shape[1] - 1
    hits = 0
    for _ in range(samples):
        x = x0
        while shell[x] == 0:
            x = nbrs[x, _pick(cum[x], rng.random() * cum[x, last])]
        hits += side[x]
    return hits


@nb.njit(cache=True, nogil=True)
def _srw_shell_weights(nbrs, phi, lam, shell, side, x0, samples, rng):
    """Samples of ``1_A lambda^-H phi(S_H) / phi(x0)`` under the simple random walk, killed off D_N."""
    deg = nbrs.shape[1]
    out = np.zeros(samples)
    for s in range(samples):
        x = x0
        H = 0
        alive = True
        while shell[x] == 0:
            y = nbrs[x, rng.integers(0, deg)]
            H += 1
            if y < 0:
                alive = False
                break
            x = y
        if alive and side[x] == 1:
            out[s] = math.exp(-H * math.log(lam)) * phi[x] / phi[x0]
    return out


@nb.njit(cache=True, nogil=True)
def _segment_kernel(p_right, center, N, rng):
    """Walk on ``{0..2N}`` from ``center``; returns cover time, excursion durations and signs."""
    x = center
    t = 0
    durations = np.zeros(64, dtype=np.int64)
    signs = np.zeros(64, dtype=np.int64)
    count = 0
    top = 2 * N
    while True:
        # excursion: from 0 (center) to an endpoint
        start = t
        while x != 0 and x != top:
            if rng.random() < p_right[x]:
                x += 1
            else:
                x -= 1
            t += 1
        if count == durations.shape[0]:
            durations = np.concatenate((durations, np.zeros(count, dtype=np.int64)))
            signs = np.concatenate((signs, np.zeros(count, dtype=np.int64)))
        durations[count] = t - start
        signs[count] = 1 if x == top else -1
        count += 1
        if signs[count - 1] != signs[0]:
            return t, durations[:count], signs[:count]
        # return to the centre
        while x != center:
            if rng.random() < p_right[x]:
                x += 1
            else:
                x -= 1
            t += 1


# ---------------------------------------------------------------- API


def step_confined(kernel: ConfinedKernel, x: int, rng) -> int:
    """One confined step from site index ``x``."""
    row = kernel.cum[x]
    j = int(_pick(row, rng.random() * row[-1]))
    return int(kernel.neighbors[x, j])


def step_frequencies(kernel: ConfinedKernel, x: int, draws: int, rng):
    """Empirical frequencies of the neighbour slot chosen from ``x``."""
    return _step_counts(kernel.cum, int(x), int(draws), rng) / draws


def stationary_table(eig: EigenPair):
    return np.cumsum(eig.phi**2)


def sample_stationary(eig: EigenPair, rng, table=None) -> int:
    """Site drawn with probability ``phi^2(x) / sum phi^2``."""
    cum = stationary_table(eig) if table is None else table
    return int(_sample_index(cum, rng))


def stationary_frequencies(eig: EigenPair, draws: int, rng):
    return _stationary_counts(stationary_table(eig), int(draws), rng) / draws


def run_cover(kernel: ConfinedKernel, target, cfg: WalkConfig, raise_on_budget: bool = True) -> CoverResult:
    """Run the confined walk until every target site has been visited."""
    rng = stream(cfg.seed, "walk", cfg.replica_id)
    dom = kernel.domain
    if cfg.start == "stationary":
        x0 = sample_stationary(kernel.eig, rng)
    else:
        x0 = int(cfg.start)
        if not 0 <= x0 < dom.size:
            raise ValidationError("start site outside the domain")
    tmap = np.full(dom.size, -1, dtype=np.int64)
    tmap[target.sites] = np.arange(target.size)
    hit, t = _cover_kernel(kernel.cum, dom.neighbors, tmap, target.size, x0, int(cfg.t_max), rng)
    covered = bool(np.all(hit >= 0))
    res = CoverResult(hit, int(hit.max()) if covered else None, int(t), x0, target.sites)
    if not covered and raise_on_budget:
        raise BudgetExhausted(res)
    return res


def cover_campaign(kernel, target, replicas, seed, t_max=None, threads=1):
    """Independent stationary-start cover runs, one Philox stream per replica."""
    t_max = default_t_max(kernel.eig, target) if t_max is None else int(t_max)
    return run_replicas(
        lambda rng, i: run_cover(kernel, target, WalkConfig(t_max, seed, i), raise_on_budget=True),
        seed, "walk", replicas, threads,
    )


def late_points(result: CoverResult, t: int, domain=None):
    """Target sites not yet visited at time ``t``; with rescaled coordinates when a domain is given."""
    if not result.covered and t > result.trajectory_length:
        raise ValidationError("threshold beyond the simulated trajectory")
    late = (result.hit_time > t) | (result.hit_time < 0)
    sites = result.target_sites[late]
    if domain is None:
        return sites
    return sites, domain.sites[sites] / domain.N


def occupation_check(kernel: ConfinedKernel, probe, steps: int, seed: int = 0):
    """Total-variation distance between visit frequencies and ``phi^2`` on a probe set."""
    rng = stream(seed, "occupation", 0)
    eig = kernel.eig
    x0 = sample_stationary(eig, rng)
    counts = _occupation(kernel.cum, kernel.domain.neighbors, x0, int(steps), rng)
    probe = np.asarray(probe)
    emp = counts[probe] / counts[probe].sum()
    exact = eig.phi[probe] ** 2 / np.sum(eig.phi[probe] ** 2)
    return {"tv": float(0.5 * np.abs(emp - exact).sum()), "empirical": emp.tolist(), "exact": exact.tolist()}


def feynman_kac_check(eig: EigenPair, x0: int, shell_radius: float, samples: int = 20_000, seed: int = 0, axis: int = 0):
    """Probability that the first visit to a sphere shell lies in ``{y_axis > 0}``, two ways.

    The confined walk estimates it directly; the simple random walk killed
    off ``D_N`` estimates it through the weight ``lambda^-H phi(S_H) / phi(x0)``.
    """
    dom = eig.domain
    kern = confined_kernel(eig)
    r = np.linalg.norm(dom.sites, axis=1)
    shell = ((r >= shell_radius) & (r < shell_radius + 1)).astype(np.int64)
    if shell[x0]:
        raise ValidationError("start must lie off the shell")
    side = (dom.sites[:, axis] > 0).astype(np.int64)
    rng1 = stream(seed, "feynman_kac", 0)
    rng2 = stream(seed, "feynman_kac", 1)
    hits = _confined_shell(kern.cum, dom.neighbors, shell, side, int(x0), int(samples), rng1)
    w = _srw_shell_weights(dom.neighbors, eig.phi, eig.lam, shell, side, int(x0), int(samples), rng2)
    p1 = hits / samples
    se1 = math.sqrt(max(p1 * (1 - p1), 1e-12) / samples)
    p2 = float(w.mean())
    se2 = float(w.std(ddof=1) / math.sqrt(samples))
    return {"confined": p1, "confined_se": se1, "weighted": p2, "weighted_se": se2,
            "z": abs(p1 - p2) / math.sqrt(se1**2 + se2**2)}


def segment_eigenpair(N: int) -> EigenPair:
    """Principal eigenpair of the killed walk on ``{-N, ..., N}``."""
    h = (N + 0.5) / N
    return solve_principal_eigenpair(build_domain(ShapeSpec.box([-h], [h]), N))


def segment_cover(N: int, replicas: int, seed: int = 0, threads: int = 1):
    """Cover the segment ``{-N..N}`` by the confined walk started at 0.

    Returns one row per replica: cover time, ``cover / N^3``, the excursion
    index of the first sign change and the excursion durations.
    """
    if N < 2:
        raise ValidationError("N must be >= 2")
    eig = segment_eigenpair(N)
    phi = np.concatenate([[0.0], eig.phi, [0.0]])
    # index k in 0..2N is the site k - N
    p_right = phi[2:] / (phi[2:] + phi[:-2])

    def one(rng, i):
        t, dur, signs = _segment_kernel(p_right, N, N, rng)
        return {
            "replica": i,
            "cover_time": int(t),
            "ratio_N3": t / N**3,
            "excursions": int(len(signs)),
            "durations": dur.tolist(),
            "signs": signs.tolist(),
        }

    return run_replicas(one, seed, "segment", replicas, threads)
