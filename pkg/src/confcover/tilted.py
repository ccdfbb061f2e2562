"""The tilt field and compiled walkers for the tilted walk on Z^d.

The tilted walk jumps from ``x`` to a neighbour ``y`` with probability
``Psi(y) / sum_e Psi(x + e)``: the random walk among conductances
``Psi(x) Psi(y)``.  ``Psi`` equals one outside a finite set, so it is stored
as a dense array over a bounding box and looked up with unit default.
"""

from __future__ import annotations

from dataclasses import dataclass

import numba as nb
import numpy as np

from .errors import ValidationError


@dataclass(frozen=True, eq=False)
class TiltField:
    """``Psi`` on Z^d: explicit values on a box, 1 elsewhere.

    Attributes
    ----------
    values : ndarray
        ``d``-dimensional array of ``Psi`` over the box starting at ``origin``.
    origin : ndarray
        Lattice coordinates of ``values[0, ..., 0]``.
    lam : float
        Eigenvalue of the eigenpair the tilt was built from (1 when untilted).
    """

    values: np.ndarray
    origin: np.ndarray
    lam: float = 1.0
    N: int = 0

    def __post_init__(self):
        if self.values.ndim < 3:
            raise ValidationError("tilted walks need d >= 3 (the walk must be transient)")
        if not np.all(self.values > 0):
            raise ValidationError("Psi must be positive")

    @property
    def d(self):
        return self.values.ndim

    @property
    def flat(self):
        return np.ascontiguousarray(self.values).ravel()

    @property
    def shape(self):
        return np.asarray(self.values.shape, dtype=np.int64)

    @property
    def strides(self):
        s = np.ones(self.d, dtype=np.int64)
        for a in range(self.d - 2, -1, -1):
            s[a] = s[a + 1] * self.values.shape[a + 1]
        return s

    @property
    def radius(self):
        """Smallest ``r`` with ``Psi = 1`` outside ``[-r, r]^d``."""
        lo = np.abs(self.origin)
        hi = np.abs(self.origin + np.asarray(self.values.shape) - 1)
        return int(max(lo.max(), hi.max()))

    def __call__(self, points):
        p = np.atleast_2d(np.asarray(points, dtype=np.int64)) - self.origin
        ok = np.all((p >= 0) & (p < self.shape), axis=1)
        out = np.ones(len(p))
        out[ok] = self.values[tuple(p[ok].T)]
        return out

    def step_weights(self, x):
        """``(neighbours, probabilities)`` of one tilted step from ``x``."""
        x = np.asarray(x, dtype=np.int64)
        d = self.d
        nbrs = np.repeat(x[None, :], 2 * d, axis=0)
        for k in range(d):
            nbrs[2 * k, k] += 1
            nbrs[2 * k + 1, k] -= 1
        w = self(nbrs)
        return nbrs, w / w.sum()

    def lookup(self):
        """Arguments consumed by the compiled walkers."""
        return self.flat, self.origin.astype(np.int64), self.shape, self.strides

    @classmethod
    def untilted(cls, d=3):
        return cls(np.ones((1,) * d), np.zeros(d, dtype=np.int64), 1.0, 0)


def tilt_field(eig, target) -> TiltField:
    """``Psi_N = phi_N`` on the enlarged target and 1 elsewhere."""
    dom = eig.domain
    pts = dom.sites[target.enlarged]
    lo = pts.min(axis=0)
    hi = pts.max(axis=0)
    vals = np.ones(tuple(hi - lo + 1))
    vals[tuple((pts - lo).T)] = eig.phi[target.enlarged]
    return TiltField(vals, lo.astype(np.int64), float(eig.lam), dom.N)


class SiteIndex:
    """Dense map from lattice points of a finite set to their position in it."""

    def __init__(self, coords):
        coords = np.atleast_2d(np.asarray(coords, dtype=np.int64))
        self.coords = coords
        self.origin = coords.min(axis=0)
        shape = coords.max(axis=0) - self.origin + 1
        self.grid = np.full(tuple(shape), -1, dtype=np.int64)
        self.grid[tuple((coords - self.origin).T)] = np.arange(len(coords))
        if len(np.unique(coords, axis=0)) != len(coords):
            raise ValidationError("duplicate points in site set")

    def lookup(self):
        g = self.grid
        s = np.ones(g.ndim, dtype=np.int64)
        for a in range(g.ndim - 2, -1, -1):
            s[a] = s[a + 1] * g.shape[a + 1]
        return g.ravel(), self.origin, np.asarray(g.shape, dtype=np.int64), s


# ---------------------------------------------------------------- compiled


@nb.njit(cache=True, nogil=True)
def _flat_index(x, org, shape, strides):
    f = 0
    for a in range(x.shape[0]):
        q = x[a] - org[a]
        if q < 0 or q >= shape[a]:
            return -1
        f += q * strides[a]
    return f


@nb.njit(cache=True, nogil=True)
def _psi(x, vals, org, shape, strides):
    f = _flat_index(x, org, shape, strides)
    if f < 0:
        return 1.0
    return vals[f]


@nb.njit(cache=True, nogil=True)
def _tilted_step(x, vals, org, shape, strides, rng, w):
    """Move ``x`` in place by one tilted step; returns the direction index."""
    d = x.shape[0]
    tot = 0.0
    for k in range(d):
        x[k] += 1
        tot += _psi(x, vals, org, shape, strides)
        w[2 * k] = tot
        x[k] -= 2
        tot += _psi(x, vals, org, shape, strides)
        w[2 * k + 1] = tot
        x[k] += 1
    u = rng.random() * tot
    j = 0
    while j < 2 * d - 1 and w[j] <= u:
        j += 1
    k = j // 2
    if j % 2 == 0:
        x[k] += 1
    else:
        x[k] -= 1
    return j


@nb.njit(cache=True, nogil=True)
def _sup_norm(x):
    m = 0
    for a in range(x.shape[0]):
        v = abs(x[a])
        if v > m:
            m = v
    return m


@nb.njit(cache=True, nogil=True)
def tilted_direction_counts(start, draws, vals, org, shape, strides, rng):
    """Histogram of step directions from a fixed site."""
    d = start.shape[0]
    counts = np.zeros(2 * d, dtype=np.int64)
    x = start.copy()
    w = np.empty(2 * d)
    for _ in range(draws):
        for a in range(d):
            x[a] = start[a]
        counts[_tilted_step(x, vals, org, shape, strides, rng, w)] += 1
    return counts


@nb.njit(cache=True, nogil=True)
def escape_counts(starts, samples, vals, org, shape, strides, kgrid, korg, kshape, kstrides, r_escape, rng):
    """For each start in K, count walks that leave ``[-r, r]^d`` before returning to K."""
    m, d = starts.shape
    out = np.zeros(m, dtype=np.int64)
    x = np.empty(d, dtype=np.int64)
    w = np.empty(2 * d)
    for i in range(m):
        for s in range(samples):
            for a in range(d):
                x[a] = starts[i, a]
            while True:
                _tilted_step(x, vals, org, shape, strides, rng, w)
                if _sup_norm(x) > r_escape:
                    out[i] += 1
                    break
                f = _flat_index(x, korg, kshape, kstrides)
                if f >= 0 and kgrid[f] >= 0:
                    break
    return out


@nb.njit(cache=True, nogil=True)
def _sample_cum(cum, rng):
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
def interlacement_levels(
    starts, cum, cap, u_cap, stop_when_covered, r_out,
    vals, org, shape, strides, kgrid, korg, kshape, kstrides, n_target, rng,
):
    """Run the level-ordered trajectory cloud on a finite set.

    Trajectory ``j`` arrives at level ``Gamma_j / cap`` (unit-rate Poisson
    arrivals), starts at ``starts[i]`` with ``i`` drawn from the cumulative
    weights ``cum``, and runs until it leaves ``[-r_out, r_out]^d``.  Each site
    of the indexed set gets the arrival level of the first trajectory that
    visits it.

    Returns ``(levels, n_trajectories, last_level, steps)``.
    """
    d = starts.shape[1]
    levels = np.full(n_target, np.inf)
    remaining = n_target
    x = np.empty(d, dtype=np.int64)
    w = np.empty(2 * d)
    level = 0.0
    ntraj = 0
    steps = 0
    while True:
        nxt = level + rng.standard_exponential() / cap
        if nxt > u_cap:
            break
        level = nxt
        ntraj += 1
        i = _sample_cum(cum, rng)
        for a in range(d):
            x[a] = starts[i, a]
        while True:
            f = _flat_index(x, korg, kshape, kstrides)
            if f >= 0:
                t = kgrid[f]
                if t >= 0 and levels[t] == np.inf:
                    levels[t] = level
                    remaining -= 1
                    if remaining == 0 and stop_when_covered:
                        return levels, ntraj, level, steps
            _tilted_step(x, vals, org, shape, strides, rng, w)
            steps += 1
            if _sup_norm(x) > r_out:
                break
    return levels, ntraj, level, steps


@nb.njit(cache=True, nogil=True)
def first_entrance(starts, cum, n_traj, r_out, vals, org, shape, strides, kgrid, korg, kshape, kstrides, rng):
    """Index of the first K site visited by each trajectory (-1 if it never hits K)."""
    d = starts.shape[1]
    out = np.full(n_traj, -1, dtype=np.int64)
    x = np.empty(d, dtype=np.int64)
    w = np.empty(2 * d)
    for j in range(n_traj):
        i = _sample_cum(cum, rng)
        for a in range(d):
            x[a] = starts[i, a]
        while True:
            f = _flat_index(x, korg, kshape, kstrides)
            if f >= 0 and kgrid[f] >= 0:
                out[j] = kgrid[f]
                break
            _tilted_step(x, vals, org, shape, strides, rng, w)
            if _sup_norm(x) > r_out:
                break
    return out
