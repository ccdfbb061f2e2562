"""Potential theory of the tilted walk: Green functions, equilibrium measures, capacities.

All exact computations live on the cube ``B = [-R, R]^d`` with the walk
killed on leaving it.  Writing ``pi(x) = Psi(x) sum_e Psi(x+e)`` for the
reversible measure and ``A = diag(pi) - C`` for the conductance Laplacian
restricted to ``B``, one has

* ``G_B(x, y) = pi(y) (A^-1)(x, y)``,
* ``e_K(z) = (A h_K)(z) / (2d)`` where ``h_K`` is the hitting probability of K,
* ``cap(K) = sum_z e_K(z)``.

Capacities use the normalised convention ``e_K(z) = P_z(no return) pi(z)/(2d)``,
which reduces to ``lambda_N phi_N(z)^2 P_z(no return)`` deep inside the tilt
and to ``1/g(0)`` for a point of the untilted lattice.

Killing at ``B`` biases Green values by ``O(1/R)`` in three dimensions.
``corrected`` values remove the leading part: a walk leaving ``B`` at ``w``
later visits ``y`` ``(pi(y)/2d) g(w - y)`` times on average, with ``g`` the
free lattice Green function at large distance.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InequalityViolated, InsufficientSamples, ValidationError
from .greens import green_asymptotic, green_origin
from .rng import stream
from .solvers import grid_size, make_operator
from .tilted import SiteIndex, TiltField, escape_counts, tilted_direction_counts


class TiltedBox:
    """Conductance Laplacian of the tilted walk on ``[-R, R]^d`` with killing outside."""

    def __init__(self, psi: TiltField, radius: int, rtol: float = 1e-12, max_iter: int = 300):
        d = psi.d
        R = int(radius)
        if R < psi.radius + 1:
            raise ValidationError("box must strictly contain the tilted region")
        self.psi, self.R, self.d = psi, R, d
        self.rtol, self.max_iter = rtol, max_iter
        n = grid_size(2 * R + 1) if d == 3 else 2 * R + 1
        self.n = n
        self.c0 = (n - 1) // 2
        # Psi on the grid plus one padding layer
        P = np.ones((n + 2,) * d)
        lo = psi.origin + self.c0 + 1
        P[tuple(slice(a, a + s) for a, s in zip(lo, psi.values.shape))] = psi.values
        self.psi_grid = P[(slice(1, -1),) * d]
        conds = []
        for a in range(d):
            left = [slice(1, -1)] * d
            right = [slice(1, -1)] * d
            left[a] = slice(0, -1)
            right[a] = slice(1, None)
            conds.append(P[tuple(left)] * P[tuple(right)])
        self.conductances = conds
        box = np.zeros((n,) * d, dtype=bool)
        box[(slice(self.c0 - R, self.c0 + R + 1),) * d] = True
        self.box = box
        self.pi = sum(np.take(c, range(0, n), axis=a) + np.take(c, range(1, n + 1), axis=a) for a, c in enumerate(conds))
        self._ops = {}

    # -- geometry
    def node(self, x):
        x = np.asarray(x, dtype=np.int64)
        if np.any(np.abs(x) > self.R):
            raise ValidationError(f"point {x.tolist()} outside the box")
        return tuple(x + self.c0)

    def nodes(self, xs):
        xs = np.atleast_2d(np.asarray(xs, dtype=np.int64))
        if np.any(np.abs(xs) > self.R):
            raise ValidationError("points outside the box")
        return tuple((xs + self.c0).T)

    def pi_at(self, xs):
        return self.pi[self.nodes(xs)]

    def operator(self, fixed=None):
        key = b"" if fixed is None else np.ascontiguousarray(fixed).tobytes()
        op = self._ops.get(key)
        if op is None:
            free = self.box.copy()
            if fixed is not None:
                free[self.nodes(fixed)] = False
            op = make_operator(self.conductances, free)
            if len(self._ops) > 8:
                self._ops.clear()
            self._ops[key] = op
        return op

    # -- solves
    def green(self, x) -> "GreenSolve":
        b = np.zeros((self.n,) * self.d)
        b[self.node(x)] = 1.0
        u, it, res = self.operator().solve(b, self.rtol, self.max_iter)
        return GreenSolve(self, np.asarray(x, dtype=np.int64), u, it, res)

    def hitting(self, K):
        """``h(x) = P_x(H_K < infinity)`` for the walk killed outside the box."""
        K = np.atleast_2d(np.asarray(K, dtype=np.int64))
        op = self.operator(K)
        h0 = np.zeros((self.n,) * self.d)
        h0[self.nodes(K)] = 1.0
        rhs = -self._apply_free(op, h0)
        v, it, res = op.solve(rhs, self.rtol, self.max_iter)
        return h0 + v, it, res

    @staticmethod
    def _apply_free(op, u):
        full = op.apply_full(u)
        return np.where(op.free, full, 0.0)

    def apply(self, u):
        """``A u`` at every node of the grid."""
        return self.operator().apply_full(u)

    # -- exit distribution
    def exit_faces(self):
        """Pairs ``(v, w)`` with ``v`` on the box surface and ``w = v +/- e_a`` outside."""
        if not hasattr(self, "_faces"):
            R, d = self.R, self.d
            rng = np.arange(-R, R + 1)
            vs, ws = [], []
            for a in range(d):
                grids = np.meshgrid(*([rng] * (d - 1)), indexing="ij")
                rest = np.stack([g.ravel() for g in grids], axis=1)
                for s in (-1, 1):
                    v = np.insert(rest, a, s * R, axis=1)
                    w = v.copy()
                    w[:, a] += s
                    vs.append(v)
                    ws.append(w)
            self._faces = (np.vstack(vs), np.vstack(ws))
        return self._faces


@dataclass(eq=False)
class GreenSolve:
    """``u = A^-1 e_x`` on the box, from which Green values in both directions follow."""

    box: TiltedBox
    source: np.ndarray
    u: np.ndarray = field(repr=False)
    iterations: int = 0
    residual: float = 0.0

    @property
    def radius_factor(self):
        N = self.box.psi.N
        return self.box.R / N if N else float("nan")

    def G(self, ys, corrected=False):
        """``G(x, y)`` (expected visits to ``y`` from the source)."""
        ys = np.atleast_2d(np.asarray(ys, dtype=np.int64))
        idx = self.box.nodes(ys)
        val = self.box.pi[idx] * self.u[idx]
        if corrected:
            val = val + self.box.pi[idx] / (2 * self.box.d) * self.tail(ys)
        return val

    def G_reverse(self, ys, corrected=False):
        """``G(y, x)`` via reversibility ``pi(x) G(x, y) = pi(y) G(y, x)``."""
        ys = np.atleast_2d(np.asarray(ys, dtype=np.int64))
        pix = self.box.pi[self.box.node(self.source)]
        return pix * self.G(ys, corrected) / self.box.pi[self.box.nodes(ys)]

    def exit_distribution(self):
        v, w = self.box.exit_faces()
        return w, self.u[self.box.nodes(v)] * self.box.psi_grid[self.box.nodes(v)]

    def tail(self, ys):
        """``sum_w P_x(exit at w) g(w - y)`` with the large-distance lattice Green function."""
        w, hx = self.exit_distribution()
        out = np.empty(len(ys))
        for i, y in enumerate(np.atleast_2d(ys)):
            r = np.linalg.norm(w - y, axis=1)
            out[i] = np.dot(hx, green_asymptotic(r, self.box.d))
        return out

    def edge_proxy(self):
        """Largest Green value on the box surface (truncation error indicator)."""
        v, _ = self.box.exit_faces()
        return float(np.max(self.G(v)))


# ---------------------------------------------------------------- API


def _box_for(psi, box_radius, cache=None):
    if isinstance(box_radius, TiltedBox):
        return box_radius
    return TiltedBox(psi, int(math.ceil(box_radius)))


def green_function(psi: TiltField, x, box_radius, tol: float = 1e-12) -> GreenSolve:
    """Killed-walk Green function ``G(x, .)`` on the centred cube of the given radius."""
    box = box_radius if isinstance(box_radius, TiltedBox) else TiltedBox(psi, int(math.ceil(box_radius)), rtol=tol)
    return box.green(x)


def tilted_step(psi: TiltField, x, rng):
    """One step of the tilted walk from ``x``."""
    nbrs, p = psi.step_weights(x)
    return nbrs[rng.choice(len(p), p=p)]


def tilted_step_frequencies(psi: TiltField, x, draws, rng):
    """Empirical direction frequencies of ``draws`` tilted steps from ``x``."""
    vals, org, shape, strides = psi.lookup()
    counts = tilted_direction_counts(np.asarray(x, dtype=np.int64), int(draws), vals, org, shape, strides, rng)
    return counts / draws


@dataclass(eq=False)
class EquilibriumMeasure:
    """Equilibrium measure of a finite set; ``weights`` align with ``K``."""

    K: np.ndarray
    weights: np.ndarray
    capacity: float
    method: str
    escape: np.ndarray
    stderr: float = 0.0
    details: dict = field(default_factory=dict)

    @property
    def support(self):
        return self.K[self.weights > 0]

    def normalized(self):
        return self.weights / self.capacity

    def sampling_table(self):
        """``(starts, cumulative weights)`` over the support."""
        keep = self.weights > 0
        return np.ascontiguousarray(self.K[keep]), np.cumsum(self.weights[keep])


def equilibrium_measure(
    psi: TiltField,
    K,
    method: str = "linear_solve",
    box_radius=None,
    r_escape=None,
    samples: int = 10_000,
    seed: int = 0,
    threads: int = 1,
    max_rel_stderr: float = 0.05,
) -> EquilibriumMeasure:
    """Equilibrium measure ``e_K(z) = P_z(no return to K) pi(z) / (2d)``.

    ``linear_solve`` computes the hitting probability of ``K`` on the killed
    box and reads the measure off ``A h``.  ``monte_carlo`` runs ``samples``
    walks from each site of ``K`` and calls a walk escaped once it leaves
    ``[-r_escape, r_escape]^d`` before returning to ``K``.
    """
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    if len(K) == 0:
        raise ValidationError("K must be non-empty")
    d = psi.d
    N = max(psi.N, 1)
    if method == "linear_solve":
        box = _box_for(psi, box_radius if box_radius is not None else 5 * N)
        h, it, res = box.hitting(K)
        Ah = box.apply(h)[box.nodes(K)]
        w = np.maximum(Ah, 0.0) / (2 * d)
        pi = box.pi_at(K)
        esc = 2 * d * w / pi
        return EquilibriumMeasure(
            K, w, float(math.fsum(w)), method, esc,
            details={"box_radius": box.R, "iterations": it, "residual": res},
        )
    if method != "monte_carlo":
        raise ValidationError(f"unknown method {method!r}")
    r_escape = int(r_escape if r_escape is not None else 4 * N)
    vals, org, shape, strides = psi.lookup()
    idx = SiteIndex(K)
    kg, ko, ks, kst = idx.lookup()

    # one stream per K site keeps results independent of the thread count
    def one(i):
        rng = stream(seed, "escape", i)
        return escape_counts(K[i : i + 1], int(samples), vals, org, shape, strides, kg, ko, ks, kst, r_escape, rng)[0]

    if threads and threads > 1:
        from concurrent.futures import ThreadPoolExecutor

        with ThreadPoolExecutor(max_workers=threads) as pool:
            counts = np.array(list(pool.map(one, range(len(K)))))
    else:
        counts = np.array([one(i) for i in range(len(K))])
    esc = counts / samples
    pi = _pi_points(psi, K)
    w = esc * pi / (2 * d)
    cap = float(w.sum())
    var = np.sum((pi / (2 * d)) ** 2 * esc * (1 - esc) / samples)
    se = float(np.sqrt(var))
    radius_K = int(np.abs(K).max())
    bias = cap * cap * float(green_asymptotic(max(r_escape - radius_K, 1), d))
    em = EquilibriumMeasure(
        K, w, cap, method, esc, se,
        details={"samples": int(samples), "r_escape": r_escape, "bias_bound": bias},
    )
    if cap == 0 or se / cap > max_rel_stderr:
        raise InsufficientSamples(f"relative standard error {se / max(cap, 1e-300):.3g} exceeds {max_rel_stderr}")
    return em


def _pi_points(psi, K):
    d = psi.d
    tot = np.zeros(len(K))
    for k in range(d):
        for s in (1, -1):
            q = K.copy()
            q[:, k] += s
            tot += psi(q)
    return psi(K) * tot


def point_capacity(box: TiltedBox, x, corrected: bool = False) -> float:
    """``cap({x}) = pi(x) / (2d G(x, x))``."""
    gs = box.green(x)
    pix = box.pi_at(x)[0]
    gxx = gs.G(x, corrected)[0]
    return float(pix / (2 * box.d * gxx))


def two_point_capacity(box: TiltedBox, x, y, corrected: bool = False, solves=None) -> float:
    """Capacity of ``{x, y}`` from singleton capacities and mutual hitting probabilities."""
    x = np.asarray(x, dtype=np.int64)
    y = np.asarray(y, dtype=np.int64)
    if np.array_equal(x, y):
        raise ValidationError("x and y must differ")
    gx, gy = solves if solves is not None else (box.green(x), box.green(y))
    Gxx, Gxy = gx.G(np.vstack([x, y]), corrected)
    Gyx, Gyy = gy.G(np.vstack([x, y]), corrected)
    d = box.d
    cx = box.pi_at(x)[0] / (2 * d * Gxx)
    cy = box.pi_at(y)[0] / (2 * d * Gyy)
    pxy = Gxy / Gyy  # P_x(H_y < inf)
    pyx = Gyx / Gxx
    return float((cx * (1 - pxy) + cy * (1 - pyx)) / (1 - pxy * pyx))


def last_exit_check(box: TiltedBox, K, x_list):
    """Compare ``P_x(H_K < inf)`` with ``sum_z G(x, z) e_K(z) 2d / pi(z)``.

    The left side comes from the hitting solve with ``K`` held at one; the
    right side from a Green solve started at ``x`` and the equilibrium measure.
    """
    K = np.atleast_2d(np.asarray(K, dtype=np.int64))
    h, _, _ = box.hitting(K)
    Ah = box.apply(h)[box.nodes(K)]
    e = Ah / (2 * box.d)
    piK = box.pi_at(K)
    rows = []
    for x in np.atleast_2d(np.asarray(x_list, dtype=np.int64)):
        lhs = h[box.node(x)]
        gs = box.green(x)
        rhs = float(np.sum(gs.G(K) * e * 2 * box.d / piK))
        rows.append({"x": x.tolist(), "hitting": float(lhs), "last_exit": rhs, "gap": abs(lhs - rhs) / max(lhs, 1e-300)})
    return {"rows": rows, "max_gap": max(r["gap"] for r in rows)}


def green_matrix(box: TiltedBox, sites):
    """Symmetric ``(A^-1)(s, t)`` over a site list (one solve per site)."""
    sites = np.atleast_2d(np.asarray(sites, dtype=np.int64))
    M = np.empty((len(sites), len(sites)))
    for i, s in enumerate(sites):
        gs = box.green(s)
        M[i] = gs.u[box.nodes(sites)]
    return 0.5 * (M + M.T)


def capacity_from_green(Ahat, subset, d):
    """``cap(K) = (1/2d) 1^T Ahat_K^-1 1`` for ``K`` a subset of the solved sites."""
    sub = Ahat[np.ix_(subset, subset)]
    return float(np.sum(np.linalg.solve(sub, np.ones(len(subset)))) / (2 * d))


def capacity_bounds_check(
    box: TiltedBox, target_coords, alpha: float, n_sites: int = 16, n_pairs: int = 100, seed: int = 0, g0=None,
    raise_on_violation: bool = True,
):
    """Evaluate the two-set capacity inequalities on random sets drawn from the target.

    Checks subadditivity, the Green-sum lower bound for disjoint unions, the
    lower bound ``cap({x,y}) >= (1 + c0^2/4) alpha / g(0)`` with ``c0`` measured
    as the smallest pairwise escape probability, and monotonicity under
    inclusion.
    """
    d = box.d
    g0 = green_origin(d) if g0 is None else g0
    rng = stream(seed, "probe", 0)
    T = np.atleast_2d(np.asarray(target_coords, dtype=np.int64))
    pick = rng.choice(len(T), size=min(n_sites, len(T)), replace=False)
    base = T[pick]
    # add one lattice neighbour of the first site so close pairs are present
    extra = base[:1] + np.eye(d, dtype=np.int64)[0]
    sites = np.vstack([base, extra])
    Ahat = green_matrix(box, sites)
    pi = box.pi_at(sites)
    m = len(sites)
    single = np.array([capacity_from_green(Ahat, [i], d) for i in range(m)])
    # P_x(H_y < inf) = Ahat(x, y) / Ahat(y, y)
    hit = Ahat / np.diag(Ahat)[None, :]
    esc = 1 - hit
    np.fill_diagonal(esc, np.inf)
    c0 = float(esc.min())

    report = {"c0": c0, "subadditive_margin": np.inf, "green_lower_margin": np.inf, "pair_lower_margin": np.inf,
              "monotone_margin": np.inf, "pairs": 0}
    for i in range(m):
        for j in range(i + 1, m):
            cij = capacity_from_green(Ahat, [i, j], d)
            bound = (1 + c0**2 / 4) * alpha / g0
            report["pair_lower_margin"] = min(report["pair_lower_margin"], cij - bound)
            if cij < bound and raise_on_violation:
                raise InequalityViolated("two-point capacity below its lower bound", (sites[i].tolist(), sites[j].tolist()))
    for _ in range(n_pairs):
        idx = rng.choice(m, size=4, replace=False)
        K1, K2 = list(idx[:2]), list(idx[2:])
        c1 = capacity_from_green(Ahat, K1, d)
        c2 = capacity_from_green(Ahat, K2, d)
        c12 = capacity_from_green(Ahat, K1 + K2, d)
        cross = sum(pi[z] * pi[w] * Ahat[z, w] for z in K1 for w in K2) * 2 / (2 * d)
        report["subadditive_margin"] = min(report["subadditive_margin"], c1 + c2 - c12)
        report["green_lower_margin"] = min(report["green_lower_margin"], c12 - (c1 + c2 - cross))
        report["monotone_margin"] = min(report["monotone_margin"], c12 - c1, c12 - c2, c1 - single[K1].max())
        report["pairs"] += 1
        if raise_on_violation:
            if c12 > c1 + c2 + 1e-12:
                raise InequalityViolated("capacity not subadditive", (sites[K1].tolist(), sites[K2].tolist()))
            if c12 < c1 + c2 - cross - 1e-12:
                raise InequalityViolated("Green-sum lower bound violated", (sites[K1].tolist(), sites[K2].tolist()))
    report["singleton_capacities"] = single.tolist()
    return report


def green_decay_slope(gs: GreenSolve, r_min: float, r_max: float, corrected: bool = True):
    """Least-squares slope of ``log G(x, y)`` against ``log |x - y|`` along coordinate rays."""
    d = gs.box.d
    pts, rs = [], []
    for k in range(d):
        for s in (1, -1):
            for r in range(int(math.ceil(r_min)), int(r_max) + 1):
                y = gs.source.copy()
                y[k] += s * r
                if np.abs(y).max() <= gs.box.R:
                    pts.append(y)
                    rs.append(r)
    G = gs.G(np.array(pts), corrected)
    slope = np.polyfit(np.log(rs), np.log(G), 1)[0]
    return float(slope)


def harnack_ring_ratios(gs: GreenSolve, r_max: float, corrected: bool = False):
    """``max/min`` of ``G(x, .)`` over each dyadic Euclidean shell ``2^k <= |y - x| < 2^{k+1}``."""
    x = gs.source
    out = []
    k = 1
    while 2 ** (k + 1) <= r_max:
        lo, hi = 2**k, 2 ** (k + 1)
        rng_ = np.arange(-hi, hi + 1)
        g = np.stack(np.meshgrid(*([rng_] * gs.box.d), indexing="ij"), axis=-1).reshape(-1, gs.box.d)
        r = np.linalg.norm(g, axis=1)
        g = g[(r >= lo) & (r < hi)] + x
        g = g[np.abs(g).max(axis=1) <= gs.box.R]
        G = gs.G(g, corrected)
        out.append({"r_lo": lo, "r_hi": hi, "ratio": float(G.max() / G.min())})
        k += 1
    return out
