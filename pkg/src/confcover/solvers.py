"""Linear solves for conductance Laplacians on lattice cubes.

The operator is ``(A u)(x) = D(x) u(x) - sum_y c(x, y) u(y)`` with
``D(x) = sum_y c(x, y)`` over all ``2d`` lattice neighbours, acting on the
*free* nodes of a grid; every other node is held at zero.  Conductances
towards nodes outside the grid still count in ``D``, which makes the grid
edge absorbing.

In three dimensions the solver is conjugate gradients preconditioned by a
geometric multigrid V-cycle (red-black Gauss-Seidel smoothing, coarse
conductances from series/parallel combination).  Other dimensions use a
sparse matrix with an algebraic multigrid preconditioner from ``pyamg``.
"""

from __future__ import annotations

import numba as nb
import numpy as np
from scipy import linalg, sparse

from .errors import NoConvergence

MAX_COARSE = 12


def grid_size(min_nodes: int) -> int:
    """Smallest ``n = m 2^k - 1 >= min_nodes`` with ``2 <= m <= MAX_COARSE`` and ``k >= 1``."""
    best = None
    for m in range(2, MAX_COARSE + 1):
        k = 1
        while m * 2**k - 1 < min_nodes:
            k += 1
        n = m * 2**k - 1
        if best is None or n < best:
            best = n
    return best


# ---------------------------------------------------------------- kernels


@nb.njit(cache=True, nogil=True)
def _diag(cx, cy, cz):
    n0, n1, n2 = cx.shape[0] - 1, cy.shape[1] - 1, cz.shape[2] - 1
    D = np.empty((n0, n1, n2))
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                D[i, j, k] = (
                    cx[i, j, k] + cx[i + 1, j, k] + cy[i, j, k] + cy[i, j + 1, k] + cz[i, j, k] + cz[i, j, k + 1]
                )
    return D


@nb.njit(cache=True, nogil=True)
def _matvec(u, cx, cy, cz, D, free, out):
    n0, n1, n2 = u.shape
    for i in range(n0):
        for j in range(n1):
            for k in range(n2):
                if not free[i, j, k]:
                    out[i, j, k] = 0.0
                    continue
                s = D[i, j, k] * u[i, j, k]
                if i > 0:
                    s -= cx[i, j, k] * u[i - 1, j, k]
                if i < n0 - 1:
                    s -= cx[i + 1, j, k] * u[i + 1, j, k]
                if j > 0:
                    s -= cy[i, j, k] * u[i, j - 1, k]
                if j < n1 - 1:
                    s -= cy[i, j + 1, k] * u[i, j + 1, k]
                if k > 0:
                    s -= cz[i, j, k] * u[i, j, k - 1]
                if k < n2 - 1:
                    s -= cz[i, j, k + 1] * u[i, j, k + 1]
                out[i, j, k] = s


@nb.njit(cache=True, nogil=True)
def _gs_color(u, b, cx, cy, cz, D, free, color):
    n0, n1, n2 = u.shape
    for i in range(n0):
        for j in range(n1):
            k0 = (i + j + color) % 2
            for k in range(k0, n2, 2):
                if not free[i, j, k]:
                    continue
                s = b[i, j, k]
                if i > 0:
                    s += cx[i, j, k] * u[i - 1, j, k]
                if i < n0 - 1:
                    s += cx[i + 1, j, k] * u[i + 1, j, k]
                if j > 0:
                    s += cy[i, j, k] * u[i, j - 1, k]
                if j < n1 - 1:
                    s += cy[i, j + 1, k] * u[i, j + 1, k]
                if k > 0:
                    s += cz[i, j, k] * u[i, j, k - 1]
                if k < n2 - 1:
                    s += cz[i, j, k + 1] * u[i, j, k + 1]
                u[i, j, k] = s / D[i, j, k]


@nb.njit(cache=True, nogil=True)
def _restrict(rf, rc, free_c):
    nc = rc.shape[0]
    w = np.array([0.5, 1.0, 0.5])
    for I in range(nc):
        for J in range(nc):
            for K in range(nc):
                if not free_c[I, J, K]:
                    rc[I, J, K] = 0.0
                    continue
                s = 0.0
                for a in range(3):
                    for b in range(3):
                        wab = w[a] * w[b]
                        for c in range(3):
                            s += wab * w[c] * rf[2 * I + a, 2 * J + b, 2 * K + c]
                rc[I, J, K] = s


@nb.njit(cache=True, nogil=True)
def _prolong_add(ec, uf, free_f):
    nc = ec.shape[0]
    w = np.array([0.5, 1.0, 0.5])
    for I in range(nc):
        for J in range(nc):
            for K in range(nc):
                v = ec[I, J, K]
                if v == 0.0:
                    continue
                for a in range(3):
                    for b in range(3):
                        wab = w[a] * w[b] * v
                        for c in range(3):
                            i, j, k = 2 * I + a, 2 * J + b, 2 * K + c
                            if free_f[i, j, k]:
                                uf[i, j, k] += wab * w[c]


@nb.njit(cache=True, nogil=True)
def _coarsen(cx, cy, cz, nc):
    cxc = np.empty((nc + 1, nc, nc))
    cyc = np.empty((nc, nc + 1, nc))
    czc = np.empty((nc, nc, nc + 1))
    for I in range(nc + 1):
        for J in range(nc):
            for K in range(nc):
                a, b = cx[2 * I, 2 * J + 1, 2 * K + 1], cx[2 * I + 1, 2 * J + 1, 2 * K + 1]
                cxc[I, J, K] = 4.0 * a * b / (a + b)
                a, b = cy[2 * J + 1, 2 * I, 2 * K + 1], cy[2 * J + 1, 2 * I + 1, 2 * K + 1]
                cyc[J, I, K] = 4.0 * a * b / (a + b)
                a, b = cz[2 * J + 1, 2 * K + 1, 2 * I], cz[2 * J + 1, 2 * K + 1, 2 * I + 1]
                czc[J, K, I] = 4.0 * a * b / (a + b)
    return cxc, cyc, czc


@nb.njit(cache=True, nogil=True)
def _dot(a, b):
    s = 0.0
    fa, fb = a.ravel(), b.ravel()
    for i in range(fa.size):
        s += fa[i] * fb[i]
    return s


@nb.njit(cache=True, nogil=True)
def _axpy(alpha, x, y):
    fx, fy = x.ravel(), y.ravel()
    for i in range(fx.size):
        fy[i] += alpha * fx[i]


@nb.njit(cache=True, nogil=True)
def _xpby(x, beta, y):
    fx, fy = x.ravel(), y.ravel()
    for i in range(fx.size):
        fy[i] = fx[i] + beta * fy[i]


# ---------------------------------------------------------------- hierarchy


class _Level:
    __slots__ = ("cx", "cy", "cz", "D", "free", "u", "b", "r")

    def __init__(self, cx, cy, cz, free):
        self.cx, self.cy, self.cz = cx, cy, cz
        self.D = _diag(cx, cy, cz)
        self.free = free
        shape = free.shape
        self.u = np.zeros(shape)
        self.b = np.zeros(shape)
        self.r = np.zeros(shape)


class GridOperator:
    """Conductance Laplacian on an ``n^3`` grid with a free-node mask.

    Parameters
    ----------
    cx, cy, cz : ndarray
        Edge conductances; ``cx[i, j, k]`` joins nodes ``(i-1, j, k)`` and
        ``(i, j, k)``, so ``cx`` has shape ``(n+1, n, n)``.
    free : ndarray of bool
        Nodes where the unknown lives.  ``n`` must be of the form
        ``m 2^k - 1`` for the multigrid hierarchy (see :func:`grid_size`).
    """

    def __init__(self, cx, cy, cz, free):
        self.n = free.shape[0]
        self.cx, self.cy, self.cz = cx, cy, cz
        self.free = np.ascontiguousarray(free, dtype=np.bool_)
        self.D = _diag(cx, cy, cz)
        self._levels = None
        self._coarse = None

    def matvec(self, u):
        out = np.empty_like(u)
        _matvec(u, self.cx, self.cy, self.cz, self.D, self.free, out)
        return out

    def apply_full(self, u):
        """``A u`` at every grid node (not only free ones)."""
        out = np.empty_like(u)
        _matvec(u, self.cx, self.cy, self.cz, self.D, np.ones_like(self.free), out)
        return out

    def _build(self):
        levels = [_Level(self.cx, self.cy, self.cz, self.free)]
        n = self.n
        while n > MAX_COARSE and (n - 1) % 2 == 0 and (n - 1) // 2 >= 1:
            nc = (n - 1) // 2
            f = levels[-1]
            cxc, cyc, czc = _coarsen(f.cx, f.cy, f.cz, nc)
            free_c = np.ascontiguousarray(f.free[1::2, 1::2, 1::2])
            levels.append(_Level(cxc, cyc, czc, free_c))
            n = nc
        self._levels = levels
        last = levels[-1]
        idx = np.flatnonzero(last.free.ravel())
        m = len(idx)
        dense = np.zeros((m, m))
        e = np.zeros(last.free.shape)
        for col, p in enumerate(idx):
            e.ravel()[p] = 1.0
            out = np.empty_like(e)
            _matvec(e, last.cx, last.cy, last.cz, last.D, last.free, out)
            dense[:, col] = out.ravel()[idx]
            e.ravel()[p] = 0.0
        self._coarse = (idx, linalg.cho_factor(dense) if m else None)

    def _vcycle(self, lev, b, u, pre=2, post=2):
        L = self._levels[lev]
        if lev == len(self._levels) - 1:
            idx, fac = self._coarse
            u[...] = 0.0
            if fac is not None:
                u.ravel()[idx] = linalg.cho_solve(fac, b.ravel()[idx])
            return
        u[...] = 0.0
        for _ in range(pre):
            _gs_color(u, b, L.cx, L.cy, L.cz, L.D, L.free, 0)
            _gs_color(u, b, L.cx, L.cy, L.cz, L.D, L.free, 1)
        _matvec(u, L.cx, L.cy, L.cz, L.D, L.free, L.r)
        np.subtract(b, L.r, out=L.r)
        C = self._levels[lev + 1]
        _restrict(L.r, C.b, C.free)
        self._vcycle(lev + 1, C.b, C.u, pre, post)
        _prolong_add(C.u, u, L.free)
        for _ in range(post):
            _gs_color(u, b, L.cx, L.cy, L.cz, L.D, L.free, 1)
            _gs_color(u, b, L.cx, L.cy, L.cz, L.D, L.free, 0)

    def precondition(self, r):
        if self._levels is None:
            self._build()
        z = np.zeros_like(r)
        self._vcycle(0, r, z)
        return z

    def solve(self, b, rtol=1e-12, max_iter=200):
        """Preconditioned CG for ``A u = b`` on free nodes.

        Returns ``(u, iterations, relative_residual)``.
        """
        b = np.where(self.free, b, 0.0)
        bnorm = np.sqrt(_dot(b, b))
        u = np.zeros_like(b)
        if bnorm == 0:
            return u, 0, 0.0
        r = b.copy()
        z = self.precondition(r)
        p = z.copy()
        rz = _dot(r, z)
        q = np.empty_like(b)
        res = 1.0
        for it in range(1, max_iter + 1):
            _matvec(p, self.cx, self.cy, self.cz, self.D, self.free, q)
            alpha = rz / _dot(p, q)
            _axpy(alpha, p, u)
            _axpy(-alpha, q, r)
            res = np.sqrt(_dot(r, r)) / bnorm
            if res <= rtol:
                return u, it, res
            z = self.precondition(r)
            rz_new = _dot(r, z)
            _xpby(z, rz_new / rz, p)
            rz = rz_new
        raise NoConvergence(max_iter, res)


class SparseOperator:
    """Same operator for arbitrary dimension, assembled as a sparse matrix."""

    def __init__(self, conductances, free):
        """``conductances[a]`` has shape ``free.shape`` plus one along axis ``a``."""
        self.shape = free.shape
        self.free = free
        d = len(self.shape)
        n_all = free.size
        D = np.zeros(self.shape)
        rows, cols, vals = [], [], []
        lin = np.arange(n_all).reshape(self.shape)
        for a, c in enumerate(conductances):
            lo = [slice(None)] * d
            hi = [slice(None)] * d
            lo[a] = slice(0, -1)
            hi[a] = slice(1, None)
            D += np.take(c, range(0, self.shape[a]), axis=a) + np.take(c, range(1, self.shape[a] + 1), axis=a)
            inner = np.take(c, range(1, self.shape[a]), axis=a)
            i0, i1 = lin[tuple(lo)].ravel(), lin[tuple(hi)].ravel()
            rows += [i0, i1]
            cols += [i1, i0]
            vals += [-inner.ravel(), -inner.ravel()]
        self.D = D
        A = sparse.coo_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n_all, n_all))
        A = (A + sparse.diags(D.ravel())).tocsr()
        self.idx = np.flatnonzero(free.ravel())
        self.A_full = A
        self.A = A[self.idx][:, self.idx].tocsr()
        self._ml = None

    def matvec(self, u):
        out = np.zeros(self.shape)
        out.ravel()[self.idx] = self.A @ u.ravel()[self.idx]
        return out

    def apply_full(self, u):
        return (self.A_full @ u.ravel()).reshape(self.shape)

    def solve(self, b, rtol=1e-12, max_iter=200):
        import pyamg
        from scipy.sparse.linalg import cg

        if self._ml is None:
            self._ml = pyamg.smoothed_aggregation_solver(self.A, symmetry="symmetric")
        rhs = b.ravel()[self.idx]
        out = np.zeros(self.shape)
        if not np.any(rhs):
            return out, 0, 0.0
        count = [0]

        def cb(_):
            count[0] += 1

        x, info = cg(self.A, rhs, rtol=rtol, atol=0.0, maxiter=max_iter, M=self._ml.aspreconditioner(), callback=cb)
        res = np.linalg.norm(rhs - self.A @ x) / np.linalg.norm(rhs)
        if info != 0 and res > rtol:
            raise NoConvergence(max_iter, res)
        out.ravel()[self.idx] = x
        return out, count[0], res


def make_operator(conductances, free):
    """Multigrid operator in 3-D, sparse algebraic fallback otherwise."""
    if len(free.shape) == 3 and len(set(free.shape)) == 1 and grid_size(free.shape[0]) == free.shape[0]:
        cx, cy, cz = (np.ascontiguousarray(c, dtype=np.float64) for c in conductances)
        return GridOperator(cx, cy, cz, free)
    return SparseOperator(conductances, free)
