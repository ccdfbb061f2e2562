"""Principal Dirichlet eigenpair of the killed walk and the confined kernel.

The killed simple random walk on ``D_N`` has transition matrix
``P_N = A / (2d)`` with ``A`` the adjacency matrix of the site graph.  It is
symmetric, so Lanczos iteration finds its top eigenpair directly.  Plain
power iteration is not used on its own: the lattice graph is bipartite, so
``-lambda_N`` is also an eigenvalue and the iterates oscillate.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy.sparse.linalg import ArpackNoConvergence, eigsh

from .domain import Domain, ShapeSpec, build_domain
from .errors import NoConvergence, ValidationError


@dataclass(frozen=True, eq=False)
class EigenPair:
    """``P_N phi = lambda phi`` with ``phi > 0`` and ``sum(phi^2) = N^d``."""

    lam: float
    phi: np.ndarray
    residual: float
    iterations: int
    domain: Domain

    @property
    def N(self):
        return self.domain.N

    def phi2(self):
        return self.phi**2


def apply_kernel(domain: Domain, v: np.ndarray) -> np.ndarray:
    """``P_N v``: neighbour average with zero outside ``D_N``."""
    nb = domain.neighbors
    padded = np.append(v, 0.0)
    return padded[nb].sum(axis=1) / nb.shape[1]


def discrete_laplacian(h: np.ndarray, domain: Domain) -> np.ndarray:
    """``(1/2d) sum_e h(z+e) - h(z)`` with ``h = 0`` outside the domain.

    For the principal eigenvector this returns ``(lambda_N - 1) phi_N``.
    """
    h = np.asarray(h, dtype=float)
    if h.shape != (domain.size,):
        raise ValidationError("h must have one value per site")
    return apply_kernel(domain, h) - h


def _residual(domain, phi, lam):
    return float(np.max(np.abs(apply_kernel(domain, phi) - lam * phi)))


def _normalize(phi, N, d):
    phi = np.abs(phi)
    s = math.fsum(phi**2)
    return phi * math.sqrt(N**d / s)


def _rayleigh(domain, phi):
    return math.fsum(phi * apply_kernel(domain, phi)) / math.fsum(phi * phi)


def solve_principal_eigenpair(domain: Domain, tol: float = 1e-12, max_iter: int | None = None):
    """Top eigenpair of ``P_N`` with residual ``max|P phi - lambda phi| <= tol``.

    Lanczos (ARPACK) supplies the eigenvector; if its residual after
    normalisation exceeds ``tol`` the vector is polished by iterating the
    lazy kernel ``(I + P_N)/2``, whose spectrum is nonnegative, with the
    Rayleigh quotient re-evaluated each sweep.
    """
    if tol <= 0:
        raise ValidationError("tol must be positive")
    d, N, n = domain.d, domain.N, domain.size
    if max_iter is None:
        max_iter = 10 * N * N * d
    if n == 1:
        phi = np.array([math.sqrt(N**d)])
        return EigenPair(0.0, phi, 0.0, 0, domain)
    if n <= 3:
        w, v = np.linalg.eigh(domain.adjacency.toarray() / (2 * d))
        phi = _normalize(v[:, -1], N, d)
        lam = _rayleigh(domain, phi)
        return EigenPair(lam, phi, _residual(domain, phi, lam), 1, domain)

    P = domain.adjacency / (2.0 * d)
    # deterministic start vector close to the answer shape
    v0 = np.ones(n)
    try:
        w, v = eigsh(P, k=1, which="LA", v0=v0, tol=0.0, maxiter=max_iter, ncv=min(n, 40))
        phi = v[:, 0]
    except ArpackNoConvergence as exc:
        if exc.eigenvectors.shape[1] == 0:
            raise NoConvergence(max_iter, float("nan")) from None
        phi = exc.eigenvectors[:, 0]
    if phi.sum() < 0:
        phi = -phi
    phi = _normalize(phi, N, d)
    lam = _rayleigh(domain, phi)
    res = _residual(domain, phi, lam)
    sweeps = 0
    while res > tol and sweeps < max_iter:
        phi = 0.5 * (phi + apply_kernel(domain, phi))
        phi = _normalize(phi, N, d)
        lam = _rayleigh(domain, phi)
        res = _residual(domain, phi, lam)
        sweeps += 1
    if res > tol:
        raise NoConvergence(max_iter, res)
    if not np.all(phi > 0):
        raise NoConvergence(max_iter, res, "eigenvector is not strictly positive")
    return EigenPair(float(lam), phi, res, sweeps, domain)


@dataclass(frozen=True, eq=False)
class ConfinedKernel:
    """Sampling tables for ``p_N(x, y) = phi(y) / (2d lambda phi(x))``.

    ``cum[x, j]`` is the cumulative sum of ``phi`` over the first ``j + 1``
    neighbour slots of ``x`` (zero for missing neighbours); sampling draws
    ``U * cum[x, -1]`` and so never depends on ``lambda_N``.
    """

    eig: EigenPair
    cum: np.ndarray

    @property
    def domain(self):
        return self.eig.domain

    @property
    def neighbors(self):
        return self.eig.domain.neighbors

    def probabilities(self):
        """Exact ``p_N(x, slot)`` table, rows summing to 1."""
        w = np.diff(self.cum, axis=1, prepend=0.0)
        return w / self.cum[:, -1:]

    def formula_probabilities(self):
        """``phi(y) / (2d lambda phi(x))`` evaluated literally from the eigenpair."""
        dom = self.domain
        padded = np.append(self.eig.phi, 0.0)
        nb = padded[dom.neighbors]
        return nb / (2 * dom.d * self.eig.lam * self.eig.phi[:, None])


def confined_kernel(eig: EigenPair) -> ConfinedKernel:
    padded = np.append(eig.phi, 0.0)
    w = padded[eig.domain.neighbors]
    return ConfinedKernel(eig, np.cumsum(w, axis=1))


def eigenvalue_asymptotic_check(shape: ShapeSpec, N_list, lambda_cont: float | None = None, tol=1e-12):
    """Rescaled spectral gap ``(1 - lambda_N) 2d N^2`` against the continuum eigenvalue.

    ``lambda_cont`` defaults to the Bessel-zero value for a ball centred at
    the origin (scaled by ``1/R^2``) and to ``sum (pi/L_i)^2`` for a box.
    """
    if lambda_cont is None:
        lambda_cont = continuum_eigenvalue(shape)
    rows = []
    for N in N_list:
        dom = build_domain(shape, N)
        eig = solve_principal_eigenpair(dom, tol=tol)
        gap = (1 - eig.lam) * 2 * shape.d * N**2
        rows.append(
            {
                "N": int(N),
                "lambda_N": eig.lam,
                "rescaled_gap": gap,
                "relative_error": abs(gap - lambda_cont) / lambda_cont,
                "residual": eig.residual,
            }
        )
    return rows


def continuum_eigenvalue(shape: ShapeSpec) -> float:
    from .reference_ball import first_bessel_zero

    if shape.kind == "ball":
        return first_bessel_zero(shape.d / 2 - 1) ** 2 / shape.radius**2
    if shape.kind == "box":
        return float(sum((np.pi / (b - a)) ** 2 for a, b in zip(shape.lo, shape.hi)))
    raise ValidationError("no closed-form continuum eigenvalue for this shape")


def ratio_bound(eig: EigenPair, sites) -> float:
    """``max/min`` of ``phi_N`` over a site subset."""
    v = eig.phi[np.asarray(sites)]
    return float(v.max() / v.min())


def regularity_constant(eig: EigenPair, sites=None) -> float:
    """Smallest ``C`` with ``|phi(x) - phi(y)| <= C / N`` over adjacent pairs from ``sites``."""
    dom = eig.domain
    idx = np.arange(dom.size) if sites is None else np.asarray(sites)
    nb = dom.neighbors[idx]
    ok = nb >= 0
    diff = np.abs(eig.phi[idx][:, None] - eig.phi[np.where(ok, nb, 0)])
    return float(np.max(np.where(ok, diff, 0.0)) * dom.N)


def convergence_error(eig: EigenPair, reference, eta: float = 0.1) -> float:
    """``sup |phi_N(x) / phi(x/N) - 1|`` over sites at distance ``> eta N`` from the boundary."""
    dom = eig.domain
    far = dom.distance_to_boundary() > eta * dom.N
    r = np.linalg.norm(dom.sites[far] / dom.N, axis=1)
    ref = reference.phi(np.minimum(r, 1.0))
    return float(np.max(np.abs(eig.phi[far] / ref - 1)))
