"""Closed-form continuum quantities for the unit ball.

The principal Dirichlet eigenfunction of the unit ball in R^d is radial,

    phi(r) = c * r^(1 - d/2) * J_nu(j r),    nu = d/2 - 1,

with ``j`` the first positive zero of ``J_nu`` and ``c`` chosen so that
``int_B phi^2 = 1``.  Everything here is scalar and cheap.
"""

from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
from scipy import integrate, optimize, special

from .errors import OutOfRange, ValidationError


def sphere_area(d):
    """Surface area of the unit sphere S^{d-1}."""
    return 2 * np.pi ** (d / 2) / special.gamma(d / 2)


def ball_volume(d, r=1.0):
    return np.pi ** (d / 2) / special.gamma(d / 2 + 1) * r**d


def first_bessel_zero(nu):
    """First positive zero of ``J_nu``, bracketed then refined by Brent's method."""
    # j_{nu,1} lies in (nu, nu + 2 sqrt(nu + 1) + 3) for nu >= -1/2
    a = max(nu, 1e-3)
    b = nu + 2 * np.sqrt(nu + 1) + 3
    xs = np.linspace(a, b, 400)
    vals = special.jv(nu, xs)
    k = np.flatnonzero(np.sign(vals[:-1]) != np.sign(vals[1:]))[0]
    return optimize.brentq(lambda x: special.jv(nu, x), xs[k], xs[k + 1], xtol=1e-15, rtol=1e-15)


@dataclass(frozen=True)
class BallReference:
    """Continuum eigenfunction of the unit ball with a centred target ``B(0, r0)``."""

    d: int = 3
    r0: float = 0.5

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        if not 0 < self.r0 < 1:
            raise OutOfRange("r0 must lie in (0, 1)")

    @property
    def nu(self):
        return self.d / 2 - 1

    @cached_property
    def sqrt_lambda(self):
        return first_bessel_zero(self.nu)

    @property
    def lambda_cont(self):
        return self.sqrt_lambda**2

    @cached_property
    def norm_const(self):
        # int_0^1 r J_nu(j r)^2 dr = J_{nu+1}(j)^2 / 2
        j = self.sqrt_lambda
        return float(np.sqrt(2.0 / (sphere_area(self.d) * special.jv(self.nu + 1, j) ** 2)))

    @staticmethod
    def _check_r(r, allow_zero=True):
        r = np.asarray(r, dtype=float)
        lo_bad = r < 0 if allow_zero else r <= 0
        if np.any(lo_bad) or np.any(r > 1):
            raise OutOfRange("radius outside the admissible range")
        return r

    def phi(self, r):
        """L^2-normalised eigenfunction at radius ``r`` (vectorised)."""
        r = self._check_r(r)
        j, nu = self.sqrt_lambda, self.nu
        with np.errstate(divide="ignore", invalid="ignore"):
            val = r ** (-nu) * special.jv(nu, j * r)
        # removable singularity: J_nu(x) ~ (x/2)^nu / Gamma(nu+1)
        val = np.where(r == 0, (j / 2) ** nu / special.gamma(nu + 1), val)
        out = self.norm_const * val
        return float(out) if out.ndim == 0 else out

    def phi2(self, r):
        return np.asarray(self.phi(r)) ** 2

    def grad_phi2(self, r):
        """Radial derivative of ``phi^2``.

        Uses ``d/dr [r^-nu J_nu(j r)] = -j r^-nu J_{nu+1}(j r)``.
        """
        r = self._check_r(r, allow_zero=False)
        j, nu, c = self.sqrt_lambda, self.nu, self.norm_const
        out = -2 * c**2 * j * r ** (-2 * nu) * special.jv(nu, j * r) * special.jv(nu + 1, j * r)
        return float(out) if np.ndim(out) == 0 else out

    @property
    def alpha(self):
        """Infimum of ``phi^2`` over the target ball, attained on its sphere."""
        return float(self.phi(self.r0) ** 2)

    @property
    def kappa(self):
        """Surface integral of ``1/|grad phi^2|`` over the sphere of radius ``r0``."""
        return float(sphere_area(self.d) * self.r0 ** (self.d - 1) / abs(self.grad_phi2(self.r0)))

    @property
    def kappa_volume_form(self):
        """Same expression with ``Vol(B^d)`` in place of the sphere area (a factor ``d`` smaller)."""
        return float(ball_volume(self.d) * self.r0 ** (self.d - 1) / abs(self.grad_phi2(self.r0)))

    @property
    def target_volume(self):
        return float(ball_volume(self.d, self.r0))

    @property
    def late_mass(self):
        """Limit of the expected late-point count at ``z = 0``.

        Equals ``kappa * alpha / Vol(Lambda)``: the count of lattice sites in the
        additive band ``[alpha, alpha + s)`` is ``N^d kappa s``, and the
        ``1/|Lambda_N|`` in the threshold converts sites to volume fractions.
        """
        return self.kappa * self.alpha / self.target_volume

    def radius_at_level(self, level):
        """Radius ``r`` in ``[0, 1]`` where ``phi^2(r) = level`` (``phi^2`` is decreasing)."""
        top = self.phi2(0.0)
        if level >= top:
            return 0.0
        if level <= 0:
            return 1.0
        return optimize.brentq(lambda r: self.phi2(r) - level, 0.0, 1.0, xtol=1e-15, rtol=1e-15)

    def band_volume(self, lo, hi):
        """Volume of ``{x in B(0, r0) : lo <= phi^2(x) < hi}`` computed from radii."""
        d = self.d
        r_hi = min(self.radius_at_level(lo), self.r0)
        r_lo = min(self.radius_at_level(hi), self.r0)
        if r_hi <= r_lo:
            return 0.0
        return float(ball_volume(d) * (r_hi**d - r_lo**d))

    def level_band(self, eps, multiplicative=False):
        """``eps^-1`` times the band volume above ``alpha`` inside the target.

        The additive band ``[alpha, alpha + eps)`` tends to ``kappa``; the
        multiplicative band ``[alpha, (1 + eps) alpha)`` tends to ``alpha * kappa``.
        """
        a = self.alpha
        hi = a * (1 + eps) if multiplicative else a + eps
        return self.band_volume(a, hi) / eps

    def level_band_quadrature(self, eps, multiplicative=False, panels=10_000):
        """Band volume by composite Simpson quadrature of the radial indicator density.

        Independent of :meth:`level_band`: integrates ``S r^{d-1}`` over the part
        of ``[0, r0]`` where ``phi^2`` lies in the band, with the band edge
        located by bisection on a fine grid.
        """
        a = self.alpha
        hi = a * (1 + eps) if multiplicative else a + eps
        r = np.linspace(0, self.r0, panels + 1)
        f = self.phi2(r)
        inside = (f >= a - 1e-15) & (f < hi)
        # sub-panel edge refinement at the inner edge of the band
        k = np.flatnonzero(inside)
        if len(k) == 0:
            return 0.0
        r_in = r[k[0]]
        if k[0] > 0:
            r_in = optimize.brentq(lambda x: self.phi2(x) - hi, r[k[0] - 1], r[k[0]], xtol=1e-15)
        rr = np.linspace(r_in, self.r0, panels + 1)
        vol = integrate.simpson(sphere_area(self.d) * rr ** (self.d - 1), x=rr)
        return float(vol / eps)

    def normalization(self, panels=10_000):
        """``int_B phi^2`` by Simpson's rule; equals 1."""
        r = np.linspace(0, 1, panels + 1)
        return float(integrate.simpson(sphere_area(self.d) * r ** (self.d - 1) * self.phi2(r), x=r))

    def ode_residual(self, r):
        """Residual of ``r^2 u'' + (d-1) r u' + lambda r^2 u = 0`` by five-point differences."""
        r = np.asarray(r, dtype=float)
        h = 1e-3
        u = [self.phi(r + k * h) for k in (-2, -1, 0, 1, 2)]
        u1 = (u[0] - 8 * u[1] + 8 * u[3] - u[4]) / (12 * h)
        u2 = (-u[0] + 16 * u[1] - 30 * u[2] + 16 * u[3] - u[4]) / (12 * h**2)
        return r**2 * u2 + (self.d - 1) * r * u1 + self.lambda_cont * r**2 * u[2]

    def table(self, n=101):
        r = np.linspace(0, 1, n)
        g = np.full(n, np.nan)
        g[1:] = self.grad_phi2(r[1:])
        g[0] = 0.0
        return r, self.phi(r), self.phi2(r), g

    def summary(self):
        return {
            "d": self.d,
            "r0": self.r0,
            "lambda": self.lambda_cont,
            "norm_const": self.norm_const,
            "alpha": self.alpha,
            "kappa": self.kappa,
            "kappa_volume_form": self.kappa_volume_form,
            "late_mass": self.late_mass,
        }
