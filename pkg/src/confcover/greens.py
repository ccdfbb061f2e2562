"""Green function of the simple random walk on Z^d.

``g(0)`` comes from the integral representation

    g(0) = int_0^inf [e^{-t/d} I_0(t/d)]^d dt,

which follows from the continuous-time walk spending an Exp(1) time per
step.  For ``d = 3`` a closed form in Gamma functions is also available and
serves as an independent check.
"""

from __future__ import annotations

from functools import lru_cache

import numpy as np
from scipy import integrate, special

from .errors import ValidationError


@lru_cache(maxsize=None)
def green_origin(d: int = 3) -> float:
    """``g(0)``, the expected number of visits to the origin of SRW on ``Z^d``."""
    if d < 3:
        raise ValidationError("the walk is recurrent for d < 3")

    def f(t):
        return special.ive(0, t / d) ** d

    # the integrand decays like t^{-d/2}; split to keep quad accurate
    a, _ = integrate.quad(f, 0, 50, epsabs=1e-14, epsrel=1e-13, limit=400)
    b, _ = integrate.quad(f, 50, np.inf, epsabs=1e-14, epsrel=1e-13, limit=400)
    return a + b


def green_origin_closed_form_3d() -> float:
    """Closed-form value of ``g(0)`` in three dimensions (product of Gamma values)."""
    g = special.gamma
    return float(np.sqrt(6) / (32 * np.pi**3) * g(1 / 24) * g(5 / 24) * g(7 / 24) * g(11 / 24))


def green_asymptotic(r, d: int = 3):
    """Leading-order ``g(x) ~ c_d |x|^{2-d}`` with ``c_d = d Gamma(d/2 - 1) / (2 pi^{d/2})``."""
    c = d * special.gamma(d / 2 - 1) / (2 * np.pi ** (d / 2))
    return c * np.asarray(r, dtype=float) ** (2 - d)
