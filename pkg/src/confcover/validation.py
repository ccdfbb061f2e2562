"""Fast end-to-end invariant suite behind the ``validate`` command."""

from __future__ import annotations

import math

import numpy as np

from .domain import ShapeSpec, build_domain, build_target
from .greens import green_origin, green_origin_closed_form_3d
from .interlacements import cover_levels
from .potential import TiltedBox, equilibrium_measure, last_exit_check, two_point_capacity
from .reference_ball import BallReference
from .rng import stream
from .spectral import confined_kernel, solve_principal_eigenpair
from .tilted import tilt_field


def _neighbor_asymmetry(dom):
    bad = 0
    for k in range(2 * dom.d):
        back = k + 1 if k % 2 == 0 else k - 1
        j = dom.neighbors[:, k]
        ok = j >= 0
        bad += int(np.sum(dom.neighbors[j[ok], back] != np.flatnonzero(ok)))
    return float(bad)


def run_validation(N: int = 8, seed: int = 1, d: int = 3):
    """Return ``(name, passed, value)`` triples for a ball-in-ball setup at scale ``N``."""
    out = []

    def check(name, value, limit):
        out.append((name, bool(value <= limit), float(value)))

    dom = build_domain(ShapeSpec.ball(d, 1.0), N)
    check("domain_neighbor_symmetry", _neighbor_asymmetry(dom), 0)
    inside = dom.shape.contains(dom.boundary)
    check("domain_boundary_outside", float(np.sum(inside)), 0)
    bigger = build_domain(ShapeSpec.ball(d, 1.0), N + 1)
    check("domain_monotone", float(dom.size > bigger.size), 0)

    eig = solve_principal_eigenpair(dom)
    check("eigen_residual", eig.residual, 1e-10)
    check("eigen_normalization", abs(math.fsum(eig.phi**2) - N**d) / N**d, 1e-12)
    check("eigen_positive", float(np.sum(eig.phi <= 0)), 0)

    kern = confined_kernel(eig)
    P = kern.probabilities()
    check("kernel_row_sums", float(np.max(np.abs(P.sum(axis=1) - 1))), 1e-12)
    phi2 = eig.phi**2
    nb = dom.neighbors
    gap = 0.0
    for k in range(2 * d):
        back = k + 1 if k % 2 == 0 else k - 1
        ok = nb[:, k] >= 0
        x = np.flatnonzero(ok)
        y = nb[ok, k]
        gap = max(gap, float(np.max(np.abs(phi2[x] * P[x, k] - phi2[y] * P[y, back]), initial=0.0)))
    check("kernel_reversibility", gap, 1e-12)

    ref = BallReference(d, 0.5)
    check("reference_normalization", abs(ref.normalization() - 1), 1e-8)
    check("reference_ode_residual", float(np.max(np.abs(ref.ode_residual(np.array([0.2, 0.5, 0.8]))))), 1e-8)
    if d == 3:
        check("green_origin_closed_form", abs(green_origin(3) - green_origin_closed_form_3d()), 1e-10)

    s1 = stream(seed, "walk", 0).random(4)
    s2 = stream(seed, "walk", 0).random(4)
    check("stream_reproducible", float(np.max(np.abs(s1 - s2))), 0)

    if d < 3:
        return out
    target = build_target(dom, ShapeSpec.ball(d, 0.5), 0.2)
    psi = tilt_field(eig, target)
    box = TiltedBox(psi, 3 * N)
    T = dom.sites[target.sites]
    x, y = T[0], T[len(T) // 2]
    gx, gy = box.green(x), box.green(y)
    lhs = box.pi_at(x)[0] * gx.G(y)[0]
    rhs = box.pi_at(y)[0] * gy.G(x)[0]
    check("green_reversibility", abs(lhs - rhs) / abs(lhs), 1e-8)
    c2 = two_point_capacity(box, x, y, solves=(gx, gy))
    eq = equilibrium_measure(psi, np.vstack([x, y]), box_radius=box)
    check("two_point_capacity", abs(c2 - eq.capacity) / eq.capacity, 1e-8)
    le = last_exit_check(box, np.vstack([x, y]), [np.zeros(d, dtype=np.int64)])
    check("last_exit_identity", le["max_gap"], 1e-6)
    eq1 = equilibrium_measure(psi, x[None, :], box_radius=box)
    check("capacity_monotone", max(eq1.capacity - eq.capacity, 0.0), 0)

    eqT = equilibrium_measure(psi, T, box_radius=box)
    u_cap = 10 * green_origin(d) / float(np.min(phi2[target.sites])) * math.log(target.size)
    a = cover_levels(psi, T, eqT, u_cap, stream(seed, "levels", 0), box.R)
    b = cover_levels(psi, T, eqT, u_cap, stream(seed, "levels", 0), box.R)
    check("levels_reproducible", float(np.max(np.abs(a.levels - b.levels))), 0)
    check("levels_complete", float(not a.complete), 0)
    return out
