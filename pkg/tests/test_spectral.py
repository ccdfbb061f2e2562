import math

import numpy as np
import pytest

from confcover.domain import ShapeSpec, build_domain
from confcover.reference_ball import BallReference
from confcover.spectral import (
    apply_kernel,
    confined_kernel,
    continuum_eigenvalue,
    convergence_error,
    discrete_laplacian,
    eigenvalue_asymptotic_check,
    ratio_bound,
    regularity_constant,
    solve_principal_eigenpair,
)
from confcover.walk import segment_eigenpair


@pytest.mark.parametrize("N", [1, 2, 5, 30])
def test_path_graph_closed_form(N):
    eig = segment_eigenpair(N)
    m = 2 * N + 1
    assert eig.lam == pytest.approx(math.cos(math.pi / (m + 1)), abs=1e-12)
    exact = np.sin(math.pi * np.arange(1, m + 1) / (m + 1))
    exact *= math.sqrt(N / np.sum(exact**2))
    np.testing.assert_allclose(eig.phi, exact, atol=1e-10)


def test_single_site():
    eig = solve_principal_eigenpair(build_domain(ShapeSpec.ball(3, 1.0), 1))
    assert eig.lam == 0.0
    assert eig.phi[0] ** 2 == pytest.approx(1.0)


@pytest.fixture(scope="module")
def ball12():
    return solve_principal_eigenpair(build_domain(ShapeSpec.ball(3, 1.0), 12))


def test_eigen_equation_and_normalisation(ball12):
    eig = ball12
    assert eig.residual <= 1e-12
    assert np.max(np.abs(apply_kernel(eig.domain, eig.phi) - eig.lam * eig.phi)) <= 1e-12
    assert math.fsum(eig.phi**2) == pytest.approx(12**3, rel=1e-13)
    assert np.all(eig.phi > 0)


def test_laplacian_form(ball12):
    lap = discrete_laplacian(ball12.phi, ball12.domain)
    np.testing.assert_allclose(lap, (ball12.lam - 1) * ball12.phi, atol=1e-12)


def test_kernel_stochastic_and_reversible(ball12):
    kern = confined_kernel(ball12)
    P = kern.probabilities()
    np.testing.assert_allclose(P.sum(axis=1), 1.0, atol=1e-13)
    ok = ball12.domain.neighbors >= 0
    np.testing.assert_allclose(P[ok], kern.formula_probabilities()[ok], atol=1e-10)
    assert np.all(P[~ok] == 0)
    phi2 = ball12.phi**2
    nb = ball12.domain.neighbors
    for k in range(6):
        back = k + 1 if k % 2 == 0 else k - 1
        x = np.flatnonzero(nb[:, k] >= 0)
        y = nb[x, k]
        np.testing.assert_allclose(phi2[x] * P[x, k], phi2[y] * P[y, back], atol=1e-13)


def test_segment_gap_tends_to_continuum():
    rows = eigenvalue_asymptotic_check(ShapeSpec.box([-1.0], [1.0]), [50, 200])
    assert continuum_eigenvalue(ShapeSpec.box([-1.0], [1.0])) == pytest.approx(math.pi**2 / 4)
    assert rows[1]["relative_error"] < rows[0]["relative_error"] < 0.05


def test_ball_gap_improves_with_N():
    rows = eigenvalue_asymptotic_check(ShapeSpec.ball(3, 1.0), [8, 16])
    assert rows[1]["relative_error"] < rows[0]["relative_error"]


def test_ratio_and_regularity_bounded(ball12):
    dom = ball12.domain
    inner = np.flatnonzero(np.linalg.norm(dom.sites, axis=1) < 0.7 * 12)
    assert 1 < ratio_bound(ball12, inner) < 20
    assert regularity_constant(ball12) < 10


def test_eigenvector_close_to_continuum():
    eig = solve_principal_eigenpair(build_domain(ShapeSpec.ball(3, 1.0), 20))
    assert convergence_error(eig, BallReference(3, 0.5), eta=0.2) < 0.1


def test_spectrum_of_box_domain():
    eig = solve_principal_eigenpair(build_domain(ShapeSpec.box([-1] * 3, [1] * 3), 2))
    # 3x3x3 grid: lambda = cos(pi/4)
    assert eig.lam == pytest.approx(math.cos(math.pi / 4), abs=1e-12)
