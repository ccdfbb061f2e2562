import math

import numpy as np
import pytest
from scipy import stats

from confcover.domain import ShapeSpec, build_domain, build_target
from confcover.errors import BudgetExhausted, ValidationError
from confcover.rng import stream
from confcover.spectral import confined_kernel, solve_principal_eigenpair
from confcover.walk import (
    WalkConfig,
    cover_campaign,
    default_t_max,
    feynman_kac_check,
    late_points,
    occupation_check,
    run_cover,
    sample_stationary,
    segment_cover,
    segment_eigenpair,
    stationary_frequencies,
    step_frequencies,
)


@pytest.fixture(scope="module")
def setup():
    dom = build_domain(ShapeSpec.ball(3, 1.0), 6)
    eig = solve_principal_eigenpair(dom)
    target = build_target(dom, ShapeSpec.ball(3, 0.5), 0.2)
    return dom, eig, confined_kernel(eig), target


def test_step_frequencies_match_kernel(setup):
    dom, eig, kern, _ = setup
    x = int(np.argmin(np.linalg.norm(dom.sites - [3, 1, 0], axis=1)))
    n = 200_000
    f = step_frequencies(kern, x, n, stream(0, "walk", 9))
    p = kern.probabilities()[x]
    ok = p > 0
    assert np.all(f[~ok] == 0)
    _, pval = stats.chisquare(f[ok] * n, p[ok] * n)
    assert pval > 1e-3


def test_stationary_frequencies(setup):
    _, eig, _, _ = setup
    n = 400_000
    f = stationary_frequencies(eig, n, stream(0, "stationary", 0))
    p = eig.phi**2 / np.sum(eig.phi**2)
    assert 0.5 * np.abs(f - p).sum() < 0.02
    x = sample_stationary(eig, stream(0, "stationary", 1))
    assert 0 <= x < eig.domain.size


def test_occupation_approaches_phi_squared(setup):
    dom, _, kern, target = setup
    rep = occupation_check(kern, target.sites, 2_000_000, seed=2)
    assert rep["tv"] < 0.03


def test_feynman_kac_agreement(setup):
    dom, eig, _, _ = setup
    x0 = int(np.argmin(np.linalg.norm(dom.sites - [1, 0, 0], axis=1)))
    rep = feynman_kac_check(eig, x0, 3.0, samples=20_000, seed=1)
    assert rep["z"] < 4
    assert rep["confined"] > 0.5


def test_cover_run_consistency(setup):
    dom, _, kern, target = setup
    cfg = WalkConfig(default_t_max(kern.eig, target), seed=4, replica_id=0)
    a = run_cover(kern, target, cfg)
    b = run_cover(kern, target, cfg)
    assert np.array_equal(a.hit_time, b.hit_time)
    assert a.covered and a.cover_time == a.hit_time.max() == a.trajectory_length
    assert np.all(a.hit_time >= 0)
    late = late_points(a, a.cover_time - 1)
    assert len(late) >= 1
    assert len(late_points(a, a.cover_time)) == 0
    sites, scaled = late_points(a, 0, dom)
    assert np.all(np.abs(scaled) <= 1)


def test_cover_from_target_site(setup):
    _, _, kern, target = setup
    x0 = int(target.sites[0])
    res = run_cover(kern, target, WalkConfig(10**7, seed=1, start=x0))
    assert res.hit_time[0] == 0 and res.start == x0


def test_budget_exhausted(setup):
    _, _, kern, target = setup
    with pytest.raises(BudgetExhausted):
        run_cover(kern, target, WalkConfig(5))
    res = run_cover(kern, target, WalkConfig(5), raise_on_budget=False)
    assert not res.covered and res.cover_time is None
    with pytest.raises(ValidationError):
        late_points(res, 100)
    with pytest.raises(ValidationError):
        WalkConfig(0)
    with pytest.raises(ValidationError):
        WalkConfig(10, start="center")


def test_cover_campaign_thread_independent(setup):
    _, _, kern, target = setup
    a = cover_campaign(kern, target, 6, seed=3, threads=1)
    b = cover_campaign(kern, target, 6, seed=3, threads=3)
    assert [r.cover_time for r in a] == [r.cover_time for r in b]
    assert len({r.cover_time for r in a}) > 1


def _segment_expected_cover(N):
    """Exact mean time for the confined segment walk from 0 to visit both endpoints."""
    eig = segment_eigenpair(N)
    phi = np.concatenate([[0.0], eig.phi, [0.0]])
    n = 2 * N + 1
    pr = phi[2:] / (phi[2:] + phi[:-2])

    def hitting(targets):
        # mean hitting time and law of the first target hit, interior states only
        A = np.eye(n)
        b = np.zeros(n)
        for k in range(n):
            if k in targets:
                continue
            b[k] = 1.0
            if k + 1 < n:
                A[k, k + 1] -= pr[k]
            if k - 1 >= 0:
                A[k, k - 1] -= 1 - pr[k]
        return np.linalg.solve(A, b)

    t_both = hitting({0, n - 1})
    A = np.eye(n)
    rhs = np.zeros(n)
    for k in range(1, n - 1):
        A[k, k + 1] -= pr[k]
        A[k, k - 1] -= 1 - pr[k]
    rhs[n - 1] = 1.0
    p_top = np.linalg.solve(A, rhs)
    to_bottom = hitting({0})
    to_top = hitting({n - 1})
    c = N
    return t_both[c] + p_top[c] * to_bottom[n - 1] + (1 - p_top[c]) * to_top[0]


def test_segment_cover_mean_matches_exact():
    N = 4
    rows = segment_cover(N, 4000, seed=5)
    t = np.array([r["cover_time"] for r in rows], dtype=float)
    exact = _segment_expected_cover(N)
    assert abs(t.mean() - exact) < 4 * t.std(ddof=1) / math.sqrt(len(t))


def test_segment_excursion_structure():
    rows = segment_cover(6, 200, seed=1, threads=2)
    for r in rows:
        s = r["signs"]
        assert r["excursions"] == len(s) >= 2
        assert len(set(s[:-1])) == 1 and s[-1] == -s[0]
        assert sum(r["durations"]) <= r["cover_time"]
    again = segment_cover(6, 200, seed=1, threads=1)
    assert [r["cover_time"] for r in rows] == [r["cover_time"] for r in again]
    with pytest.raises(ValidationError):
        segment_cover(1, 1)


def test_segment_eigenpair_closed_form():
    N = 10
    eig = segment_eigenpair(N)
    assert eig.domain.size == 2 * N + 1
    assert eig.lam == pytest.approx(math.cos(math.pi / (2 * N + 2)), rel=1e-12)
