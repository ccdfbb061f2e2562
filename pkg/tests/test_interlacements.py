import math

import numpy as np
import pytest
from scipy import stats
from scipy.spatial.distance import pdist

from confcover.errors import LevelCapReached, LevelsIncomplete, ValidationError
from confcover.greens import green_origin
from confcover.interlacements import (
    CoverLevels,
    cover_levels,
    entrance_law,
    expected_rho_cardinality,
    min_pairwise_distance,
    rho_set,
    rho_threshold,
    sample_trace,
    scattering_scale,
)
from confcover.potential import TiltedBox, equilibrium_measure
from confcover.rng import stream
from confcover.tilted import TiltField

R = 8


@pytest.fixture(scope="module")
def flat():
    psi = TiltField.untilted(3)
    return psi, TiltedBox(psi, R)


def test_singleton_cover_level_exponential(flat):
    psi, box = flat
    x = np.zeros((1, 3), dtype=np.int64)
    eq = equilibrium_measure(psi, x, box_radius=box)
    u = [cover_levels(psi, x, eq, 200.0, stream(1, "levels", i), R).levels[0] for i in range(3000)]
    assert stats.kstest(u, "expon", args=(0, 1 / eq.capacity)).pvalue > 0.01


def test_trace_vacancy_probability(flat):
    psi, box = flat
    K = np.array([[0, 0, 0], [1, 0, 0], [0, 2, 0]])
    eq = equilibrium_measure(psi, K, box_radius=box)
    u = 0.6
    n = 4000
    vac = np.array([sample_trace(psi, K, u, eq, stream(2, "trace", i), R).vacant for i in range(n)])
    # the whole set is vacant with probability exp(-u cap(K))
    p = math.exp(-u * eq.capacity)
    assert abs(vac.all(axis=1).mean() - p) < 4 * math.sqrt(p * (1 - p) / n)
    # each site is vacant with probability exp(-u cap({x}))
    for i in range(len(K)):
        cap1 = equilibrium_measure(psi, K[i : i + 1], box_radius=box).capacity
        q = math.exp(-u * cap1)
        assert abs(vac[:, i].mean() - q) < 4 * math.sqrt(q * (1 - q) / n)


def test_trace_level_zero_and_errors(flat):
    psi, box = flat
    K = np.zeros((1, 3), dtype=np.int64)
    eq = equilibrium_measure(psi, K, box_radius=box)
    s = sample_trace(psi, K, 0.0, eq, stream(0, "trace", 0), R)
    assert s.trajectory_count == 0 and len(s.trace) == 0 and s.vacant.all()
    with pytest.raises(ValidationError):
        sample_trace(psi, K, -1.0, eq, stream(0, "trace", 0), R)
    with pytest.raises(ValidationError):
        sample_trace(TiltField.untilted(2), K[:, :2], 1.0, eq, stream(0, "trace", 0), R)


def test_cover_levels_cap_and_reproducibility(flat):
    psi, box = flat
    K = np.array([[i, j, 0] for i in range(3) for j in range(3)])
    eq = equilibrium_measure(psi, K, box_radius=box)
    with pytest.raises(LevelCapReached):
        cover_levels(psi, K, eq, 1e-3, stream(0, "levels", 0), R)
    part = cover_levels(psi, K, eq, 1e-3, stream(0, "levels", 0), R, raise_on_cap=False)
    assert not part.complete and math.isinf(part.set_level)
    a = cover_levels(psi, K, eq, 500.0, stream(0, "levels", 1), R)
    b = cover_levels(psi, K, eq, 500.0, stream(0, "levels", 1), R)
    assert np.array_equal(a.levels, b.levels)
    assert a.complete and a.set_level == a.levels.max()
    assert np.array_equal(a.covered_below(a.set_level), np.ones(len(K), bool))


def test_entrance_law_is_normalized_equilibrium(flat):
    psi, box = flat
    K = np.array([[0, 0, 0], [1, 0, 0], [0, 1, 0], [2, 2, 0]])
    B = np.array([[i, j, k] for i in range(-2, 4) for j in range(-2, 4) for k in range(-2, 3)])
    eqK = equilibrium_measure(psi, K, box_radius=box)
    eqB = equilibrium_measure(psi, B, box_radius=box)
    counts = entrance_law(psi, K, eqB, 60_000, stream(0, "entrance", 0), R)
    n = counts.sum()
    expected = eqK.weights / eqK.capacity * n
    assert stats.chisquare(counts, expected).pvalue > 1e-3
    # the entered fraction is cap(K) / cap(B)
    frac = n / 60_000
    assert frac == pytest.approx(eqK.capacity / eqB.capacity, abs=4 * math.sqrt(frac * (1 - frac) / 60_000))


def test_rho_set_and_helpers():
    T = np.array([[0, 0, 0], [3, 0, 0], [0, 4, 0], [5, 5, 5]])
    alpha = 0.5
    u = rho_threshold(0.25, alpha, len(T))
    assert u == pytest.approx(0.75 * green_origin(3) / alpha * math.log(4))
    levels = CoverLevels(np.array([u + 1, u - 1, u + 2, u + 3]), u + 3, 10, 100.0)
    idx, summ = rho_set(levels, 0.25, T, alpha)
    assert idx.tolist() == [0, 2, 3]
    assert summ["cardinality"] == 3
    assert summ["min_distance"] == pytest.approx(pdist(T[idx]).min())
    with pytest.raises(ValidationError):
        rho_set(levels, 1.0, T, alpha)
    short = CoverLevels(np.array([np.inf] * 4), np.inf, 0, u / 2)
    with pytest.raises(LevelsIncomplete):
        rho_set(short, 0.25, T, alpha)
    assert scattering_scale(0.25, 100) == pytest.approx(100.0)
    assert math.isinf(min_pairwise_distance(T[:1]))
    rng = np.random.default_rng(0)
    pts = rng.integers(0, 20, size=(50, 3))
    assert min_pairwise_distance(pts) == pytest.approx(pdist(pts).min())
    phi2 = np.array([1.0, 2.0])
    assert expected_rho_cardinality(phi2, 1.0) == pytest.approx(
        math.exp(-1 / green_origin(3)) + math.exp(-2 / green_origin(3)))
