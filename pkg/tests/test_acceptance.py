"""One test per acceptance criterion; each prints a single PASS/FAIL line."""

import math
import shutil

import numpy as np
import pytest
from scipy import stats

from confcover.cli import run
from confcover.domain import ShapeSpec
from confcover.experiments import (
    CampaignConfig,
    Setup,
    bulk_probe_sites,
    coupling_check,
    exp_sum_check,
    first_order_ratios,
    gumbel_experiment,
    interlacement_campaign,
    late_point_experiment,
    level_band_check,
    point_capacity_ratios,
    rho_set_experiment,
    segment_summary,
    walk_campaign,
)
from confcover.greens import green_origin
from confcover.interlacements import CoverLevels, cover_levels, rho_set, sample_trace
from confcover.potential import TiltedBox, equilibrium_measure, last_exit_check, point_capacity, two_point_capacity
from confcover.rng import stream
from confcover.spectral import apply_kernel, eigenvalue_asymptotic_check
from confcover.tilted import TiltField
from confcover.walk import segment_cover, segment_eigenpair

REPLICAS = 300
SEED = 1


def _setup(N):
    return Setup(CampaignConfig(N=N, replicas=REPLICAS, seed=SEED))


@pytest.fixture(scope="session")
def setup16():
    return _setup(16)


@pytest.fixture(scope="session")
def levels16(setup16):
    return interlacement_campaign(setup16)


@pytest.fixture(scope="session")
def walks16(setup16):
    return walk_campaign(setup16)


@pytest.fixture(scope="session")
def trend_runs():
    """Interlacement campaigns at N = 12 and N = 20 for the trend parts of criteria 5 and 6."""
    out = {}
    for N in (12, 20):
        s = _setup(N)
        out[N] = (s, interlacement_campaign(s))
    return out


def test_criterion_01_eigen(criterion):
    worst = 0.0
    for N in (1, 3, 10, 25):
        eig = segment_eigenpair(N)
        m = 2 * N + 1
        # full spectrum of the kernel matrix against cos(k pi / (m + 1))
        K = np.column_stack([apply_kernel(eig.domain, col) for col in np.eye(m)])
        spectrum = np.sort(np.linalg.eigvalsh(K))
        exact = np.sort(np.cos(np.pi * np.arange(1, m + 1) / (m + 1)))
        vec = np.sin(np.pi * np.arange(1, m + 1) / (m + 1))
        vec *= math.sqrt(N / np.sum(vec**2))
        worst = max(worst, np.max(np.abs(spectrum - exact)), abs(eig.lam - exact[-1]), np.max(np.abs(eig.phi - vec)))
    row = eigenvalue_asymptotic_check(ShapeSpec.ball(3, 1.0), [40])[0]
    gap_err = abs(row["rescaled_gap"] - math.pi**2) / math.pi**2
    ok = worst <= 1e-10 and gap_err <= 0.05
    assert criterion(1, ok, f"path max error {worst:.2e} (<= 1e-10); N=40 gap {row['rescaled_gap']:.4f} "
                            f"rel err {gap_err:.4f} vs pi^2 (<= 0.05)")


def test_criterion_02_green_identities(criterion):
    R = 50
    g0 = green_origin(3)
    origin = np.zeros(3, dtype=np.int64)
    e1 = np.array([1, 0, 0])
    flat = TiltedBox(TiltField.untilted(3), R)
    g_origin = flat.green(origin)
    g_solve = g_origin.G(origin, corrected=True)[0]
    pair = two_point_capacity(flat, origin, e1, corrected=True, solves=(g_origin, flat.green(e1)))
    pair_exact = 2 / (2 * g0 - 1)

    s = _setup(16)
    box = TiltedBox(s.psi, R)
    T = s.target_coords
    x, y = T[0], T[len(T) // 2]
    gx, gy = box.green(x), box.green(y)
    lhs = box.pi_at(x)[0] * gx.G(y)[0]
    rhs = box.pi_at(y)[0] * gy.G(x)[0]
    rev = abs(lhs - rhs) / abs(lhs)
    c2 = two_point_capacity(box, x, y, solves=(gx, gy))
    eq = equilibrium_measure(s.psi, np.vstack([x, y]), box_radius=box)
    two = abs(c2 - eq.capacity) / eq.capacity
    last = last_exit_check(box, np.vstack([x, y]), [origin, np.array([12, -3, 5])])["max_gap"]

    checks = {
        "g0": abs(g_solve - g0) <= 5e-4,
        "reversibility": rev < 1e-8,
        "last_exit": last < 1e-6,
        "two_point": two < 1e-8,
        "neighbor_pair": abs(pair - pair_exact) <= 1e-3,
    }
    ok = all(checks.values())
    assert criterion(2, ok, f"g0 solve {g_solve:.5f} vs {g0:.5f}; reversibility {rev:.1e}; last-exit {last:.1e}; "
                            f"two-point {two:.1e}; pair cap {pair:.5f} vs {pair_exact:.5f}; "
                            f"failed: {[k for k, v in checks.items() if not v]}")


def test_criterion_03_point_capacity(criterion):
    sups = {}
    for N in (16, 24, 32):
        s = _setup(N)
        rows = point_capacity_ratios(s, bulk_probe_sites(s))
        sups[N] = max(abs(r["deviation"]) for r in rows)
    ok = sups[24] <= 0.15 and sups[32] < sups[16]
    assert criterion(3, ok, "sup |cap g0 / phi^2 - 1| " + ", ".join(f"N={k}: {v:.4f}" for k, v in sups.items())
                     + " (N=24 <= 0.15, N=32 < N=16)")


def test_criterion_04_vacancy_law(criterion):
    # singleton: U_x of the centre of a 3^3 cube is exponential with rate cap({x})
    s8 = _setup(8)
    R8 = 3 * 8
    box8 = TiltedBox(s8.psi, R8)
    K = np.array([[i, j, k] for i in (-1, 0, 1) for j in (-1, 0, 1) for k in (-1, 0, 1)])
    centre = int(np.flatnonzero(np.all(K == 0, axis=1))[0])
    eqK = equilibrium_measure(s8.psi, K, box_radius=box8)
    cap_x = point_capacity(box8, K[centre])
    u_cap = 40 / cap_x
    U = np.array([cover_levels(s8.psi, K, eqK, u_cap, stream(SEED, "levels", i), R8).levels[centre]
                  for i in range(10_000)])
    p_single = stats.kstest(U, "expon", args=(0, 1 / cap_x)).pvalue

    # far pair: the two ends of the target's first axis at N = 16
    s16 = _setup(16)
    R16 = 5 * 16
    box16 = TiltedBox(s16.psi, R16)
    a = int(np.max(s16.target_coords[:, 0]))
    P = np.array([[a, 0, 0], [-a, 0, 0]])
    eqP = equilibrium_measure(s16.psi, P, box_radius=box16)
    u = math.log(2) / point_capacity(box16, P[0])
    n = 10_000
    vac = np.array([sample_trace(s16.psi, P, u, eqP, stream(SEED, "trace", i), R16).vacant for i in range(n)])
    px, py = vac.mean(axis=0)
    joint = np.all(vac, axis=1).mean()
    # delta-method spread of joint - px py
    f = vac[:, 0] * vac[:, 1] - py * vac[:, 0] - px * vac[:, 1]
    sigma = f.std(ddof=1) / math.sqrt(n)
    z = abs(joint - px * py) / sigma
    ok = p_single > 0.01 and z <= 3
    assert criterion(4, ok, f"singleton KS p {p_single:.3f} (> 0.01); far pair |x-y|={2 * a} joint {joint:.4f} "
                            f"vs product {px * py:.4f}, {z:.2f} sigma (<= 3)")


def test_criterion_05_first_order(criterion, setup16, levels16, trend_runs):
    r16 = first_order_ratios(setup16, "interlacement", levels16.set_levels)["ratio"]
    d = {N: abs(first_order_ratios(s, "interlacement", c.set_levels)["ratio"] - 1) for N, (s, c) in trend_runs.items()}
    ok = 0.6 <= r16 <= 1.5 and d[20] < d[12]
    assert criterion(5, ok, f"N=16 mean/first-order {r16:.4f} (in [0.6, 1.5]); |ratio-1| N=12 {d[12]:.4f}, "
                            f"N=20 {d[20]:.4f} (must shrink)")


def test_criterion_06_gumbel(criterion, setup16, levels16, trend_runs):
    rep = gumbel_experiment("interlacement", setup16, levels16)
    ks = {N: gumbel_experiment("interlacement", s, c).ks_distance for N, (s, c) in trend_runs.items()}
    ok = rep.ks_distance <= 0.15 and rep.super_gumbel_ok and ks[20] < ks[12]
    margin = float(np.min(rep.super_gumbel_empirical - rep.super_gumbel_bound))
    assert criterion(6, ok, f"N=16 KS {rep.ks_distance:.4f} (<= 0.15); super-Gumbel min margin {margin:.4f} (>= 0); "
                            f"KS N=12 {ks[12]:.4f}, N=20 {ks[20]:.4f} (must shrink)")


def test_criterion_07_late_points(criterion, setup16, levels16):
    rep = late_point_experiment("interlacement", setup16, 0.0, levels16)
    kappa = setup16.reference.kappa
    ratio = rep.mean_total / kappa
    ok = 0.5 <= ratio <= 2 and 0.6 <= rep.dispersion_index <= 1.4 and rep.outer_shell_fraction >= 0.8
    assert criterion(7, ok, f"mean count {rep.mean_total:.3f} = {ratio:.3f} kappa (in [0.5, 2]); dispersion "
                            f"{rep.dispersion_index:.3f} (in [0.6, 1.4]); outer shell {rep.outer_shell_fraction:.3f} "
                            f"(>= 0.8)")


def test_criterion_08_rho_set(criterion, setup16, levels16):
    rep = rho_set_experiment(setup16, levels16, rho=0.25)

    dists = []
    for row, sl in zip(levels16.levels, levels16.set_levels):
        _, summ = rho_set(CoverLevels(row, float(sl), 0, levels16.u_cap), 0.25, setup16.target_coords, setup16.alpha)
        if math.isfinite(summ["min_distance"]):
            dists.append(summ["min_distance"])
    a = rep["scattering_scale"]
    med = float(np.median(dists)) if dists else math.nan
    card_ok = 1 / 3 <= rep["cardinality_ratio"] <= 3
    dist_ok = bool(dists) and med >= a / 4
    ok = card_ok and dist_ok
    assert criterion(8, ok, f"cardinality {rep['mean_cardinality']:.2f} vs {rep['predicted_cardinality']:.2f} "
                            f"(ratio {rep['cardinality_ratio']:.3f}, within x3); median min-distance {med:.2f} over "
                            f"{len(dists)} replicas with >= 2 sites vs a/4 = {a / 4:.1f}")


def test_criterion_09_sums(criterion, setup16):
    rows = exp_sum_check("ball:1", "ball:0.5", [16, 24, 32], beta_list=(1.0, 2.0))
    parts = []
    ok = True
    for beta in (1.0, 2.0):
        r = [row["ratio"] for row in rows if row["beta"] == beta]
        within = abs(r[-1] - 1) <= 0.3
        monotone = all(abs(b - 1) < abs(a - 1) for a, b in zip(r, r[1:]))
        ok &= within and monotone
        parts.append(f"beta={beta:g} ratios {', '.join(f'{v:.3f}' for v in r)} (N=32 within 0.3: {within}, "
                     f"monotone: {monotone})")
    band = [row for row in level_band_check(setup16) if row["kind"] == "continuum"]
    finest = min(band, key=lambda row: row["eps"])
    cont_ok = abs(finest["ratio"] - 1) <= 0.01
    ok &= cont_ok
    assert criterion(9, ok, "; ".join(parts) + f"; continuum band eps={finest['eps']:g} ratio {finest['ratio']:.5f}")


def test_criterion_10_coupling(criterion, setup16, levels16, walks16):
    rep = coupling_check(setup16, levels=levels16, walks=walks16)
    ok = rep.fraction_inside >= 0.95 and len(rep.probes) == 50
    assert criterion(10, ok, f"{int(rep.inside.sum())}/{len(rep.probes)} probes inside the 3 sigma sandwich "
                             f"(eps_N {rep.eps_N:.3f}, delta {rep.delta:.3f}; >= 95%)")


def test_criterion_11_segment(criterion):
    s = {N: segment_summary(segment_cover(N, 500, seed=SEED)) for N in (100, 200)}
    m100, m200 = s[100]["mean_ratio_N3"], s[200]["mean_ratio_N3"]
    stable = abs(m200 / m100 - 1) <= 0.2
    fit = all(v["chi2_p"] > 0.01 for v in s.values())
    ok = stable and fit
    assert criterion(11, ok, f"mean cover/N^3 N=100 {m100:.4f}, N=200 {m200:.4f} (within 20%); chi2 p "
                             f"{s[100]['chi2_p']:.3f}, {s[200]['chi2_p']:.3f} (> 0.01)")


CLI_RUNS = [
    ["eigen", "--N", "8"],
    ["reference"],
    ["capacity", "--N", "8", "--set", "0,0,0;1,0,0"],
    ["capacity", "--N", "8", "--method", "monte_carlo", "--samples", "2000"],
    ["green", "--N", "8"],
    ["interlace-cover", "--N", "8", "--replicas", "120"],
    ["walk-cover", "--N", "8", "--replicas", "120"],
    ["late-points", "--N", "8", "--replicas", "120"],
    ["gumbel", "--N", "8", "--replicas", "120", "--source", "walk"],
    ["coupling", "--N", "8", "--replicas", "120"],
    ["sums", "--N-list", "8,10"],
    ["segment", "--N", "20", "--replicas", "100"],
    ["validate", "--N", "8"],
]


def _cli_outputs(root, threads):
    files = {}
    for k, argv in enumerate(CLI_RUNS):
        out = root / f"t{threads}" / str(k)
        code = run([*argv, "--seed", "3", "--threads", str(threads), "--output-dir", str(out)])
        if code != 0:
            files[f"{k}/exit"] = str(code).encode()
        for p in sorted(out.rglob("*")):
            if p.is_file():
                files[f"{k}/{p.relative_to(out)}"] = p.read_bytes()
    return files


def test_criterion_12_reproducibility(criterion, tmp_path):
    a = _cli_outputs(tmp_path, 1)
    b = _cli_outputs(tmp_path, 2)
    c = _cli_outputs(tmp_path / "again", 1)
    differ = sorted(k for k in set(a) | set(b) | set(c) if not (a.get(k) == b.get(k) == c.get(k)))
    failed = [k for k in a if k.endswith("/exit")]
    ok = not differ and not failed and len(a) >= len(CLI_RUNS)
    shutil.rmtree(tmp_path, ignore_errors=True)
    assert criterion(12, ok, f"{len(a)} output files from {len(CLI_RUNS)} subcommand runs; differing at threads 1/2 "
                             f"or on rerun: {differ or 'none'}; failed runs: {failed or 'none'}")
