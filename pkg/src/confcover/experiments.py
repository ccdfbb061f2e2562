"""Campaign-level statistics: Gumbel CDFs, late points, deterministic sums, coupling.

A :class:`Setup` bundles everything a campaign needs for one configuration
(domain, eigenpair, target, tilt, equilibrium measure of the target).  Theory
curves are always built from the values this module computes: ``g(0)`` from
:mod:`greens`, ``alpha`` as the discrete minimum of ``phi_N^2`` over the
target, and ``kappa`` from :class:`BallReference`.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

from .domain import ShapeSpec, build_domain, build_target
from .errors import BoundViolated, ValidationError
from .greens import green_origin
from .interlacements import CoverLevels, cover_levels, expected_rho_cardinality, rho_set, rho_threshold, scattering_scale
from .potential import TiltedBox, equilibrium_measure, point_capacity
from .reference_ball import BallReference
from .rng import run_replicas, stream
from .spectral import confined_kernel, solve_principal_eigenpair
from .tilted import tilt_field
from .walk import cover_campaign

SOURCES = ("interlacement", "walk")


def parse_grid(text: str) -> np.ndarray:
    """``"a:b:step"`` to the grid ``a, a + step, ..., b`` (inclusive)."""
    try:
        a, b, s = (float(v) for v in str(text).split(":"))
    except ValueError:
        raise ValidationError(f"grid must read a:b:step, got {text!r}") from None
    if s <= 0 or b < a:
        raise ValidationError(f"bad grid {text!r}")
    n = int(math.floor((b - a) / s + 1e-9)) + 1
    return np.round(a + s * np.arange(n), 12)


@dataclass(frozen=True)
class CampaignConfig:
    """Everything that determines a campaign's output (``threads`` does not)."""

    d: int = 3
    shape: str = "ball:1"
    lambda_shape: str = "ball:0.5"
    N: int = 16
    eps: float = 0.2
    rho: float = 0.25
    replicas: int = 300
    seed: int = 1
    tol: float = 1e-12
    rout_factor: float = 5.0
    z_grid: str = "-2:6:0.25"
    u_cap_mult: float = 10.0
    delta: float | None = None
    probes: int = 50
    threads: int = 1

    def __post_init__(self):
        if self.d < 1:
            raise ValidationError("d must be >= 1")
        if self.N < 1:
            raise ValidationError("N must be >= 1")
        if self.replicas < 1:
            raise ValidationError("replicas must be >= 1")
        if not 0 < self.rho < 1:
            raise ValidationError("rho must lie in (0, 1)")
        if self.eps <= 0:
            raise ValidationError("eps must be positive")
        if self.rout_factor <= 1:
            raise ValidationError("rout_factor must exceed 1")
        if self.u_cap_mult <= 0:
            raise ValidationError("u_cap_mult must be positive")
        if self.delta is not None and self.delta <= 0:
            raise ValidationError("delta must be positive")
        parse_grid(self.z_grid)

    def to_dict(self):
        out = dataclasses.asdict(self)
        out.pop("threads")
        return out

    def replace(self, **kw):
        return dataclasses.replace(self, **kw)


class Setup:
    """Deterministic objects shared by all campaigns of one configuration."""

    def __init__(self, config: CampaignConfig):
        self.config = config
        cfg = config
        self.domain_shape = ShapeSpec.parse(cfg.shape, cfg.d)
        self.lambda_shape = ShapeSpec.parse(cfg.lambda_shape, cfg.d)
        self.domain = build_domain(self.domain_shape, cfg.N)
        self.eig = solve_principal_eigenpair(self.domain, tol=cfg.tol)
        self.target = build_target(self.domain, self.lambda_shape, cfg.eps)
        self.target_coords = self.domain.sites[self.target.sites]
        self.phi2 = self.eig.phi[self.target.sites] ** 2
        self.alpha = float(self.phi2.min())
        self.log_size = math.log(self.target.size)
        self.g0 = green_origin(cfg.d) if cfg.d >= 3 else math.nan
        self.reference = ball_reference(self.domain_shape, self.lambda_shape)

    @property
    def N(self):
        return self.config.N

    @property
    def d(self):
        return self.config.d

    @property
    def volume_scale(self):
        return float(self.N**self.d)

    @property
    def r_out(self):
        return int(math.ceil(self.config.rout_factor * self.N))

    @property
    def kappa(self):
        return None if self.reference is None else self.reference.kappa

    @cached_property
    def kernel(self):
        return confined_kernel(self.eig)

    @cached_property
    def psi(self):
        return tilt_field(self.eig, self.target)

    @cached_property
    def equilibrium(self):
        box = TiltedBox(self.psi, self.r_out, rtol=self.config.tol)
        return equilibrium_measure(self.psi, self.target_coords, box_radius=box)

    def first_order_level(self, alpha=None):
        """``g(0) alpha^-1 log|Lambda_N|``."""
        return self.g0 / (self.alpha if alpha is None else alpha) * self.log_size

    def level_threshold(self, z):
        """``u_N(z) = g(0) alpha^-1 (log|Lambda_N| - log log|Lambda_N| + z)``."""
        L = self.log_size
        return self.g0 / self.alpha * (L - math.log(L) + np.asarray(z, dtype=float))

    def time_threshold(self, z):
        """``t_N(z) = N^d u_N(z)``."""
        return self.volume_scale * self.level_threshold(z)

    def super_gumbel_threshold(self, z, source):
        """``g(0) alpha^-1 (log|Lambda_N| + z)``, times ``lambda_N N^d`` for the walk."""
        base = self.g0 / self.alpha * (self.log_size + np.asarray(z, dtype=float))
        return base * self.eig.lam * self.volume_scale if source == "walk" else base

    def summary(self):
        out = {
            "sites_domain": self.domain.size,
            "sites_target": self.target.size,
            "sites_enlarged": int(len(self.target.enlarged)),
            "lambda_N": self.eig.lam,
            "g0": self.g0,
            "alpha_discrete": self.alpha,
            "log_target_size": self.log_size,
        }
        if self.reference is not None:
            out.update({"alpha_continuum": self.reference.alpha, "kappa": self.reference.kappa,
                        "late_mass": self.reference.late_mass})
        return out


def ball_reference(domain_shape: ShapeSpec, lambda_shape: ShapeSpec):
    """:class:`BallReference` when ``D`` is the unit ball and ``Lambda`` a concentric ball, else ``None``."""
    if domain_shape.kind != "ball" or lambda_shape.kind != "ball":
        return None
    if domain_shape.radius != 1.0 or np.any(np.asarray(domain_shape.center) != 0):
        return None
    if np.any(np.asarray(lambda_shape.center) != 0) or domain_shape.d < 3:
        return None
    return BallReference(domain_shape.d, float(lambda_shape.radius))


def assumption_check(reference: BallReference, eps0: float = 0.1, samples: int = 2001):
    """Smallest ``|grad phi^2|`` over the level band ``[alpha, (1 + eps0) alpha]``."""
    a = reference.alpha
    r_lo = reference.radius_at_level((1 + eps0) * a)
    r = np.linspace(max(r_lo, 1e-9), reference.r0, samples)
    g = np.abs(reference.grad_phi2(r))
    return {"eps0": eps0, "min_grad": float(g.min()), "holds": bool(g.min() > 0)}


def _require_ball(setup: Setup):
    if setup.reference is None:
        raise ValidationError("theory curves need D = unit ball and Lambda = concentric ball (level-set assumption)")
    chk = assumption_check(setup.reference)
    if not chk["holds"]:
        raise ValidationError("gradient of phi^2 vanishes on the level band")


# ---------------------------------------------------------------- campaigns


@dataclass(eq=False)
class LevelCampaign:
    """Per-replica cover levels over the target (rows = replicas)."""

    levels: np.ndarray
    set_levels: np.ndarray
    trajectories: np.ndarray
    steps: np.ndarray
    u_cap: float
    seed: int


@dataclass(eq=False)
class WalkCampaign:
    """Per-replica first-hit times over the target (rows = replicas)."""

    hits: np.ndarray
    cover_times: np.ndarray
    starts: np.ndarray
    seed: int


def interlacement_campaign(setup: Setup, replicas=None, seed=None, threads=None) -> LevelCampaign:
    cfg = setup.config
    replicas = cfg.replicas if replicas is None else int(replicas)
    seed = cfg.seed if seed is None else int(seed)
    threads = cfg.threads if threads is None else threads
    u_cap = cfg.u_cap_mult * setup.first_order_level()
    eq = setup.equilibrium
    psi, T, r_out = setup.psi, setup.target_coords, setup.r_out

    def one(rng, i):
        return cover_levels(psi, T, eq, u_cap, rng, r_out)

    res = run_replicas(one, seed, "levels", replicas, threads)
    return LevelCampaign(
        np.vstack([r.levels for r in res]),
        np.array([r.set_level for r in res]),
        np.array([r.trajectory_count for r in res], dtype=np.int64),
        np.array([r.steps for r in res], dtype=np.int64),
        float(u_cap),
        seed,
    )


def walk_campaign(setup: Setup, replicas=None, seed=None, threads=None) -> WalkCampaign:
    cfg = setup.config
    replicas = cfg.replicas if replicas is None else int(replicas)
    seed = cfg.seed if seed is None else int(seed)
    threads = cfg.threads if threads is None else threads
    res = cover_campaign(setup.kernel, setup.target, replicas, seed, threads=threads)
    return WalkCampaign(
        np.vstack([r.hit_time for r in res]),
        np.array([r.cover_time for r in res], dtype=np.int64),
        np.array([r.start for r in res], dtype=np.int64),
        seed,
    )


def _campaign(setup, source, campaign):
    if source not in SOURCES:
        raise ValidationError(f"source must be one of {SOURCES}")
    if campaign is None:
        campaign = interlacement_campaign(setup) if source == "interlacement" else walk_campaign(setup)
    if isinstance(campaign, LevelCampaign) != (source == "interlacement"):
        raise ValidationError("campaign does not match the source")
    return campaign


def _values(source, campaign):
    if source == "interlacement":
        return campaign.set_levels, campaign.levels
    return campaign.cover_times.astype(float), campaign.hits.astype(float)


def _thresholds(setup, source, z):
    return setup.level_threshold(z) if source == "interlacement" else setup.time_threshold(z)


# ---------------------------------------------------------------- Gumbel


def ecdf(sample, points):
    """Right-continuous empirical CDF of ``sample`` evaluated at ``points``."""
    s = np.sort(np.asarray(sample, dtype=float))
    return np.searchsorted(s, np.asarray(points, dtype=float), side="right") / len(s)


def ks_on_grid(sample, thresholds_of, z_grid, theory, refine: int = 20):
    """Sup of ``|F_emp - F_theory|`` over the z range, including left limits of the step function."""
    z = np.linspace(z_grid[0], z_grid[-1], (len(z_grid) - 1) * refine + 1)
    thr = thresholds_of(z)
    s = np.sort(np.asarray(sample, dtype=float))
    right = np.searchsorted(s, thr, side="right") / len(s)
    left = np.searchsorted(s, thr, side="left") / len(s)
    th = theory(z)
    return float(max(np.max(np.abs(right - th)), np.max(np.abs(left - th))))


@dataclass(eq=False)
class GumbelReport:
    source: str
    z_grid: np.ndarray
    thresholds: np.ndarray
    empirical_cdf: np.ndarray
    theory_cdf: np.ndarray
    ks_distance: float
    replica_count: int
    gaps: np.ndarray
    theory_cdf_late_mass: np.ndarray
    ks_distance_late_mass: float
    super_gumbel_empirical: np.ndarray
    super_gumbel_bound: np.ndarray
    super_gumbel_ok: bool
    first_order: dict
    constants: dict
    config: dict = field(default_factory=dict)

    def rows(self):
        return [
            {"z": z, "threshold": t, "empirical": e, "theory": th, "theory_late_mass": tm,
             "super_gumbel_empirical": se, "super_gumbel_bound": sb}
            for z, t, e, th, tm, se, sb in zip(
                self.z_grid, self.thresholds, self.empirical_cdf, self.theory_cdf, self.theory_cdf_late_mass,
                self.super_gumbel_empirical, self.super_gumbel_bound)
        ]

    def to_dict(self):
        return {
            "source": self.source,
            "replica_count": self.replica_count,
            "ks_distance": self.ks_distance,
            "ks_distance_late_mass": self.ks_distance_late_mass,
            "max_gap": float(np.max(np.abs(self.gaps))),
            "super_gumbel_ok": self.super_gumbel_ok,
            "super_gumbel_min_margin": float(np.min(self.super_gumbel_empirical - self.super_gumbel_bound)),
            **{f"first_order_{k}": v for k, v in self.first_order.items()},
            **self.constants,
        }


def first_order_ratios(setup: Setup, source: str, values) -> dict:
    """Mean cover level (or time) over ``g(0) alpha^-1 log|Lambda_N|`` in both normalizations."""
    m = float(np.mean(values))
    base = setup.first_order_level()
    if source == "walk":
        base = base * setup.volume_scale
    out = {"mean": m, "ratio": m / base, "ratio_lambda": m / (base * setup.eig.lam)}
    if setup.reference is not None:
        out["ratio_continuum_alpha"] = m * setup.reference.alpha / (base * setup.alpha)
    return out


def gumbel_experiment(source: str, setup: Setup, campaign=None, z_grid=None, slack: float = 0.05) -> GumbelReport:
    """Empirical CDF of the normalized cover level (or time) against ``exp(-kappa e^-z)``."""
    _require_ball(setup)
    campaign = _campaign(setup, source, campaign)
    values, _ = _values(source, campaign)
    if len(values) < 100:
        raise ValidationError("need at least 100 replicas")
    z = parse_grid(setup.config.z_grid) if z_grid is None else np.asarray(z_grid, dtype=float)
    kappa = setup.reference.kappa
    mass = setup.reference.late_mass
    thr = _thresholds(setup, source, z)
    emp = ecdf(values, thr)
    theory = np.exp(-kappa * np.exp(-z))
    theory_m = np.exp(-mass * np.exp(-z))
    sg_emp = ecdf(values, setup.super_gumbel_threshold(z, source))
    sg_bound = np.exp(-np.exp(-z)) - slack
    return GumbelReport(
        source, z, thr, emp, theory,
        ks_on_grid(values, lambda q: _thresholds(setup, source, q), z, lambda q: np.exp(-kappa * np.exp(-q))),
        len(values), emp - theory, theory_m,
        ks_on_grid(values, lambda q: _thresholds(setup, source, q), z, lambda q: np.exp(-mass * np.exp(-q))),
        sg_emp, sg_bound, bool(np.all(sg_emp >= sg_bound)),
        first_order_ratios(setup, source, values),
        {**setup.summary(), "super_gumbel_slack": slack},
        setup.config.to_dict(),
    )


# ---------------------------------------------------------------- late points


@dataclass(eq=False)
class LatePointReport:
    source: str
    z: float
    threshold: float
    bin_edges: np.ndarray
    mean_counts: np.ndarray
    void_probabilities: np.ndarray
    radial_edges: np.ndarray
    radial_profile: np.ndarray
    totals: np.ndarray
    dispersion_index: float
    outer_shell_fraction: float
    theory_total: float
    late_mass_total: float
    orthants: int
    config: dict = field(default_factory=dict)

    @property
    def mean_total(self):
        return float(self.totals.mean())

    def rows(self):
        return [{"bin": i, "shell": i // self.orthants, "orthant": i % self.orthants, "mean_count": c,
                 "void_probability": v}
                for i, (c, v) in enumerate(zip(self.mean_counts, self.void_probabilities))]

    def to_dict(self):
        return {
            "source": self.source,
            "z": self.z,
            "threshold": self.threshold,
            "mean_total": self.mean_total,
            "variance_total": float(self.totals.var(ddof=1)) if len(self.totals) > 1 else 0.0,
            "dispersion_index": self.dispersion_index,
            "outer_shell_fraction": self.outer_shell_fraction,
            "theory_total": self.theory_total,
            "ratio_to_theory": self.mean_total / self.theory_total,
            "late_mass_total": self.late_mass_total,
            "replica_count": int(len(self.totals)),
        }


def _target_center(shape: ShapeSpec):
    lo, hi = shape.bounds()
    return (np.asarray(lo, dtype=float) + np.asarray(hi, dtype=float)) / 2


def spatial_bins(setup: Setup, radial: int = 5):
    """Partition of the target into ``radial`` equal-width shells times the ``2^d`` orthants.

    Returns ``(bin index per target site, shell edges, shell index per site)``;
    coordinates are rescaled by ``N`` and centred on the target's centre.
    """
    c = _target_center(setup.lambda_shape)
    x = setup.target_coords / setup.N - c
    r = np.linalg.norm(x, axis=1)
    r_max = float(r.max()) * (1 + 1e-12)
    edges = np.linspace(0, r_max, radial + 1)
    shell = np.minimum(np.searchsorted(edges, r, side="right") - 1, radial - 1)
    orth = np.zeros(len(x), dtype=np.int64)
    for a in range(setup.d):
        orth = 2 * orth + (x[:, a] < 0)
    return shell * 2**setup.d + orth, edges, shell


def late_point_experiment(source: str, setup: Setup, z: float = 0.0, campaign=None, radial_bins: int = 5,
                          outer_fraction: float = 0.2) -> LatePointReport:
    """Late points at ``u_N(z)`` (or ``t_N(z)``) binned over the rescaled target."""
    _require_ball(setup)
    campaign = _campaign(setup, source, campaign)
    _, per_site = _values(source, campaign)
    thr = float(_thresholds(setup, source, z))
    late = per_site > thr
    bins, edges, shell = spatial_bins(setup, radial_bins)
    nb = radial_bins * 2**setup.d
    counts = np.stack([np.bincount(bins[row], minlength=nb) for row in late])
    totals = late.sum(axis=1)
    mean = float(totals.mean())
    disp = float(totals.var(ddof=1) / mean) if mean > 0 and len(totals) > 1 else math.nan
    radial_counts = np.array([late[:, shell == k].sum() for k in range(radial_bins)], dtype=float)
    # outer shell: rescaled radius at least (1 - outer_fraction) of the largest
    c = _target_center(setup.lambda_shape)
    r = np.linalg.norm(setup.target_coords / setup.N - c, axis=1)
    outer = r >= (1 - outer_fraction) * r.max()
    n_late = late.sum()
    frac = float(late[:, outer].sum() / n_late) if n_late else math.nan
    return LatePointReport(
        source, float(z), thr, np.arange(nb), counts.mean(axis=0), (counts == 0).mean(axis=0),
        edges, radial_counts / len(totals), totals, disp, frac,
        float(math.exp(-z) * setup.reference.kappa), float(math.exp(-z) * setup.reference.late_mass),
        2**setup.d, setup.config.to_dict(),
    )


# ---------------------------------------------------------------- deterministic sums


def exp_sum(phi2, alpha, beta):
    """``(log n / n^(1 - beta)) sum exp(-beta (phi^2 / alpha) log n)`` with ``n = len(phi2)``."""
    if beta <= 0:
        raise ValidationError("beta must be positive")
    phi2 = np.asarray(phi2, dtype=float)
    n = len(phi2)
    L = math.log(n)
    # factor exp(-beta L) out of the sum against n^(beta - 1) to stay in range
    s = math.fsum(np.exp(-beta * (phi2 / alpha - 1) * L))
    return L * s / n


def exp_sum_check(shape: str, lambda_shape: str, N_list, beta_list=(1.0, 2.0), eps: float = 0.2, d: int = 3,
                  tol: float = 1e-12):
    """Exponential sum over ``Lambda_N`` for each ``N`` and ``beta``, relative to ``kappa / beta``.

    ``alpha`` is the discrete minimum of ``phi_N^2`` over the target; the
    value with the continuum ``alpha`` is reported next to it.
    """
    ds, ls = ShapeSpec.parse(shape, d), ShapeSpec.parse(lambda_shape, d)
    ref = ball_reference(ds, ls)
    if ref is None:
        raise ValidationError("the exponential-sum limit needs the ball reference")
    rows = []
    for N in N_list:
        dom = build_domain(ds, int(N))
        eig = solve_principal_eigenpair(dom, tol=tol)
        tg = build_target(dom, ls, eps)
        p2 = eig.phi[tg.sites] ** 2
        for beta in beta_list:
            v = exp_sum(p2, p2.min(), beta)
            vc = exp_sum(p2, ref.alpha, beta)
            rows.append({"N": int(N), "beta": float(beta), "sites": tg.size, "value": v,
                         "limit": ref.kappa / beta, "ratio": v * beta / ref.kappa,
                         "value_continuum_alpha": vc, "ratio_continuum_alpha": vc * beta / ref.kappa,
                         "late_mass_limit": ref.late_mass / beta})
    return rows


def level_band_lattice(phi2, alpha, eps, N, d, multiplicative=False):
    """``eps^-1 N^-d #{x : alpha <= phi^2(x) <= alpha + eps}`` (or ``<= (1 + eps) alpha``)."""
    hi = alpha * (1 + eps) if multiplicative else alpha + eps
    phi2 = np.asarray(phi2)
    return float(np.count_nonzero((phi2 >= alpha) & (phi2 <= hi)) / N**d / eps)


def level_band_check(setup: Setup, eps_list=(0.2, 0.1, 0.05), oracle_eps=(1e-2, 1e-3, 1e-4)):
    """Lattice level-band volumes and the continuum oracle, both against ``kappa``.

    Bands are additive, ``[alpha, alpha + eps]``; the multiplicative band of
    the same width converges to ``alpha kappa`` and is reported alongside.
    """
    _require_ball(setup)
    eps_list = list(eps_list)
    if any(e <= 0 for e in eps_list) or eps_list != sorted(eps_list, reverse=True):
        raise ValidationError("eps_list must be positive and decreasing")
    ref = setup.reference
    rows = []
    for e in eps_list:
        v = level_band_lattice(setup.phi2, setup.alpha, e, setup.N, setup.d)
        vm = level_band_lattice(setup.phi2, setup.alpha, e, setup.N, setup.d, multiplicative=True)
        rows.append({"kind": "lattice", "N": setup.N, "eps": e, "value": v, "ratio": v / ref.kappa,
                     "multiplicative_value": vm})
    for e in oracle_eps:
        v = ref.level_band_quadrature(e)
        rows.append({"kind": "continuum", "N": 0, "eps": e, "value": v, "ratio": v / ref.kappa,
                     "multiplicative_value": ref.level_band_quadrature(e, multiplicative=True)})
    return rows


# ---------------------------------------------------------------- coupling


@dataclass(eq=False)
class CouplingReport:
    t_N: float
    u_N: float
    delta: float
    eps_N: float
    probes: np.ndarray
    walk_freq: np.ndarray
    low_freq: np.ndarray
    high_freq: np.ndarray
    mid_freq: np.ndarray
    inside: np.ndarray
    vacant_size_ks: float
    replicas: int
    config: dict = field(default_factory=dict)

    @property
    def fraction_inside(self):
        return float(self.inside.mean())

    def rows(self):
        return [{"probe": int(p), "walk": w, "interlacement_low_level": h, "interlacement_high_level": l,
                 "interlacement_mid": m, "inside": bool(i)}
                for p, w, h, l, m, i in zip(self.probes, self.walk_freq, self.high_freq, self.low_freq,
                                            self.mid_freq, self.inside)]

    def to_dict(self):
        return {
            "t_N": self.t_N, "u_N": self.u_N, "delta": self.delta, "eps_N": self.eps_N,
            "probe_count": int(len(self.probes)), "fraction_inside": self.fraction_inside,
            "informative_probes": int(np.count_nonzero(self.high_freq + self.walk_freq > 0)),
            "max_abs_walk_minus_mid": float(np.max(np.abs(self.walk_freq - self.mid_freq))),
            "mean_abs_walk_minus_mid": float(np.mean(np.abs(self.walk_freq - self.mid_freq))),
            "vacant_size_ks": self.vacant_size_ks, "replicas": self.replicas,
        }


def _se(k, n):
    # standard error with a half-count floor so empty cells still carry uncertainty
    p = (k + 0.5) / (n + 1)
    return np.sqrt(p * (1 - p) / n)


def coupling_check(setup: Setup, t_factor: float = 0.5, levels: LevelCampaign | None = None,
                   walks: WalkCampaign | None = None, sigmas: float = 3.0) -> CouplingReport:
    """Walk vacancy at ``t_N`` against interlacement vacancy at ``(1 -+ eps_N) t_N / N^d``.

    ``t_N = t_factor g(0) alpha^-1 N^d log|Lambda_N|``; ``delta`` defaults to
    the largest value with ``t_N >= N^(2 + delta)``.
    """
    cfg = setup.config
    N = setup.N
    t_N = t_factor * setup.first_order_level() * setup.volume_scale
    if t_N < N**2.5:
        raise ValidationError("t_N must be at least N^2.5")
    delta = cfg.delta if cfg.delta is not None else math.log(t_N) / math.log(N) - 2
    if t_N < N ** (2 + delta) * (1 - 1e-12):
        raise ValidationError("t_N < N^(2 + delta)")
    eps_N = N ** (-delta / 4)
    u_N = t_N / setup.volume_scale
    levels = interlacement_campaign(setup) if levels is None else levels
    walks = walk_campaign(setup) if walks is None else walks
    rng = stream(cfg.seed, "probe", 1)
    probes = np.sort(rng.choice(setup.target.size, size=min(cfg.probes, setup.target.size), replace=False))
    if levels.u_cap < (1 + eps_N) * u_N and not np.all(np.isfinite(levels.levels)):
        raise ValidationError("interlacement levels do not reach (1 + eps_N) u_N")
    nw, nl = len(walks.hits), len(levels.levels)
    kw = np.sum(walks.hits[:, probes] > t_N, axis=0)
    k_hi = np.sum(levels.levels[:, probes] > (1 - eps_N) * u_N, axis=0)
    k_lo = np.sum(levels.levels[:, probes] > (1 + eps_N) * u_N, axis=0)
    k_mid = np.sum(levels.levels[:, probes] > u_N, axis=0)
    pw, p_hi, p_lo = kw / nw, k_hi / nl, k_lo / nl
    ok_lo = pw >= p_lo - sigmas * np.sqrt(_se(kw, nw) ** 2 + _se(k_lo, nl) ** 2)
    ok_hi = pw <= p_hi + sigmas * np.sqrt(_se(kw, nw) ** 2 + _se(k_hi, nl) ** 2)
    sizes_w = np.sum(walks.hits > t_N, axis=1)
    sizes_i = np.sum(levels.levels > u_N, axis=1)
    grid = np.union1d(sizes_w, sizes_i)
    ks = float(np.max(np.abs(ecdf(sizes_w, grid) - ecdf(sizes_i, grid))))
    return CouplingReport(float(t_N), float(u_N), float(delta), float(eps_N), probes, pw, p_lo, p_hi,
                          k_mid / nl, ok_lo & ok_hi, ks, int(min(nw, nl)), cfg.to_dict())


# ---------------------------------------------------------------- variance


def variance_formula_check(levels: np.ndarray, u: float, f, phi2, alpha: float, g0: float, c0: float = 0.0,
                           coords=None, far_distance: float | None = None, d: int = 3, sigmas: float = 3.0,
                           raise_on_violation: bool = True):
    """Variance of ``sum f(x) 1{U_x > u}`` against the pair-covariance formula and its bounds.

    The pair bound is ``exp(-u alpha (1 + c0^2/4) / g(0))`` for every pair;
    ``c0 = 0`` gives its weakest form.  For pairs at distance at least
    ``far_distance`` the constant of the far-pair bound is fitted as the
    smallest value that covers every sampled pair.
    """
    levels = np.asarray(levels)
    R, n = levels.shape
    if R < 200:
        raise ValidationError("need at least 200 replicas")
    f = np.broadcast_to(np.asarray(f, dtype=float), (n,))
    ind = (levels > u).astype(float)
    S = ind @ f
    var_direct = float(np.var(S, ddof=1))
    C = np.cov(ind, rowvar=False, ddof=1) if n > 1 else np.array([[np.var(ind, ddof=1)]])
    var_formula = float(f @ C @ f)
    mean = float(S.mean())
    # pairwise joint vacancy and the spread of the covariance estimator
    joint = ind.T @ ind / R
    sd = np.sqrt(np.maximum(joint * (1 - joint), 1.0 / R) / R)
    bound = math.exp(-u * alpha * (1 + c0**2 / 4) / g0)
    off = ~np.eye(n, dtype=bool)
    excess = (C - bound) / sd
    worst = float(excess[off].max()) if n > 1 else -math.inf
    report = {
        "u": u, "replicas": R, "mean": mean, "variance_direct": var_direct, "variance_formula": var_formula,
        "formula_gap": abs(var_direct - var_formula), "variance_to_mean": var_direct / mean if mean > 0 else None,
        "pair_bound": bound, "c0": c0, "worst_excess_sigmas": worst,
        "max_covariance": float(C[off].max()) if n > 1 else 0.0,
    }
    if coords is not None and far_distance is not None and n > 1:
        X = np.asarray(coords, dtype=float)
        iu = np.triu_indices(n, 1)
        dist = np.linalg.norm(X[iu[0]] - X[iu[1]], axis=1)
        far = dist >= far_distance
        phi2 = np.asarray(phi2, dtype=float)
        pref = 2 * np.exp(-u * (phi2[iu[0]] + phi2[iu[1]]) / g0)
        cov = C[iu][far]
        pos = cov > 0
        if np.any(pos):
            need = far_distance ** (d - 2) / u * np.log1p(cov[pos] / pref[far][pos])
            report["far_fit_constant"] = float(need.max())
        else:
            report["far_fit_constant"] = 0.0
        report["far_pairs"] = int(far.sum())
        report["far_distance"] = far_distance
    if raise_on_violation and worst > sigmas:
        i, j = np.unravel_index(np.argmax(np.where(off, excess, -np.inf)), excess.shape)
        raise BoundViolated(f"pair ({i}, {j}) exceeds the covariance bound by {worst:.2f} sigma")
    return report


# ---------------------------------------------------------------- rho-set


def rho_set_experiment(setup: Setup, campaign: LevelCampaign | None = None, rho=None):
    """Cardinality and spacing of ``Lambda_N(rho)`` against their predicted scales."""
    _require_ball(setup)
    campaign = interlacement_campaign(setup) if campaign is None else campaign
    rho = setup.config.rho if rho is None else rho
    cards, dists = [], []
    for row, sl in zip(campaign.levels, campaign.set_levels):
        lv = CoverLevels(row, float(sl), 0, campaign.u_cap)
        _, summ = rho_set(lv, rho, setup.target_coords, setup.alpha, setup.d)
        cards.append(summ["cardinality"])
        dists.append(summ["min_distance"])
    n = setup.target.size
    L = setup.log_size
    predicted = setup.reference.kappa / (1 - rho) * n**rho / L
    u = rho_threshold(rho, setup.alpha, n, setup.d)
    dists = np.array(dists)
    finite = dists[np.isfinite(dists)]
    return {
        "rho": rho,
        "threshold": u,
        "mean_cardinality": float(np.mean(cards)),
        "predicted_cardinality": predicted,
        "cardinality_ratio": float(np.mean(cards)) / predicted,
        "phi2_cardinality": expected_rho_cardinality(setup.phi2, u, setup.d),
        "median_min_distance": float(np.median(dists)) if len(finite) * 2 > len(dists) else None,
        "pairs_replicas": int(len(finite)),
        "scattering_scale": scattering_scale(rho, n, setup.d),
        "diameter": float(2 * setup.lambda_shape.radius * setup.N),
    }


# ---------------------------------------------------------------- point capacities


def bulk_probe_sites(setup: Setup, n_random: int = 4, rays: int = 4, seed: int = 0):
    """Target site indices: the centre, points along the first axis, and seeded random sites."""
    T = setup.target_coords
    c = np.rint(_target_center(setup.lambda_shape) * setup.N).astype(np.int64)
    r_max = int(np.max(np.abs(T - c)[:, 0]))
    picks = []
    for k in range(rays + 1):
        p = c.copy()
        p[0] += int(round(k * r_max / rays))
        i = setup.domain.index_of(p)[0]
        j = np.flatnonzero(setup.target.sites == i)
        if len(j):
            picks.append(int(j[0]))
    rng = stream(seed, "probe", 2)
    picks.extend(int(v) for v in rng.choice(len(T), size=min(n_random, len(T)), replace=False))
    return np.array(sorted(set(picks)), dtype=np.int64)


def point_capacity_ratios(setup: Setup, probes, rout_factor: float = 2.0, corrected: bool = True):
    """``cap({x}) g(0) / phi_N^2(x) - 1`` on probe sites of the target.

    Solves live on the cube of radius ``rout_factor N``; ``corrected`` adds the
    far-field tail so the values approximate the infinite-lattice capacity.
    """
    box = TiltedBox(setup.psi, int(math.ceil(rout_factor * setup.N)), rtol=setup.config.tol)
    rows = []
    for j in probes:
        x = setup.target_coords[j]
        cap = point_capacity(box, x, corrected)
        rows.append({"site": int(j), "x": x.tolist(), "capacity": cap, "phi2": float(setup.phi2[j]),
                     "deviation": cap * setup.g0 / float(setup.phi2[j]) - 1})
    return rows


# ---------------------------------------------------------------- segment


def segment_summary(rows, max_bin: int = 5):
    """Mean of ``cover / N^3`` and a chi-square fit of the excursion count.

    The count includes the final excursion that reaches the opposite end, so
    it is at least 2; ``count - 1`` is compared with the geometric law
    ``P(k) = 2^-k`` on ``k >= 1``, pooling ``k >= max_bin``.
    """
    from scipy import stats

    ratios = np.array([r["ratio_N3"] for r in rows])
    k = np.array([r["excursions"] for r in rows]) - 1
    if np.any(k < 1):
        raise ValidationError("excursion counts must be at least 2")
    obs = np.array([np.sum(k == j) for j in range(1, max_bin)] + [np.sum(k >= max_bin)], dtype=float)
    probs = np.array([2.0**-j for j in range(1, max_bin)] + [2.0 ** -(max_bin - 1)])
    chi2, p = stats.chisquare(obs, probs * len(k))
    return {
        "replicas": int(len(rows)),
        "mean_ratio_N3": float(ratios.mean()),
        "sd_ratio_N3": float(ratios.std(ddof=1)) if len(ratios) > 1 else 0.0,
        "mean_excursions": float(k.mean() + 1),
        "chi2": float(chi2),
        "chi2_p": float(p),
        "observed": obs.astype(int).tolist(),
        "expected": (probs * len(k)).tolist(),
    }
