"""Command-line entry point.

Settings are resolved in increasing precedence: built-in defaults, the
``--config`` file (``key = value`` lines), the ``CONFCOVER_OUTPUT_DIR``
environment variable (output directory only), then command-line flags.

Exit codes: 0 on success, 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import dataclasses
import math
import os
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import __version__
from .domain import ShapeSpec, build_domain, dump_domain
from .errors import NumericalError, ValidationError
from .experiments import (
    CampaignConfig,
    Setup,
    assumption_check,
    coupling_check,
    exp_sum_check,
    gumbel_experiment,
    interlacement_campaign,
    late_point_experiment,
    level_band_check,
    parse_grid,
    rho_set_experiment,
    segment_summary,
    walk_campaign,
)
from .io import read_config, write_csv, write_json

ENV_OUTPUT = "CONFCOVER_OUTPUT_DIR"

SUBCOMMANDS = (
    "eigen", "reference", "capacity", "green", "interlace-cover", "walk-cover",
    "late-points", "gumbel", "coupling", "sums", "segment", "validate",
)

# subcommands that run without a lattice scale
NO_N = {"reference", "sums"}

DEFAULTS = {
    "dimension": 3,
    "shape": "ball:1",
    "lambda_shape": "ball:0.5",
    "N": None,
    "eps": 0.2,
    "rho": 0.25,
    "replicas": 300,
    "seed": 1,
    "tol": 1e-12,
    "rout_factor": 5.0,
    "z_grid": "-2:6:0.25",
    "u_cap_mult": 10.0,
    "delta": None,
    "probes": 50,
    "threads": 1,
    "output_dir": ".",
}


def _opt_float(v):
    return None if v in (None, "", "none", "None") else float(v)


def _opt_int(v):
    return None if v in (None, "", "none", "None") else int(v)


TYPES = {
    "dimension": int, "shape": str, "lambda_shape": str, "N": _opt_int, "eps": float, "rho": float,
    "replicas": int, "seed": int, "tol": float, "rout_factor": float, "z_grid": str, "u_cap_mult": float,
    "delta": _opt_float, "probes": int, "threads": int, "output_dir": str,
}


@dataclass(frozen=True)
class RunConfig:
    dimension: int
    shape: str
    lambda_shape: str
    N: int | None
    eps: float
    rho: float
    replicas: int
    seed: int
    tol: float
    rout_factor: float
    z_grid: str
    u_cap_mult: float
    delta: float | None
    probes: int
    threads: int
    output_dir: str

    def __post_init__(self):
        if self.threads < 1:
            raise ValidationError("threads must be >= 1")
        if self.tol <= 0:
            raise ValidationError("tol must be positive")
        ShapeSpec.parse(self.shape, self.dimension)
        ShapeSpec.parse(self.lambda_shape, self.dimension)
        self.campaign(self.N or 1)

    def campaign(self, N=None) -> CampaignConfig:
        return CampaignConfig(
            d=self.dimension, shape=self.shape, lambda_shape=self.lambda_shape, N=int(N or self.N),
            eps=self.eps, rho=self.rho, replicas=self.replicas, seed=self.seed, tol=self.tol,
            rout_factor=self.rout_factor, z_grid=self.z_grid, u_cap_mult=self.u_cap_mult, delta=self.delta,
            probes=self.probes, threads=self.threads,
        )

    def to_dict(self):
        out = dataclasses.asdict(self)
        # worker count and location do not change results
        out.pop("threads")
        out.pop("output_dir")
        return out


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.format_usage()}{self.prog}: error: {message}")


def _common(p):
    g = p.add_argument_group("run configuration")
    g.add_argument("--config", help="key = value file; flags override it")
    g.add_argument("--dimension", "--d", dest="dimension", help=f"lattice dimension (default: {DEFAULTS['dimension']})")
    g.add_argument("--shape", help=f"domain D: ball:R[@c], box:lo;hi or annulus:a,b (default: {DEFAULTS['shape']})")
    g.add_argument("--lambda-shape", dest="lambda_shape", help=f"target Lambda (default: {DEFAULTS['lambda_shape']})")
    g.add_argument("--N", dest="N", help="lattice scale (required except for reference and sums)")
    g.add_argument("--eps", help=f"target enlargement margin (default: {DEFAULTS['eps']})")
    g.add_argument("--rho", help=f"intermediate level parameter (default: {DEFAULTS['rho']})")
    g.add_argument("--replicas", help=f"Monte Carlo replicas (default: {DEFAULTS['replicas']})")
    g.add_argument("--seed", help=f"master seed (default: {DEFAULTS['seed']})")
    g.add_argument("--tol", help=f"solver tolerance (default: {DEFAULTS['tol']})")
    g.add_argument("--rout-factor", dest="rout_factor", help=f"kill cube radius over N (default: {DEFAULTS['rout_factor']})")
    g.add_argument("--z-grid", dest="z_grid", help=f"a:b:step (default: {DEFAULTS['z_grid']})")
    g.add_argument("--u-cap-mult", dest="u_cap_mult",
                   help=f"level cap as a multiple of g(0) log|Lambda_N| / alpha (default: {DEFAULTS['u_cap_mult']})")
    g.add_argument("--delta", help="coupling exponent (default: largest admissible)")
    g.add_argument("--probes", help=f"coupling probe sites (default: {DEFAULTS['probes']})")
    g.add_argument("--threads", help=f"worker threads; results do not depend on it (default: {DEFAULTS['threads']})")
    g.add_argument("--output-dir", dest="output_dir",
                   help=f"output directory (default: ${ENV_OUTPUT} or {DEFAULTS['output_dir']})")
    g.add_argument("--dump-domain", dest="dump_domain", help="also write the lattice domain to this file")


def build_parser():
    p = _Parser(prog="confcover", description="Cover levels and cover times of confined walks and tilted interlacements.")
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", metavar="command", parser_class=_Parser)

    def add(name, help_, out):
        s = sub.add_parser(name, help=help_, description=help_)
        _common(s)
        s.add_argument("--out", default=out, help=f"main output file name (default: {out})")
        return s

    add("eigen", "principal eigenpair of the killed walk", "eigen.csv")
    s = add("reference", "continuum ball eigenfunction table and constants", "reference.csv")
    s.add_argument("--points", type=int, default=101, help="radial grid points (default: 101)")
    s = add("capacity", "equilibrium measure and capacity of a finite set", "capacity.json")
    s.add_argument("--set", dest="set_", default="0,0,0", help="sites as 'x,y,z;x,y,z' (default: origin)")
    s.add_argument("--method", default="linear_solve", choices=["linear_solve", "monte_carlo"],
                   help="(default: linear_solve)")
    s.add_argument("--samples", type=int, default=10_000, help="walks per site for monte_carlo (default: 10000)")
    s.add_argument("--untilted", action="store_true", help="use the plain lattice walk")
    s = add("green", "Green function slice of the tilted walk", "green.csv")
    s.add_argument("--source", default="0,0,0", help="source site (default: origin)")
    s.add_argument("--slice-radius", type=int, default=None, help="half-width of the printed slice (default: N)")
    s.add_argument("--untilted", action="store_true", help="use the plain lattice walk")
    add("interlace-cover", "cover levels of tilted interlacements", "levels.csv")
    s = add("walk-cover", "cover times of the confined walk", "cover.csv")
    s.add_argument("--dump-hits", dest="dump_hits", help="also write the per-site hitting times (debugging)")
    for name, help_, out in [
        ("late-points", "late points at a Gumbel threshold", "late_points.csv"),
        ("gumbel", "cover level or time distribution against the Gumbel law", "gumbel.csv"),
    ]:
        s = add(name, help_, out)
        s.add_argument("--source", default="interlacement", choices=["interlacement", "walk"],
                       help="(default: interlacement)")
        if name == "late-points":
            s.add_argument("--z", type=float, default=0.0, help="threshold shift (default: 0)")
            s.add_argument("--radial-bins", type=int, default=5, help="radial shells (default: 5)")
    s = add("coupling", "walk against interlacement vacancy frequencies", "coupling.csv")
    s.add_argument("--t-factor", type=float, default=0.5, help="t_N over g(0) N^d log|Lambda_N| / alpha (default: 0.5)")
    s = add("sums", "exponential sums and level-band volumes", "sums.csv")
    s.add_argument("--N-list", dest="N_list", default="16,24,32", help="scales (default: 16,24,32)")
    s.add_argument("--beta-list", dest="beta_list", default="1,2", help="exponents (default: 1,2)")
    s.add_argument("--eps-list", dest="eps_list", default="0.2,0.1,0.05", help="lattice band widths (default: 0.2,0.1,0.05)")
    add("segment", "cover time of the segment {-N..N}", "segment.csv")
    add("validate", "fast end-to-end invariant checks", "validate.json")
    return p


def resolve(ns) -> RunConfig:
    values = dict(DEFAULTS)
    if ns.config:
        cfg = read_config(ns.config)
        unknown = set(cfg) - set(DEFAULTS)
        if unknown:
            raise ValidationError(f"unknown config keys: {sorted(unknown)}")
        values.update(cfg)
    if os.environ.get(ENV_OUTPUT) and not (ns.config and "output_dir" in read_config(ns.config)):
        values["output_dir"] = os.environ[ENV_OUTPUT]
    for k in DEFAULTS:
        v = getattr(ns, k, None)
        if v is not None:
            values[k] = v
    try:
        typed = {k: (TYPES[k](v) if v is not None else None) for k, v in values.items()}
    except ValueError as exc:
        raise ValidationError(f"bad setting: {exc}") from None
    return RunConfig(**typed)


def _parse_points(text, d):
    try:
        pts = [[int(v) for v in chunk.split(",")] for chunk in text.split(";") if chunk.strip()]
    except ValueError:
        raise ValidationError(f"bad site list {text!r}") from None
    arr = np.array(pts, dtype=np.int64)
    if arr.ndim != 2 or arr.shape[1] != d:
        raise ValidationError(f"sites must have {d} coordinates")
    return arr


def _list(text, cast):
    try:
        return [cast(v) for v in text.split(",") if v.strip()]
    except ValueError:
        raise ValidationError(f"bad list {text!r}") from None


def _coord_names(d):
    return ["x", "y", "z"] if d == 3 else [f"x{a}" for a in range(d)]


# ---------------------------------------------------------------- commands


def cmd_eigen(rc, ns, out):
    from .spectral import continuum_eigenvalue, solve_principal_eigenpair

    dom = build_domain(ShapeSpec.parse(rc.shape, rc.dimension), rc.N)
    _maybe_dump(ns, dom)
    eig = solve_principal_eigenpair(dom, tol=rc.tol)
    names = _coord_names(dom.d)
    rows = [{"site_index": i, **{c: int(v) for c, v in zip(names, dom.sites[i])}, "phi": eig.phi[i]} for i in range(dom.size)]
    write_csv(out / ns.out, rows, ["site_index", *names, "phi"])
    summ = {"status": "ok", "lambda": eig.lam, "residual": eig.residual, "iterations": eig.iterations,
            "sites": dom.size, "rescaled_gap": (1 - eig.lam) * 2 * dom.d * rc.N**2, "config": rc.to_dict()}
    try:
        summ["continuum_eigenvalue"] = continuum_eigenvalue(dom.shape)
    except ValidationError:
        summ["continuum_eigenvalue"] = None
    write_json(out / (Path(ns.out).stem + ".json"), summ)
    print(f"lambda_N = {eig.lam:.15g}, residual = {eig.residual:.3g}")


def cmd_reference(rc, ns, out):
    from .reference_ball import BallReference

    lam = ShapeSpec.parse(rc.lambda_shape, rc.dimension)
    if lam.kind != "ball":
        raise ValidationError("the reference solution covers a ball target in the unit ball")
    ref = BallReference(rc.dimension, lam.radius)
    r, phi, phi2, g = ref.table(ns.points)
    rows = [{"r": a, "phi": b, "phi2": c, "dphi2_dr": e} for a, b, c, e in zip(r, phi, phi2, g)]
    write_csv(out / ns.out, rows)
    summ = {"status": "ok", **ref.summary(), "kappa_level_band_1e-4": ref.level_band_quadrature(1e-4),
            "normalization": ref.normalization(), "assumption": assumption_check(ref), "config": rc.to_dict()}
    write_json(out / (Path(ns.out).stem + ".json"), summ)
    print(f"alpha = {ref.alpha:.15g}, kappa = {ref.kappa:.15g}")


def _tilt(rc, ns, untilted):
    from .tilted import TiltField

    if untilted:
        return None, TiltField.untilted(rc.dimension)
    setup = Setup(rc.campaign())
    _maybe_dump(ns, setup.domain)
    return setup, setup.psi


def cmd_capacity(rc, ns, out):
    from .potential import equilibrium_measure

    setup, psi = _tilt(rc, ns, ns.untilted)
    K = _parse_points(ns.set_, rc.dimension)
    R = int(math.ceil(rc.rout_factor * rc.N))
    eq = equilibrium_measure(psi, K, method=ns.method, box_radius=R if ns.method == "linear_solve" else None,
                             r_escape=R, samples=ns.samples, seed=rc.seed, threads=rc.threads)
    names = _coord_names(rc.dimension)
    rows = [{**{c: int(v) for c, v in zip(names, k)}, "weight": w, "escape": e} for k, w, e in zip(K, eq.weights, eq.escape)]
    write_csv(out / (Path(ns.out).stem + ".csv"), rows, [*names, "weight", "escape"])
    summ = {"status": "ok", "capacity": eq.capacity, "method": eq.method, "stderr": eq.stderr,
            "weights": eq.weights, **{f"details_{k}": v for k, v in eq.details.items()}, "config": rc.to_dict()}
    if len(K) == 1 and setup is not None:
        summ["phi2_over_g0"] = float(setup.psi(K)[0] ** 2 / setup.g0)
    write_json(out / ns.out, summ)
    print(f"capacity = {eq.capacity:.12g}")


def cmd_green(rc, ns, out):
    from .potential import TiltedBox

    _, psi = _tilt(rc, ns, ns.untilted)
    R = int(math.ceil(rc.rout_factor * rc.N))
    box = TiltedBox(psi, R, rtol=rc.tol)
    x = _parse_points(ns.source, rc.dimension)[0]
    gs = box.green(x)
    w = rc.N if ns.slice_radius is None else ns.slice_radius
    w = min(w, R)
    rng = np.arange(-w, w + 1)
    grid = np.stack(np.meshgrid(rng, rng, indexing="ij"), axis=-1).reshape(-1, 2)
    ys = np.zeros((len(grid), rc.dimension), dtype=np.int64)
    ys[:, :2] = grid
    ys[:, 2:] = x[2:]
    ys = ys[np.abs(ys).max(axis=1) <= R]
    raw, corr = gs.G(ys), gs.G(ys, corrected=True)
    names = _coord_names(rc.dimension)
    rows = [{**{c: int(v) for c, v in zip(names, y)}, "G": a, "G_corrected": b} for y, a, b in zip(ys, raw, corr)]
    write_csv(out / ns.out, rows, [*names, "G", "G_corrected"])
    summ = {"status": "ok", "G_xx": float(gs.G(x)[0]), "G_xx_corrected": float(gs.G(x, True)[0]),
            "edge_proxy": gs.edge_proxy(), "iterations": gs.iterations, "residual": gs.residual,
            "box_radius": R, "config": rc.to_dict()}
    write_json(out / (Path(ns.out).stem + ".json"), summ)
    print(f"G(x,x) = {summ['G_xx']:.12g} (corrected {summ['G_xx_corrected']:.12g})")


def _setup(rc, ns):
    setup = Setup(rc.campaign())
    _maybe_dump(ns, setup.domain)
    return setup


def cmd_interlace_cover(rc, ns, out):
    from .interlacements import CoverLevels, rho_set

    setup = _setup(rc, ns)
    camp = interlacement_campaign(setup)
    base = setup.first_order_level()
    rows = []
    for i, (lv, sl, nt) in enumerate(zip(camp.levels, camp.set_levels, camp.trajectories)):
        _, summ = rho_set(CoverLevels(lv, float(sl), int(nt), camp.u_cap), rc.rho, setup.target_coords, setup.alpha, rc.dimension)
        rows.append({"replica": i, "set_level": sl, "normalized_level": sl / base, "rho_count": summ["cardinality"],
                     "rho_min_dist": summ["min_distance"], "trajectories": int(nt)})
    write_csv(out / ns.out, rows)
    rs = rho_set_experiment(setup, camp)
    summ = {"status": "ok", "mean_set_level": float(camp.set_levels.mean()), "first_order_level": base,
            "mean_normalized_level": float(camp.set_levels.mean() / base), "u_cap": camp.u_cap,
            **setup.summary(), "rho_set": rs, "config": rc.to_dict()}
    write_json(out / (Path(ns.out).stem + ".json"), summ)
    print(f"mean normalized level = {summ['mean_normalized_level']:.6f}")


def cmd_walk_cover(rc, ns, out):
    setup = _setup(rc, ns)
    camp = walk_campaign(setup)
    z = parse_grid(rc.z_grid)
    thr = setup.time_threshold(z)
    base = setup.first_order_level() * setup.volume_scale
    late_cols = [f"late_count_at_z={v:g}" for v in z]
    rows = []
    for i, (ct, hits) in enumerate(zip(camp.cover_times, camp.hits)):
        row = {"replica": i, "cover_time": int(ct), "normalized_time": ct / base,
               "normalized_time_lambda": ct / (base * setup.eig.lam)}
        row.update({c: int(np.sum(hits > t)) for c, t in zip(late_cols, thr)})
        rows.append(row)
    write_csv(out / ns.out, rows)
    if ns.dump_hits:
        np.savetxt(Path(ns.dump_hits), camp.hits, fmt="%d")
    summ = {"status": "ok", "mean_cover_time": float(camp.cover_times.mean()), "first_order_time": base,
            "mean_normalized_time": float(camp.cover_times.mean() / base),
            "mean_normalized_time_lambda": float(camp.cover_times.mean() / (base * setup.eig.lam)),
            **setup.summary(), "config": rc.to_dict()}
    write_json(out / (Path(ns.out).stem + ".json"), summ)
    print(f"mean normalized time = {summ['mean_normalized_time']:.6f}")


def _campaign_for(setup, source):
    return interlacement_campaign(setup) if source == "interlacement" else walk_campaign(setup)


def cmd_late_points(rc, ns, out):
    setup = _setup(rc, ns)
    rep = late_point_experiment(ns.source, setup, ns.z, _campaign_for(setup, ns.source), ns.radial_bins)
    write_csv(out / ns.out, rep.rows())
    d = rep.to_dict()
    criteria = {
        "mass_band": 0.5 <= d["ratio_to_theory"] <= 2.0,
        "dispersion_band": 0.6 <= d["dispersion_index"] <= 1.4 if math.isfinite(d["dispersion_index"]) else False,
        "outer_shell": d["outer_shell_fraction"] >= 0.8 if math.isfinite(d["outer_shell_fraction"]) else False,
    }
    write_json(out / "report.json", {"status": "ok", **d, "radial_profile": rep.radial_profile,
                                     "pass": criteria, "config": rc.to_dict()})
    _print_criteria(criteria)


def cmd_gumbel(rc, ns, out):
    setup = _setup(rc, ns)
    rep = gumbel_experiment(ns.source, setup, _campaign_for(setup, ns.source))
    write_csv(out / ns.out, rep.rows())
    criteria = {"ks_band": rep.ks_distance <= 0.15, "super_gumbel": rep.super_gumbel_ok}
    write_json(out / "report.json", {"status": "ok", **rep.to_dict(), "pass": criteria, "config": rc.to_dict()})
    _print_criteria(criteria)


def cmd_coupling(rc, ns, out):
    setup = _setup(rc, ns)
    rep = coupling_check(setup, ns.t_factor)
    write_csv(out / ns.out, rep.rows())
    criteria = {"sandwich": rep.fraction_inside >= 0.95}
    write_json(out / "report.json", {"status": "ok", **rep.to_dict(), "pass": criteria, "config": rc.to_dict()})
    _print_criteria(criteria)


def cmd_sums(rc, ns, out):
    N_list = _list(ns.N_list, int)
    beta_list = _list(ns.beta_list, float)
    rows = exp_sum_check(rc.shape, rc.lambda_shape, N_list, beta_list, rc.eps, rc.dimension, rc.tol)
    write_csv(out / ns.out, rows)
    setup = Setup(rc.campaign(max(N_list)))
    band = level_band_check(setup, _list(ns.eps_list, float))
    write_csv(out / "level_band.csv", band)
    top = [r for r in rows if r["N"] == max(N_list)]
    cont = [r for r in band if r["kind"] == "continuum"]
    criteria = {
        "sum_band": all(abs(r["ratio"] - 1) <= 0.3 for r in top),
        "sum_monotone": all(_monotone([abs(r["ratio"] - 1) for r in rows if r["beta"] == b]) for b in beta_list),
        "continuum_band": abs(cont[-1]["ratio"] - 1) <= 0.01,
    }
    write_json(out / "report.json", {"status": "ok", "pass": criteria, "config": rc.to_dict(),
                                     **{f"ratio_N{r['N']}_beta{r['beta']:g}": r["ratio"] for r in rows}})
    _print_criteria(criteria)


def _monotone(xs):
    return all(b <= a for a, b in zip(xs, xs[1:]))


def cmd_segment(rc, ns, out):
    from .walk import segment_cover

    rows = segment_cover(rc.N, rc.replicas, rc.seed, rc.threads)
    write_csv(out / ns.out, [{k: r[k] for k in ("replica", "cover_time", "ratio_N3", "excursions")} for r in rows])
    summ = segment_summary(rows)
    write_json(out / (Path(ns.out).stem + ".json"), {"status": "ok", **summ, "config": rc.to_dict()})
    print(f"mean cover/N^3 = {summ['mean_ratio_N3']:.6f}, excursion chi2 p = {summ['chi2_p']:.4f}")


def cmd_validate(rc, ns, out):
    from .validation import run_validation

    results = run_validation(rc.N, rc.seed, rc.dimension)
    for name, ok, value in results:
        print(f"{'PASS' if ok else 'FAIL'} {name} {value:.3e}")
    write_json(out / ns.out, {"status": "ok" if all(r[1] for r in results) else "failed",
                              **{name: value for name, _, value in results},
                              "pass": {name: ok for name, ok, _ in results}, "config": rc.to_dict()})
    if not all(r[1] for r in results):
        raise NumericalError("invariant check failed")


def _print_criteria(criteria):
    for k, v in criteria.items():
        print(f"{'PASS' if v else 'FAIL'} {k}")


def _maybe_dump(ns, domain):
    if getattr(ns, "dump_domain", None):
        dump_domain(domain, ns.dump_domain)


COMMANDS = {
    "eigen": cmd_eigen, "reference": cmd_reference, "capacity": cmd_capacity, "green": cmd_green,
    "interlace-cover": cmd_interlace_cover, "walk-cover": cmd_walk_cover, "late-points": cmd_late_points,
    "gumbel": cmd_gumbel, "coupling": cmd_coupling, "sums": cmd_sums, "segment": cmd_segment,
    "validate": cmd_validate,
}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        ns = parser.parse_args(argv)
        if ns.command is None:
            raise UsageError(parser.format_usage() + "confcover: error: a command is required")
        rc = resolve(ns)
        if rc.N is None and ns.command not in NO_N:
            sub = parser._subparsers._group_actions[0].choices[ns.command]
            raise UsageError(sub.format_usage() + f"confcover {ns.command}: error: --N is required")
        out = Path(rc.output_dir)
        out.mkdir(parents=True, exist_ok=True)
        COMMANDS[ns.command](rc, ns, out)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except ValidationError as exc:
        print(f"confcover: invalid input: {exc}", file=sys.stderr)
        return 1
    except (OSError, KeyError) as exc:
        print(f"confcover: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"confcover: numerical failure: {exc}", file=sys.stderr)
        return 2
    return 0


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
