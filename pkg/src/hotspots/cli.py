"""Command-line entry point.

Exit codes: 0 success, 1 a check failed, 2 usage or configuration error.
Settings come from flags, then an optional JSON config file mirroring
``StudyConfig``, then the ``StudyConfig`` defaults.
"""
from __future__ import annotations

import argparse
import json
import math
import os
import sys
from pathlib import Path

import numpy as np

from . import geometry, mesh as meshmod, svg
from .experiments import (HOLDS, VIOLATION, StudyConfig, StudyReport, coupling_checks, coupling_summary_csv,
                          hotspots_verdict, run_study, verdict_checks)


class UsageError(Exception):
    pass


# ---------------------------------------------------------------------------
# argument helpers


def _floats(text):
    try:
        return tuple(float(t) for t in str(text).split(",") if t.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}")


def _point(text):
    v = _floats(text)
    if len(v) != 2:
        raise argparse.ArgumentTypeError(f"expected x,y, got {text!r}")
    return v


# flag dest -> StudyConfig key
CONFIG_FLAGS = {
    "epsilon": "epsilons", "epsilon0": "epsilon0s", "h": "hs", "dt": "dt", "n_paths": "n_paths",
    "c_star": "c_star", "seed": "seed", "t_grid": "t_grid", "max_time": "max_time", "output": "output_dir",
}


def _common(p, out_help="output directory"):
    g = p.add_argument_group("common")
    g.add_argument("--config", metavar="FILE", help="JSON file with StudyConfig keys (flags take precedence)")
    g.add_argument("--seed", type=int, help="master random seed (integer, default 0)")
    g.add_argument("--jobs", type=int, help="worker processes (count; default $HOTSPOTS_JOBS or 1)")
    g.add_argument("-o", "--output", metavar="PATH", help=out_help)


def _domain_flags(p, with_h=True, lists=False):
    g = p.add_argument_group("domain")
    kind = _floats if lists else float
    g.add_argument("--epsilon", type=kind, metavar="EPS",
                   help="neck parameter eps (length units)" + ("; comma list" if lists else ""))
    g.add_argument("--epsilon0", type=float, metavar="EPS0", help="inner neck width eps0 (length units)")
    g.add_argument("--arc-segments", type=int, metavar="N", help="chords per quarter arc (count; default automatic)")
    g.add_argument("--region", choices=("full", "quarter"), default=None,
                   help="full domain D or quarter domain D1 (default depends on command)")
    g.add_argument("--domain", metavar="FILE", help="read the domain from a domain file instead")
    if with_h:
        g.add_argument("--h", type=_floats, metavar="H", help="target mesh size(s) (length units; comma list)")


def build_parser():
    ap = argparse.ArgumentParser(prog="hotspots", description=__doc__.splitlines()[0])
    sub = ap.add_subparsers(dest="command", metavar="COMMAND")
    sub.required = True

    p = sub.add_parser("domain", help="write a domain file and an SVG drawing")
    _domain_flags(p, with_h=False)
    _common(p, "output domain file (SVG written next to it)")

    p = sub.add_parser("mesh", help="mesh a domain")
    _domain_flags(p)
    _common(p, "output mesh file")

    p = sub.add_parser("eigen", help="eigenpairs of a domain (Neumann or mixed)")
    _domain_flags(p)
    p.add_argument("--bc", choices=("neumann_full", "mixed_2_3"), default=None,
                   help="boundary conditions (default neumann_full on D, mixed_2_3 on D1)")
    p.add_argument("--k", type=int, default=4, help="number of eigenpairs (count)")
    _common(p)

    p = sub.add_parser("verdict", help="interior-extremum margins over mesh refinements")
    _domain_flags(p)
    _common(p)

    p = sub.add_parser("rbm", help="reflected Brownian motion survival curves")
    _domain_flags(p, with_h=False)
    p.add_argument("--start", type=_point, default=None, help="start point x,y (length units; default 0,0)")
    p.add_argument("--dt", type=float, help="time step (time units of standard Brownian motion)")
    p.add_argument("--n-paths", type=int, help="number of paths (count)")
    p.add_argument("--t-grid", type=_floats, help="report times (time units; comma list)")
    p.add_argument("--absorb", default="dirichlet_d", help="comma list of absorbing boundary tags")
    p.add_argument("--trace", type=int, default=0, help="also write the trace of the first N paths (count)")
    _common(p)

    p = sub.add_parser("couple", help="staged coupling runs in the quarter domain")
    _domain_flags(p, lists=True)
    p.add_argument("--c-star", type=float, help="window spacing constant c_* (dimensionless, in (0,1))")
    p.add_argument("--dt", type=float, help="time step (time units)")
    p.add_argument("--n-paths", type=int, help="number of coupled runs per epsilon (count)")
    p.add_argument("--max-time", type=float, help="censoring time per run (time units)")
    p.add_argument("--t-grid", type=_floats, help="tail-table times (time units; comma list)")
    _common(p)

    p = sub.add_parser("study", help="full verification suite")
    _domain_flags(p, lists=True)
    p.add_argument("--c-star", type=float, help="window spacing constant c_* (dimensionless, in (0,1))")
    p.add_argument("--dt", type=float, help="coupling time step (time units)")
    p.add_argument("--n-paths", type=int, help="Monte Carlo sample size (count, >= 100)")
    p.add_argument("--max-time", type=float, help="censoring time of coupled runs (time units)")
    p.add_argument("--t-grid", type=_floats, help="tail-table times (time units; comma list)")
    _common(p)
    return ap


# ---------------------------------------------------------------------------
# configuration


def resolve_config(args) -> StudyConfig:
    """Defaults, overlaid by the config file, overlaid by explicit flags."""
    data = {}
    if getattr(args, "config", None):
        try:
            data = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UsageError(f"config: cannot read {args.config}: {exc}")
        if not isinstance(data, dict):
            raise UsageError("config: top level must be an object")
        unknown = sorted(set(data) - set(StudyConfig.keys()))
        if unknown:
            raise UsageError(f"config: unknown key {unknown[0]!r}")
    for dest, key in CONFIG_FLAGS.items():
        v = getattr(args, dest, None)
        if v is None:
            continue
        if key in ("epsilons", "epsilon0s", "hs", "t_grid") and not isinstance(v, tuple):
            v = (v,)
        data[key] = v
    try:
        return StudyConfig.from_dict(data)
    except KeyError as exc:
        raise UsageError(f"config: unknown key {exc.args[0]!r}")
    except (TypeError, ValueError) as exc:
        raise UsageError(f"config: {exc}")


def resolve_jobs(args):
    v = args.jobs
    if v is None:
        env = os.environ.get("HOTSPOTS_JOBS", "").strip()
        if env:
            try:
                v = int(env)
            except ValueError:
                raise UsageError(f"HOTSPOTS_JOBS: expected an integer, got {env!r}")
    v = 1 if v is None else v
    if v < 1:
        raise UsageError("jobs: must be at least 1")
    return v


def resolve_domain(args, cfg: StudyConfig, default_region="full"):
    if args.domain:
        try:
            return geometry.load(args.domain)
        except (OSError, ValueError) as exc:
            raise UsageError(f"domain: cannot read {args.domain}: {exc}")
    try:
        params = geometry.DomainParams(min(cfg.epsilons), cfg.epsilon0s[0], args.arc_segments)
        region = args.region or default_region
        return geometry.build_domain(params) if region == "full" else geometry.build_quarter(params)
    except ValueError as exc:
        raise UsageError(f"epsilon: {exc}")


def _outdir(args, cfg):
    d = Path(args.output or cfg.output_dir)
    d.mkdir(parents=True, exist_ok=True)
    return d


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _dump(obj):
    from .experiments import _clean

    return json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands


def cmd_domain(args, cfg, jobs):
    dom = resolve_domain(args, cfg)
    out = Path(args.output or Path(cfg.output_dir) / "domain.txt")
    _write(out, geometry.dumps(dom))
    _write(out.with_suffix(".svg"), svg.domain_svg(dom, points=dict(dom.named_points)))
    return 0


def _single_h(args, cfg):
    hs = cfg.hs
    if len(hs) != 1 and args.h is not None:
        raise UsageError("h: this command takes a single mesh size")
    return hs[0]


def cmd_mesh(args, cfg, jobs):
    dom = resolve_domain(args, cfg)
    h = _single_h(args, cfg)
    try:
        m = meshmod.mesh_domain(dom, h)
    except ValueError as exc:
        raise UsageError(f"h: {exc}")
    out = Path(args.output or Path(cfg.output_dir) / "mesh.txt")
    _write(out, meshmod.dumps(m))
    return 0


def cmd_eigen(args, cfg, jobs):
    from .spectral import eigen_csv, eigenpairs, extrema_report, level_curve, level_curve_csv, section_max

    dom = resolve_domain(args, cfg)
    h = _single_h(args, cfg)
    bc = args.bc or ("mixed_2_3" if dom.region_id == "quarter_D1" else "neumann_full")
    if bc == "mixed_2_3" and "dirichlet_d" not in dom.tags:
        raise UsageError("bc: mixed_2_3 needs a domain with dirichlet_d edges")
    if args.k < 2:
        raise UsageError("k: need at least 2 eigenpairs")
    try:
        m = meshmod.mesh_domain(dom, h)
    except ValueError as exc:
        raise UsageError(f"h: {exc}")
    pairs = eigenpairs(m, bc, args.k)
    d = _outdir(args, cfg)
    main = pairs[0] if bc == "mixed_2_3" else pairs[1]
    _write(d / "eigenfunction.csv", eigen_csv(m, main.vector))
    rep = extrema_report(m, main.vector)
    summary = {"bc": bc, "h": h, "n_nodes": m.n_nodes, "eigenvalues": [p.value for p in pairs],
               "residuals": [p.residual for p in pairs], "extrema": rep._asdict(),
               "max_point": m.nodes[rep.max_node].tolist(), "min_point": m.nodes[rep.min_node].tolist()}
    if bc == "mixed_2_3":
        a = section_max(m, main.vector, 1.0)
        curve = level_curve(m, main.vector, a)
        summary["gamma"] = {"level": a, "r_min": curve.r_min, "r_max": curve.r_max}
        _write(d / "gamma.csv", level_curve_csv(curve))
    else:
        summary["gap"] = (pairs[2].value - pairs[1].value) / pairs[1].value if len(pairs) > 2 else math.nan
        curve = level_curve(m, main.vector, 0.0)
        _write(d / "nodal_line.csv", level_curve_csv(curve))
    _write(d / "eigen_summary.json", _dump(summary))
    _write(d / "eigen.svg", svg.domain_svg(dom, [(curve, "#d62728")], {
        "max": tuple(m.nodes[rep.max_node]), "min": tuple(m.nodes[rep.min_node])}))
    return 0


def cmd_verdict(args, cfg, jobs):
    dom = resolve_domain(args, cfg)
    if len(cfg.hs) < 2:
        raise UsageError("h: need at least two mesh sizes")
    try:
        rows, bars, verdict = hotspots_verdict(dom, cfg.hs)
    except ValueError as exc:
        raise UsageError(f"h: {exc}")
    report = StudyReport(provenance={"config_hash": cfg.content_hash(), "config": cfg.to_dict()})
    report.extend(verdict_checks(rows, bars, verdict))
    d = _outdir(args, cfg)
    _write(d / "verdict.json", report.to_json())
    print(verdict)
    return 0 if verdict in (VIOLATION, HOLDS) and not report.failed else 1


def cmd_rbm(args, cfg, jobs):
    from .rbm import SimConfig, run_batch, simulate, survival_curve, trace_csv

    dom = resolve_domain(args, cfg, default_region="quarter")
    tags = tuple(t for t in args.absorb.split(",") if t)
    bad = sorted(set(tags) - set(geometry.TAGS))
    if bad:
        raise UsageError(f"absorb: unknown tag {bad[0]!r}")
    start = np.array(args.start or (0.0, 0.0))
    if geometry.classify(dom, start).kind == "exterior":
        raise UsageError("start: point lies outside the domain")
    dt = args.dt if args.dt is not None else 1e-4
    try:
        sc = SimConfig(dt=dt, rng_seed=cfg.seed, max_time=max(cfg.t_grid))
    except ValueError as exc:
        raise UsageError(f"dt: {exc}")
    d = _outdir(args, cfg)
    curve = survival_curve(dom, [start], cfg.t_grid, cfg.n_paths, sc, absorb_tags=tags)
    _write(d / "survival.csv", curve.to_csv())
    _write(d / "survival.svg", svg.line_plot_svg({"P(T>t)": (curve.t, [e.value for e in curve.estimates[0]])},
                                                 "t", "P(T>t)", logy=True, title="survival"))
    if args.trace > 0:
        rows = []
        for i in range(args.trace):
            rows.extend(simulate(dom, start, sc, trace=True, path_id=i).trace)
        _write(d / "trace.csv", trace_csv(rows))
    return 0


def cmd_couple(args, cfg, jobs):
    from .coupling import records_csv
    from .experiments import coupling_row

    h = cfg.hs[0]
    d = _outdir(args, cfg)
    rows = []
    for e in sorted(cfg.epsilons, reverse=True):
        try:
            params = geometry.DomainParams(e, cfg.epsilon0s[0])
        except ValueError as exc:
            raise UsageError(f"epsilon: {exc}")
        row = coupling_row(params, h, cfg.c_star, cfg.n_paths, cfg.dt, cfg.seed, cfg.max_time, cfg.t_grid,
                           jobs=jobs)
        rows.append(row)
        _write(d / f"coupling_eps{e:g}.csv", records_csv(row.records))
    report = StudyReport(provenance={"config_hash": cfg.content_hash(), "config": cfg.to_dict()})
    report.extend(coupling_checks(rows))
    _write(d / "coupling_summary.csv", coupling_summary_csv(rows))
    _write(d / "coupling.json", report.to_json())
    return 1 if report.failed else 0


def cmd_study(args, cfg, jobs):
    d = _outdir(args, cfg)
    report, files = run_study(cfg, jobs=jobs, log=lambda m: print(f"[study] {m}", file=sys.stderr))
    for name in sorted(files):
        _write(d / name, files[name])
    for c in report.checks:
        print(f"{c.verdict:>12}  {c.name}")
    return 1 if report.failed else 0


COMMANDS = {"domain": cmd_domain, "mesh": cmd_mesh, "eigen": cmd_eigen, "verdict": cmd_verdict,
            "rbm": cmd_rbm, "couple": cmd_couple, "study": cmd_study}


def run(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        cfg = resolve_config(args)
        jobs = resolve_jobs(args)
        return COMMANDS[args.command](args, cfg, jobs)
    except UsageError as exc:
        print(f"hotspots {args.command}: error: {exc}", file=sys.stderr)
        return 2


def main():  # pragma: no cover
    sys.exit(run())
