"""Command-line runner: ``eulerlab <study> --config exp.ini [--set k=v ...]``.

Exit codes: 0 all checks pass, 1 a check failed, 2 invalid configuration,
3 runtime error.
"""
from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import fields as fl
from .config import ConfigError, ExperimentConfig, validate
from .convergence import ConstantsSettings, estimate_constants, run_convergence_study
from .integrator import TimeGrid, compressibility_estimate, make_cloud, reference_flow
from .maximal import lemma_suite
from .report import dumps_json, loglog_svg, write_csv

__all__ = ["main", "run", "build_field", "constants_settings"]

EXIT_PASS, EXIT_FAIL, EXIT_CONFIG, EXIT_RUNTIME = 0, 1, 2, 3

SUBCOMMANDS = {
    "convergence": "convergence",
    "compressibility": "compressibility",
    "maximal": "maximal_checks",
    "constants": "constants_only",
}


def build_field(cfg: ExperimentConfig) -> fl.FieldSpec:
    f = cfg["field"]
    kind, d = f["kind"], f["dimension"]
    if kind == "zero":
        return fl.zero_field(d)
    if kind == "constant":
        return fl.constant_field(f["value"])
    if kind == "linear":
        return fl.linear_field(d, f["rate"])
    if kind == "affine":
        offset = f["value"] if f["value"] else None
        return fl.affine_field(np.reshape(f["matrix"], (d, d)), offset)
    if kind == "power":
        return fl.power_field(f["alpha"], f["cap"])
    if kind == "rotation":
        return fl.rotation_field(f["alpha"])
    if kind == "convolution":
        return fl.convolution_example(d, f["alpha"], f["width"], f["spacing"], f["extent"])
    raise ConfigError([cfg.diag("field.kind", f"unknown field kind {kind!r}")])


def constants_settings(cfg: ExperimentConfig) -> ConstantsSettings:
    return ConstantsSettings(**cfg["constants"])


def _echo(cfg: ExperimentConfig) -> dict:
    # output location is not part of the experiment
    echo = cfg.to_dict()
    del echo["output"]
    return echo


def _convergence(cfg, out: Path, workers: int, svg: bool):
    st = cfg["study"]
    field = build_field(cfg)
    rep = run_convergence_study(
        field,
        st["R"],
        st["T"],
        st["p"],
        st["h_sweep"],
        st["refinement"],
        st["seed"],
        cloud_size=st["cloud_size"],
        t0=st["t0"],
        workers=workers,
        slope_threshold=st["slope_threshold"],
        r2_threshold=st["r2_threshold"],
        reference_budget=st["reference_budget"],
        per_step=st["per_step"],
        memory_cap=st["memory_cap"],
        constants_settings=constants_settings(cfg),
    )
    rows = rep.rows()
    write_csv(out / "errors.csv", ["h", "error", "bound"], rows)
    if svg:
        h, err, bound = (list(c) for c in zip(*rows))
        title = f"Euler error, {field.name} field, p={st['p']!r}"
        (out / "plot.svg").write_text(loglog_svg(h, err, bound, rep.fitted_slope, rep.fitted_intercept, title))
    summary = [f"{h!r:>12} {e:.6e} {b:.6e}" for h, e, b in rows]
    if rep.fitted_slope is not None:
        summary.append(f"slope {rep.fitted_slope:.4f}  R^2 {rep.fit_residual:.5f}")
    summary.append("flags " + " ".join(f"{k}={v}" for k, v in rep.flags.items()))
    return rep.to_dict(), rep.passed, summary


def _compressibility(cfg, out: Path, workers: int, svg: bool):
    st, cp = cfg["study"], cfg["compressibility"]
    field = build_field(cfg)
    cloud = make_cloud(field.dimension, st["R"], st["cloud_size"], st["seed"])
    grid = TimeGrid.from_step(st["t0"], st["T"], cp["h"])
    count = max(1, min(cp["snapshots"], grid.N))
    steps = sorted({round(k * grid.N / count) for k in range(count + 1)})
    table = reference_flow(field, cloud, grid, cp["refinement"], steps, st["memory_cap"], workers)
    rows = [(n, grid.time(n), compressibility_estimate(table, n, cp["histogram_dx"])) for n in steps]
    write_csv(out / "compressibility.csv", ["step", "t", "L"], rows)
    final = rows[-1][2]
    report = {
        "field": field.metadata(),
        "snapshots": [{"step": n, "t": t, "L": L} for n, t, L in rows],
        "L_final": final,
        "L_max": max(r[2] for r in rows),
        "expected": cp["expected"],
        "tolerance": cp["tolerance"],
    }
    ok = True
    if cp["expected"] is not None:
        ok = abs(final - cp["expected"]) <= cp["tolerance"] * abs(cp["expected"])
    report["flags"] = {"within_tolerance": ok, "pass": ok}
    summary = [f"t={t!r:<8} L={L:.5f}" for _, t, L in rows]
    summary.append(f"L(T) = {final:.5f}" + ("" if cp["expected"] is None else f" (expected {cp['expected']!r} +/- {cp['tolerance']!r} rel)"))
    return report, ok, summary


def _maximal(cfg, out: Path, workers: int, svg: bool):
    mx = cfg["maximal"]
    report = lemma_suite(
        mx["dimension"],
        mx["nodes"],
        mx["extent"],
        mx["lam"],
        mx["rho"],
        tuple(mx["p_values"]),
        mx["spike_levels"],
        mx["radii_count"],
        mx["max_pairs"],
    )
    rows = [
        (p, width, ratio)
        for p, seq in report["shrinking_spike_ratios"].items()
        for width, ratio in zip(report["spike_widths"], seq)
    ]
    write_csv(out / "spikes.csv", ["p", "spike_width", "ratio"], [(float(p), w, r) for p, w, r in rows])
    keys = ("monotone_in_lam", "homogeneous", "sublinear", "lp_ratios_stable", "p1_ratio_growing", "hat_c_d", "linear_c_d")
    summary = [f"{k} = {report[k]}" for k in keys]
    return report, report["passed"], summary


def _constants(cfg, out: Path, workers: int, svg: bool):
    st = cfg["study"]
    field = build_field(cfg)
    c = estimate_constants(field, st["R"], st["T"], st["p"], None, st["seed"], st["t0"], constants_settings(cfg))
    report = {"field": field.metadata(), "constants": c.to_dict()}
    ok = all(np.isfinite(v) for v in (c.K, c.C, c.C_exp))
    report["flags"] = {"finite": ok, "pass": ok}
    summary = [f"{k} = {getattr(c, k)!r}" for k in ("kappa", "K", "C1", "C2", "C3", "C")] + [f"C_exp = {c.C_exp!r}"]
    return report, ok, summary


RUNNERS = {
    "convergence": _convergence,
    "compressibility": _compressibility,
    "maximal_checks": _maximal,
    "constants_only": _constants,
}


def run(cfg: ExperimentConfig, out=None, workers: int = 1, svg: bool | None = None, quiet: bool = True) -> int:
    """Validate and execute ``cfg``; write the report files; return the exit status."""
    problems = validate(cfg)
    if problems:
        for d in problems:
            print(d, file=sys.stderr)
        return EXIT_CONFIG
    out = Path(out if out is not None else cfg["output"]["dir"])
    svg = cfg["output"]["svg"] if svg is None else svg
    kind = cfg["study"]["kind"]
    out.mkdir(parents=True, exist_ok=True)
    try:
        body, passed, summary = RUNNERS[kind](cfg, out, workers, svg)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except (ArithmeticError, ValueError, RuntimeError) as exc:
        module = type(exc).__module__.rpartition(".")[2]
        print(f"eulerlab: {kind} study failed in {module} ({type(exc).__name__}): {exc}", file=sys.stderr)
        return EXIT_RUNTIME
    report = {"study": kind, "config": _echo(cfg), "report": body, "passed": bool(passed)}
    (out / "report.json").write_text(dumps_json(report))
    if not quiet:
        print("\n".join(summary))
        print(f"{'PASS' if passed else 'FAIL'}: {kind} -> {out}")
    return EXIT_PASS if passed else EXIT_FAIL


def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", "-c", help="INI experiment file (defaults apply when omitted)")
    common.add_argument("--set", action="append", default=[], metavar="SECTION.KEY=VALUE", help="override a config key")
    common.add_argument("--seed", type=lambda s: int(s, 0), help="shorthand for --set study.seed=...")
    common.add_argument("--out", "-o", help="output directory (overrides output.dir)")
    common.add_argument("--quiet", "-q", action="store_true", help="print nothing on success")
    common.add_argument("--workers", type=int, default=os.cpu_count() or 1, help="worker threads (results do not depend on it)")
    svg = common.add_mutually_exclusive_group()
    svg.add_argument("--svg", dest="svg", action="store_true", default=None, help="write plot.svg")
    svg.add_argument("--no-svg", dest="svg", action="store_false", help="skip plot.svg")

    parser = argparse.ArgumentParser(prog="eulerlab", description="Euler-scheme convergence experiments for rough vector fields.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in SUBCOMMANDS:
        sub.add_parser(name, parents=[common], help=f"run a {SUBCOMMANDS[name].replace('_', ' ')} study")
    v = sub.add_parser("validate", parents=[common], help="check a config and print diagnostics")
    v.add_argument("--print", action="store_true", help="also print the canonical config")
    return parser


def _load(args) -> ExperimentConfig:
    cfg = ExperimentConfig.from_file(args.config) if args.config else ExperimentConfig()
    for item in args.set:
        key, sep, value = item.partition("=")
        if not sep:
            raise ConfigError([cfg.diag(item, "expected SECTION.KEY=VALUE")])
        cfg.set(key.strip(), value.strip())
    if args.seed is not None:
        cfg.set("study.seed", str(args.seed))
    return cfg


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    try:
        cfg = _load(args)
    except ConfigError as exc:
        print(exc, file=sys.stderr)
        return EXIT_CONFIG
    except OSError as exc:
        print(f"eulerlab: cannot read config: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    if args.command == "validate":
        problems = validate(cfg)
        for d in problems:
            print(d, file=sys.stderr)
        if args.print:
            print(cfg.to_text(), end="")
        elif not problems and not args.quiet:
            print("config OK")
        return EXIT_CONFIG if problems else EXIT_PASS
    cfg["study"]["kind"] = SUBCOMMANDS[args.command]
    return run(cfg, args.out, max(1, args.workers), args.svg, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
