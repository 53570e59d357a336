"""Command-line entry point ``rqab``.

Every subcommand prints a CSV with a schema header (or writes it with
``-o``).  Exit status: 0 ok, 2 bad configuration, 3 numerical failure.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from pathlib import Path

import numpy as np

from . import __version__, csvio
from .config import load_json, model_from_config
from .exceptions import ParameterError, RQError
from .rqcore import SQRT2, Algorithm, derived_measures, solve

EXIT_OK, EXIT_CONFIG, EXIT_NUMERIC = 0, 2, 3


def _is_inline(arg: str) -> bool:
    return arg.lstrip().startswith("{")


def _load(arg: str) -> dict:
    """A config given as a file path or as inline JSON."""
    if not _is_inline(arg) and Path(arg).is_file():
        return load_json(arg)
    try:
        data = json.loads(arg)
    except json.JSONDecodeError:
        raise ParameterError(f"{arg!r} is neither a readable file nor JSON") from None
    if not isinstance(data, dict):
        raise ParameterError("config must be a JSON object")
    return data


def _base_dir(arg: str):
    return None if _is_inline(arg) else Path(arg).parent


def _b_value(text: str):
    if text == "calibrated":
        return text
    try:
        b = float(text)
    except ValueError:
        raise argparse.ArgumentTypeError("b must be a number or 'calibrated'") from None
    if not (b >= 0 and math.isfinite(b)):
        raise argparse.ArgumentTypeError("b must be nonnegative")
    return b


def _emit(args, schema, columns, rows, meta=None):
    if getattr(args, "output", None):
        csvio.write(args.output, schema, columns, rows, meta)
    else:
        sys.stdout.write(csvio.dumps(schema, columns, rows, meta))


def _surface_for(model, algorithm, cache_dir):
    if Algorithm(algorithm) is not Algorithm.REFINED:
        return None
    from .wck import load_or_build_surface

    return load_or_build_surface(model.zero_exp.k, cache_dir=cache_dir)


# -- subcommands ----------------------------------------------------------------------------


def cmd_solve(args):
    model = model_from_config(_load(args.config), _base_dir(args.config))
    wck = _surface_for(model, args.algorithm, args.cache_dir)
    sol = solve(model, args.algorithm, args.b, wck, args.strict)
    cols = ["z", "u_star", "residual", "iterations", "b_used", "algorithm"]
    row = [sol.z, sol.u_star, sol.residual, sol.iterations, sol.b_used, sol.algorithm.value]
    if args.report_derived:
        d = derived_measures(sol, model)
        cols += ["p_abandon", "mean_wait_served", "mean_queue_effective"]
        row += [d.p_abandon, d.mean_wait_served, d.mean_queue_effective]
    meta = {"model": model.describe()}
    if "c_tilde" in sol.diagnostics:
        meta["refined"] = {k: sol.diagnostics[k] for k in ("c", "c_tilde", "clamped", "tau")}
    _emit(args, "rqab.solve/1", cols, [row], meta)


def cmd_benchmark(args):
    from .exactbench import all_benchmarks

    model = model_from_config(_load(args.config), _base_dir(args.config))
    results = all_benchmarks(model)
    cols = [r.method.value for r in results]
    row = [r.value if r.applicable else None for r in results]
    notes = {r.method.value: r.note for r in results if r.note}
    _emit(args, "rqab.benchmark/1", cols, [row], {"model": model.describe(), "notes": notes})


SIM_KEYS = {"run_time", "warmup_time", "n_batches", "seed", "replications"}


def _sim_settings(cfg: dict, args) -> dict:
    settings = dict(cfg.pop("simulation", {}) or {})
    unknown = set(settings) - SIM_KEYS
    if unknown:
        raise ParameterError(f"unknown simulation fields {sorted(unknown)}")
    for key in SIM_KEYS:
        value = getattr(args, key, None)
        if value is not None:
            settings[key] = value
    if "run_time" not in settings:
        raise ParameterError("simulation needs a run_time (config 'simulation.run_time' or --run-time)")
    return settings


def cmd_simulate(args):
    from .sim import SimConfig, simulate_queue

    cfg = _load(args.config)
    settings = _sim_settings(cfg, args)
    model = model_from_config(cfg, _base_dir(args.config))
    est = simulate_queue(SimConfig(model, **settings))
    b = est.batches
    rows = zip(range(len(b["mean_virtual_wait"])), b["mean_virtual_wait"], b["p_abandon"],
               b["mean_wait_served"], b["n_arrivals"].astype(int).tolist())
    meta = {"model": model.describe(), "settings": settings,
            "summary": est.to_dict()}
    _emit(args, "rqab.simulate/1", ["batch", "mean_virtual_wait", "p_abandon", "mean_wait_served", "n_arrivals"],
          rows, meta)


TANDEM_KEYS = {"lambda", "station1", "station2", "b", "simulation"}


def cmd_tandem(args):
    from .renewal import write_idc_csv
    from .tandem import departure_idc, downstream_model, make_tandem
    from .wck import load_or_build_surface

    cfg = _load(args.config)
    unknown = set(cfg) - TANDEM_KEYS
    if unknown:
        raise ParameterError(f"unknown tandem config fields {sorted(unknown)}")
    if "lambda" not in cfg:
        raise ParameterError("tandem config needs 'lambda'")
    s1, s2 = dict(cfg.get("station1", {})), dict(cfg.get("station2", {}))
    bad = (set(s1) - {"interarrival", "service", "mu"}) | (set(s2) - {"service", "patience", "alpha", "mu"})
    if bad:
        raise ParameterError(f"unknown station fields {sorted(bad)}")
    spec = make_tandem(float(cfg["lambda"]), s1.get("interarrival", "exponential"), s1.get("service", "exponential"),
                       mu1=float(s1.get("mu", 1.0)), service2=s2.get("service", "exponential"),
                       patience2=s2.get("patience", "exponential"), alpha=float(s2.get("alpha", 1.0)),
                       mu2=float(s2.get("mu", 1.0)))
    b = args.b if args.b is not None else cfg.get("b", SQRT2)
    if not isinstance(b, (int, float, str)) or isinstance(b, bool):
        raise ParameterError(f"b must be a number or 'calibrated', got {b!r}")
    wck = load_or_build_surface(spec.queue2.zero_exp.k, cache_dir=args.cache_dir)
    sol = solve(downstream_model(spec), "refined", b, wck, args.strict)
    cols = ["z", "u_star", "residual", "b_used", "rho1", "c_a1", "c_s1"]
    row = [sol.z, sol.u_star, sol.residual, sol.b_used, spec.rho1, spec.c_a1, spec.c_s1]
    if args.simulate or cfg.get("simulation"):
        from .sim import SimConfig, simulate_tandem

        sim_cfg = dict(cfg.get("simulation") or {})
        if args.simulate:
            sim_cfg["run_time"] = args.simulate
        settings = _sim_settings({"simulation": sim_cfg}, argparse.Namespace())
        est = simulate_tandem(spec.upstream, spec.queue2, SimConfig(spec.queue2, **settings))
        cols += ["sim_mean_virtual_wait", "sim_ci_halfwidth"]
        row += [est.mean_virtual_wait, est.ci_halfwidth]
    if args.idc_out:
        write_idc_csv(departure_idc(spec), args.idc_out)
    _emit(args, "rqab.tandem/1", cols, [row], {"queue2": spec.queue2.describe()})


def cmd_wck(args):
    from .wck import load_or_build_surface, wck_curve, wck_infinity

    t = np.logspace(math.log10(args.t_min), math.log10(args.t_max), args.n_t)
    cols = ["t"] + [f"c={csvio.format_float(c)}" for c in args.c]
    if args.direct:
        curves = [wck_curve(c, args.k, t) for c in args.c]
        w_inf = [wck_infinity(c, args.k) for c in args.c]
    else:
        surf = load_or_build_surface(args.k, cache_dir=args.cache_dir)
        curves = [surf(c, t, strict=True) for c in args.c]
        w_inf = [surf.w_infinity(c) for c in args.c]
    rows = [[ti] + [float(cv[i]) for cv in curves] for i, ti in enumerate(t)]
    _emit(args, "rqab.wck/1", cols, rows, {"k": args.k, "w_inf": dict(zip(cols[1:], w_inf))})


def cmd_idc(args):
    from .dist import make_distribution
    from .renewal import IDC_SCHEMA, default_t_grid, idc_for

    try:
        spec = _load(args.distribution)
    except ParameterError:
        spec = {"family": args.distribution}
    dist = make_distribution(spec).scaled(1.0 / args.rate)
    t = default_t_grid(1.0 / args.rate, args.t_min, args.t_max, args.per_decade)
    curve = idc_for(dist, t, n_paths=args.n_paths, seed=args.seed)
    t, v = curve.tabulate(t)
    meta = {"rate": args.rate, "limit_c2": curve.limit_c2, "source": curve.source.value}
    if curve.stderr is not None and curve.t_grid is not None and np.array_equal(t, curve.t_grid):
        _emit(args, IDC_SCHEMA, ["t", "idc", "stderr"], zip(t, v, curve.stderr), meta)
    else:
        _emit(args, IDC_SCHEMA, ["t", "idc"], zip(t, v), meta)


def cmd_grid(args):
    from .harness import GridSpec, emit_heatmap_data, run_grid

    cfg = _load(args.config) if args.config else {}
    grid = GridSpec.full(**cfg) if args.full else GridSpec.from_config(cfg)
    path = run_grid(grid, args.output, n_jobs=args.n_jobs, cache_dir=args.cache_dir)
    if args.heatmap:
        emit_heatmap_data(path, args.heatmap)
    print(path)


def cmd_heatmap(args):
    from .harness import emit_heatmap_data

    if not Path(args.csv).is_file():
        raise ParameterError(f"no such grid CSV: {args.csv}")
    out = emit_heatmap_data(args.csv, args.output, svg=not args.no_svg)
    print(f"{len(out['methods'])} method(s), {out['n_gaps']} gap(s) -> {args.output}")


# -- parser ------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="rqab", description="Robust Queueing approximations for GI/GI/1+GI queues.")
    p.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="command", required=True)

    def with_output(sp, required=False):
        sp.add_argument("-o", "--output", required=required, help="write the CSV here instead of stdout")
        return sp

    def with_cache(sp):
        sp.add_argument("--cache-dir", help="w-surface cache directory")
        return sp

    s = with_cache(with_output(sub.add_parser("solve", help="robust-queueing mean virtual wait")))
    s.add_argument("config", help="queue config (file or inline JSON)")
    s.add_argument("--algorithm", choices=[a.value for a in Algorithm], default="refined")
    s.add_argument("--b", type=_b_value, default=SQRT2, help="a number or 'calibrated'")
    s.add_argument("--report-derived", action="store_true", help="add abandonment probability and delays")
    s.add_argument("--strict", action="store_true", help="fail instead of clamping off the w surface")
    s.set_defaults(func=cmd_solve)

    s = with_output(sub.add_parser("benchmark", help="exact formula and benchmark approximations"))
    s.add_argument("config")
    s.set_defaults(func=cmd_benchmark)

    s = with_output(sub.add_parser("simulate", help="batch-means simulation, one row per batch"))
    s.add_argument("config")
    s.add_argument("--run-time", dest="run_time", type=float)
    s.add_argument("--warmup", dest="warmup_time", type=float)
    s.add_argument("--batches", dest="n_batches", type=int)
    s.add_argument("--seed", type=int)
    s.add_argument("--replications", type=int)
    s.set_defaults(func=cmd_simulate)

    s = with_cache(with_output(sub.add_parser("tandem", help="station 2 of a two-station tandem")))
    s.add_argument("config")
    s.add_argument("--b", type=_b_value, default=None)
    s.add_argument("--strict", action="store_true")
    s.add_argument("--idc-out", help="also write the departure IDC of station 1 here")
    s.add_argument("--simulate", type=float, metavar="RUN_TIME", help="add a simulation estimate")
    s.set_defaults(func=cmd_tandem)

    s = with_cache(with_output(sub.add_parser("wck", help="tabulate the variance-reduction function")))
    s.add_argument("--k", type=int, default=1)
    s.add_argument("--c", type=float, nargs="+", default=[0.0])
    s.add_argument("--t-min", type=float, default=1e-2)
    s.add_argument("--t-max", type=float, default=100.0)
    s.add_argument("--n-t", type=int, default=21)
    s.add_argument("--direct", action="store_true", help="solve the PDEs instead of reading the cached surface")
    s.set_defaults(func=cmd_wck)

    s = with_output(sub.add_parser("idc", help="IDC curve of a renewal process"))
    s.add_argument("distribution", help="family name, JSON record, or JSON file for the interrenewal law")
    s.add_argument("--rate", type=float, default=1.0)
    s.add_argument("--t-min", type=float, default=1e-2)
    s.add_argument("--t-max", type=float, default=1e3)
    s.add_argument("--per-decade", type=int, default=10)
    s.add_argument("--n-paths", type=int, default=20_000)
    s.add_argument("--seed", type=int, default=0)
    s.set_defaults(func=cmd_idc)

    s = with_cache(with_output(sub.add_parser("grid", help="signed-error grid over (lambda, alpha)"), required=True))
    s.add_argument("config", nargs="?", help="grid config (file or inline JSON); defaults to the desk grid")
    s.add_argument("--full", action="store_true", help="use the 23 x 14 grid (long-running)")
    s.add_argument("--n-jobs", type=int, default=1)
    s.add_argument("--heatmap", help="also write heat-map data into this directory")
    s.set_defaults(func=cmd_grid)

    s = with_output(sub.add_parser("heatmap", help="pivot a grid CSV into per-method matrices"), required=True)
    s.add_argument("csv")
    s.add_argument("--no-svg", action="store_true")
    s.set_defaults(func=cmd_heatmap)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except ParameterError as exc:
        print(f"rqab: configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (RQError, ArithmeticError) as exc:
        print(f"rqab: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERIC
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
