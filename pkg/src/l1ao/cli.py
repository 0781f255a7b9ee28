"""Command-line front end: ``l1ao {run,certify,check,bench} --config FILE``.

Exit codes: 0 success, 1 configuration/numeric error or failed check,
2 constraint violation during a run, 3 inadmissible certificate.
"""

import argparse
import os
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import config as cfgmod
from .certification import DeltaGrid, certify_scenario
from .errors import ConfigError, DomainViolation, NewtonFailure, NumericError
from .problem import check_derivative_samples
from .simulation import StaticStream, run, timing_report
from .traceio import format_value, write_summary, write_trace

__all__ = ["main", "cmd_run", "cmd_certify", "cmd_check", "cmd_bench",
           "EXIT_OK", "EXIT_ERROR", "EXIT_VIOLATION", "EXIT_INADMISSIBLE"]

EXIT_OK, EXIT_ERROR, EXIT_VIOLATION, EXIT_INADMISSIBLE = 0, 1, 2, 3

_ERRORS = (ConfigError, NumericError, DomainViolation, NewtonFailure)


def _say(quiet, *lines):
    if not quiet:
        for line in lines:
            print(line)


def _grid(sec, seed):
    return DeltaGrid(times=sec.grid_times, radii=sec.grid_radii, angles=sec.grid_angles,
                     safety_factor=sec.safety_factor, region=sec.region, seed=seed)


def _certificate(cfg, scenario, sim, stream=None):
    sec = cfg.certification
    return certify_scenario(scenario, sim, _grid(sec, cfg.sim.rng_seed), sec.target_rho,
                            sec.epsilon_rho, stream=stream)


def _summary_items(cfg, scenario, result, cert=None, info=None):
    s = result.summary
    items = {"scenario": scenario.name, "method": s.method, "reason": s.reason}
    items.update(s.statistics())
    items["mean_oracle_elapsed_ns"] = s.mean_oracle_elapsed_ns
    if cert is not None:
        for k, v in cert.to_dict().items():
            items[f"certificate.{k}"] = v
        items["certificate.samples"] = info["samples"]
        items["certificate.skipped"] = info["skipped"]
    return items


def cmd_run(config_path, out_dir=None, plots=None, quiet=False):
    cfg = cfgmod.load_config(config_path)
    scenario, sim = cfgmod.build(cfg)
    out = Path(out_dir if out_dir is not None else cfg.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    result = run(scenario, sim)
    cert = info = None
    if cfg.certification is not None and sim.method.startswith("l1ao_"):
        stream = None if isinstance(result.stream, StaticStream) else result.stream
        cert, info = _certificate(cfg, scenario, sim, stream)
        result.summary.certificate = cert.to_dict()
    write_trace(out / "trace.csv", result.trace)
    items = _summary_items(cfg, scenario, result, cert, info)
    write_summary(out / "summary.txt", items)
    if cfg.output.plots if plots is None else plots:
        from .plotting import plot_run
        plot_run(result, scenario, out, rho=cert.rho if cert is not None else None)
    _say(quiet, *(f"{k} = {format_value(v)}" for k, v in items.items()))
    return EXIT_VIOLATION if result.summary.terminated_early else EXIT_OK


def cmd_certify(config_path, quiet=False):
    cfg = cfgmod.load_config(config_path)
    if cfg.certification is None:
        raise ConfigError(f"{config_path}: certify needs a certification block")
    scenario, sim = cfgmod.build(cfg)
    if not sim.method.startswith("l1ao_"):
        raise ConfigError(f"certify needs an l1ao_* method, got {sim.method!r}")
    stream = None
    if not isinstance(scenario.new_stream(), StaticStream):
        # deltas depend on the realized path, so simulate first
        result = run(scenario, sim)
        stream = result.stream
        _say(quiet, f"# sampled along a {result.summary.rows}-row run ({result.summary.reason})")
    cert, info = _certificate(cfg, scenario, sim, stream)
    d = cert.to_dict()
    d["samples"], d["skipped"] = info["samples"], info["skipped"]
    _say(quiet, *(f"{k} = {format_value(v)}" for k, v in d.items()))
    return EXIT_OK if cert.admissible else EXIT_INADMISSIBLE


def cmd_check(config_path, n_samples=100, quiet=False):
    cfg = cfgmod.load_config(config_path)
    scenario, _ = cfgmod.build(cfg)
    rng = np.random.default_rng(cfg.sim.rng_seed)
    report = check_derivative_samples(scenario.derivative_samples(n_samples, rng))
    _say(quiet, *report.lines())
    return EXIT_OK if report.passed else EXIT_ERROR


def cmd_bench(config_path, quiet=False):
    """Run every bench method on the same scenario sequentially and tabulate."""
    cfg = cfgmod.load_config(config_path)
    results = []
    for m in cfgmod.bench_methods(cfg):
        scenario, sim = cfgmod.build(cfg, m)
        results.append(run(scenario, sim))
    rows = timing_report(results)
    lines = [f"{'method':24s} {'mean_ns':>14s} {'ratio':>10s}"]
    lines += [f"{label:24s} {mean:14.1f} {ratio:10.4g}" for label, mean, ratio in rows]
    _say(quiet, *lines)
    return EXIT_OK


def _guarded(fn, *args, **kw):
    try:
        return fn(*args, **kw)
    except _ERRORS as exc:
        print(f"error: {exc}", file=sys.stderr)
    except Exception as exc:  # never crash on malformed input
        print(f"error: {type(exc).__name__}: {exc}", file=sys.stderr)
    return EXIT_ERROR


def _worst(codes):
    codes = list(codes)
    for c in (EXIT_ERROR, EXIT_INADMISSIBLE, EXIT_VIOLATION):
        if c in codes:
            return c
    return EXIT_OK


def _sweep_workers(n):
    env = os.environ.get("TVOPT_THREADS")
    cap = os.cpu_count() or 1
    if env:
        try:
            cap = max(1, int(env))
        except ValueError:
            print(f"warning: ignoring TVOPT_THREADS={env!r}", file=sys.stderr)
    return max(1, min(n, cap))


def _run_one(path, out, plots, quiet):
    return _guarded(cmd_run, path, out, plots, quiet)


def _parser():
    p = argparse.ArgumentParser(prog="l1ao", description=__doc__.splitlines()[0])
    p.add_argument("verb", choices=("run", "certify", "check", "bench"))
    p.add_argument("--config", action="append", required=True, metavar="PATH",
                   help="run configuration (repeat for a sweep)")
    p.add_argument("--out", metavar="DIR", help="output directory (overrides output.directory)")
    p.add_argument("--no-plots", action="store_true", help="skip SVG figures")
    p.add_argument("--quiet", action="store_true", help="suppress stdout reports")
    return p


def main(argv=None):
    try:
        args = _parser().parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_ERROR
    plots = False if args.no_plots else None
    configs = args.config
    if args.verb == "run":
        if len(configs) == 1:
            return _run_one(configs[0], args.out, plots, args.quiet)
        if args.out is None:
            outs = [None] * len(configs)  # each config's own output.directory
        else:
            outs = [str(Path(args.out) / Path(c).stem) for c in configs]
        if args.out is not None and len(set(outs)) != len(outs):
            print("error: sweep configs need distinct file names", file=sys.stderr)
            return EXIT_ERROR
        workers = _sweep_workers(len(configs))
        if workers == 1:
            return _worst(_run_one(c, o, plots, args.quiet) for c, o in zip(configs, outs))
        with ProcessPoolExecutor(max_workers=workers) as pool:
            codes = list(pool.map(_run_one, configs, outs, [plots] * len(configs),
                                  [args.quiet] * len(configs)))
        return _worst(codes)
    fn = {"certify": cmd_certify, "check": cmd_check, "bench": cmd_bench}[args.verb]
    return _worst(_guarded(fn, c, quiet=args.quiet) for c in configs)


if __name__ == "__main__":
    sys.exit(main())
