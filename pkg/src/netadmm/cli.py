"""Command-line entry point: ``netadmm run | sweep | certify``."""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

from .analysis import certify_run, rate_certificate
from .harness import ConfigError, ExperimentConfig, RunTrace, build_network, build_problem, run_experiment, run_sweep
from .problem import network_constants
from .reference import ReferenceSolveError

EXIT_OK, EXIT_ERROR, EXIT_DIVERGED = 0, 1, 2


def _parse_value(text: str):
    for cast in (int, float):
        try:
            return cast(text)
        except ValueError:
            pass
    return text


def _cmd_run(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    out = args.out if args.out is not None else (cfg.out or "runs/" + cfg.name)
    res = run_experiment(cfg, out)
    for tr in res.traces:
        print(f"{tr.label}: {tr.status} after {tr.iterations} iterations, rel_error {tr.rel_error[-1]:.3e}")
    print(f"outputs written to {out}")
    if args.strict and any(t.status == "diverged" for t in res.traces):
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg_dict = json.loads(Path(args.config).read_text())
    ExperimentConfig.from_dict(cfg_dict)
    values = [_parse_value(v) for v in args.values.split(",") if v.strip()]
    out = args.out if args.out is not None else "runs/sweep_" + args.param
    rows = run_sweep(cfg_dict, args.param, values, out, workers=args.workers)
    for r in rows:
        print(f"{args.param}={r['value']} {r['label']}: {r['status']} after {r['iterations']} iterations, "
              f"first rel_error <= 1e-4 at {r['first_below']['0.0001']}")
    print(f"outputs written to {out}")
    if args.strict and any(r["status"] == "diverged" for r in rows):
        return EXIT_DIVERGED
    return EXIT_OK


def _cmd_certify(args) -> int:
    cfg = ExperimentConfig.load(args.config)
    specs = dict(zip(cfg.labels(), cfg.solvers))
    label = args.solver or Path(args.trace).parent.name
    if label not in specs:
        candidates = [lbl for lbl, s in specs.items() if s.algorithm == "dladmm"]
        if not candidates:
            raise ConfigError("config has no dladmm solver to certify")
        label = candidates[0]
    spec = specs[label]
    if spec.algorithm != "dladmm":
        raise ConfigError(f"solver {label!r} is not dladmm; only dladmm runs carry Lambda-distances")
    inst = build_problem(cfg.problem, build_network(cfg.topology))
    cert = rate_certificate(network_constants(inst), spec.c, spec.rho)
    trace = RunTrace.read_csv(args.trace)
    report = certify_run(trace.lambda_dist, cert, slack=args.slack)
    print(json.dumps({"solver": label, "certificate": cert.to_dict(), "report": report.to_dict()}, indent=2))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="netadmm", description="Decentralized ADMM experiment runner.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("run", help="run one experiment config")
    p.add_argument("--config", required=True)
    p.add_argument("--out", help="output directory (default: config 'out' or runs/<name>)")
    p.add_argument("--strict", action="store_true", help="exit with status 2 if any solver diverges")
    p.set_defaults(func=_cmd_run)

    p = sub.add_parser("sweep", help="run a config once per parameter value")
    p.add_argument("--config", required=True)
    p.add_argument("--param", required=True, help="dotted config path, or a solver field such as c or rho")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--out")
    p.add_argument("--workers", type=int, help="worker processes (default: NETADMM_THREADS or CPU count)")
    p.add_argument("--strict", action="store_true")
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("certify", help="check a saved dladmm trace against the rate certificate")
    p.add_argument("--trace", required=True)
    p.add_argument("--config", required=True)
    p.add_argument("--solver", help="solver label in the config (default: trace directory name)")
    p.add_argument("--slack", type=float, default=1e-9)
    p.set_defaults(func=_cmd_certify)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except (ConfigError, ReferenceSolveError, FileNotFoundError, KeyError) as exc:
        print(f"netadmm: error: {exc}", file=sys.stderr)
        return EXIT_ERROR


if __name__ == "__main__":
    sys.exit(main())
