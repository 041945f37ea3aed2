"""Command line entry point: ``einsplit {run,basis,stability,oracle}``.

Exit codes: 0 success, 1 configuration error, 2 numerical failure.
"""
from __future__ import annotations

import argparse
import logging
import sys
from contextlib import nullcontext
from pathlib import Path

from .errors import ConfigurationError, NumericalError


def _parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="einsplit", description="Multiscale EIN splitting experiments")
    sub = p.add_subparsers(dest="command", required=True)
    for name, help_ in (("run", "run the experiment matrix and write CSV reports"),
                        ("basis", "build and dump the multiscale bases"),
                        ("stability", "print the time-step stability report per basis")):
        sp = sub.add_parser(name, help=help_)
        sp.add_argument("config_path", nargs="?", help="JSON config file")
        sp.add_argument("--config", dest="config_opt", help="JSON config file")
        sp.add_argument("--out", help="output directory (overrides the config)")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--threads", type=int, help="BLAS thread cap")
        sp.add_argument("--save-stride", type=int, dest="save_stride")
        sp.add_argument("-v", "--verbose", action="store_true")
    op = sub.add_parser("oracle", help="evaluate a reference oracle and print its values")
    op.add_argument("case", help="oracle case name, or 'list'")
    return p


def _load_config(args):
    from .experiment import ExperimentConfig

    path = args.config_opt or args.config_path
    if path is None:
        raise ConfigurationError("no config file given")
    cfg = ExperimentConfig.load(path)
    if args.out:
        cfg.out = args.out
    if args.seed is not None:
        cfg.seed = args.seed
    if args.save_stride is not None:
        if args.save_stride < 1:
            raise ConfigurationError("--save-stride must be at least 1")
        cfg.save_stride = args.save_stride
    return cfg


def _thread_limit(n):
    if n is None:
        return nullcontext()
    if n < 1:
        raise ConfigurationError("--threads must be at least 1")
    from threadpoolctl import threadpool_limits

    return threadpool_limits(limits=n)


def _cmd_run(args) -> int:
    from .experiment import CSV_COLUMNS, run_experiment

    cfg = _load_config(args)
    with _thread_limit(args.threads):
        res = run_experiment(cfg)
    out = Path(cfg.out)
    print(f"wrote {out / 'results.csv'} ({len(res['rows'])} rows)")
    print(" ".join(CSV_COLUMNS[:6]))
    for r in res["rows"]:
        print(f"{r['scheme']} {r['basis'].replace(' ', '_')} {r['dof1']} {r['dof2']} "
              f"{r['l2_avg_pct']:.4g} {r['energy_avg_pct']:.4g}")
    failed = [r for r in res["rows"] if str(r["verdict"]).startswith("error")]
    return 2 if failed else 0


def _cmd_basis(args) -> int:
    from .experiment import _slug, build_basis, build_problem
    from .fileio import write_basis

    cfg = _load_config(args)
    spec = build_problem(cfg.problem)
    out = Path(cfg.out)
    out.mkdir(parents=True, exist_ok=True)
    with _thread_limit(args.threads):
        for bset in cfg.bases:
            basis = build_basis(spec, bset, cfg.layers, cfg.u_tilde)
            path = out / f"basis_{_slug(bset.label)}.txt"
            write_basis(path, basis)
            print(f"{bset.label}: {basis.dof_label()} columns, constraint residual "
                  f"{basis.constraint_residual:.2e} -> {path}")
    return 0


def _cmd_stability(args) -> int:
    from .experiment import stability_reports

    cfg = _load_config(args)
    with _thread_limit(args.threads):
        reports = stability_reports(cfg)
    for label, rep in reports:
        print(f"{label}: gamma={rep.gamma:.6g} c1={rep.c1:.6g} lambda_max={rep.lambda_max:.6g} "
              f"dt_max={rep.dt_max:.6g} dt={rep.dt:.6g} verdict={rep.verdict}")
    return 0


def _cmd_oracle(args) -> int:
    from . import oracles

    if args.case == "list":
        for name in sorted(oracles.CASES):
            print(name)
        return 0
    if args.case not in oracles.CASES:
        raise ConfigurationError(f"unknown oracle case {args.case!r}; try 'list'")
    for key, value in oracles.CASES[args.case]().items():
        print(f"{key}: {value}")
    return 0


def main(argv=None) -> int:
    parser = _parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handlers = {"run": _cmd_run, "basis": _cmd_basis, "stability": _cmd_stability, "oracle": _cmd_oracle}
    try:
        return handlers[args.command](args)
    except ConfigurationError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return 1
    except (NumericalError, ArithmeticError, RuntimeError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
