"""Command line: ``entropia run``, ``entropia sweep`` and ``entropia plot``.

Exit codes: 0 success, 1 configuration error, 2 runtime abort (partial outputs kept).
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys

from .config import build_config, coerce, load_config_file
from .experiment import ConfigError, RunAborted, run_experiment
from .sweep import grid_points, run_sweep

EXIT_OK, EXIT_CONFIG, EXIT_ABORT = 0, 1, 2


def _csv_list(kind):
    def parse(text):
        return [kind(v) for v in text.split(",") if v.strip()]
    return parse


class _Parser(argparse.ArgumentParser):
    """Usage errors are configuration errors (exit 1), not argparse's default 2."""

    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_CONFIG, f"{self.prog}: error: {message}\n")


def _add_common(p: argparse.ArgumentParser):
    p.add_argument("--config", help="key = value configuration file")
    p.add_argument("--algorithm", choices=("sgd", "sgld", "entropy_sgd", "entropy_sgld"))
    p.add_argument("--tau", help="inverse temperature: a number, 'sqrt_m' or 'noise:<thermal noise>'")
    p.add_argument("--beta", type=float)
    p.add_argument("--gamma", type=float)
    p.add_argument("--labels", choices=("true", "random"))
    p.add_argument("--seed", type=int)
    p.add_argument("--epochs", type=int)
    p.add_argument("--data", help="'synthetic' or 'idx:<directory>'")
    p.add_argument("--subset", type=int)
    p.add_argument("--out", help="output directory")
    p.add_argument("--delta", type=float)
    p.add_argument("--set", action="append", default=[], metavar="KEY=VALUE",
                   help="override any configuration field (repeatable)")
    p.add_argument("--plot", action="store_true", help="also render PNG figures next to the CSV")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="entropia", description="Train with (Entropy-)SGD/SGLD and certify generalization bounds.")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)
    run = sub.add_parser("run", help="train once and certify")
    _add_common(run)
    sweep = sub.add_parser("sweep", help="grid over gamma, tau, beta and label modes")
    _add_common(sweep)
    sweep.add_argument("--taus", type=_csv_list(str), default=[])
    sweep.add_argument("--gammas", type=_csv_list(float), default=[])
    sweep.add_argument("--betas", type=_csv_list(float), default=[])
    sweep.add_argument("--tau-beta", type=float, help="hold tau * beta fixed (beta derived per point)")
    sweep.add_argument("--label-modes", type=_csv_list(str), default=[])
    sweep.add_argument("--workers", type=int, help="parallel points (default: ENTROPIA_THREADS or cores)")
    plot = sub.add_parser("plot", help="render a metrics or sweep CSV")
    plot.add_argument("csv")
    plot.add_argument("-o", "--output")
    plot.add_argument("--x", default="tau", help="swept column for sweep CSVs")
    return parser


def config_from_args(args):
    file_values = load_config_file(args.config) if args.config else {}
    flags = {k: getattr(args, k) for k in ("algorithm", "beta", "gamma", "labels", "seed", "epochs", "data",
                                            "subset", "out", "delta")}
    if args.tau is not None:
        flags["tau"] = coerce("tau", args.tau)
    for item in args.set:
        if "=" not in item:
            raise ConfigError(f"--set expects KEY=VALUE, got {item!r}")
        key, value = item.split("=", 1)
        flags[key.strip()] = coerce(key.strip(), value)
    if args.plot:
        flags["plot"] = True
    try:
        return build_config(file_values, flags).validate()
    except TypeError as exc:
        raise ConfigError(str(exc)) from None


def _cmd_run(args) -> int:
    cfg = config_from_args(args)
    if not cfg.out:
        raise ConfigError("--out is required")
    result = run_experiment(cfg)
    last = result.rows[-1]
    print(f"tick {last.tick}: test {last.test_err_gibbs:.4f} (Gibbs), pac bound {last.pac_bound:.4f}, "
          f"epsilon {last.epsilon:.6g}; outputs in {cfg.out}")
    return EXIT_OK


def _cmd_sweep(args) -> int:
    cfg = config_from_args(args)
    if not cfg.out:
        raise ConfigError("--out is required")
    for lab in args.label_modes:
        if lab not in ("true", "random"):
            raise ConfigError(f"unknown label mode {lab!r}")
    taus = [coerce("tau", t) for t in args.taus]
    try:
        points = grid_points(cfg, args.gammas, taus, args.betas, args.label_modes, args.tau_beta)
    except ValueError as exc:
        raise ConfigError(str(exc)) from None
    for p in points:
        p.config.validate()
    results = run_sweep(points, cfg.out, args.workers)
    if cfg.plot and results:
        from ..plotting import plot_sweep
        plot_sweep(os.path.join(cfg.out, "sweep.csv"), os.path.join(cfg.out, "sweep.png"), x="tau")
    failed = [r for r in results if r["status"] != "ok"]
    print(f"{len(results)} points, {len(failed)} failed; table in {os.path.join(cfg.out, 'sweep.csv')}")
    return EXIT_ABORT if failed else EXIT_OK


def _cmd_plot(args) -> int:
    from ..plotting import plot_metrics, plot_sweep
    if not os.path.exists(args.csv):
        raise ConfigError(f"{args.csv} does not exist")
    with open(args.csv, encoding="utf-8") as f:
        header = f.readline()
    out = args.output or os.path.splitext(args.csv)[0] + ".png"
    if header.startswith("point,"):
        plot_sweep(args.csv, out, x=args.x)
    else:
        plot_metrics(args.csv, out)
    print(out)
    return EXIT_OK


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if getattr(args, "verbose", False) else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    handler = {"run": _cmd_run, "sweep": _cmd_sweep, "plot": _cmd_plot}[args.command]
    try:
        return handler(args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except RunAborted as exc:
        print(f"aborted: {exc}", file=sys.stderr)
        return EXIT_ABORT


if __name__ == "__main__":
    sys.exit(main())
