"""Command-line entry points.

Subcommands:
  train       run an experiment from a config file, emit metrics JSONL
  accountant  privacy calculator: epsilon, max steps, or required sigma
  synth       generate a synthetic dataset CSV
  report      render figures from a metrics file

Exit codes: 0 success, 2 configuration error, 3 data error, 4 privacy
budget infeasible, 1 anything else. Log verbosity comes from the
DPFED_LOG_LEVEL environment variable (default WARNING).
"""

from __future__ import annotations

import argparse
import logging
import math
import os
import sys

from .accountant import (DEFAULT_ORDERS, MechanismParams, PrivacyBudget,
                         epsilon_after, max_steps, sigma_for_budget)
from .config import ConfigError, parse_config, with_seed
from .data import DataError, SyntheticSpec, save_csv, synth_blobs

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_DATA = 3
EXIT_BUDGET = 4


def _build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dpfed",
                                     description="Private training and federated simulation")
    sub = parser.add_subparsers(dest="command", required=True)

    p_train = sub.add_parser("train", help="run an experiment from a config file")
    p_train.add_argument("--config", required=True, help="dotted-key config file")
    p_train.add_argument("--seed", type=int, default=None, help="override config seed")
    p_train.add_argument("--out", default="metrics.jsonl", help="metrics output path")
    p_train.add_argument("--parallel-clients", action="store_true",
                         help="run federated clients on a thread pool")

    p_acc = sub.add_parser("accountant", help="privacy budget calculator")
    p_acc.add_argument("--sigma", type=float, default=None, help="noise multiplier")
    p_acc.add_argument("--q", type=float, default=None, help="sampling rate L/N")
    p_acc.add_argument("--batch", type=int, default=None, help="lot size (with --n)")
    p_acc.add_argument("--n", type=int, default=None, help="training set size")
    p_acc.add_argument("--steps", type=int, default=None, help="number of steps")
    p_acc.add_argument("--epochs", type=int, default=None,
                       help="epochs (steps = ceil(n / batch) * epochs)")
    p_acc.add_argument("--delta", type=float, required=True)
    p_acc.add_argument("--target-eps", type=float, default=None,
                       help="inverse queries: max steps (with --sigma) or "
                            "required sigma (with steps)")
    p_acc.add_argument("--tight", action="store_true",
                       help="use the sharper RDP-to-DP conversion")

    p_synth = sub.add_parser("synth", help="write a synthetic blob dataset CSV")
    p_synth.add_argument("--samples", type=int, default=10_000)
    p_synth.add_argument("--features", type=int, default=20)
    p_synth.add_argument("--separation", type=float, default=6.0)
    p_synth.add_argument("--noise", type=float, default=1.0)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--out", required=True, help="output CSV path")

    p_rep = sub.add_parser("report", help="render figures from a metrics file")
    p_rep.add_argument("--metrics", required=True, help="metrics JSONL file")
    p_rep.add_argument("--out-dir", required=True, help="directory for figures")
    p_rep.add_argument("--format", default="png", choices=("png", "pdf", "svg"))

    return parser


def _resolve_sampling(args) -> tuple[float, int | None]:
    """Sampling rate and optional step count from the accountant flag set."""
    if args.q is not None:
        q = args.q
    elif args.batch is not None and args.n is not None:
        q = min(1.0, args.batch / args.n)
    else:
        raise ConfigError("accountant: provide --q or both --batch and --n")
    steps = args.steps
    if steps is None and args.epochs is not None:
        if args.batch is None or args.n is None:
            raise ConfigError("accountant: --epochs needs --batch and --n")
        steps = math.ceil(args.n / args.batch) * args.epochs
    return q, steps


def _cmd_accountant(args) -> int:
    q, steps = _resolve_sampling(args)
    if args.target_eps is None:
        if args.sigma is None or steps is None:
            raise ConfigError("accountant: epsilon query needs --sigma and steps "
                              "(--steps or --epochs with --batch/--n)")
        params = MechanismParams(q, args.sigma)
        eps, order = epsilon_after(params, steps, args.delta, DEFAULT_ORDERS,
                                   tight=args.tight)
        print(f"query=epsilon q={q:.6g} sigma={args.sigma:.6g} steps={steps} "
              f"delta={args.delta:.6g} eps={eps:.6g} order={order:g}")
    elif args.sigma is not None and steps is None:
        budget = PrivacyBudget(args.target_eps, args.delta)
        t = max_steps(MechanismParams(q, args.sigma), budget)
        print(f"query=max_steps q={q:.6g} sigma={args.sigma:.6g} "
              f"target_eps={args.target_eps:.6g} delta={args.delta:.6g} max_steps={t}")
    elif steps is not None and args.sigma is None:
        budget = PrivacyBudget(args.target_eps, args.delta)
        sigma = sigma_for_budget(q, steps, budget)
        eps, _ = epsilon_after(MechanismParams(q, sigma), steps, args.delta)
        print(f"query=sigma q={q:.6g} steps={steps} target_eps={args.target_eps:.6g} "
              f"delta={args.delta:.6g} sigma={sigma:.6g} eps={eps:.6g}")
    else:
        raise ConfigError("accountant: --target-eps takes either --sigma "
                          "(max steps) or a step count (required sigma), not both")
    return EXIT_OK


def _cmd_train(args) -> int:
    from .experiments import run_experiment  # deferred: heavy import

    cfg = parse_config(args.config)
    if args.seed is not None:
        cfg = with_seed(cfg, args.seed)
    result = run_experiment(cfg, out_path=args.out,
                            parallel_clients=args.parallel_clients)
    print(f"mode={cfg.mode} seed={cfg.seed} steps={result.steps} "
          f"final_test_acc={result.final_test_acc:.4f} "
          f"best_test_acc={result.best_test_acc:.4f} out={args.out}")
    return EXIT_OK


def _cmd_synth(args) -> int:
    spec = SyntheticSpec(n_samples=args.samples, n_features=args.features,
                         class_separation=args.separation, noise_std=args.noise)
    dataset = synth_blobs(spec, args.seed)
    save_csv(dataset, args.out)
    print(f"wrote {len(dataset)} rows x {dataset.n_features} features to {args.out}")
    return EXIT_OK


def _cmd_report(args) -> int:
    from .report import render_report  # deferred: pulls in matplotlib

    created = render_report(args.metrics, args.out_dir, fmt=args.format)
    for path in created:
        print(f"wrote {path}")
    return EXIT_OK


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(level=os.environ.get("DPFED_LOG_LEVEL", "WARNING").upper())
    args = _build_parser().parse_args(argv)
    from .experiments import BudgetError  # local to keep startup light

    try:
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "accountant":
            return _cmd_accountant(args)
        if args.command == "synth":
            return _cmd_synth(args)
        return _cmd_report(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except DataError as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except BudgetError as exc:
        print(f"budget error: {exc}", file=sys.stderr)
        return EXIT_BUDGET
    except ValueError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
