"""Command-line front end.

Every subcommand reads a JSON experiment config (see ``ExperimentConfig``)
and writes its outputs next to ``--out``.  Exit codes: 0 on success, 2 for
configuration problems, 3 when a run is numerically unusable (divergence
rate over the configured limit).
"""

from __future__ import annotations

import argparse
import sys
from dataclasses import replace

import numpy as np

from .bench import (
    ConfigError,
    ExperimentConfig,
    NumericalFailure,
    build_kernel,
    build_target,
    run_experiment,
    run_recycle_count_sweep,
    run_reference_chain,
    run_tuning_comparison,
    write_experiment_outputs,
    write_json,
    write_sweep_outputs,
    _chain_settings,
)
from .hmc import ChainConfigError, run_chain
from .targets import TargetError


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", required=True, help="path to a JSON experiment config")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument(
        "--workers", type=int, default=None, help="override the worker count"
    )
    p.add_argument("--out", default="rehmc_out", help="output path base (no extension)")


def _load_config(args) -> ExperimentConfig:
    config = ExperimentConfig.from_json_file(args.config)
    if args.seed is not None:
        config = replace(config, seed=args.seed)
    if getattr(args, "workers", None) is not None:
        config = replace(config, workers=args.workers)
    return config


def _cmd_bench(args) -> int:
    config = _load_config(args)
    result = run_experiment(config)
    csv_path, json_path = write_experiment_outputs(result, args.out)
    print(f"wrote {csv_path} and {json_path}")
    for arm in result.config.arms:
        name = arm["name"]
        print(f"  {name}: mean ess {result.arm_mean_ess(name):.1f}")
    return 0


def _cmd_sweep(args) -> int:
    config = _load_config(args)
    ks = tuple(int(k) for k in args.ks.split(",")) if args.ks else (16, 8, 4, 2, 1)
    result = run_recycle_count_sweep(config, ks)
    csv_path, json_path = write_sweep_outputs(result, args.out)
    print(f"wrote {csv_path} and {json_path}")
    if result.chosen_k is None:
        print("  no K reached 95% of the all-acceptable reference")
    else:
        print(f"  smallest sufficient K: {result.chosen_k}")
    return 0


def _cmd_tune_compare(args) -> int:
    config = _load_config(args)
    result = run_tuning_comparison(config)
    write_json(args.out + ".json", result.summary_dict())
    print(f"wrote {args.out}.json")
    print(
        f"  recycled-covariance tuning won {result.wins}/{result.n_pairs} pairs "
        f"({100 * result.win_fraction:.0f}%)"
    )
    return 0


def _cmd_reference(args) -> int:
    config = _load_config(args)
    result = run_reference_chain(config)
    write_json(args.out + ".json", result.summary_dict())
    print(f"wrote {args.out}.json ({result.n_kept} draws)")
    return 0


def _cmd_sample(args) -> int:
    config = _load_config(args)
    config.validate(require_truth=False)
    target, _, theta0 = build_target(config.target)
    eps, mass = _chain_settings(config, target, theta0, args.chain)
    arm = config.arms[args.arm]
    kernel = build_kernel(config, arm, eps, mass, target)
    result = run_chain(
        kernel,
        theta0,
        config.n_iterations,
        config.burn_in,
        seed=config.seed,
        chain_index=args.chain,
    )
    path = args.out + ".npz"
    np.savez(
        path,
        states=result.states,
        recycled_thetas=result.recycled_thetas,
        recycled_weights=result.recycled_weights,
        recycled_iterations=result.recycled_iterations,
        recycled_slots=result.recycled_slots,
        accept_stat=result.diagnostics.accept_stat,
        diverged=result.diagnostics.diverged,
    )
    print(
        f"wrote {path}: {len(result.states)} states, "
        f"{len(result.recycled_weights)} recycled draws, "
        f"divergence rate {result.diagnostics.divergence_rate():.3f}"
    )
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="rehmc", description="trajectory-recycling MCMC toolkit"
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("bench", help="run an arm comparison and write ESS tables")
    _add_common(p)
    p.set_defaults(fn=_cmd_bench)

    p = sub.add_parser("sweep", help="sweep the recycled-draw count K")
    _add_common(p)
    p.add_argument("--ks", default=None, help="comma-separated K values")
    p.set_defaults(fn=_cmd_sweep)

    p = sub.add_parser(
        "tune-compare", help="compare mass-matrix tuning with and without recycling"
    )
    _add_common(p)
    p.set_defaults(fn=_cmd_tune_compare)

    p = sub.add_parser("reference", help="long plain chain for empirical truth")
    _add_common(p)
    p.set_defaults(fn=_cmd_reference)

    p = sub.add_parser("sample", help="run one chain and save its draws")
    _add_common(p)
    p.add_argument("--chain", type=int, default=0, help="chain index")
    p.add_argument("--arm", type=int, default=0, help="arm index within the config")
    p.set_defaults(fn=_cmd_sample)
    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return args.fn(args)
    except (ConfigError, ChainConfigError, TargetError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except NumericalFailure as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
