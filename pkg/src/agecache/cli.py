"""Command-line entry point.

Subcommands: solve, oracle, baseline, train, evaluate, sweep, reproduce.
Exit codes: 0 success, 1 user error (flags/config/guards), 2 numerical
failure (non-convergence, non-finite loss).  Every output file embeds the
resolved configuration hash, seed list, and backend so runs are
reproducible byte for byte.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels, neural
from .agents import TablePolicy
from .harness import (
    DEFAULT_ETA_GRID,
    csv_header,
    rollout,
    solve_sweep_tables,
    sweep,
    write_frontier_csv,
    write_sweep_csv,
)
from .model import ModelConfig, config_hash, make_rng, read_config_file
from .solver import (
    SolverError,
    SolverSettings,
    load_policy,
    policy_average_cost,
    policy_to_csv,
    rvia,
    save_policy,
    solve_periodic_baseline,
)
from .trainer import TrainerConfig, TrainingDiverged, extract_greedy_policy, train, trace_to_csv

EXIT_OK = 0
EXIT_USER = 1
EXIT_NUMERICAL = 2

PAPER_DEFAULTS = {
    "F": "1",
    "delta": "4",
    "aoi_cap": "50",
    "users": "2",
    "rates": "0.5",
    "eta": "2",
    "seed": "7",
}


class _Parser(argparse.ArgumentParser):
    # argparse exits 2 on usage errors by default; user errors are exit 1 here
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_USER)


def _load_mapping(args) -> dict:
    if getattr(args, "config", None):
        return read_config_file(args.config)
    return dict(PAPER_DEFAULTS)


def _model_config(args) -> ModelConfig:
    mapping = _load_mapping(args)
    config = ModelConfig.from_mapping(mapping)
    if getattr(args, "eta", None) is not None:
        config = config.with_update_weight(args.eta)
    if getattr(args, "delta", None) is not None:
        config = config.with_window(args.delta)
    return config


def _seed(args) -> int:
    if getattr(args, "seed", None) is not None:
        return args.seed
    mapping = _load_mapping(args)
    return int(mapping.get("seed", 0))


def _add_common(parser, config_required=True):
    parser.add_argument("--config", required=config_required,
                        help="key/value config file (see README for keys)")
    parser.add_argument("--eta", type=float, help="override the update cost weight")
    parser.add_argument("--delta", type=int, help="override the request window")
    parser.add_argument("--seed", type=int, help="base RNG seed (overrides config)")


def make_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="agecache", description=__doc__)
    parser.add_argument("--version", action="version", version=f"agecache {__version__}")
    sub = parser.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("solve", help="exact optimal policy via relative value iteration")
    _add_common(p)
    p.add_argument("--out", required=True, help="output policy file (npz)")
    p.add_argument("--csv", help="also dump the table as CSV")
    p.add_argument("--span-tol", type=float, default=1e-9)
    p.add_argument("--max-iterations", type=int, default=1_000_000)

    p = sub.add_parser("oracle", help="brute-force policy enumeration on a tiny instance")
    _add_common(p)

    p = sub.add_parser("baseline", help="window=0 optimum lifted into the full model")
    _add_common(p)
    p.add_argument("--out", required=True, help="output lifted policy file (npz)")

    p = sub.add_parser("train", help="train the DQN scheduler")
    _add_common(p)
    p.add_argument("--out", required=True, help="output checkpoint file (npz)")
    p.add_argument("--trace", help="per-episode cost CSV")
    p.add_argument("--episodes", type=int, help="override the episode count")

    p = sub.add_parser("evaluate", help="roll out a stored policy or checkpoint")
    _add_common(p)
    p.add_argument("--policy", help="policy file from solve/baseline")
    p.add_argument("--checkpoint", help="checkpoint file from train")
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--seeds", type=int, default=1, help="number of rollout seeds")
    p.add_argument("--exact", action="store_true",
                   help="also report the exact chain evaluation")

    p = sub.add_parser("sweep", help="eta sweep producing sweep.csv and frontier.csv")
    _add_common(p)
    p.add_argument("--outdir", required=True)
    p.add_argument("--etas", help="comma-separated eta grid")
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--method", choices=("mc", "exact"), default="mc")

    p = sub.add_parser("reproduce", help="full pipeline: solves, DQN, sweep, traces")
    _add_common(p, config_required=False)
    p.add_argument("--outdir", required=True)
    p.add_argument("--etas", help="comma-separated eta grid")
    p.add_argument("--seeds", type=int, default=30)
    p.add_argument("--horizon", type=int, default=10_000)
    p.add_argument("--jobs", type=int, default=1)
    p.add_argument("--dqn-episodes", type=int, default=200,
                   help="DQN episodes per eta (0 skips DQN)")
    p.add_argument("--trace-etas", default="0.5,1,2",
                   help="etas whose training traces are written")
    return parser


def _parse_etas(args) -> tuple[float, ...]:
    if getattr(args, "etas", None):
        return tuple(float(x) for x in args.etas.split(","))
    return DEFAULT_ETA_GRID


def cmd_solve(args) -> int:
    config = _model_config(args)
    settings = SolverSettings(span_tolerance=args.span_tol, max_iterations=args.max_iterations)
    table = rvia(config, settings)
    save_policy(args.out, table)
    if args.csv:
        policy_to_csv(args.csv, table, __version__)
    print(
        f"solved {config.state_count} states in {table.iterations} sweeps: "
        f"avg_cost={table.avg_cost:.6f} residual={table.residual:.2e} "
        f"backend={kernels.BACKEND_NAME}"
    )
    if not table.converged:
        print("warning: iteration budget exhausted before convergence", file=sys.stderr)
        return EXIT_NUMERICAL
    return EXIT_OK


def cmd_oracle(args) -> int:
    from .solver import enumerate_policies_oracle

    config = _model_config(args)
    actions, best = enumerate_policies_oracle(config)
    cost, aoi, freq = policy_average_cost(config, actions)
    print(
        f"enumerated optimum over {config.num_actions}**{config.state_count} policies: "
        f"avg_cost={best:.9f} avg_aoi={aoi:.9f} update_freq={freq:.9f}"
    )
    return EXIT_OK


def cmd_baseline(args) -> int:
    config = _model_config(args)
    result = solve_periodic_baseline(config)
    cost, aoi, freq = policy_average_cost(config, result.lifted_actions)
    lifted = result.reduced.__class__(
        actions=result.lifted_actions,
        avg_cost=cost,
        relative_values=np.zeros(config.state_count),
        reference_state=result.reduced.reference_state,
        iterations=result.reduced.iterations,
        converged=result.reduced.converged,
        span=result.reduced.span,
        residual=result.reduced.residual,
        eta=config.update_weight,
        config=config,
    )
    save_policy(args.out, lifted)
    print(
        f"window=0 optimum (avg_cost={result.reduced.avg_cost:.6f}) lifted into "
        f"window={config.window}: avg_cost={cost:.6f} avg_aoi={aoi:.6f} "
        f"update_freq={freq:.6f}"
    )
    return EXIT_OK


def cmd_train(args) -> int:
    config = _model_config(args)
    mapping = _load_mapping(args)
    trainer_config = TrainerConfig.from_mapping(mapping)
    if args.seed is not None:
        trainer_config = _replace_trainer(trainer_config, seed=args.seed)
    if args.episodes is not None:
        trainer_config = _replace_trainer(trainer_config, num_episodes=args.episodes)
    trace = train(config, trainer_config)
    neural.save_checkpoint(
        args.out,
        trace.shape,
        trace.theta,
        {
            "config_hash": config_hash(config),
            "eta": config.update_weight,
            "seed": trainer_config.seed,
            "episodes": trainer_config.num_episodes,
            "backend": trace.backend,
            "code_version": __version__,
        },
    )
    if args.trace:
        trace_to_csv(args.trace, trace, csv_header(config, [trainer_config.seed], __version__))
    print(
        f"trained {trainer_config.total_steps} steps in {trace.wall_time:.1f}s; "
        f"final-episode cost {trace.episode_costs[-1]:.4f}"
    )
    return EXIT_OK


def _replace_trainer(tc: TrainerConfig, **kw) -> TrainerConfig:
    import dataclasses

    return dataclasses.replace(tc, **kw)


def cmd_evaluate(args) -> int:
    config = _model_config(args)
    if bool(args.policy) == bool(args.checkpoint):
        raise ValueError("provide exactly one of --policy / --checkpoint")
    if args.policy:
        table = load_policy(args.policy)
        if config_hash(table.config.with_update_weight(config.update_weight)) != config_hash(config):
            raise ValueError("policy file was solved for a different model configuration")
        policy = TablePolicy(table.actions, config)
    else:
        shape, theta, meta = neural.load_checkpoint(args.checkpoint)
        policy = extract_greedy_policy(shape, theta, config)
    base = _seed(args)
    print("seed,avg_aoi,avg_aoi_realized,update_freq,avg_cost")
    for i in range(args.seeds):
        m = rollout(policy, config, args.horizon, make_rng(base + i))
        print(
            f"{base + i},{m.avg_aoi_expected_norm:.6f},{m.avg_aoi_realized_norm:.6f},"
            f"{m.update_freq:.6f},{m.avg_cost:.6f}"
        )
    if args.exact:
        cost, aoi, freq = policy_average_cost(config, policy)
        print(f"exact,{aoi:.6f},,{freq:.6f},{cost:.6f}")
    return EXIT_OK


def cmd_sweep(args) -> int:
    config = _model_config(args)
    etas = _parse_etas(args)
    base = _seed(args)
    seeds = tuple(base + i for i in range(args.seeds))
    result = sweep(
        config,
        etas,
        seeds=seeds,
        horizon=args.horizon,
        method=args.method,
        jobs=args.jobs,
    )
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    write_sweep_csv(outdir / "sweep.csv", result, __version__)
    write_frontier_csv(outdir / "frontier.csv", result, __version__)
    print(f"wrote {outdir / 'sweep.csv'} and {outdir / 'frontier.csv'}")
    return EXIT_OK


def cmd_reproduce(args) -> int:
    config = _model_config(args)
    etas = _parse_etas(args)
    base = _seed(args)
    seeds = tuple(base + i for i in range(args.seeds))
    outdir = Path(args.outdir)
    outdir.mkdir(parents=True, exist_ok=True)

    tables = solve_sweep_tables(config, etas)
    trace_etas = tuple(float(x) for x in args.trace_etas.split(",") if x)
    if args.dqn_episodes > 0:
        for i, eta in enumerate(etas):
            cfg = config.with_update_weight(float(eta))
            tc = TrainerConfig.from_mapping(_load_mapping(args))
            tc = _replace_trainer(tc, num_episodes=args.dqn_episodes, seed=base + 1000 + i)
            trace = train(cfg, tc)
            policy = extract_greedy_policy(trace.shape, trace.theta, cfg)
            tables[(float(eta), "dqn")] = policy.actions
            if float(eta) in trace_etas:
                trace_to_csv(
                    outdir / f"trace_eta{eta:g}.csv",
                    trace,
                    csv_header(cfg, [tc.seed], __version__) + [f"# eta={eta:g}"],
                )

    result = sweep(
        config,
        etas,
        policy_tables=tables,
        seeds=seeds,
        horizon=args.horizon,
        jobs=args.jobs,
    )
    write_sweep_csv(outdir / "sweep.csv", result, __version__)
    write_frontier_csv(outdir / "frontier.csv", result, __version__)
    print(f"wrote pipeline outputs to {outdir}")
    return EXIT_OK


COMMANDS = {
    "solve": cmd_solve,
    "oracle": cmd_oracle,
    "baseline": cmd_baseline,
    "train": cmd_train,
    "evaluate": cmd_evaluate,
    "sweep": cmd_sweep,
    "reproduce": cmd_reproduce,
}


def main(argv=None) -> int:
    parser = make_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return exc.code if isinstance(exc.code, int) else EXIT_USER
    try:
        return COMMANDS[args.command](args)
    except (ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USER
    except (SolverError, TrainingDiverged) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
