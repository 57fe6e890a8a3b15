"""Command-line interface: ``skytwin <command> [options]``."""

import argparse
import os
import sys
from typing import Dict, List, Optional

from .channel import ChannelParams, link_budget_table
from .common import check_dir, config_hash, df_to_csv
from .config import PRESETS, SWEEP_AXES, VARIANTS, load_config
from .experiments import run_eval, run_gen_env, run_schedule, run_sweep, run_train
from .plotting import plot_schedule_comparison, plot_sweep, plot_trajectory, plot_training_curves
from .twin import check_step_config


def _common_options() -> argparse.ArgumentParser:
    parent = argparse.ArgumentParser(add_help=False)
    parent.add_argument("--config", help="A YAML config file.")
    parent.add_argument("--preset", choices=PRESETS, help="Start from a shipped preset.")
    parent.add_argument("--seed", type=int, help="The master seed.")
    parent.add_argument("--variant", choices=list(VARIANTS), help="Algorithm and twin variant.")
    parent.add_argument("--out-dir", default=".", help="The output directory. Defaults to '.'.")
    parent.add_argument("--quiet", action="store_true", help="Suppress progress messages.")
    return parent


def build_parser() -> argparse.ArgumentParser:
    common = _common_options()
    parser = argparse.ArgumentParser(
        prog="skytwin",
        description="Twin-assisted UAV trajectory design: environments, scheduling, training and sweeps.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    sub.add_parser("gen-env", parents=[common], help="Generate the deployment environment as GeoJSON.")
    sub.add_parser("schedule", parents=[common], help="Compare schedulers on the deployment users.")

    p = sub.add_parser("train", parents=[common], help="Train an agent.")
    p.add_argument("--episodes", type=int, help="Override agent.max_episodes.")
    p.add_argument("--checkpoint", help="Continue training from this checkpoint.")
    p.add_argument("--resume", action="store_true", help="Continue from the checkpoint in --out-dir.")

    p = sub.add_parser("eval", parents=[common], help="Evaluate a checkpoint or a random policy.")
    p.add_argument("--checkpoint", help="A checkpoint written by 'train'.")
    p.add_argument("--episodes", type=int, help="Override eval.n_episodes.")
    p.add_argument("--policy", choices=["actor", "random"], help="Override eval.policy.")
    p.add_argument("--save-trajectories", action="store_true", help="Write one GeoJSON per episode.")

    p = sub.add_parser("sweep", parents=[common], help="Run a mission-time sweep.")
    p.add_argument("--axis", choices=SWEEP_AXES, help="Override sweep.axis.")
    p.add_argument("--values", type=float, nargs="+", help="Override sweep.values.")
    p.add_argument("--seeds", type=int, help="Override sweep.seeds.")
    p.add_argument("--variants", nargs="+", choices=list(VARIANTS), help="Override sweep.variants.")
    p.add_argument("--workers", type=int, help="Override sweep.workers.")
    p.add_argument(
        "--checkpoint",
        action="append",
        default=[],
        metavar="VARIANT=PATH",
        help="A checkpoint per variant; repeat for several variants.",
    )

    p = sub.add_parser("plot", parents=[common], help="Render an SVG from a result file.")
    p.add_argument("kind", choices=["trajectory", "training", "sweep", "schedule"])
    p.add_argument("input", help="The trajectory GeoJSON, train.csv, sweep CSV or schedule trace CSV.")
    p.add_argument("--output", help="The SVG path. Defaults to <out-dir>/<kind>.svg.")

    p = sub.add_parser("link-budget", parents=[common], help="Tabulate the link budget over distance.")
    p.add_argument(
        "--distances",
        type=float,
        nargs="+",
        default=[10.0, 50.0, 100.0, 200.0, 500.0, 1000.0],
        help="Distances in meters.",
    )
    return parser


def _parse_checkpoints(items: List[str]) -> Dict[str, str]:
    result = {}
    for item in items:
        variant, sep, path = item.partition("=")
        if not sep or variant not in VARIANTS:
            raise ValueError(f"--checkpoint expects VARIANT=PATH with a known variant, got '{item}'.")
        result[variant] = path
    return result


def _overrides(args) -> Dict:
    overrides: Dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.command == "eval" and args.save_trajectories:
        overrides["eval"] = {"save_trajectories": True}
    if args.command == "sweep":
        sweep = {
            "axis": args.axis,
            "values": args.values,
            "seeds": args.seeds,
            "variants": args.variants,
            "workers": args.workers,
        }
        sweep = {k: v for k, v in sweep.items() if v is not None}
        if sweep:
            overrides["sweep"] = sweep
    return overrides


def run(args) -> int:
    verbose = not args.quiet
    if args.command == "plot":
        output = args.output or os.path.join(check_dir(args.out_dir), f"{args.kind}.svg")
        plotter = {
            "trajectory": plot_trajectory,
            "training": plot_training_curves,
            "sweep": plot_sweep,
            "schedule": plot_schedule_comparison,
        }[args.kind]
        path = plotter(args.input, output)
        if verbose:
            print(f"Figure saved to {path}")
        return 0

    cfg = load_config(args.config, preset=args.preset, overrides=_overrides(args), variant=args.variant)
    if args.command in ("train", "eval", "sweep"):
        check_step_config(cfg)

    if args.command == "gen-env":
        run_gen_env(cfg, args.out_dir, verbose=verbose)
    elif args.command == "schedule":
        run_schedule(cfg, args.out_dir, verbose=verbose)
    elif args.command == "train":
        checkpoint = args.checkpoint
        if checkpoint is None and args.resume:
            checkpoint = os.path.join(args.out_dir, cfg["output"]["checkpoint_name"])
        run_train(cfg, args.out_dir, episodes=args.episodes, verbose=verbose, checkpoint=checkpoint)
    elif args.command == "eval":
        run_eval(
            cfg,
            checkpoint=args.checkpoint,
            n_episodes=args.episodes,
            policy=args.policy,
            out_dir=check_dir(args.out_dir),
            verbose=verbose,
        )
    elif args.command == "sweep":
        run_sweep(cfg, args.out_dir, checkpoints=_parse_checkpoints(args.checkpoint), verbose=verbose)
    elif args.command == "link-budget":
        table = link_budget_table(args.distances, ChannelParams.from_config(cfg["channel"]))
        path = df_to_csv(table, os.path.join(check_dir(args.out_dir), "link_budget.csv"), config_hash(cfg))
        if verbose:
            print(table.to_string(index=False))
            print(f"Link budget saved to {path}")
    return 0


def main(argv: Optional[List[str]] = None) -> int:
    """Entry point of the ``skytwin`` console script.

    Returns:
        int: The exit status; 2 for invalid input (config, files, arguments).
    """
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return run(args)
    except (ValueError, FileNotFoundError, RuntimeError) as e:
        print(f"skytwin {args.command}: error: {e}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
