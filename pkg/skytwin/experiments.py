"""Module for running experiments: training runs, evaluation rollouts, sweeps and schedule studies.

Every CSV written here starts with ``# config_hash=...`` and ``# variant=...`` comment lines;
wall-clock timings go to separate files so the data rows are byte-identical across reruns.
"""

import os
import numpy as np
import pandas as pd
from multiprocessing import Pool
from typing import Dict, List, Optional, Tuple

from .agent import LOG_COLUMNS, Td3Agent, load_agent, save_agent, save_ve_snapshot, to_physical, train
from .common import check_dir, config_hash, csv_to_df, derive_seed, df_to_csv, make_rng, sliding_stats
from .config import SWEEP_AXES, VARIANTS, default_config, save_config, variant_of, with_updates
from .mdp import DEPLOY, Simulation
from .plotting import plot_schedule_comparison, plot_sweep, plot_training_curves
from .scheduler import (
    AnnealParams,
    anneal,
    classical_anneal,
    exhaustive_optimum,
    greedy_init,
    random_schedule,
    tour_length,
)
from .twin import deployment_map
from .world import obstacle_ratio, save_environment

# Spawn keys of the harness streams.
STREAM_EVAL = 31
STREAM_RANDOM_POLICY = 32
STREAM_SWEEP = 33
STREAM_SCHEDULE_STUDY = 34

SWEEP_COLUMNS = [
    "axis",
    "value",
    "seed",
    "variant",
    "mission_time",
    "completed",
    "served_fraction",
    "obstacle_ratio",
]

# Where each sweep axis lives in the config.
AXIS_KEYS = {
    "data_volume": ("world", "demand_bits"),
    "gu_count": ("world", "n_users"),
    "obstacle_ratio": ("world", "obstacle_ratio"),
}


def _csv_comments(cfg) -> Dict[str, str]:
    return {"variant": variant_of(cfg)}


def _resumed_log(previous: pd.DataFrame, log: pd.DataFrame, first: int) -> pd.DataFrame:
    """Prepends the rows logged before a resume and recomputes the smoothed reward."""
    columns = LOG_COLUMNS[:-1]
    earlier = previous.loc[previous["episode"] < first, columns]
    merged = pd.concat([earlier, log[columns]], ignore_index=True)
    merged["smoothed_reward"] = sliding_stats(merged["reward"].to_numpy(), window=20)[0]
    return merged


def censored_mission_time(sim: Simulation) -> float:
    """``t_f * delta_s``, or ``max_slots * delta_s`` when the episode did not complete."""
    mission = sim.log.mission_time
    return mission if mission is not None else sim.max_slots * sim.delta_s


def run_gen_env(cfg=None, out_dir: Optional[str] = ".", verbose: Optional[bool] = False) -> str:
    """Generates the deployment map of ``cfg.seed`` and writes it as GeoJSON.

    Returns:
        str: The path of ``environment.geojson``.
    """
    cfg = cfg if cfg is not None else default_config()
    env = deployment_map(cfg)
    out_path = save_environment(env, os.path.join(check_dir(out_dir), "environment.geojson"))
    if verbose:
        print(
            f"Environment with {len(env.buildings)} buildings and {len(env.users)} users "
            f"(obstacle ratio {obstacle_ratio(env):.4f}) saved to {out_path}"
        )
    return out_path


def run_train(
    cfg=None,
    out_dir: Optional[str] = ".",
    episodes: Optional[int] = None,
    verbose: Optional[bool] = False,
    checkpoint: Optional[str] = None,
) -> Dict[str, str]:
    """Trains an agent and writes its checkpoint, training log, timings, config and curves.

    VE snapshots go to ``out_dir`` every ``output.snapshot_stride`` episodes.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        out_dir (str, optional): The output directory. Defaults to ".".
        episodes (int, optional): Overrides ``agent.max_episodes``; when resuming, the number of
            further episodes.
        verbose (bool, optional): Print per-episode progress. Defaults to False.
        checkpoint (str, optional): Resume from this :func:`run_train` checkpoint. Rows of an
            existing ``train.csv``/``timing.csv`` in ``out_dir`` from before the checkpoint are kept.

    Raises:
        FileNotFoundError: If the checkpoint does not exist.
        RuntimeError: If the checkpoint is incompatible with the config.

    Returns:
        dict: The artifact paths keyed by ``checkpoint``, ``log``, ``timing``, ``config``, ``plot``.
    """
    cfg = cfg if cfg is not None else default_config()
    out_dir = check_dir(out_dir)
    digest = config_hash(cfg)
    agent = load_agent(checkpoint, cfg) if checkpoint is not None else None
    first = agent.episodes_done if agent is not None else 0
    if verbose and agent is not None:
        print(f"Resuming from {checkpoint} after {first} episodes.")
    result = train(cfg, agent=agent, episodes=episodes, verbose=verbose, snapshot_dir=out_dir)
    log_path, timing_path = os.path.join(out_dir, "train.csv"), os.path.join(out_dir, "timing.csv")
    log, timing = result.log, result.timing
    if first and os.path.exists(log_path) and os.path.exists(timing_path):
        log = _resumed_log(csv_to_df(log_path), log, first)
        previous = csv_to_df(timing_path)
        timing = pd.concat([previous.loc[previous["episode"] < first], timing], ignore_index=True)

    paths = {
        "config": save_config(cfg, os.path.join(out_dir, "config.yaml")),
        "checkpoint": save_agent(result.agent, os.path.join(out_dir, cfg["output"]["checkpoint_name"])),
        "log": df_to_csv(log, log_path, digest, _csv_comments(cfg)),
        "timing": df_to_csv(timing, timing_path, digest),
    }
    paths["plot"] = plot_training_curves(log, os.path.join(out_dir, "training.svg"))
    if verbose:
        for name, path in paths.items():
            print(f"{name}: {path}")
    return paths


def random_action(rng: np.random.Generator, v_max: float):
    """A uniformly random physical action."""
    return to_physical(rng.uniform(-1.0, 1.0, size=3), v_max)


def run_eval(
    cfg=None,
    checkpoint: Optional[str] = None,
    n_episodes: Optional[int] = None,
    policy: Optional[str] = None,
    out_dir: Optional[str] = None,
    agent: Optional[Td3Agent] = None,
    verbose: Optional[bool] = False,
) -> Tuple[Dict, pd.DataFrame]:
    """Rolls out deterministic-policy episodes on the deployment map and aggregates metrics.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        checkpoint (str, optional): A checkpoint from :func:`run_train`. Without one (and without
            ``agent``) a freshly initialized actor is evaluated.
        n_episodes (int, optional): Overrides ``eval.n_episodes``.
        policy (str, optional): ``actor`` or ``random``. Defaults to ``eval.policy``.
        out_dir (str, optional): Write ``eval.csv`` and, if ``eval.save_trajectories`` is set,
            one trajectory GeoJSON per episode here, plus VE snapshots every
            ``output.snapshot_stride`` episodes. Defaults to None (nothing written).
        agent (Td3Agent, optional): Evaluate this agent directly.
        verbose (bool, optional): Print the summary. Defaults to False.

    Raises:
        ValueError: If the policy is unknown or ``n_episodes`` is not positive.
        RuntimeError: If the checkpoint is incompatible with the config.

    Returns:
        tuple: The summary dict (means and population standard deviations) and the per-episode table.
    """
    cfg = cfg if cfg is not None else default_config()
    n_episodes = int(cfg["eval"]["n_episodes"]) if n_episodes is None else int(n_episodes)
    policy = cfg["eval"]["policy"] if policy is None else policy
    if n_episodes < 1:
        raise ValueError("eval.n_episodes must be at least 1.")
    if policy not in ("actor", "random"):
        raise ValueError(f"Unknown policy '{policy}'; use 'actor' or 'random'.")

    if policy == "actor" and agent is None:
        agent = load_agent(checkpoint, cfg) if checkpoint is not None else Td3Agent(cfg)
    sim = Simulation(cfg)
    rng = make_rng(int(cfg["seed"]), STREAM_RANDOM_POLICY)
    dt_enabled = bool(cfg["mode"]["dt_enabled"])
    save_trajectories = out_dir is not None and bool(cfg["eval"]["save_trajectories"])

    rows = []
    for episode in range(n_episodes):
        state = sim.reset(derive_seed(int(cfg["seed"]), STREAM_EVAL, episode), DEPLOY, dt_enabled)
        done = False
        while not done:
            if policy == "random":
                action = random_action(rng, sim.v_max)
            else:
                action, _ = agent.act(state, deterministic=True)
            state, _, done, _ = sim.step(action)
        k = len(sim.users)
        rows.append(
            {
                "episode": episode,
                "completed": sim.log.t_f is not None,
                "t_f": sim.log.t_f,
                "mission_time": censored_mission_time(sim),
                "served_fraction": sim.log.served_count / k if k else 1.0,
                "vetoes": sim.log.vetoes,
                "collisions": sim.log.collisions,
                "reward": sim.log.total_reward,
                "obstacle_ratio": obstacle_ratio(sim.env),
            }
        )
        if save_trajectories:
            path = os.path.join(out_dir, "trajectories", f"episode_{episode:03d}.geojson")
            sim.log.save_trajectory(path, sim.env)
        save_ve_snapshot(cfg, sim, out_dir, episode)

    table = pd.DataFrame(rows)
    summary = {"policy": policy, "variant": variant_of(cfg), "n_episodes": n_episodes}
    for column in ["mission_time", "served_fraction", "vetoes", "collisions", "reward"]:
        values = table[column].to_numpy(dtype=np.float64)
        summary[f"{column}_mean"] = float(values.mean())
        summary[f"{column}_std"] = float(values.std())
    summary["completed"] = int(table["completed"].sum())
    summary["collisions_total"] = int(table["collisions"].sum())

    if out_dir is not None:
        digest = config_hash(cfg)
        df_to_csv(table, os.path.join(out_dir, "eval.csv"), digest, _csv_comments(cfg))
        df_to_csv(pd.DataFrame([summary]), os.path.join(out_dir, "eval_summary.csv"), digest)
    if verbose:
        print(
            f"{policy} policy over {n_episodes} episodes: completed {summary['completed']}, "
            f"mission time {summary['mission_time_mean']:.1f} +/- {summary['mission_time_std']:.1f} s, "
            f"served {summary['served_fraction_mean']:.2f}, collisions {summary['collisions_total']}"
        )
    return summary, table


def sweep_point_config(cfg, axis: str, value, seed: int, variant: str):
    """The config of one sweep point: the axis value, the point seed and the variant applied."""
    if axis not in AXIS_KEYS:
        raise ValueError(f"Unknown sweep axis '{axis}'; choose from {', '.join(SWEEP_AXES)}.")
    section, key = AXIS_KEYS[axis]
    value = int(value) if axis == "gu_count" else float(value)
    overrides = {section: {key: value}, "seed": int(seed), "mode": dict(VARIANTS[variant])}
    return with_updates(cfg, overrides)


def _sweep_point(payload: Dict) -> Dict:
    """Runs one (axis value, seed, variant) point; a top-level function so workers can pickle it."""
    point_cfg = payload["cfg"]
    checkpoint = payload.get("checkpoint")
    if checkpoint is not None:
        agent = load_agent(checkpoint, point_cfg)
    else:
        agent = train(point_cfg).agent
    summary, table = run_eval(point_cfg, n_episodes=1, agent=agent)
    return {
        "axis": payload["axis"],
        "value": payload["value"],
        "seed": payload["seed_index"],
        "variant": payload["variant"],
        "mission_time": float(table["mission_time"].iloc[0]),
        "completed": bool(table["completed"].iloc[0]),
        "served_fraction": float(table["served_fraction"].iloc[0]),
        "obstacle_ratio": float(table["obstacle_ratio"].iloc[0]),
    }


def sweep_summary(df: pd.DataFrame) -> pd.DataFrame:
    """Mean mission time per (variant, value) with a per-variant non-decreasing flag."""
    grouped = (
        df.groupby(["variant", "value"], sort=True)["mission_time"]
        .agg(["mean", "std", "count"])
        .reset_index()
        .rename(columns={"mean": "mission_time_mean", "std": "mission_time_std"})
    )
    grouped["mission_time_std"] = grouped["mission_time_std"].fillna(0.0)
    flags = {
        variant: bool(np.all(np.diff(part["mission_time_mean"].to_numpy()) >= 0))
        for variant, part in grouped.groupby("variant")
    }
    grouped["monotonic"] = grouped["variant"].map(flags)
    return grouped


def run_sweep(
    cfg=None,
    out_dir: Optional[str] = None,
    checkpoints: Optional[Dict[str, str]] = None,
    workers: Optional[int] = None,
    verbose: Optional[bool] = False,
) -> pd.DataFrame:
    """Runs the sweep of ``cfg.sweep``: one row per (axis value, seed, variant).

    Each point trains in place (``sweep.train_in_place``) or loads the variant's checkpoint, then
    evaluates one deterministic episode. Seeds depend only on the seed index, so every variant and
    axis value sees the same layouts.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        out_dir (str, optional): Write ``sweep_<axis>.csv``, the summary and the SVG here.
        checkpoints (dict, optional): Variant tag to checkpoint path.
        workers (int, optional): Parallel processes. Defaults to ``sweep.workers``.
        verbose (bool, optional): Print progress. Defaults to False.

    Raises:
        ValueError: If a variant has neither a checkpoint nor the train-in-place flag.

    Returns:
        pandas.DataFrame: The long-form results (see ``SWEEP_COLUMNS``).
    """
    cfg = cfg if cfg is not None else default_config()
    sweep = cfg["sweep"]
    axis = sweep["axis"]
    workers = int(sweep["workers"]) if workers is None else int(workers)
    checkpoints = checkpoints or {}

    payloads = []
    for variant in sweep["variants"]:
        checkpoint = checkpoints.get(variant)
        if checkpoint is None and not sweep["train_in_place"]:
            raise ValueError(f"sweep.variants: no checkpoint for '{variant}' and train_in_place is off.")
        for value in sweep["values"]:
            for s in range(int(sweep["seeds"])):
                seed = derive_seed(int(cfg["seed"]), STREAM_SWEEP, s)
                payloads.append(
                    {
                        "cfg": sweep_point_config(cfg, axis, value, seed, variant),
                        "checkpoint": checkpoint,
                        "axis": axis,
                        "value": value,
                        "seed_index": s,
                        "variant": variant,
                    }
                )

    if workers > 1:
        with Pool(workers) as pool:
            rows = pool.map(_sweep_point, payloads)
    else:
        rows = []
        for i, payload in enumerate(payloads):
            rows.append(_sweep_point(payload))
            if verbose:
                row = rows[-1]
                print(
                    f"[{i + 1}/{len(payloads)}] {row['variant']} {axis}={row['value']} "
                    f"seed={row['seed']}: mission time {row['mission_time']:.1f} s"
                )

    df = pd.DataFrame(rows, columns=SWEEP_COLUMNS)
    if out_dir is not None:
        out_dir = check_dir(out_dir)
        digest = config_hash(cfg)
        comments = {"axis": axis, "variants": ",".join(sweep["variants"])}
        df_to_csv(df, os.path.join(out_dir, f"sweep_{axis}.csv"), digest, comments)
        summary = sweep_summary(df)
        df_to_csv(summary, os.path.join(out_dir, f"sweep_{axis}_summary.csv"), digest, comments)
        path = plot_sweep(df, os.path.join(out_dir, f"sweep_{axis}.svg"))
        if verbose:
            print(f"Sweep results saved to {out_dir}; chart {path}")
    return df


def run_schedule(
    cfg=None,
    out_dir: Optional[str] = None,
    verbose: Optional[bool] = False,
) -> Tuple[pd.DataFrame, pd.DataFrame]:
    """Compares schedulers on the deployment map's users.

    Runs nearest-greedy, random scheduling, classical annealing and the operator-adaptive annealer
    with the same iteration budget; adds the exhaustive optimum for at most 8 users.

    Returns:
        tuple: The summary table (method, length, order) and the best-length traces (long form).
    """
    cfg = cfg if cfg is not None else default_config()
    seed = int(cfg["seed"])
    env = deployment_map(cfg)
    start = cfg["kinematics"]["start_position"]
    users = env.user_positions()
    params = AnnealParams.from_config(cfg["anneal"])
    k = len(users)

    greedy, greedy_length = greedy_init(start, users)
    rand = random_schedule(k, make_rng(seed, STREAM_SCHEDULE_STUDY, 0))
    classical = classical_anneal(start, users, params, make_rng(seed, STREAM_SCHEDULE_STUDY, 1))
    proposed = anneal(start, users, params, make_rng(seed, STREAM_SCHEDULE_STUDY, 2), return_result=True)
    rows = [
        ("greedy", greedy_length, greedy),
        ("random", tour_length(start, rand, users), rand),
        ("classical", classical.length, classical.order),
        ("proposed", proposed.length, proposed.order),
    ]
    if k <= 8:
        optimum, optimum_length = exhaustive_optimum(start, users)
        rows.append(("exhaustive", optimum_length, optimum))
    summary = pd.DataFrame(
        [{"method": m, "length": length, "order": " ".join(str(i) for i in order)} for m, length, order in rows]
    )

    random_length = tour_length(start, rand, users)
    traces: List[Dict] = []
    for method, trace in [
        ("random", [random_length] * len(proposed.trace)),
        ("classical", classical.trace),
        ("proposed", proposed.trace),
    ]:
        traces.extend({"method": method, "iteration": i + 1, "best_length": v} for i, v in enumerate(trace))
    traces = pd.DataFrame(traces, columns=["method", "iteration", "best_length"])

    if out_dir is not None:
        out_dir = check_dir(out_dir)
        digest = config_hash(cfg)
        df_to_csv(summary, os.path.join(out_dir, "schedule.csv"), digest)
        df_to_csv(traces, os.path.join(out_dir, "schedule_trace.csv"), digest)
        plot_schedule_comparison(traces, os.path.join(out_dir, "schedule.svg"))
    if verbose:
        for method, length, order in rows:
            print(f"{method:>10}: {length:10.2f} m  {order}")
    return summary, traces
