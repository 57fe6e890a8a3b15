"""Module for the SVG figures: trajectories, training curves, sweeps and schedule comparisons.

Figures are written with a fixed hash salt and no date metadata so that identical inputs give
identical bytes.
"""

import json
import os
import matplotlib as mpl
import matplotlib.pyplot as plt
import numpy as np
import pandas as pd
from matplotlib.patches import Rectangle
from typing import Dict, Optional, Union

from .common import check_file_path, json_to_dict, sliding_stats

_SVG_RC = {"svg.hashsalt": "skytwin", "svg.fonttype": "none"}

# One color per method or variant, in plotting order.
_PALETTE = ["#1f77b4", "#d62728", "#2ca02c", "#ff7f0e", "#9467bd", "#8c564b"]


def save_svg(fig, file_path: str) -> str:
    """Writes a figure as a deterministic SVG, closes it and returns the absolute path."""
    file_path = check_file_path(file_path)
    with mpl.rc_context(_SVG_RC):
        fig.savefig(file_path, format="svg", metadata={"Date": None})
    plt.close(fig)
    return file_path


def _load_episode(episode: Union[str, Dict]) -> Dict:
    if isinstance(episode, dict):
        doc = episode
    elif isinstance(episode, str) and os.path.exists(episode):
        doc = json_to_dict(episode)
    elif isinstance(episode, str):
        try:
            doc = json.loads(episode)
        except json.JSONDecodeError as e:
            raise ValueError(f"The episode is neither a file nor JSON text: {e}") from e
    else:
        raise TypeError("The episode must be a dict, a file path or JSON text.")
    if doc.get("type") != "FeatureCollection" or not isinstance(doc.get("features"), list):
        raise ValueError("The episode document is not a GeoJSON FeatureCollection.")
    return doc


def plot_trajectory(
    episode: Union[str, Dict],
    file_path: str,
    title: Optional[str] = None,
    figsize: Optional[tuple] = (11, 5),
) -> str:
    """Draws an episode as a top view next to an altitude profile.

    Buildings are shaded rectangles, GUs are numbered in schedule order, the path is a polyline
    and the completion point is starred.

    Args:
        episode (str | dict): A trajectory GeoJSON (dict, file path or text) from
            ``EpisodeLog.to_geojson(env)``, or an environment GeoJSON for the static scene.
        file_path (str): The output SVG path.
        title (str, optional): The figure title. Defaults to None.
        figsize (tuple, optional): The figure size in inches. Defaults to (11, 5).

    Raises:
        ValueError: If the document is malformed.

    Returns:
        str: The absolute SVG path.
    """
    doc = _load_episode(episode)
    fig, (top, side) = plt.subplots(1, 2, figsize=figsize, gridspec_kw={"width_ratios": [1, 1.3]})

    path, path_props = None, {}
    try:
        for feature in doc["features"]:
            props = feature["properties"]
            kind = props["kind"]
            coords = feature["geometry"]["coordinates"]
            if kind == "building":
                xs = [c[0] for c in coords[0]]
                ys = [c[1] for c in coords[0]]
                top.add_patch(
                    Rectangle(
                        (min(xs), min(ys)),
                        max(xs) - min(xs),
                        max(ys) - min(ys),
                        facecolor="0.7",
                        edgecolor="0.3",
                        gid=f"building-{props['index']}",
                    )
                )
                top.text(np.mean(xs[:-1]), np.mean(ys[:-1]), f"{props['height']:.0f} m", ha="center", fontsize=7)
            elif kind == "user":
                top.plot(coords[0], coords[1], "^", color="#2ca02c")
                label = props.get("order")
                label = props["id"] + 1 if label is None else label
                top.annotate(
                    str(label), (coords[0], coords[1]), xytext=(4, 4), textcoords="offset points", gid=f"gu-{label}"
                )
            elif kind == "bs":
                top.plot(coords[0], coords[1], "s", color="k")
            elif kind == "path":
                path = np.asarray(coords, dtype=np.float64).reshape(-1, 3)
                path_props = props
    except (KeyError, IndexError, TypeError) as e:
        raise ValueError(f"Malformed episode feature: {e}") from e

    delta_s = float(path_props.get("delta_s", 1.0))
    if path is not None and len(path) >= 2:
        top.plot(path[:, 0], path[:, 1], "-", color="#1f77b4", linewidth=1.2)
        top.plot(path[0, 0], path[0, 1], "o", color="#1f77b4")
        times = np.arange(len(path)) * delta_s
        side.plot(times, path[:, 2], "-", color="#1f77b4")
        if path_props.get("t_f") is not None:
            t_f = int(path_props["t_f"])
            top.plot(path[t_f, 0], path[t_f, 1], "*", color="#d62728", markersize=12, gid="completion")
            side.plot(times[t_f], path[t_f, 2], "*", color="#d62728", markersize=12)

    side_xy = doc.get("side_xy")
    if side_xy is not None:
        top.set_xlim(0, side_xy)
        top.set_ylim(0, side_xy)
    if doc.get("max_alt") is not None:
        side.set_ylim(0, doc["max_alt"])
    top.set_aspect("equal")
    top.set_xlabel("x (m)")
    top.set_ylabel("y (m)")
    side.set_xlabel("time (s)")
    side.set_ylabel("altitude (m)")
    if title:
        fig.suptitle(title)
    fig.tight_layout()
    return save_svg(fig, file_path)


def plot_training_curves(
    log: Union[str, pd.DataFrame],
    file_path: str,
    window: Optional[int] = 20,
    figsize: Optional[tuple] = (8, 8),
) -> str:
    """Reward, served GUs and collisions per episode, smoothed over ``window`` with half-sigma bands.

    Args:
        log (str | pandas.DataFrame): A training log or the path of ``train.csv``.
        file_path (str): The output SVG path.
        window (int, optional): The smoothing window. Defaults to 20.
        figsize (tuple, optional): The figure size in inches. Defaults to (8, 8).

    Returns:
        str: The absolute SVG path.
    """
    if isinstance(log, str):
        log = pd.read_csv(log, comment="#")
    fig, axes = plt.subplots(3, 1, figsize=figsize, sharex=True)
    episodes = log["episode"].to_numpy() + 1 if len(log) else np.array([])
    for ax, column, label in zip(
        axes,
        ["reward", "served", "collisions"],
        ["episode reward", "served GUs", "collisions"],
    ):
        values = log[column].to_numpy(dtype=np.float64) if len(log) else np.array([])
        mean, std = sliding_stats(values, window=window)
        ax.plot(episodes, values, color="0.8", linewidth=0.6)
        ax.plot(episodes, mean, color="#1f77b4")
        ax.fill_between(episodes, mean - std / 2, mean + std / 2, color="#1f77b4", alpha=0.2)
        ax.set_ylabel(label)
    axes[-1].set_xlabel("episode")
    fig.tight_layout()
    return save_svg(fig, file_path)


def plot_sweep(
    df: Union[str, pd.DataFrame],
    file_path: str,
    figsize: Optional[tuple] = (6, 4),
) -> str:
    """Mean mission time against the sweep axis, one line per variant.

    Args:
        df (str | pandas.DataFrame): Long-form sweep results or the path of their CSV.
        file_path (str): The output SVG path.
        figsize (tuple, optional): The figure size in inches. Defaults to (6, 4).

    Returns:
        str: The absolute SVG path.
    """
    if isinstance(df, str):
        df = pd.read_csv(df, comment="#")
    fig, ax = plt.subplots(figsize=figsize)
    axis = df["axis"].iloc[0] if len(df) else "value"
    for color, (variant, part) in zip(_PALETTE * 4, df.groupby("variant", sort=True)):
        stats = part.groupby("value", sort=True)["mission_time"].agg(["mean", "std"]).fillna(0.0)
        ax.errorbar(stats.index, stats["mean"], yerr=stats["std"], marker="o", capsize=3, color=color, label=variant)
    ax.set_xlabel(axis.replace("_", " "))
    ax.set_ylabel("mission time (s)")
    if len(df):
        ax.legend()
    fig.tight_layout()
    return save_svg(fig, file_path)


def plot_schedule_comparison(
    traces: Union[str, pd.DataFrame],
    file_path: str,
    figsize: Optional[tuple] = (6, 4),
) -> str:
    """Best tour length against iteration for each scheduling method.

    Args:
        traces (str | pandas.DataFrame): Long-form traces (method, iteration, best_length).
        file_path (str): The output SVG path.
        figsize (tuple, optional): The figure size in inches. Defaults to (6, 4).

    Returns:
        str: The absolute SVG path.
    """
    if isinstance(traces, str):
        traces = pd.read_csv(traces, comment="#")
    fig, ax = plt.subplots(figsize=figsize)
    for color, (method, part) in zip(_PALETTE, traces.groupby("method", sort=False)):
        ax.plot(part["iteration"], part["best_length"], color=color, label=method)
    ax.set_xlabel("iteration")
    ax.set_ylabel("tour length (m)")
    if len(traces):
        ax.legend()
    fig.tight_layout()
    return save_svg(fig, file_path)
