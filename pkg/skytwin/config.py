"""Module for loading, validating and saving simulation configs.

A config is a YAML document whose sections mirror the simulator's concerns (world, grid, timing,
kinematics, channel, reward, anneal, net, agent, mode, eval, sweep). Values are resolved in the
order built-in defaults, preset, user file, overrides, and returned as a frozen ``box.Box``.
"""

import copy
import math
import os
import yaml
from box import Box
from typing import Dict, Optional, Union

from .channel import CHANNEL_DEFAULTS
from .common import check_file_path
from .scheduler import ANNEAL_DEFAULTS
from .world import WORLD_DEFAULTS

PRESETS = ("reference", "desk")
VARIANTS = {
    "td3-dt": {"algorithm": "td3", "dt_enabled": True},
    "td3-nodt": {"algorithm": "td3", "dt_enabled": False},
    "ddpg-dt": {"algorithm": "ddpg", "dt_enabled": True},
    "ddpg-nodt": {"algorithm": "ddpg", "dt_enabled": False},
}
SWEEP_AXES = ("data_volume", "gu_count", "obstacle_ratio")

DEFAULTS = {
    "seed": 0,
    "world": dict(WORLD_DEFAULTS),
    "grid": {"m": 100, "n": 100},
    "timing": {"delta1": 0.5, "delta2": 0.5, "delta3": 0.2, "max_slots": 500},
    "kinematics": {
        "v_max": 40.0,
        "max_flight_alt": 140.0,
        "min_alt": 50.0,
        "beta_sen": math.pi / 6,
        "beta_com": math.pi / 4,
        "start_position": [50.0, 50.0, 100.0],
    },
    "channel": dict(CHANNEL_DEFAULTS),
    "reward": {
        "w1": 100.0,
        "w2": 3.0,
        "J_vr": 0.6,
        "w3": 0.01,
        "w4": 2.0,
        "b4": 1.0,
        "w51": 3.0,
        "w52": 1.0,
        "J_dr": 20.0,
        "w6": 0.5,
        "w7": 500.0,
        "J_dp": 50.0,
        "normalize_state": True,
    },
    "anneal": dict(ANNEAL_DEFAULTS),
    "net": {"preset": "reference"},
    "agent": {
        "gamma": 0.99,
        "tau": 0.005,
        "policy_delay": 2,
        "batch_size": 256,
        "buffer_capacity": 300000,
        "explore_sigma": 0.1,
        "target_sigma": 0.2,
        "target_clip": 0.5,
        "lr": 1.0e-4,
        "max_episodes": 2000,
        "couple_actor_targets": True,
    },
    "mode": {"algorithm": "td3", "dt_enabled": True, "train_layouts": True},
    "eval": {"n_episodes": 10, "policy": "actor", "save_trajectories": False},
    "sweep": {
        "axis": "data_volume",
        "values": [5.0e6, 1.0e7, 1.5e7],
        "seeds": 10,
        "variants": ["td3-dt"],
        "workers": 1,
        "train_in_place": True,
    },
    "output": {"snapshot_stride": 0, "checkpoint_name": "agent.ckpt"},
}

# Keys whose default is None and may hold any value.
_NULLABLE = {"world.obstacle_ratio"}


def default_config() -> Box:
    """Returns the built-in defaults (reference-scale scene) as a frozen Box."""
    return Box(copy.deepcopy(DEFAULTS), frozen_box=True)


def preset_path(name: str) -> str:
    """Returns the path of a preset YAML file shipped in ``skytwin/data``.

    Raises:
        ValueError: If the preset name is unknown.
    """
    if name not in PRESETS:
        raise ValueError(f"Unknown preset '{name}'; choose from {', '.join(PRESETS)}.")
    return os.path.join(os.path.dirname(__file__), "data", f"{name}.yaml")


def read_yaml(file_path: str) -> Dict:
    """Parses a YAML file into a dict; an empty file yields an empty dict.

    Raises:
        FileNotFoundError: If the file does not exist.
        ValueError: On a syntax error, with the line and column of the problem.
    """
    file_path = os.path.abspath(os.path.expanduser(file_path))
    if not os.path.exists(file_path):
        raise FileNotFoundError(f"{file_path} does not exist.")
    with open(file_path, "r", encoding="utf-8") as f:
        try:
            data = yaml.safe_load(f)
        except yaml.YAMLError as e:
            mark = getattr(e, "problem_mark", None)
            where = f":{mark.line + 1}:{mark.column + 1}" if mark is not None else ""
            problem = getattr(e, "problem", None) or str(e)
            raise ValueError(f"{file_path}{where}: {problem}") from e
    if data is None:
        return {}
    if not isinstance(data, dict):
        raise ValueError(f"{file_path}: the top level of a config must be a mapping.")
    return data


def _merge(base: Dict, update: Dict, prefix: Optional[str] = "") -> Dict:
    for key, value in update.items():
        path = f"{prefix}{key}"
        if key not in base:
            raise ValueError(f"{path}: unknown config key.")
        if isinstance(base[key], dict):
            if not isinstance(value, dict):
                raise ValueError(f"{path}: expected a section, got {type(value).__name__}.")
            _merge(base[key], value, prefix=f"{path}.")
        elif isinstance(value, dict) and path not in _NULLABLE:
            raise ValueError(f"{path}: expected a value, got a section.")
        else:
            base[key] = value
    return base


def _require(condition: bool, path: str, message: str):
    if not condition:
        raise ValueError(f"{path}: {message}")


def validate_config(cfg: Dict) -> Dict:
    """Checks the cross-field invariants of a resolved config.

    Raises:
        ValueError: Naming the dotted path of the first violated field.

    Returns:
        dict: The config, unchanged.
    """
    world, grid, timing = cfg["world"], cfg["grid"], cfg["timing"]
    kin, reward, agent, mode = cfg["kinematics"], cfg["reward"], cfg["agent"], cfg["mode"]

    _require(isinstance(cfg["seed"], int), "seed", "must be an integer.")
    _require(world["side_xy"] > 0, "world.side_xy", "must be positive.")
    _require(world["max_alt"] > 0, "world.max_alt", "must be positive.")
    _require(world["demand_bits"] > 0, "world.demand_bits", "must be positive.")
    lo, hi = world["building_size"]
    _require(0 < lo <= hi, "world.building_size", "must be an increasing pair of positive sizes.")
    _require(
        world["height_min"] <= world["height_max"] <= world["max_alt"],
        "world.height_max",
        "must lie between world.height_min and world.max_alt.",
    )
    _require(grid["m"] >= 1 and grid["n"] >= 1, "grid", "m and n must be at least 1.")

    _require(
        math.isclose(timing["delta1"], timing["delta2"]),
        "timing.delta2",
        "the BS-UAV and UAV-GU sub-slots must have equal duration (delta1 == delta2).",
    )
    for key in ("delta1", "delta2", "delta3"):
        _require(timing[key] > 0, f"timing.{key}", "must be positive.")
    _require(timing["max_slots"] >= 1, "timing.max_slots", "must be at least 1.")

    _require(kin["v_max"] > 0, "kinematics.v_max", "must be positive.")
    _require(
        0 < kin["max_flight_alt"] <= world["max_alt"],
        "kinematics.max_flight_alt",
        "must lie in (0, world.max_alt].",
    )
    _require(
        0 <= kin["min_alt"] < kin["max_flight_alt"],
        "kinematics.min_alt",
        "must lie in [0, kinematics.max_flight_alt).",
    )
    _require(0 <= kin["beta_sen"] < math.pi / 2, "kinematics.beta_sen", "must lie in [0, pi/2).")
    _require(0 <= kin["beta_com"] < math.pi / 2, "kinematics.beta_com", "must lie in [0, pi/2).")
    _require(
        kin["beta_com"] > kin["beta_sen"],
        "kinematics.beta_com",
        "must exceed kinematics.beta_sen.",
    )
    start = kin["start_position"]
    _require(len(start) == 3, "kinematics.start_position", "needs three coordinates.")
    _require(
        0 <= start[0] <= world["side_xy"]
        and 0 <= start[1] <= world["side_xy"]
        and kin["min_alt"] <= start[2] <= kin["max_flight_alt"],
        "kinematics.start_position",
        "must lie inside the flight envelope.",
    )

    _require(reward["w51"] > reward["w52"] > 0, "reward.w51", "must satisfy w51 > w52 > 0.")
    _require(0 < reward["J_vr"] <= 1, "reward.J_vr", "must lie in (0, 1].")
    for key in ("w1", "w2", "w3", "w4", "b4", "w6", "w7", "J_dr", "J_dp"):
        _require(reward[key] >= 0, f"reward.{key}", "must be non-negative.")

    _require(cfg["net"]["preset"] in PRESETS, "net.preset", f"must be one of {PRESETS}.")

    _require(0 < agent["gamma"] < 1, "agent.gamma", "must lie in (0, 1).")
    _require(0 < agent["tau"] < 1, "agent.tau", "must lie in (0, 1).")
    _require(agent["policy_delay"] >= 1, "agent.policy_delay", "must be at least 1.")
    _require(agent["batch_size"] >= 1, "agent.batch_size", "must be at least 1.")
    _require(
        agent["buffer_capacity"] >= agent["batch_size"],
        "agent.buffer_capacity",
        "must be at least agent.batch_size.",
    )
    for key in ("explore_sigma", "target_sigma", "target_clip"):
        _require(agent[key] >= 0, f"agent.{key}", "must be non-negative.")
    _require(agent["lr"] > 0, "agent.lr", "must be positive.")
    _require(agent["max_episodes"] >= 1, "agent.max_episodes", "must be at least 1.")

    _require(mode["algorithm"] in ("td3", "ddpg"), "mode.algorithm", "must be td3 or ddpg.")
    _require(cfg["eval"]["n_episodes"] >= 1, "eval.n_episodes", "must be at least 1.")
    _require(cfg["eval"]["policy"] in ("actor", "random"), "eval.policy", "must be actor or random.")

    sweep = cfg["sweep"]
    _require(sweep["axis"] in SWEEP_AXES, "sweep.axis", f"must be one of {SWEEP_AXES}.")
    _require(len(sweep["values"]) > 0, "sweep.values", "must not be empty.")
    _require(sweep["seeds"] >= 1, "sweep.seeds", "must be at least 1.")
    for variant in sweep["variants"]:
        _require(variant in VARIANTS, "sweep.variants", f"unknown variant '{variant}'.")
    _require(int(cfg["output"]["snapshot_stride"]) >= 0, "output.snapshot_stride", "must be non-negative.")
    return cfg


def apply_variant(cfg: Dict, variant: str) -> Dict:
    """Sets ``mode.algorithm`` and ``mode.dt_enabled`` for a baseline variant tag.

    Raises:
        ValueError: If the variant is unknown.
    """
    if variant not in VARIANTS:
        raise ValueError(f"Unknown variant '{variant}'; choose from {', '.join(VARIANTS)}.")
    cfg["mode"].update(VARIANTS[variant])
    return cfg


def variant_of(cfg) -> str:
    """Returns the variant tag (e.g. ``td3-dt``) of a config."""
    suffix = "dt" if cfg["mode"]["dt_enabled"] else "nodt"
    return f"{cfg['mode']['algorithm']}-{suffix}"


def load_config(
    file_path: Optional[str] = None,
    preset: Optional[str] = None,
    overrides: Optional[Dict] = None,
    variant: Optional[str] = None,
) -> Box:
    """Resolves a config: defaults, then preset, then the user file, then overrides.

    Args:
        file_path (str, optional): A user YAML file. An empty file yields the defaults.
        preset (str, optional): ``reference`` or ``desk``. Defaults to None.
        overrides (dict, optional): Nested values applied last, e.g. ``{"seed": 3}``.
        variant (str, optional): A variant tag applied after the overrides.

    Raises:
        FileNotFoundError: If a file does not exist.
        ValueError: On parse errors, unknown keys or invariant violations.

    Returns:
        box.Box: The frozen, validated config.
    """
    cfg = copy.deepcopy(DEFAULTS)
    if preset is not None:
        _merge(cfg, read_yaml(preset_path(preset)))
    if file_path is not None:
        _merge(cfg, read_yaml(file_path))
    if overrides:
        _merge(cfg, overrides)
    if variant is not None:
        apply_variant(cfg, variant)
    validate_config(cfg)
    return Box(cfg, frozen_box=True)


def with_updates(cfg, overrides: Dict) -> Box:
    """Returns a new validated config with nested overrides applied to ``cfg``."""
    data = cfg.to_dict() if hasattr(cfg, "to_dict") else copy.deepcopy(dict(cfg))
    _merge(data, overrides)
    validate_config(data)
    return Box(data, frozen_box=True)


def save_config(cfg, file_path: str) -> str:
    """Writes a resolved config to YAML (sorted keys) and returns the absolute path."""
    file_path = check_file_path(file_path)
    data = to_plain(cfg)
    with open(file_path, "w", encoding="utf-8") as f:
        yaml.safe_dump(data, f, sort_keys=True, default_flow_style=False)
    return file_path


def delta_s(cfg) -> float:
    """The slot duration ``delta1 + delta2 + delta3``."""
    timing = cfg["timing"]
    return float(timing["delta1"] + timing["delta2"] + timing["delta3"])


def to_plain(cfg: Union[Box, Dict]) -> Dict:
    """Returns a plain nested dict copy of a config; frozen sequences become lists."""

    def plain(value):
        if isinstance(value, dict):
            return {k: plain(v) for k, v in value.items()}
        if isinstance(value, (list, tuple)):
            return [plain(v) for v in value]
        return value

    return plain(cfg.to_dict() if hasattr(cfg, "to_dict") else copy.deepcopy(dict(cfg)))
