"""Module for the TD3 trajectory-design agent and its DDPG baseline.

The agent acts in a normalized action space ``[-1, 1]^3`` mapped affinely to the physical bounds
``[0, v_max] x [0, pi] x [0, 2*pi]``. TD3 mode keeps two critics with clipped double-Q targets,
target policy smoothing and delayed actor/target updates; DDPG mode keeps one critic, no smoothing
and updates the actor every critic step.
"""

import math
import os
import time
import warnings
import numpy as np
import pandas as pd
from dataclasses import dataclass
from typing import Dict, List, NamedTuple, Optional, Tuple

from .common import derive_seed, dict_to_json, json_to_dict, make_rng, sliding_stats
from .config import default_config
from .mdp import TRAIN, Simulation, StateTensor
from .neural import (
    ACTOR,
    CRITIC,
    ActorCriticNet,
    AdamState,
    NetSpec,
    NetworkParams,
    adam_step,
    load_params,
    save_params,
)
from .twin import FlightAction

# Spawn keys of the agent's random streams.
STREAM_NET_INIT = 21
STREAM_EXPLORE = 22
STREAM_TARGET_NOISE = 23
STREAM_REPLAY = 24
STREAM_EPISODE = 25

TD3 = "td3"
DDPG = "ddpg"

LOG_COLUMNS = [
    "episode",
    "reward",
    "served",
    "vetoes",
    "collisions",
    "t_f",
    "mission_time",
    "smoothed_reward",
]


class Transition(NamedTuple):
    s: np.ndarray
    a: np.ndarray
    r: float
    s_next: np.ndarray
    done: bool


class ReplayBuffer:
    """Fixed-capacity FIFO ring of transitions; states are stored as float32.

    Args:
        capacity (int): The maximum number of transitions.
        rng (numpy.random.Generator, optional): The sampling stream. Defaults to a seed-0 stream.
    """

    def __init__(self, capacity: int, rng: Optional[np.random.Generator] = None):
        if capacity < 1:
            raise ValueError("agent.buffer_capacity must be at least 1.")
        self.capacity = int(capacity)
        self.rng = rng if rng is not None else np.random.default_rng(0)
        self.size = 0
        self.cursor = 0
        self.states = None

    def __len__(self) -> int:
        return self.size

    def _allocate(self, state_shape: Tuple[int, ...], action_dim: int):
        nbytes = 2 * self.capacity * int(np.prod(state_shape)) * 4
        if nbytes > 4 * 1024**3:
            warnings.warn(
                f"The replay buffer needs {nbytes / 1024**3:.1f} GiB for {self.capacity} transitions "
                f"of shape {state_shape}; consider a smaller agent.buffer_capacity."
            )
        self.states = np.zeros((self.capacity,) + tuple(state_shape), dtype=np.float32)
        self.next_states = np.zeros_like(self.states)
        self.actions = np.zeros((self.capacity, action_dim), dtype=np.float64)
        self.rewards = np.zeros(self.capacity, dtype=np.float64)
        self.dones = np.zeros(self.capacity, dtype=bool)

    def push(self, s, a, r: float, s_next, done: bool):
        """Stores a transition, evicting the oldest one at capacity."""
        s = np.asarray(s)
        a = np.asarray(a, dtype=np.float64).reshape(-1)
        if np.any(np.abs(a) > 1.0):
            raise ValueError("Stored actions must lie in [-1, 1].")
        if self.states is None:
            self._allocate(s.shape, a.size)
        i = self.cursor
        self.states[i] = s
        self.actions[i] = a
        self.rewards[i] = r
        self.next_states[i] = s_next
        self.dones[i] = bool(done)
        self.cursor = (self.cursor + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def ordered(self, name: str) -> np.ndarray:
        """A stored field (``states``, ``actions``, ``rewards``, ...) oldest first."""
        values = getattr(self, name)
        if self.size < self.capacity:
            return values[: self.size]
        return np.concatenate([values[self.cursor :], values[: self.cursor]])

    def sample(self, batch_size: int) -> Dict[str, np.ndarray]:
        """Uniform sampling with replacement, returned as float64 arrays.

        Raises:
            RuntimeError: If fewer than ``batch_size`` transitions are stored.
        """
        if self.size < batch_size:
            raise RuntimeError(f"Cannot sample {batch_size} transitions from {self.size}.")
        idx = self.rng.integers(0, self.size, size=batch_size)
        return {
            "s": self.states[idx].astype(np.float64),
            "a": self.actions[idx].copy(),
            "r": self.rewards[idx].copy(),
            "s_next": self.next_states[idx].astype(np.float64),
            "done": self.dones[idx].copy(),
        }


@dataclass(frozen=True)
class Td3Hyper:
    """Learning hyperparameters (noise scales are in normalized action units)."""

    gamma: float = 0.99
    tau: float = 0.005
    policy_delay: int = 2
    batch_size: int = 256
    buffer_capacity: int = 300000
    explore_sigma: float = 0.1
    target_sigma: float = 0.2
    target_clip: float = 0.5
    lr: float = 1.0e-4
    max_episodes: int = 2000
    couple_actor_targets: bool = True
    algorithm: str = TD3

    def __post_init__(self):
        if not 0 < self.gamma < 1:
            raise ValueError("agent.gamma must lie in (0, 1).")
        if not 0 < self.tau < 1:
            raise ValueError("agent.tau must lie in (0, 1).")
        if self.policy_delay < 1:
            raise ValueError("agent.policy_delay must be at least 1.")
        if self.algorithm not in (TD3, DDPG):
            raise ValueError(f"mode.algorithm must be '{TD3}' or '{DDPG}'.")

    @classmethod
    def from_config(cls, cfg) -> "Td3Hyper":
        agent = cfg["agent"]
        names = [name for name in cls.__dataclass_fields__ if name != "algorithm"]
        values = {name: agent[name] for name in names if name in agent}
        return cls(algorithm=cfg["mode"]["algorithm"], **values)


def to_physical(a_norm, v_max: float) -> FlightAction:
    """Maps a normalized action in ``[-1, 1]^3`` onto ``[0, v_max] x [0, pi] x [0, 2*pi]``."""
    a = np.clip(np.asarray(a_norm, dtype=np.float64).reshape(-1), -1.0, 1.0)
    high = np.array([v_max, math.pi, 2.0 * math.pi])
    phys = (a + 1.0) / 2.0 * high
    return FlightAction(float(phys[0]), float(phys[1]), float(phys[2]))


def to_normalized(action: FlightAction, v_max: float) -> np.ndarray:
    """Inverse of :func:`to_physical`."""
    high = np.array([v_max, math.pi, 2.0 * math.pi])
    return np.clip(2.0 * np.asarray(action, dtype=np.float64) / high - 1.0, -1.0, 1.0)


def target_value(r, done, gamma: float, q1, q2=None):
    """Clipped double-Q target ``r + gamma * min(Q1', Q2')``, with no bootstrap on terminal steps.

    With ``q2`` None (single-critic mode) the target bootstraps from ``q1`` alone.
    """
    q = np.asarray(q1, dtype=np.float64) if q2 is None else np.minimum(q1, q2)
    return np.asarray(r, dtype=np.float64) + gamma * (1.0 - np.asarray(done, dtype=np.float64)) * q


def soft_update(target: NetworkParams, online: NetworkParams, tau: float) -> NetworkParams:
    """Blends the online parameters into the target in place: ``tau * online + (1 - tau) * target``."""
    for key, value in target.items():
        value *= 1.0 - tau
        value += tau * online[key]
    if isinstance(target, NetworkParams):
        target.bump()
    return target


def smoothed_target_action(
    net: ActorCriticNet,
    params: NetworkParams,
    s_next: np.ndarray,
    sigma: float,
    noise_clip: float,
    rng: np.random.Generator,
) -> np.ndarray:
    """Target policy smoothing: ``clip(pi'(s') + clip(eps, -c, c), -1, 1)`` with ``eps ~ N(0, sigma^2)``."""
    a, _ = net.forward(params, s_next)
    eps = np.clip(rng.normal(0.0, sigma, size=a.shape), -noise_clip, noise_clip) if sigma > 0 else 0.0
    return np.clip(a + eps, -1.0, 1.0)


class Td3Agent:
    """Online and target networks, optimizer states, replay buffer and update counters.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        seed (int, optional): The seed of the agent's streams. Defaults to ``cfg.seed``.
        spec (NetSpec, optional): An explicit architecture. Defaults to ``net.preset``.
    """

    def __init__(self, cfg=None, seed: Optional[int] = None, spec: Optional[NetSpec] = None):
        self.cfg = cfg if cfg is not None else default_config()
        self.hyper = Td3Hyper.from_config(self.cfg)
        self.v_max = float(self.cfg["kinematics"]["v_max"])
        seed = int(self.cfg["seed"]) if seed is None else int(seed)
        self.seed = seed
        spec = self.cfg["net"]["preset"] if spec is None else spec
        self.actor_net = ActorCriticNet(spec, ACTOR)
        self.critic_net = ActorCriticNet(spec, CRITIC)

        init_rng = make_rng(seed, STREAM_NET_INIT)
        self.actor = self.actor_net.init_params(init_rng)
        self.critic1 = self.critic_net.init_params(init_rng)
        self.critic2 = self.critic_net.init_params(init_rng) if self.is_td3 else None
        self.actor_target = self.actor.copy()
        self.critic1_target = self.critic1.copy()
        self.critic2_target = self.critic2.copy() if self.is_td3 else None

        lr = float(self.hyper.lr)
        self.actor_opt = AdamState.for_params(self.actor, lr)
        self.critic1_opt = AdamState.for_params(self.critic1, lr)
        self.critic2_opt = AdamState.for_params(self.critic2, lr) if self.is_td3 else None

        self.explore_rng = make_rng(seed, STREAM_EXPLORE)
        self.target_rng = make_rng(seed, STREAM_TARGET_NOISE)
        self.buffer = ReplayBuffer(self.hyper.buffer_capacity, make_rng(seed, STREAM_REPLAY))
        self.critic_updates = 0
        self.actor_updates = 0
        self.target_updates = 0
        self.smoothing_calls = 0
        self.episodes_done = 0

    @property
    def is_td3(self) -> bool:
        return self.hyper.algorithm == TD3

    @property
    def policy_delay(self) -> int:
        return self.hyper.policy_delay if self.is_td3 else 1

    def act(
        self,
        state,
        sigma: Optional[float] = None,
        deterministic: Optional[bool] = False,
    ) -> Tuple[FlightAction, np.ndarray]:
        """Selects an action: ``clip(pi(s) + eps, -1, 1)`` mapped to physical bounds.

        Args:
            state (StateTensor | numpy.ndarray): The state.
            sigma (float, optional): The exploration noise scale. Defaults to ``agent.explore_sigma``.
            deterministic (bool, optional): Skip the noise. Defaults to False.

        Returns:
            tuple: The physical :class:`FlightAction` and the normalized action.
        """
        x = state.stack() if isinstance(state, StateTensor) else np.asarray(state, dtype=np.float64)
        a, _ = self.actor_net.forward(self.actor, x)
        a = a[0]
        if not deterministic:
            sigma = self.hyper.explore_sigma if sigma is None else sigma
            a = a + self.explore_rng.normal(0.0, sigma, size=a.shape)
        a = np.clip(a, -1.0, 1.0)
        return to_physical(a, self.v_max), a

    def _check_batch(self, batch: Dict[str, np.ndarray]):
        if len(batch["r"]) < self.hyper.batch_size:
            raise RuntimeError(
                f"A batch of {len(batch['r'])} transitions is smaller than agent.batch_size = "
                f"{self.hyper.batch_size}."
            )

    def critic_targets(self, batch: Dict[str, np.ndarray]) -> np.ndarray:
        """The bootstrap targets ``y`` for a batch."""
        if self.is_td3:
            a_next = smoothed_target_action(
                self.actor_net,
                self.actor_target,
                batch["s_next"],
                self.hyper.target_sigma,
                self.hyper.target_clip,
                self.target_rng,
            )
            self.smoothing_calls += 1
        else:
            a_next = np.clip(self.actor_net.forward(self.actor_target, batch["s_next"])[0], -1.0, 1.0)
        q1, _ = self.critic_net.forward(self.critic1_target, batch["s_next"], a_next)
        q2 = None
        if self.is_td3:
            q2, _ = self.critic_net.forward(self.critic2_target, batch["s_next"], a_next)
            q2 = q2[:, 0]
        return target_value(batch["r"], batch["done"], self.hyper.gamma, q1[:, 0], q2)

    def critic_update(self, batch: Dict[str, np.ndarray], y: Optional[np.ndarray] = None) -> List[float]:
        """One Adam step per online critic on the mean squared TD error.

        Raises:
            RuntimeError: If the batch is smaller than ``agent.batch_size``.

        Returns:
            list: The loss of each critic before the step.
        """
        self._check_batch(batch)
        y = self.critic_targets(batch) if y is None else np.asarray(y, dtype=np.float64)
        losses = []
        pairs = [(self.critic1, self.critic1_opt)]
        if self.is_td3:
            pairs.append((self.critic2, self.critic2_opt))
        m = len(y)
        for params, opt in pairs:
            q, tape = self.critic_net.forward(params, batch["s"], batch["a"])
            residual = q[:, 0] - y
            losses.append(float(np.mean(residual**2)))
            grads, _ = self.critic_net.backward(params, tape, (2.0 / m * residual)[:, None])
            adam_step(params, grads, opt)
        self.critic_updates += 1
        return losses

    def actor_gradients(self, batch: Dict[str, np.ndarray]) -> Tuple[float, Dict[str, np.ndarray]]:
        """Gradients of the actor loss ``-mean(Q1(s, pi(s)))``; the critic is read, not changed.

        Returns:
            tuple: ``mean(Q1(s, pi(s)))`` and the loss gradient per actor parameter.
        """
        a, tape_a = self.actor_net.forward(self.actor, batch["s"])
        q, tape_q = self.critic_net.forward(self.critic1, batch["s"], a)
        m = len(q)
        _, (_, da) = self.critic_net.backward(self.critic1, tape_q, np.full((m, 1), -1.0 / m))
        grads, _ = self.actor_net.backward(self.actor, tape_a, da)
        return float(np.mean(q)), grads

    def actor_update(self, batch: Dict[str, np.ndarray]) -> float:
        """One Adam ascent step on ``mean(Q1(s, pi(s)))`` through the critic's action input.

        Returns:
            float: The objective before the step.
        """
        self._check_batch(batch)
        objective, grads = self.actor_gradients(batch)
        adam_step(self.actor, grads, self.actor_opt)
        self.actor_updates += 1
        return objective

    def soft_update_targets(self):
        tau = self.hyper.tau
        soft_update(self.actor_target, self.actor, tau)
        soft_update(self.critic1_target, self.critic1, tau)
        if self.is_td3:
            soft_update(self.critic2_target, self.critic2, tau)
        self.target_updates += 1

    def update(self) -> Optional[Dict[str, float]]:
        """One learning step from the buffer; a no-op until it holds ``batch_size`` transitions.

        Critics update every call. With coupled targets the actor and the targets update every
        ``policy_delay`` critic steps; decoupled, the actor updates every step and only the
        targets wait.
        """
        if len(self.buffer) < self.hyper.batch_size:
            return None
        batch = self.buffer.sample(self.hyper.batch_size)
        losses = self.critic_update(batch)
        stats = {"critic_loss": float(np.mean(losses))}
        due = self.critic_updates % self.policy_delay == 0
        if due or not self.hyper.couple_actor_targets:
            stats["actor_objective"] = self.actor_update(batch)
        if due:
            self.soft_update_targets()
        return stats

    def networks(self) -> Dict[str, NetworkParams]:
        nets = {
            "actor": self.actor,
            "actor_target": self.actor_target,
            "critic1": self.critic1,
            "critic1_target": self.critic1_target,
        }
        if self.is_td3:
            nets["critic2"] = self.critic2
            nets["critic2_target"] = self.critic2_target
        return nets

    def optimizers(self) -> Dict[str, AdamState]:
        opts = {"actor": self.actor_opt, "critic1": self.critic1_opt}
        if self.is_td3:
            opts["critic2"] = self.critic2_opt
        return opts


@dataclass
class TrainResult:
    agent: Td3Agent
    log: pd.DataFrame
    timing: pd.DataFrame


def episode_row(episode: int, sim: Simulation) -> Dict:
    log = sim.log
    return {
        "episode": episode,
        "reward": log.total_reward,
        "served": log.served_count,
        "vetoes": log.vetoes,
        "collisions": log.collisions,
        "t_f": log.t_f,
        "mission_time": log.mission_time,
    }


def save_ve_snapshot(cfg, sim: Simulation, out_dir: Optional[str], episode: int) -> Optional[str]:
    """Writes ``ve_<episode>.json`` from the episode's accumulated VE every ``output.snapshot_stride`` episodes.

    Returns:
        str: The snapshot path, or None when nothing was written.
    """
    stride = int(cfg["output"]["snapshot_stride"])
    if out_dir is None or stride <= 0 or episode % stride:
        return None
    return sim.ve.save_snapshot(os.path.join(out_dir, f"ve_{episode:03d}.json"))


def train(
    cfg=None,
    agent: Optional[Td3Agent] = None,
    sim: Optional[Simulation] = None,
    episodes: Optional[int] = None,
    verbose: Optional[bool] = False,
    snapshot_dir: Optional[str] = None,
) -> TrainResult:
    """Trains the agent: one fresh episode per seed, learning every slot once the buffer is full.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        agent (Td3Agent, optional): Continue training this agent. Defaults to a new one.
        sim (Simulation, optional): The simulator. Defaults to a new one.
        episodes (int, optional): Overrides ``agent.max_episodes``.
        verbose (bool, optional): Print a line per episode. Defaults to False.
        snapshot_dir (str, optional): Where VE snapshots go, see :func:`save_ve_snapshot`.
            Defaults to None (no snapshots).

    Returns:
        TrainResult: The agent, the per-episode log (see ``LOG_COLUMNS``) and wall-clock timings.
    """
    cfg = cfg if cfg is not None else default_config()
    agent = agent if agent is not None else Td3Agent(cfg)
    sim = sim if sim is not None else Simulation(cfg)
    episodes = int(cfg["agent"]["max_episodes"]) if episodes is None else int(episodes)
    dt_enabled = bool(cfg["mode"]["dt_enabled"])

    rows, timings = [], []
    first = agent.episodes_done
    for episode in range(first, first + episodes):
        started = time.perf_counter()
        state = sim.reset(derive_seed(agent.seed, STREAM_EPISODE, episode), TRAIN, dt_enabled)
        done = False
        while not done:
            action, a_norm = agent.act(state)
            next_state, reward, done, _ = sim.step(action)
            terminal = sim.log.t_f is not None
            agent.buffer.push(state.stack(), a_norm, reward, next_state.stack(), terminal)
            agent.update()
            state = next_state
        agent.episodes_done += 1
        save_ve_snapshot(cfg, sim, snapshot_dir, episode)
        rows.append(episode_row(episode, sim))
        timings.append({"episode": episode, "wall_s": time.perf_counter() - started})
        if verbose:
            row = rows[-1]
            print(
                f"Episode {episode + 1}/{first + episodes}: reward={row['reward']:.2f} "
                f"served={row['served']} vetoes={row['vetoes']} collisions={row['collisions']} "
                f"t_f={row['t_f']}"
            )

    log = pd.DataFrame(rows, columns=LOG_COLUMNS[:-1])
    log["smoothed_reward"] = sliding_stats(log["reward"].to_numpy(), window=20)[0] if len(log) else []
    return TrainResult(agent, log, pd.DataFrame(timings, columns=["episode", "wall_s"]))


def _rng_state(rng: np.random.Generator) -> Dict:
    return rng.bit_generator.state


def save_agent(agent: Td3Agent, file_path: str) -> str:
    """Writes every network and optimizer moment to one checkpoint plus a JSON sidecar.

    The sidecar (``<file_path>.json``) holds the update counters, the Adam step counts and the
    random-stream states needed to resume. The replay buffer is not saved.

    Returns:
        str: The absolute checkpoint path.
    """
    flat = NetworkParams()
    for name, params in agent.networks().items():
        for key, value in params.items():
            flat[f"{name}/{key}"] = value
    for name, opt in agent.optimizers().items():
        for key in opt.m:
            flat[f"adam/{name}/m/{key}"] = opt.m[key]
            flat[f"adam/{name}/v/{key}"] = opt.v[key]
    meta = {
        "preset": agent.cfg["net"]["preset"],
        "algorithm": agent.hyper.algorithm,
    }
    file_path = save_params(flat, file_path, meta=meta)
    sidecar = {
        "seed": agent.seed,
        "critic_updates": agent.critic_updates,
        "actor_updates": agent.actor_updates,
        "target_updates": agent.target_updates,
        "smoothing_calls": agent.smoothing_calls,
        "episodes_done": agent.episodes_done,
        "adam_steps": {name: opt.step for name, opt in agent.optimizers().items()},
        "rng": {
            "explore": _rng_state(agent.explore_rng),
            "target": _rng_state(agent.target_rng),
            "replay": _rng_state(agent.buffer.rng),
        },
    }
    dict_to_json(sidecar, file_path + ".json")
    return file_path


def load_agent(file_path: str, cfg=None) -> Td3Agent:
    """Rebuilds an agent from :func:`save_agent` output.

    With the sidecar present the agent gets the saved seed, counters, Adam steps and stream
    states, so training can continue where it stopped; the replay buffer starts empty.

    Raises:
        FileNotFoundError: If the checkpoint does not exist.
        RuntimeError: If the checkpoint does not match the config's network preset or algorithm.
    """
    cfg = cfg if cfg is not None else default_config()
    sidecar_path = file_path + ".json"
    sidecar = json_to_dict(sidecar_path) if os.path.exists(sidecar_path) else None
    agent = Td3Agent(cfg, seed=None if sidecar is None else sidecar["seed"])
    template = NetworkParams()
    for name, params in agent.networks().items():
        for key, value in params.items():
            template[f"{name}/{key}"] = value
    for name, opt in agent.optimizers().items():
        for key in opt.m:
            template[f"adam/{name}/m/{key}"] = opt.m[key]
            template[f"adam/{name}/v/{key}"] = opt.v[key]
    flat, meta = load_params(file_path, template=template)
    if meta.get("algorithm") != agent.hyper.algorithm:
        raise RuntimeError(
            f"Incompatible checkpoint {file_path}: trained with {meta.get('algorithm')}, "
            f"config uses {agent.hyper.algorithm}."
        )

    for name, params in agent.networks().items():
        for key in params:
            params[key][...] = flat[f"{name}/{key}"]
        params.bump()
    for name, opt in agent.optimizers().items():
        for key in opt.m:
            opt.m[key][...] = flat[f"adam/{name}/m/{key}"]
            opt.v[key][...] = flat[f"adam/{name}/v/{key}"]

    if sidecar is None:
        return agent
    agent.critic_updates = int(sidecar["critic_updates"])
    agent.actor_updates = int(sidecar["actor_updates"])
    agent.target_updates = int(sidecar.get("target_updates", 0))
    agent.smoothing_calls = int(sidecar.get("smoothing_calls", 0))
    agent.episodes_done = int(sidecar.get("episodes_done", 0))
    for name, opt in agent.optimizers().items():
        opt.step = int(sidecar["adam_steps"].get(name, 0))
    agent.explore_rng.bit_generator.state = sidecar["rng"]["explore"]
    agent.target_rng.bit_generator.state = sidecar["rng"]["target"]
    agent.buffer.rng.bit_generator.state = sidecar["rng"]["replay"]
    return agent
