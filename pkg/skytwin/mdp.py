"""Module for the trajectory-design decision process.

Builds the two state matrices (the APF/communication matrix S1 and the obstacle/sensing matrix
S2), selects the GU to serve each slot, computes the shaped multi-component reward and runs the
slot loop tying the world, channel, twin and scheduler together in :class:`Simulation`.
"""

import math
import geojson
import numpy as np
import pandas as pd
from dataclasses import asdict, dataclass, field, replace
from typing import Callable, Dict, List, NamedTuple, Optional, Sequence, Tuple, Union

from .channel import ChannelParams, build_link, effective_rate, slot_data
from .common import Vec3, check_file_path, distance, make_rng
from .config import default_config, delta_s as slot_duration
from .scheduler import AnnealParams, anneal
from .twin import (
    CellState,
    FlightAction,
    VirtualEnv,
    deployment_map,
    predict_los,
    predict_next_position,
    safety_gate,
    spawn_training_ve,
)
from .world import (
    Bounds,
    EnvironmentMap,
    GridSpec,
    GroundUser,
    coverage_radius,
    environment_to_geojson,
    line_of_sight,
    path_collides,
    sense,
)

# Spawn keys of the per-episode random streams.
STREAM_SCHEDULER = 12
STREAM_FADING = 13

TRAIN = "train"
DEPLOY = "deploy"


class StateTensor(NamedTuple):
    """The state ``[S1, S2]``: two (m, n) matrices."""

    s1: np.ndarray
    s2: np.ndarray

    def stack(self) -> np.ndarray:
        """Returns the (2, m, n) float64 array fed to the networks."""
        return np.stack([self.s1, self.s2]).astype(np.float64)


@dataclass(frozen=True)
class RewardWeights:
    """Reward coefficients and thresholds; ``mu_top`` is the attractive strength of the first GU."""

    w1: float = 100.0
    w2: float = 3.0
    J_vr: float = 0.6
    w3: float = 0.01
    w4: float = 2.0
    b4: float = 1.0
    w51: float = 3.0
    w52: float = 1.0
    J_dr: float = 20.0
    w6: float = 0.5
    w7: float = 500.0
    J_dp: float = 50.0
    mu_top: float = 10.0

    def __post_init__(self):
        if not self.w51 > self.w52 > 0:
            raise ValueError("reward.w51: the distance weights must satisfy w51 > w52 > 0.")
        if not 0 < self.J_vr <= 1:
            raise ValueError("reward.J_vr must lie in (0, 1].")

    @classmethod
    def from_config(cls, cfg, mu_top: float) -> "RewardWeights":
        names = [f.name for f in cls.__dataclass_fields__.values() if f.name != "mu_top"]
        values = {name: float(cfg[name]) for name in names if name in cfg}
        return cls(mu_top=float(mu_top), **values)


@dataclass
class RewardContext:
    """Everything the reward needs about one slot.

    ``delta_d`` is the decrease of the distance to the target GU (positive when approaching), or
    None when every GU is served; ``rate_bps`` is the UAV-GU rate of the served link.
    """

    t: int
    v: float
    v_max: float
    vetoed: bool = False
    collided: bool = False
    serving: bool = False
    rate_bps: float = 0.0
    delta_d: Optional[float] = None
    delta_S: int = 0
    completed: bool = False
    t_f: Optional[int] = None


def shaped_reward(r_s: float) -> float:
    """The squashing ``2 / (1 + exp(-r)) - 1``, computed as ``tanh(r / 2)`` to avoid overflow."""
    return math.tanh(r_s / 2.0)


def compute_reward(ctx: RewardContext, weights: RewardWeights) -> Tuple[float, Dict[str, float]]:
    """Computes the slot reward and its components.

    Args:
        ctx (RewardContext): The slot context.
        weights (RewardWeights): The coefficients.

    Returns:
        tuple: The total reward and a dict of the components ``r1`` .. ``r7``.
    """
    r1 = -weights.w1 if (ctx.vetoed or ctx.collided) else 0.0
    r2 = -weights.w2 if ctx.v < weights.J_vr * ctx.v_max else 0.0
    r3 = -weights.w3 * ctx.t
    r4 = weights.w4 * ctx.rate_bps / 1.0e6 + weights.b4 if ctx.serving else 0.0

    r5 = 0.0
    if ctx.delta_d is not None:
        dd = ctx.delta_d
        if dd > weights.J_dr:
            r5 = weights.w51 * abs(dd)
        elif dd >= -weights.J_dr:
            r5 = weights.w52 * abs(dd)
        else:
            r5 = -weights.w51 * abs(dd)

    r6 = weights.w6 * ctx.delta_S if ctx.delta_S > 0 else -weights.w6
    r7 = weights.w7 - ctx.t_f if (ctx.completed and ctx.t_f == ctx.t) else 0.0

    components = {"r1": r1, "r2": r2, "r3": r3, "r4": r4, "r5": r5, "r6": r6, "r7": r7}
    total = shaped_reward(r1 + r2 + r3 + r4 + r5 + r6) + r7
    return total, components


def priorities(schedule: Sequence[int]) -> np.ndarray:
    """Attractive strengths by schedule rank: ``K, K-1, ..., 1`` indexed by user id."""
    k = len(schedule)
    mu = np.zeros(k, dtype=np.float64)
    for rank, user in enumerate(schedule):
        mu[user] = k - rank
    return mu


def build_s1(
    users,
    schedule: Sequence[int],
    served: Sequence[bool],
    uav: Sequence[float],
    grid: GridSpec,
    weights: RewardWeights,
    beta_com: float,
    max_alt: float,
    normalize: Optional[bool] = True,
) -> np.ndarray:
    """The APF matrix with the UAV's communication disc.

    Each unserved GU adds ``mu_k * (d - J_dp)`` at cell centers within ``J_dp`` (ground distance);
    contributions are summed. The disc of radius ``z / cos(beta_com)`` then overwrites the covered
    cells with the altitude ``z``.

    Args:
        users (array-like): (K, 3) GU positions.
        schedule (list): The user schedule.
        served (list): Per-GU served flags.
        uav (Vec3): The UAV position.
        grid (GridSpec): The grid.
        weights (RewardWeights): Supplies ``J_dp`` and ``mu_top``.
        beta_com (float): The communication beamwidth.
        max_alt (float): The altitude scale for normalization.
        normalize (bool, optional): Divide potentials by ``mu_top * J_dp`` and the disc value by
            ``max_alt``. Defaults to True.

    Returns:
        numpy.ndarray: The (m, n) matrix.
    """
    users = np.asarray(users, dtype=np.float64).reshape(-1, 3)
    xs, ys = grid.centers()
    s1 = np.zeros(grid.shape, dtype=np.float64)
    mu = priorities(schedule)
    for k in range(len(users)):
        if served[k]:
            continue
        d = np.hypot(xs - users[k, 0], ys - users[k, 1])
        s1 += np.where(d <= weights.J_dp, mu[k] * (d - weights.J_dp), 0.0)

    z = float(uav[2])
    if normalize:
        scale = weights.mu_top * weights.J_dp
        if scale > 0:
            s1 /= scale
    disc = grid.disc_mask(uav[0], uav[1], coverage_radius(z, beta_com))
    s1[disc] = z / max_alt if normalize else z
    return s1


def build_s2(
    ve: VirtualEnv,
    uav: Sequence[float],
    grid: GridSpec,
    beta_sen: float,
    max_alt: float,
    normalize: Optional[bool] = True,
) -> np.ndarray:
    """The obstacle matrix: sensed heights of Occupied cells, overwritten by the sensing disc."""
    s2 = np.where(ve.state == CellState.OCCUPIED, ve.heights, 0.0).astype(np.float64)
    z = float(uav[2])
    disc = grid.disc_mask(uav[0], uav[1], coverage_radius(z, beta_sen))
    s2[disc] = z
    return s2 / max_alt if normalize else s2


def select_service_target(
    schedule: Sequence[int],
    users,
    served: Sequence[bool],
    uav: Sequence[float],
    d_com: float,
    los: Optional[Callable[[int], int]] = None,
) -> Optional[int]:
    """Chooses the GU to serve this slot.

    The first unserved GU in schedule order is chosen when it lies within the 3-D range ``d_com``;
    otherwise the nearest unserved GU in range. Among equidistant candidates a predicted-LoS link
    wins, then the earlier schedule position.

    Args:
        schedule (list): The user schedule.
        users (array-like): (K, 3) GU positions.
        served (list): Per-GU served flags.
        uav (Vec3): The UAV position.
        d_com (float): The communication range.
        los (callable, optional): Maps a user id to a predicted LoS flag. Defaults to None.

    Returns:
        int | None: The user id, or None when no unserved GU is in range.
    """
    users = np.asarray(users, dtype=np.float64).reshape(-1, 3)
    pending = [k for k in schedule if not served[k]]
    if not pending:
        return None
    first = pending[0]
    if distance(uav, users[first]) <= d_com:
        return first

    candidates = []
    for rank, k in enumerate(pending):
        d = distance(uav, users[k])
        if d <= d_com:
            blocked = 0 if los is None else 1 - int(los(k))
            candidates.append((d, blocked, rank, k))
    if not candidates:
        return None
    return min(candidates)[3]


@dataclass
class SlotRecord:
    """One slot of an episode."""

    t: int
    x: float
    y: float
    z: float
    v: float
    psi_ver: float
    psi_hor: float
    reward: float
    target: int
    vetoed: bool
    collided: bool
    delivered_bits: float
    delta_S: int


@dataclass
class EpisodeLog:
    """Per-slot records and episode counters.

    ``t_k`` holds the completion slot of each served GU (None otherwise); ``vetoes`` counts
    twin-cancelled actions and ``collisions`` counts actual ground-truth intersections.
    """

    start: Vec3
    schedule: List[int]
    delta_s: float
    records: List[SlotRecord] = field(default_factory=list)
    t_k: List[Optional[int]] = field(default_factory=list)
    t_f: Optional[int] = None
    vetoes: int = 0
    collisions: int = 0
    coverage_cells: int = 0
    total_reward: float = 0.0

    @property
    def served_count(self) -> int:
        return sum(t is not None for t in self.t_k)

    @property
    def slots(self) -> int:
        return len(self.records)

    @property
    def mission_time(self) -> Optional[float]:
        """The completion time ``t_f * delta_s`` in seconds, or None if incomplete."""
        return None if self.t_f is None else self.t_f * self.delta_s

    @property
    def objective(self) -> Optional[float]:
        """The sum of per-GU completion times ``t_k * delta_s``, or None if any GU is unserved."""
        if any(t is None for t in self.t_k):
            return None
        return float(sum(self.t_k)) * self.delta_s

    def positions(self) -> np.ndarray:
        """The (slots + 1, 3) path, start position included."""
        path = [tuple(self.start)] + [(r.x, r.y, r.z) for r in self.records]
        return np.array(path, dtype=np.float64)

    def to_dataframe(self) -> pd.DataFrame:
        """One row per slot."""
        columns = list(SlotRecord.__dataclass_fields__)
        return pd.DataFrame([asdict(r) for r in self.records], columns=columns)

    def to_geojson(self, env: Optional[EnvironmentMap] = None) -> geojson.FeatureCollection:
        """Trajectory export: the 3-D path as a LineString plus, if given, the environment.

        GU features carry their schedule rank as ``order`` (1-based).
        """
        features = []
        if env is not None:
            rank = {k: i + 1 for i, k in enumerate(self.schedule)}
            for feature in environment_to_geojson(env)["features"]:
                if feature["properties"]["kind"] == "user":
                    feature["properties"]["order"] = rank.get(feature["properties"]["id"])
                features.append(feature)
        path = [tuple(float(v) for v in p) for p in self.positions()]
        features.append(
            geojson.Feature(
                geometry=geojson.LineString(path),
                properties={
                    "kind": "path",
                    "t_f": self.t_f,
                    "t_k": self.t_k,
                    "schedule": self.schedule,
                    "vetoes": self.vetoes,
                    "collisions": self.collisions,
                    "delta_s": self.delta_s,
                },
            )
        )
        extra = {}
        if env is not None:
            extra = {"side_xy": env.side_xy, "max_alt": env.max_alt}
        return geojson.FeatureCollection(features, **extra)

    def save_trajectory(self, file_path: str, env: Optional[EnvironmentMap] = None) -> str:
        """Writes :meth:`to_geojson` to a file and returns its absolute path."""
        file_path = check_file_path(file_path)
        with open(file_path, "w", encoding="utf-8") as f:
            f.write(geojson.dumps(self.to_geojson(env), sort_keys=True, indent=2))
            f.write("\n")
        return file_path


def clip_action(a: Union[FlightAction, Sequence[float]], v_max: float) -> FlightAction:
    """Clips a physical action to ``[0, v_max] x [0, pi] x [0, 2*pi]``."""
    v, psi_ver, psi_hor = (float(x) for x in a)
    return FlightAction(
        min(max(v, 0.0), v_max),
        min(max(psi_ver, 0.0), math.pi),
        min(max(psi_hor, 0.0), 2.0 * math.pi),
    )


class Simulation:
    """A single-episode UAV service simulator.

    Args:
        cfg (box.Box, optional): A resolved config. Defaults to the reference-scale defaults.
        env_map (EnvironmentMap, optional): The deployment map. Defaults to the layout generated
            from ``cfg.seed``.
    """

    def __init__(self, cfg=None, env_map: Optional[EnvironmentMap] = None):
        self.cfg = cfg if cfg is not None else default_config()
        kin, world = self.cfg["kinematics"], self.cfg["world"]
        self.grid = GridSpec(float(world["side_xy"]), int(self.cfg["grid"]["m"]), int(self.cfg["grid"]["n"]))
        self.bounds = Bounds(float(world["side_xy"]), float(kin["max_flight_alt"]), float(kin["min_alt"]))
        self.max_alt = float(world["max_alt"])
        self.v_max = float(kin["v_max"])
        self.beta_sen = float(kin["beta_sen"])
        self.beta_com = float(kin["beta_com"])
        self.start = Vec3.from_array(kin["start_position"])
        self.delta_s = slot_duration(self.cfg)
        self.delta2 = float(self.cfg["timing"]["delta2"])
        self.max_slots = int(self.cfg["timing"]["max_slots"])
        self.channel = ChannelParams.from_config(self.cfg["channel"])
        self.anneal_params = AnnealParams.from_config(self.cfg["anneal"])
        self.normalize = bool(self.cfg["reward"]["normalize_state"])
        self._deploy_map = env_map
        self.env: Optional[EnvironmentMap] = None
        self.done = True

    @property
    def deploy_map(self) -> EnvironmentMap:
        if self._deploy_map is None:
            self._deploy_map = deployment_map(self.cfg)
        return self._deploy_map

    def reset(
        self,
        seed: Optional[int] = None,
        mode: Optional[str] = DEPLOY,
        dt_enabled: Optional[bool] = None,
        env_map: Optional[EnvironmentMap] = None,
    ) -> StateTensor:
        """Starts a new episode.

        Training with the twin enabled draws a fresh layout per seed; training without the twin
        and deployment fly the deployment map. The schedule is annealed once per episode.

        Args:
            seed (int, optional): The episode seed. Defaults to ``cfg.seed``.
            mode (str, optional): ``train`` or ``deploy``. Defaults to ``deploy``.
            dt_enabled (bool, optional): Use the accumulated twin. Defaults to ``cfg.mode.dt_enabled``.
            env_map (EnvironmentMap, optional): Fly this map instead.

        Returns:
            StateTensor: The initial state.
        """
        if mode not in (TRAIN, DEPLOY):
            raise ValueError(f"mode must be '{TRAIN}' or '{DEPLOY}', got '{mode}'.")
        seed = int(self.cfg["seed"]) if seed is None else int(seed)
        self.dt_enabled = bool(self.cfg["mode"]["dt_enabled"]) if dt_enabled is None else bool(dt_enabled)
        self.mode = mode

        if env_map is not None:
            self.env = env_map
        elif mode == TRAIN and self.dt_enabled and self.cfg["mode"]["train_layouts"]:
            self.env = spawn_training_ve(self.cfg, seed)
        else:
            self.env = self.deploy_map

        self.users = self.env.user_positions()
        self.demand = np.array([u.demand_bits for u in self.env.users], dtype=np.float64)
        k = len(self.users)
        self.weights = RewardWeights.from_config(self.cfg["reward"], mu_top=max(k, 1))
        self.fading_rng = make_rng(seed, STREAM_FADING)
        if k:
            self.schedule = anneal(
                self.start, self.users, self.anneal_params, make_rng(seed, STREAM_SCHEDULER)
            )
        else:
            self.schedule = []

        self.position = self.start
        self.t = 0
        self.done = False
        self.delivered = np.zeros(k, dtype=np.float64)
        self.ve = VirtualEnv.empty(self.grid, self.max_alt)
        report = sense(self.env, self.position, self.beta_sen, self.grid, slot=0)
        self.ve.update(report, self.position, self.beta_sen)
        self.current_ve = VirtualEnv.from_report(
            self.grid, self.max_alt, report, self.position, self.beta_sen
        )
        self.visited = self.grid.disc_mask(
            self.position.x, self.position.y, coverage_radius(self.position.z, self.beta_com)
        )
        self.log = EpisodeLog(
            start=self.start,
            schedule=list(self.schedule),
            delta_s=self.delta_s,
            t_k=[None] * k,
            coverage_cells=int(self.visited.sum()),
        )
        return self.observe()

    @property
    def served(self) -> np.ndarray:
        return self.delivered >= self.demand

    def user_states(self) -> Tuple[GroundUser, ...]:
        """The episode's users with their delivered bits and first-served slot filled in."""
        return tuple(
            replace(u, delivered_bits=float(self.delivered[k]), first_served_slot=self.log.t_k[k])
            for k, u in enumerate(self.env.users)
        )

    @property
    def knowledge(self) -> VirtualEnv:
        """The VE the decisions are based on: accumulated with the twin, current-slot otherwise."""
        return self.ve if self.dt_enabled else self.current_ve

    def observe(self) -> StateTensor:
        """The state for the current position and knowledge."""
        s1 = build_s1(
            self.users,
            self.schedule,
            self.served,
            self.position,
            self.grid,
            self.weights,
            self.beta_com,
            self.max_alt,
            self.normalize,
        )
        s2 = build_s2(self.knowledge, self.position, self.grid, self.beta_sen, self.max_alt, self.normalize)
        return StateTensor(s1, s2)

    def _first_unserved(self) -> Optional[int]:
        served = self.served
        for k in self.schedule:
            if not served[k]:
                return k
        return None

    def step(self, action: Union[FlightAction, Sequence[float]]) -> Tuple[StateTensor, float, bool, Dict]:
        """Advances one slot.

        Order: gate the action against the twin (a veto holds the UAV); cross-check the move
        against the ground truth (an actual collision also holds it); move; sense and update the
        VE; select and serve a GU; count newly covered cells; compute the reward; test for
        completion or the slot limit.

        Raises:
            RuntimeError: If the episode is already finished.

        Returns:
            tuple: The next state, the reward, the done flag and an info dict.
        """
        if self.done:
            raise RuntimeError("step() called on a finished episode; call reset() first.")
        self.t += 1
        t = self.t
        a = clip_action(action, self.v_max)
        origin = self.position
        target = self._first_unserved()
        d_before = distance(origin, self.users[target]) if target is not None else None

        verdict = safety_gate(self.knowledge, None, origin, a, self.bounds, self.delta_s)
        vetoed = not verdict.safe
        collided = False
        executed_v = 0.0
        if not vetoed:
            nxt = predict_next_position(origin, a, self.delta_s)
            if path_collides(self.env, origin, nxt):
                collided = True
            else:
                self.position = nxt
                executed_v = a.v
        self.log.vetoes += int(vetoed)
        self.log.collisions += int(collided)

        report = sense(self.env, self.position, self.beta_sen, self.grid, slot=t)
        self.ve.update(report, self.position, self.beta_sen)
        self.current_ve = VirtualEnv.from_report(
            self.grid, self.max_alt, report, self.position, self.beta_sen
        )

        d_com = coverage_radius(self.position.z, self.beta_com)
        served_before = self.served
        chosen = select_service_target(
            self.schedule,
            self.users,
            served_before,
            self.position,
            d_com,
            los=lambda k: predict_los(self.knowledge, self.position, self.users[k]),
        )
        rate_uk = 0.0
        if chosen is not None:
            bs_link = build_link(
                max(distance(self.env.bs_position, self.position), 1e-9), 1, self.channel.p_b, self.channel, self.fading_rng
            )
            los = line_of_sight(self.env, self.position, self.users[chosen])
            gu_link = build_link(
                max(distance(self.position, self.users[chosen]), 1e-9),
                los,
                self.channel.p_u,
                self.channel,
                self.fading_rng,
            )
            rate_uk = gu_link.rate
            bits = slot_data(effective_rate(bs_link.rate, gu_link.rate), self.delta2)
            self.delivered[chosen] += bits
            if self.delivered[chosen] >= self.demand[chosen] and self.log.t_k[chosen] is None:
                self.log.t_k[chosen] = t
        # Users with zero demand count as served from the first slot.
        for k, ok in enumerate(self.served):
            if ok and self.log.t_k[k] is None:
                self.log.t_k[k] = t

        disc = self.grid.disc_mask(self.position.x, self.position.y, d_com)
        new_cells = disc & ~self.visited
        delta_S = int(new_cells.sum())
        self.visited |= disc
        self.log.coverage_cells += delta_S

        completed = bool(np.all(self.served))
        if completed:
            self.log.t_f = t
        d_after = distance(self.position, self.users[target]) if target is not None else None
        ctx = RewardContext(
            t=t,
            v=executed_v,
            v_max=self.v_max,
            vetoed=vetoed,
            collided=collided,
            serving=chosen is not None,
            rate_bps=rate_uk,
            delta_d=None if target is None else d_before - d_after,
            delta_S=delta_S,
            completed=completed,
            t_f=self.log.t_f,
        )
        reward, components = compute_reward(ctx, self.weights)
        self.done = completed or t >= self.max_slots
        self.log.total_reward += reward
        self.log.records.append(
            SlotRecord(
                t=t,
                x=self.position.x,
                y=self.position.y,
                z=self.position.z,
                v=a.v,
                psi_ver=a.psi_ver,
                psi_hor=a.psi_hor,
                reward=reward,
                target=-1 if chosen is None else int(chosen),
                vetoed=vetoed,
                collided=collided,
                delivered_bits=float(self.delivered.sum()),
                delta_S=delta_S,
            )
        )
        info = {
            "t": t,
            "vetoed": vetoed,
            "reason": verdict.reason,
            "collided": collided,
            "target": chosen,
            "served": int(np.sum(self.served)),
            "position": self.position,
            "components": components,
            "schedule": list(self.schedule),
        }
        return self.observe(), reward, self.done, info

