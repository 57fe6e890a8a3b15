"""Module for the digital-twin layer.

The twin keeps a virtual environment (VE): an occupancy grid of sensed building heights built up
from the UAV's sensing reports. It predicts the next UAV position, vetoes actions whose swept path
would hit a sensed building or leave the flight envelope, predicts LoS for planning and spawns
fresh training layouts.
"""

import enum
import math
import warnings
import numpy as np
from typing import Dict, NamedTuple, Optional, Sequence

from .common import Vec3, dict_to_json
from .world import (
    Bounds,
    EnvironmentMap,
    GridSpec,
    SensingReport,
    coverage_radius,
    generate_environment,
    path_collides,
    segment_intersects_boxes,
)


class CellState(enum.IntEnum):
    UNKNOWN = 0
    FREE_OBSERVED = 1
    OCCUPIED = 2


class FlightAction(NamedTuple):
    """Velocity (m/s), vertical angle from the z-axis and horizontal angle from the x-axis."""

    v: float
    psi_ver: float
    psi_hor: float


class SafetyVerdict(NamedTuple):
    safe: bool
    reason: str = "none"


SAFE = SafetyVerdict(True, "none")


class VirtualEnv:
    """Occupancy grid of the twin; a single writer mutates it, readers query between updates.

    Attributes:
        grid (GridSpec): The discretization shared with the state tensor.
        state (numpy.ndarray): (m, n) int8 array of :class:`CellState` values.
        heights (numpy.ndarray): (m, n) sensed heights, 0 where not occupied.
        max_alt (float): The altitude ceiling; occupied heights are clipped to ``(0, max_alt]``.
        revision (int): Increases on every update.
    """

    def __init__(self, grid: GridSpec, max_alt: float):
        self.grid = grid
        self.max_alt = float(max_alt)
        self.state = np.full(grid.shape, CellState.UNKNOWN, dtype=np.int8)
        self.heights = np.zeros(grid.shape, dtype=np.float64)
        self.revision = 0

    @property
    def cell_size(self) -> float:
        return self.grid.cell_size

    @classmethod
    def empty(cls, grid: GridSpec, max_alt: float) -> "VirtualEnv":
        """An all-Unknown VE."""
        return cls(grid, max_alt)

    @classmethod
    def from_report(
        cls,
        grid: GridSpec,
        max_alt: float,
        report: SensingReport,
        uav: Sequence[float],
        beta_sen: float,
    ) -> "VirtualEnv":
        """A VE holding only one slot's sensing (no accumulated knowledge)."""
        return cls(grid, max_alt).update(report, uav, beta_sen)

    def copy(self) -> "VirtualEnv":
        other = VirtualEnv(self.grid, self.max_alt)
        other.state = self.state.copy()
        other.heights = self.heights.copy()
        other.revision = self.revision
        return other

    def update(self, report: SensingReport, uav: Sequence[float], beta_sen: float) -> "VirtualEnv":
        """Merges a sensing report in place and returns the VE.

        Reported cells become Occupied with their sensed height; the rest of the sensing disc becomes
        FreeObserved unless already Occupied; every other cell is left unchanged.

        Raises:
            IndexError: If a reported cell lies outside the grid.
        """
        m, n = self.grid.shape
        disc = self.grid.disc_mask(uav[0], uav[1], coverage_radius(uav[2], beta_sen))
        free = disc & (self.state != CellState.OCCUPIED)
        self.state[free] = CellState.FREE_OBSERVED
        for i, j, h in report.cells:
            if not (0 <= i < m and 0 <= j < n):
                raise IndexError(f"Sensed cell ({i}, {j}) is outside the {m}x{n} grid.")
            if h <= 0:
                continue
            self.state[i, j] = CellState.OCCUPIED
            self.heights[i, j] = min(float(h), self.max_alt)
        self.revision += 1
        return self

    def occupied_height(self, x: float, y: float) -> float:
        """Sensed height at (x, y), or 0 when the cell is not Occupied."""
        i, j = self.grid.cell_of(x, y)
        return float(self.heights[i, j]) if self.state[i, j] == CellState.OCCUPIED else 0.0

    def blocks(self, p0: Sequence[float], p1: Sequence[float], margin: Optional[float] = None) -> bool:
        """Whether the segment p0-p1 passes through an Occupied column below its sensed height.

        Each Occupied cell is the closed box ``cell x [0, height]``, widened horizontally by
        ``margin`` (half a cell by default): a cell is Occupied when its center lies in a
        footprint, so the footprint edge can sit up to half a cell past the cell. A column whose
        widened box already contains ``p0`` is tested unwidened, so a UAV inside a margin can
        still move away. The whole swept segment is tested, so a long step cannot tunnel.
        """
        rows, cols = np.nonzero(self.state == CellState.OCCUPIED)
        if rows.size == 0:
            return False
        dx, dy = self.grid.dx, self.grid.dy
        if margin is None:
            margin = 0.5 * min(dx, dy)
        lows = np.stack([rows * dx, cols * dy, np.zeros(rows.size)], axis=1)
        highs = np.stack([(rows + 1) * dx, (cols + 1) * dy, self.heights[rows, cols]], axis=1)
        pad = np.array([margin, margin, 0.0])
        wide_lows, wide_highs = lows - pad, highs + pad
        start = np.asarray(p0, dtype=float)
        inside = np.all((start >= wide_lows) & (start <= wide_highs), axis=1)
        lows = np.where(inside[:, None], lows, wide_lows)
        highs = np.where(inside[:, None], highs, wide_highs)
        return bool(np.any(segment_intersects_boxes(p0, p1, lows, highs)))

    def to_dict(self) -> Dict:
        """JSON-ready snapshot: grid geometry, revision, cell states and heights."""
        return {
            "side_xy": self.grid.side_xy,
            "m": self.grid.m,
            "n": self.grid.n,
            "revision": self.revision,
            "state": self.state.astype(int).tolist(),
            "heights": np.round(self.heights, 6).tolist(),
        }

    def save_snapshot(self, file_path: str) -> str:
        """Writes :meth:`to_dict` to a JSON file."""
        return dict_to_json(self.to_dict(), file_path)


def update_ve(ve: VirtualEnv, report: SensingReport, uav: Sequence[float], beta_sen: float) -> VirtualEnv:
    """Refines the VE with one sensing report; see :meth:`VirtualEnv.update`."""
    return ve.update(report, uav, beta_sen)


def predict_next_position(pos: Sequence[float], a: FlightAction, delta_s: float) -> Vec3:
    """Applies the three-coordinate motion update for one slot.

    Args:
        pos (Vec3): The current position.
        a (FlightAction): The flight decision.
        delta_s (float): The slot duration in seconds.

    Returns:
        Vec3: The predicted position.
    """
    step = a.v * delta_s
    return Vec3(
        pos[0] + step * math.sin(a.psi_ver) * math.cos(a.psi_hor),
        pos[1] + step * math.sin(a.psi_ver) * math.sin(a.psi_hor),
        pos[2] + step * math.cos(a.psi_ver),
    )


def safety_gate(
    ve: Optional[VirtualEnv],
    env: Optional[EnvironmentMap],
    pos: Sequence[float],
    a: FlightAction,
    bounds: Bounds,
    delta_s: float,
) -> SafetyVerdict:
    """Checks an action before it is sent to the UAV.

    Without a ground-truth map (the twin's normal mode) the swept segment is checked against the
    VE's Occupied cells; when ``env`` is given the check runs against the true buildings instead,
    which is how the simulator detects actual collisions. Leaving the envelope is always unsafe.

    Args:
        ve (VirtualEnv, optional): The reconstructed grid.
        env (EnvironmentMap, optional): The ground truth, or None for the twin check.
        pos (Vec3): The current position.
        a (FlightAction): The candidate action.
        bounds (Bounds): The flight envelope.
        delta_s (float): The slot duration.

    Returns:
        SafetyVerdict: ``(True, "none")`` or ``(False, reason)``.
    """
    nxt = predict_next_position(pos, a, delta_s)
    if not bounds.contains(nxt):
        return SafetyVerdict(False, "out_of_bounds")
    if env is not None:
        if path_collides(env, pos, nxt):
            return SafetyVerdict(False, "building_collision")
    elif ve is not None and ve.blocks(pos, nxt):
        return SafetyVerdict(False, "building_collision")
    return SAFE


def predict_los(ve: VirtualEnv, uav: Sequence[float], gu: Sequence[float]) -> int:
    """Planning-time LoS from the reconstructed grid only; Unknown cells count as free."""
    return 0 if ve.blocks(uav, gu) else 1


def spawn_training_ve(cfg, seed: int) -> EnvironmentMap:
    """Generates a fresh training layout for an episode, keeping the UAV start clear of buildings.

    The start keeps one grid-cell diagonal of clearance so that no Occupied cell of the twin can
    contain it.

    Args:
        cfg (box.Box): A resolved config (reads ``world`` and ``kinematics.start_position``).
        seed (int): The layout seed.

    Returns:
        EnvironmentMap: The layout; see :func:`world.generate_environment`.
    """
    side, grid = float(cfg["world"]["side_xy"]), cfg["grid"]
    clearance = math.hypot(side / grid["m"], side / grid["n"])
    return generate_environment(
        cfg["world"], seed, keep_clear=[cfg["kinematics"]["start_position"]], clearance=clearance
    )


def deployment_map(cfg) -> EnvironmentMap:
    """The deployment layout: the training generator at the master seed ``cfg.seed``."""
    return spawn_training_ve(cfg, int(cfg["seed"]))


def check_step_config(cfg) -> bool:
    """Warns when one slot's displacement can exceed the sensing radius at the lowest altitude.

    Args:
        cfg (box.Box): A resolved config (reads ``kinematics`` and ``timing``).

    Returns:
        bool: True when the configuration keeps every step inside the sensed disc.
    """
    kin, timing = cfg["kinematics"], cfg["timing"]
    step = kin["v_max"] * (timing["delta1"] + timing["delta2"] + timing["delta3"])
    min_alt = kin["min_alt"]
    radius = coverage_radius(min_alt, kin["beta_sen"]) if min_alt > 0 else 0.0
    if step >= radius:
        warnings.warn(
            f"v_max * delta_s = {step:.1f} m is not below the sensing radius {radius:.1f} m at "
            f"min_alt = {min_alt} m; unsensed buildings may be reached within one slot."
        )
        return False
    return True
