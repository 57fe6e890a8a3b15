"""Module for the ground-truth 3-D mission environment.

The world is a square area ``[0, side_xy]^2`` with an altitude ceiling ``max_alt``, populated by
axis-aligned box buildings and ground users (GUs). The module generates seeded layouts and answers
the geometric questions the simulator asks: point containment, segment-box intersection, line of
sight, cone coverage radius and the (ideal) sensing model.
"""

import math
import geojson
import numpy as np
from dataclasses import dataclass
from typing import Dict, List, Optional, Sequence, Tuple, Union

from .common import Vec3, check_file_path, json_to_dict, make_rng

# Spawn key of the world-generation random stream.
STREAM_WORLD = 11

WORLD_DEFAULTS = {
    "side_xy": 1000.0,
    "max_alt": 150.0,
    "n_buildings": 8,
    "n_users": 10,
    "building_size": [50.0, 150.0],
    "height_scale": 100.0,
    "height_min": 40.0,
    "height_max": 150.0,
    "demand_bits": 1.0e7,
    "bs_position": [0.0, 0.0, 30.0],
    "max_retries": 1000,
    "obstacle_ratio": None,
    "ratio_tolerance": 0.10,
}


@dataclass(frozen=True)
class Building:
    """An axis-aligned box building standing on the ground."""

    x_min: float
    x_max: float
    y_min: float
    y_max: float
    height: float

    def __post_init__(self):
        if not (self.x_min < self.x_max and self.y_min < self.y_max):
            raise ValueError(f"Invalid building footprint: {self}")
        if self.height <= 0:
            raise ValueError(f"Building height must be positive: {self.height}")

    @property
    def volume(self) -> float:
        return (self.x_max - self.x_min) * (self.y_max - self.y_min) * self.height

    def footprint_contains(self, x: float, y: float) -> bool:
        """Whether (x, y) lies inside the closed footprint."""
        return self.x_min <= x <= self.x_max and self.y_min <= y <= self.y_max

    def overlaps(self, other: "Building") -> bool:
        """Whether two footprints share a region of positive area."""
        return not (
            self.x_max <= other.x_min
            or other.x_max <= self.x_min
            or self.y_max <= other.y_min
            or other.y_max <= self.y_min
        )


@dataclass(frozen=True)
class GroundUser:
    """A static ground user with a data demand (bits) and its delivery progress.

    The world holds users with no progress; a running simulation reports progress through
    ``dataclasses.replace`` copies.
    """

    id: int
    position: Vec3
    demand_bits: float
    delivered_bits: float = 0.0
    first_served_slot: Optional[int] = None

    def __post_init__(self):
        if self.position.z != 0:
            raise ValueError(f"Ground user {self.id} must lie on the ground (z = 0).")
        if self.delivered_bits < 0:
            raise ValueError(f"Ground user {self.id} cannot have negative delivered bits.")

    @property
    def served(self) -> bool:
        return self.delivered_bits >= self.demand_bits


@dataclass(frozen=True)
class EnvironmentMap:
    """The ground-truth world; treat it as immutable after generation."""

    side_xy: float
    max_alt: float
    buildings: Tuple[Building, ...]
    users: Tuple[GroundUser, ...]
    bs_position: Vec3

    def user_positions(self) -> np.ndarray:
        """Returns the (K, 3) array of user positions."""
        return np.array([u.position for u in self.users], dtype=np.float64).reshape(-1, 3)


@dataclass(frozen=True)
class GridSpec:
    """Discretization of the mission area into ``m x n`` cells.

    Cell ``(i, j)`` covers ``[i*dx, (i+1)*dx) x [j*dy, (j+1)*dy)``; ``i`` indexes x and ``j``
    indexes y.
    """

    side_xy: float
    m: int
    n: int

    def __post_init__(self):
        if self.m < 1 or self.n < 1 or self.side_xy <= 0:
            raise ValueError(f"Invalid grid geometry: {self}")

    @property
    def dx(self) -> float:
        return self.side_xy / self.m

    @property
    def dy(self) -> float:
        return self.side_xy / self.n

    @property
    def cell_size(self) -> float:
        return min(self.dx, self.dy)

    @property
    def shape(self) -> Tuple[int, int]:
        return (self.m, self.n)

    def centers(self) -> Tuple[np.ndarray, np.ndarray]:
        """Returns two (m, n) arrays holding the x and y coordinates of every cell center."""
        xs = (np.arange(self.m, dtype=np.float64) + 0.5) * self.dx
        ys = (np.arange(self.n, dtype=np.float64) + 0.5) * self.dy
        return np.meshgrid(xs, ys, indexing="ij")

    def cell_of(self, x: float, y: float) -> Tuple[int, int]:
        """Returns the (row, col) of the cell containing (x, y), clamped to the grid."""
        i = min(max(int(math.floor(x / self.dx)), 0), self.m - 1)
        j = min(max(int(math.floor(y / self.dy)), 0), self.n - 1)
        return i, j

    def disc_mask(self, cx: float, cy: float, radius: float) -> np.ndarray:
        """Boolean (m, n) mask of the cells whose centers lie within ``radius`` of (cx, cy)."""
        xs, ys = self.centers()
        return (xs - cx) ** 2 + (ys - cy) ** 2 <= radius**2


@dataclass(frozen=True)
class Bounds:
    """The flight envelope E_ent: horizontal square and altitude band."""

    side_xy: float
    max_alt: float
    min_alt: float = 0.0

    def contains(self, p: Sequence[float]) -> bool:
        return (
            0.0 <= p[0] <= self.side_xy
            and 0.0 <= p[1] <= self.side_xy
            and self.min_alt <= p[2] <= self.max_alt
        )


@dataclass(frozen=True)
class SensingReport:
    """Cells detected as building-covered during one slot, with their sensed heights."""

    cells: Tuple[Tuple[int, int, float], ...]
    slot: int = 0

    def __len__(self):
        return len(self.cells)


def _section(cfg, defaults: Dict) -> Dict:
    """Merges a config section (dict or Box) over the given defaults."""
    merged = dict(defaults)
    if cfg is not None:
        items = cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg)
        merged.update({k: v for k, v in items.items() if k in defaults})
    return merged


def _sample_height(rng: np.random.Generator, params: Dict) -> float:
    # Clamped rather than re-drawn so the number of draws stays fixed.
    h = rng.rayleigh(scale=params["height_scale"])
    return float(np.clip(h, params["height_min"], params["height_max"]))


def _too_close(b: Building, p: Sequence[float], clearance: float) -> bool:
    return (
        b.x_min - clearance <= p[0] <= b.x_max + clearance
        and b.y_min - clearance <= p[1] <= b.y_max + clearance
    )


def _place_building(
    rng: np.random.Generator,
    params: Dict,
    height: float,
    placed: List[Building],
    length: Optional[float] = None,
    width: Optional[float] = None,
    keep_clear: Sequence[Sequence[float]] = (),
    clearance: float = 0.0,
) -> Building:
    side = float(params["side_xy"])
    lo, hi = params["building_size"]
    for _ in range(int(params["max_retries"])):
        if length is None:
            lx, ly = rng.uniform(lo, hi, size=2)
        else:
            lx, ly = length, width
        lx, ly = min(lx, side), min(ly, side)
        x0 = rng.uniform(0.0, side - lx)
        y0 = rng.uniform(0.0, side - ly)
        candidate = Building(float(x0), float(x0 + lx), float(y0), float(y0 + ly), height)
        if any(candidate.overlaps(b) for b in placed):
            continue
        if not any(_too_close(candidate, p, clearance) for p in keep_clear):
            return candidate
    raise ValueError(
        f"world.n_buildings: could not place building {len(placed)} without overlapping "
        f"footprints after {params['max_retries']} retries."
    )


def generate_environment(
    cfg=None,
    seed: int = 0,
    keep_clear: Optional[Sequence[Sequence[float]]] = None,
    clearance: float = 0.0,
) -> EnvironmentMap:
    """Generates a seeded ground-truth environment.

    Buildings are placed by rejection sampling with non-overlapping footprints whose lengths and
    widths are uniform in ``building_size``; heights are Rayleigh(``height_scale``) clamped to
    ``[height_min, height_max]``. Users are uniform on the ground outside every footprint. When
    ``obstacle_ratio`` is set, buildings are added until that share of the scene volume is
    occupied (the last footprint is shrunk to land on the target) and ``n_buildings`` is ignored.

    Args:
        cfg (dict | box.Box, optional): The ``world`` config section. Defaults to the reference-scale scene.
        seed (int, optional): The layout seed. Defaults to 0.
        keep_clear (list, optional): Points (e.g. the UAV start) no footprint may cover.
        clearance (float, optional): Extra horizontal margin kept around each ``keep_clear``
            point. Defaults to 0.

    Raises:
        ValueError: If the dimensions are invalid or placement fails after the retry budget.

    Returns:
        EnvironmentMap: The generated map; a pure function of (cfg, seed).
    """
    params = _section(cfg, WORLD_DEFAULTS)
    side, max_alt = float(params["side_xy"]), float(params["max_alt"])
    if side <= 0 or max_alt <= 0:
        raise ValueError("world.side_xy and world.max_alt must be positive.")
    if params["n_users"] < 0 or params["n_buildings"] < 0:
        raise ValueError("world.n_users and world.n_buildings must be non-negative.")

    rng = make_rng(seed, STREAM_WORLD)
    keep_clear = [tuple(p) for p in (keep_clear or ())]
    buildings: List[Building] = []

    ratio = params.get("obstacle_ratio")
    if ratio is None:
        for _ in range(int(params["n_buildings"])):
            height = _sample_height(rng, params)
            buildings.append(
                _place_building(rng, params, height, buildings, keep_clear=keep_clear, clearance=clearance)
            )
    else:
        buildings = _buildings_for_ratio(rng, params, float(ratio), keep_clear, clearance)

    users = []
    for k in range(int(params["n_users"])):
        for _ in range(int(params["max_retries"])):
            x, y = rng.uniform(0.0, side, size=2)
            if not any(b.footprint_contains(x, y) for b in buildings):
                users.append(GroundUser(k, Vec3(float(x), float(y), 0.0), float(params["demand_bits"])))
                break
        else:
            raise ValueError(
                f"world.n_users: could not place user {k} outside the buildings after "
                f"{params['max_retries']} retries."
            )

    return EnvironmentMap(
        side_xy=side,
        max_alt=max_alt,
        buildings=tuple(buildings),
        users=tuple(users),
        bs_position=Vec3.from_array(params["bs_position"]),
    )


def _buildings_for_ratio(
    rng: np.random.Generator,
    params: Dict,
    ratio: float,
    keep_clear: Sequence[Sequence[float]] = (),
    clearance: float = 0.0,
) -> List[Building]:
    side, max_alt = float(params["side_xy"]), float(params["max_alt"])
    tolerance = float(params["ratio_tolerance"])
    if not 0.0 <= ratio < 1.0:
        raise ValueError("world.obstacle_ratio must lie in [0, 1).")

    target = ratio * side * side * max_alt
    buildings: List[Building] = []
    volume = 0.0
    lo, hi = params["building_size"]
    while target - volume > 0.5 * tolerance * target:
        height = _sample_height(rng, params)
        length, width = rng.uniform(lo, hi, size=2)
        remaining = target - volume
        if length * width * height > remaining:
            shrink = math.sqrt(remaining / (length * width * height))
            length, width = length * shrink, width * shrink
        building = _place_building(
            rng, params, height, buildings, float(length), float(width), keep_clear, clearance
        )
        buildings.append(building)
        volume += building.volume

    achieved = volume / (side * side * max_alt)
    if ratio > 0 and abs(achieved - ratio) > tolerance * ratio:
        raise ValueError(
            f"world.obstacle_ratio: achieved {achieved:.4f} is outside the {tolerance:.0%} "
            f"tolerance of the requested {ratio:.4f}."
        )
    return buildings


def obstacle_ratio(env: EnvironmentMap) -> float:
    """Total building volume divided by the scene volume ``side_xy^2 * max_alt``."""
    total = sum(b.volume for b in env.buildings)
    return total / (env.side_xy * env.side_xy * env.max_alt)


def point_in_building(env: EnvironmentMap, p: Sequence[float]) -> bool:
    """Whether a point lies inside some building (closed footprint, ``z <= height``).

    Args:
        env (EnvironmentMap): The world.
        p (Vec3): The point.

    Returns:
        bool: True if the point is inside a building.
    """
    return any(b.footprint_contains(p[0], p[1]) and p[2] <= b.height for b in env.buildings)


def segment_intersects_box(p0: Sequence[float], p1: Sequence[float], b: Building) -> bool:
    """Slab test between the closed segment p0-p1 and the closed box of a building.

    Args:
        p0 (Vec3): The segment start.
        p1 (Vec3): The segment end.
        b (Building): The box ``[x_min, x_max] x [y_min, y_max] x [0, height]``.

    Returns:
        bool: True if the segment touches or crosses the box.
    """
    lows = (b.x_min, b.y_min, 0.0)
    highs = (b.x_max, b.y_max, b.height)
    t_enter, t_exit = 0.0, 1.0
    for axis in range(3):
        start = float(p0[axis])
        delta = float(p1[axis]) - start
        if delta == 0.0:
            if start < lows[axis] or start > highs[axis]:
                return False
            continue
        t1 = (lows[axis] - start) / delta
        t2 = (highs[axis] - start) / delta
        if t1 > t2:
            t1, t2 = t2, t1
        t_enter = max(t_enter, t1)
        t_exit = min(t_exit, t2)
        if t_enter > t_exit:
            return False
    return True


def segment_intersects_boxes(
    p0: Sequence[float], p1: Sequence[float], lows: np.ndarray, highs: np.ndarray
) -> np.ndarray:
    """Vectorized slab test of one closed segment against N closed boxes.

    Args:
        p0 (Vec3): The segment start.
        p1 (Vec3): The segment end.
        lows (numpy.ndarray): (N, 3) lower box corners.
        highs (numpy.ndarray): (N, 3) upper box corners.

    Returns:
        numpy.ndarray: (N,) boolean hits.
    """
    p0 = np.asarray(p0, dtype=np.float64)
    delta = np.asarray(p1, dtype=np.float64) - p0
    n = len(lows)
    t_enter, t_exit = np.zeros(n), np.ones(n)
    hit = np.ones(n, dtype=bool)
    for axis in range(3):
        if delta[axis] == 0.0:
            hit &= (p0[axis] >= lows[:, axis]) & (p0[axis] <= highs[:, axis])
            continue
        t1 = (lows[:, axis] - p0[axis]) / delta[axis]
        t2 = (highs[:, axis] - p0[axis]) / delta[axis]
        t_enter = np.maximum(t_enter, np.minimum(t1, t2))
        t_exit = np.minimum(t_exit, np.maximum(t1, t2))
    return hit & (t_enter <= t_exit)


def line_of_sight(env: EnvironmentMap, p0: Sequence[float], p1: Sequence[float]) -> int:
    """Returns 1 if no building obstructs the segment p0-p1 (LoS), else 0 (NLoS)."""
    for b in env.buildings:
        if segment_intersects_box(p0, p1, b):
            return 0
    return 1


def path_collides(env: EnvironmentMap, p0: Sequence[float], p1: Sequence[float]) -> bool:
    """Whether the straight flight from p0 to p1 crosses any building."""
    if p0[0] == p1[0] and p0[1] == p1[1] and p0[2] == p1[2]:
        return point_in_building(env, p0)
    return line_of_sight(env, p0, p1) == 0


def coverage_radius(z: float, beta: float) -> float:
    """Slant-range coverage of the antenna cone, ``z / cos(beta)``.

    The result is used as a horizontal disc radius for the sensing and communication discs.

    Args:
        z (float): The UAV altitude in meters.
        beta (float): The cone beamwidth in radians, ``0 <= beta < pi/2``.

    Raises:
        ValueError: If beta is outside ``[0, pi/2)`` or z is negative.

    Returns:
        float: The coverage radius in meters.
    """
    if not 0.0 <= beta < math.pi / 2:
        raise ValueError(f"beta must lie in [0, pi/2), got {beta}.")
    if z < 0:
        raise ValueError(f"Altitude must be non-negative, got {z}.")
    return z / math.cos(beta)


def footprint_heights(env: EnvironmentMap, grid: GridSpec) -> np.ndarray:
    """Rasterizes the buildings: (m, n) array of the building height over each cell center."""
    xs, ys = grid.centers()
    heights = np.zeros(grid.shape, dtype=np.float64)
    for b in env.buildings:
        inside = (xs >= b.x_min) & (xs <= b.x_max) & (ys >= b.y_min) & (ys <= b.y_max)
        heights = np.where(inside, np.maximum(heights, b.height), heights)
    return heights


def sense(
    env: EnvironmentMap,
    uav: Sequence[float],
    beta_sen: float,
    grid: GridSpec,
    slot: Optional[int] = 0,
) -> SensingReport:
    """Ideal geometric sensing of the buildings under the UAV's sensing cone.

    Reports every cell whose center lies within ``coverage_radius(z, beta_sen)`` (horizontal) of
    the UAV and inside a building footprint, with the true building height.

    Args:
        env (EnvironmentMap): The world.
        uav (Vec3): The UAV position.
        beta_sen (float): The sensing beamwidth in radians.
        grid (GridSpec): The state grid.
        slot (int, optional): The slot index stored in the report. Defaults to 0.

    Returns:
        SensingReport: The detected cells.
    """
    if not env.buildings:
        return SensingReport(cells=(), slot=slot)
    radius = coverage_radius(uav[2], beta_sen)
    disc = grid.disc_mask(uav[0], uav[1], radius)
    heights = footprint_heights(env, grid)
    rows, cols = np.nonzero(disc & (heights > 0))
    cells = tuple((int(i), int(j), float(heights[i, j])) for i, j in zip(rows, cols))
    return SensingReport(cells=cells, slot=slot)


def environment_to_geojson(env: EnvironmentMap) -> geojson.FeatureCollection:
    """Converts an environment to a GeoJSON FeatureCollection in local meter coordinates.

    Args:
        env (EnvironmentMap): The world.

    Returns:
        geojson.FeatureCollection: Buildings as Polygons with a ``height`` property, users and the
        BS as Points.
    """
    features = []
    for index, b in enumerate(env.buildings):
        ring = [
            (b.x_min, b.y_min),
            (b.x_max, b.y_min),
            (b.x_max, b.y_max),
            (b.x_min, b.y_max),
            (b.x_min, b.y_min),
        ]
        features.append(
            geojson.Feature(
                geometry=geojson.Polygon([ring]),
                properties={"kind": "building", "index": index, "height": b.height},
            )
        )
    for u in env.users:
        features.append(
            geojson.Feature(
                geometry=geojson.Point((u.position.x, u.position.y, 0.0)),
                properties={"kind": "user", "id": u.id, "demand_bits": u.demand_bits},
            )
        )
    features.append(
        geojson.Feature(
            geometry=geojson.Point(tuple(env.bs_position)),
            properties={"kind": "bs"},
        )
    )
    return geojson.FeatureCollection(
        features, side_xy=env.side_xy, max_alt=env.max_alt
    )


def environment_from_geojson(doc: Union[Dict, str]) -> EnvironmentMap:
    """Rebuilds an environment from :func:`environment_to_geojson` output (dict or JSON text).

    Raises:
        ValueError: If the document is not a skytwin environment.
    """
    if isinstance(doc, str):
        doc = geojson.loads(doc)
    if doc.get("type") != "FeatureCollection" or "side_xy" not in doc:
        raise ValueError("The document is not a skytwin environment FeatureCollection.")

    buildings, users, bs = [], [], None
    for feature in doc["features"]:
        props = feature["properties"]
        coords = feature["geometry"]["coordinates"]
        if props["kind"] == "building":
            xs = [c[0] for c in coords[0]]
            ys = [c[1] for c in coords[0]]
            buildings.append(Building(min(xs), max(xs), min(ys), max(ys), float(props["height"])))
        elif props["kind"] == "user":
            users.append(GroundUser(int(props["id"]), Vec3(float(coords[0]), float(coords[1]), 0.0), float(props["demand_bits"])))
        elif props["kind"] == "bs":
            bs = Vec3.from_array(coords)
    if bs is None:
        raise ValueError("The environment document has no BS feature.")

    users.sort(key=lambda u: u.id)
    return EnvironmentMap(
        side_xy=float(doc["side_xy"]),
        max_alt=float(doc["max_alt"]),
        buildings=tuple(buildings),
        users=tuple(users),
        bs_position=bs,
    )


def environment_to_json(env: EnvironmentMap) -> str:
    """Serializes an environment to canonical GeoJSON text (sorted keys)."""
    return geojson.dumps(environment_to_geojson(env), sort_keys=True, indent=2)


def save_environment(env: EnvironmentMap, file_path: str) -> str:
    """Writes an environment to a GeoJSON file and returns its absolute path."""
    file_path = check_file_path(file_path)
    with open(file_path, "w", encoding="utf-8") as f:
        f.write(environment_to_json(env))
        f.write("\n")
    return file_path


def load_environment(file_path: str) -> EnvironmentMap:
    """Reads an environment written by :func:`save_environment`."""
    return environment_from_geojson(json_to_dict(file_path))
