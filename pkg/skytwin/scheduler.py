"""Module for simulated-annealing user scheduling.

The scheduler orders the ground users before flight, ignoring buildings: a nearest-neighbour
greedy tour seeds a simulated annealing search whose neighbourhood operator (swap, insert-move or
reverse-subsequence) is drawn from a temperature-dependent distribution. Distances are 2-D ground
distances from the projected UAV start position.
"""

import itertools
import math
import numpy as np
from dataclasses import dataclass, field
from typing import List, Optional, Sequence, Tuple

SWAP = "swap"
INSERT = "insert-move"
REVERSE = "reverse-subsequence"
OPERATORS = (SWAP, INSERT, REVERSE)

ANNEAL_DEFAULTS = {
    "T0": 2000.0,
    "cooling_Cr": 0.998,
    "max_iter": 4000,
    "op_bias": [3.0, 2.0, 1.0],
    "op_sensitivity": [1.0, 1.1, 1.2],
}


@dataclass(frozen=True)
class AnnealParams:
    """Temperature schedule and operator-selection coefficients."""

    T0: float = 2000.0
    cooling_Cr: float = 0.998
    max_iter: int = 4000
    op_bias: Tuple[float, float, float] = (3.0, 2.0, 1.0)
    op_sensitivity: Tuple[float, float, float] = (1.0, 1.1, 1.2)

    def __post_init__(self):
        if self.T0 <= 0:
            raise ValueError("anneal.T0 must be positive.")
        if not 0.0 < self.cooling_Cr < 1.0:
            raise ValueError("anneal.cooling_Cr must lie in (0, 1).")
        if self.max_iter < 1:
            raise ValueError("anneal.max_iter must be at least 1.")
        if len(self.op_bias) != 3 or len(self.op_sensitivity) != 3:
            raise ValueError("anneal.op_bias and anneal.op_sensitivity need three entries.")
        if min(self.op_bias) <= 0:
            raise ValueError("anneal.op_bias entries must be positive.")

    @classmethod
    def from_config(cls, cfg=None) -> "AnnealParams":
        values = dict(ANNEAL_DEFAULTS)
        if cfg is not None:
            values.update(cfg.to_dict() if hasattr(cfg, "to_dict") else dict(cfg))
        return cls(
            T0=float(values["T0"]),
            cooling_Cr=float(values["cooling_Cr"]),
            max_iter=int(values["max_iter"]),
            op_bias=tuple(float(v) for v in values["op_bias"]),
            op_sensitivity=tuple(float(v) for v in values["op_sensitivity"]),
        )


@dataclass
class AnnealResult:
    """Best schedule found, its tour length and the best-so-far length after each iteration."""

    order: List[int]
    length: float
    trace: List[float] = field(default_factory=list)


def _ground_points(users) -> np.ndarray:
    points = np.asarray(users, dtype=np.float64)
    if points.ndim != 2 or points.shape[1] < 2:
        raise ValueError("User positions must be an array of (x, y[, z]) rows.")
    return points[:, :2]


def _validate(order: Sequence[int], k: int):
    if sorted(order) != list(range(k)):
        raise IndexError(f"Schedule {list(order)} is not a permutation of 0..{k - 1}.")


def tour_length(start: Sequence[float], sched: Sequence[int], users) -> float:
    """Open-path ground length from ``start`` visiting the users in schedule order.

    Args:
        start (Vec3): The UAV start position (projected to the ground).
        sched (list): A permutation of user indices.
        users (array-like): (K, 2 or 3) user positions.

    Raises:
        IndexError: If the schedule is not a valid permutation for the users.

    Returns:
        float: The tour length in meters.
    """
    points = _ground_points(users)
    _validate(sched, len(points))
    if len(sched) == 0:
        return 0.0
    path = np.vstack([np.asarray(start, dtype=np.float64)[:2], points[list(sched)]])
    return float(np.sum(np.linalg.norm(np.diff(path, axis=0), axis=1)))


def greedy_init(start: Sequence[float], users) -> Tuple[List[int], float]:
    """Nearest-neighbour tour; ties go to the lowest user index.

    Args:
        start (Vec3): The UAV start position.
        users (array-like): (K, 2 or 3) user positions.

    Returns:
        tuple: The schedule and its tour length.
    """
    points = _ground_points(users)
    if len(points) == 0:
        raise ValueError("Scheduling requires at least one user.")
    current = np.asarray(start, dtype=np.float64)[:2]
    remaining = list(range(len(points)))
    order, total = [], 0.0
    while remaining:
        dists = np.linalg.norm(points[remaining] - current, axis=1)
        pick = int(np.argmin(dists))  # first minimum, i.e. the lowest remaining index
        total += float(dists[pick])
        chosen = remaining.pop(pick)
        order.append(chosen)
        current = points[chosen]
    return order, total


def operator_probabilities(T: float, params: AnnealParams) -> np.ndarray:
    """The distribution ``P(o|T) ∝ beta_o * exp(alpha_o * T)`` over (swap, insert, reverse).

    Evaluated in log-space so large temperatures do not overflow.
    """
    if T < 0:
        raise ValueError("The temperature must be non-negative.")
    logits = np.log(np.asarray(params.op_bias, dtype=np.float64)) + np.asarray(
        params.op_sensitivity, dtype=np.float64
    ) * float(T)
    weights = np.exp(logits - logits.max())
    return weights / weights.sum()


def select_operator(T: float, params: AnnealParams, rng: np.random.Generator) -> str:
    """Draws a neighbourhood operator from ``P(o|T)``."""
    probs = operator_probabilities(T, params)
    return OPERATORS[int(rng.choice(len(OPERATORS), p=probs))]


def swap(order: Sequence[int], i: int, j: int) -> List[int]:
    """Exchanges the entries at positions i and j."""
    result = list(order)
    result[i], result[j] = result[j], result[i]
    return result


def insert_move(order: Sequence[int], i: int, j: int) -> List[int]:
    """Removes the entry at position i and reinserts it at position j."""
    result = list(order)
    item = result.pop(i)
    result.insert(j, item)
    return result


def reverse_subsequence(order: Sequence[int], i: int, j: int) -> List[int]:
    """Reverses the contiguous run of positions ``i..j-1``."""
    result = list(order)
    result[i:j] = result[i:j][::-1]
    return result


def apply_operator(sched: Sequence[int], op: str, rng: np.random.Generator) -> List[int]:
    """Perturbs a schedule with the given operator at random positions.

    Schedules with fewer than two users are returned unchanged.

    Args:
        sched (list): The current schedule.
        op (str): One of ``swap``, ``insert-move``, ``reverse-subsequence``.
        rng (numpy.random.Generator): The scheduler stream.

    Returns:
        list: A new valid permutation.
    """
    k = len(sched)
    if k < 2:
        return list(sched)
    if op == SWAP:
        i, j = rng.choice(k, size=2, replace=False)
        return swap(sched, int(i), int(j))
    if op == INSERT:
        i, j = rng.choice(k, size=2, replace=False)
        return insert_move(sched, int(i), int(j))
    if op == REVERSE:
        i, j = sorted(int(v) for v in rng.choice(k + 1, size=2, replace=False))
        if j - i < 2:
            # Runs of length one are no-ops; widen to the nearest valid run.
            j = min(i + 2, k)
            i = j - 2
        return reverse_subsequence(sched, i, j)
    raise ValueError(f"Unknown neighbourhood operator: {op}")


def _metropolis(
    start: Sequence[float],
    users,
    initial: List[int],
    params: AnnealParams,
    rng: np.random.Generator,
    operator_fn,
) -> AnnealResult:
    current = list(initial)
    d_current = tour_length(start, current, users)
    best, d_best = list(current), d_current
    trace = []
    T = params.T0
    for _ in range(params.max_iter):
        candidate = apply_operator(current, operator_fn(T), rng)
        d_new = tour_length(start, candidate, users)
        r = rng.random()
        if d_new < d_current or r < math.exp(min((d_current - d_new) / T, 0.0)):
            current, d_current = candidate, d_new
        if d_current < d_best:
            best, d_best = list(current), d_current
        trace.append(d_best)
        T *= params.cooling_Cr
    return AnnealResult(order=best, length=d_best, trace=trace)


def anneal(
    start: Sequence[float],
    users,
    params: Optional[AnnealParams] = None,
    rng: Optional[np.random.Generator] = None,
    return_result: Optional[bool] = False,
):
    """Simulated-annealing user scheduling seeded by the nearest-greedy tour.

    Improving candidates are always accepted, worsening ones with probability
    ``exp((d_s - d_new) / T)``; the best-so-far schedule is tracked separately from the current
    one and the temperature is multiplied by ``cooling_Cr`` every iteration.

    Args:
        start (Vec3): The UAV start position.
        users (array-like): (K, 2 or 3) user positions.
        params (AnnealParams, optional): The annealing parameters. Defaults to the reference-scale values.
        rng (numpy.random.Generator, optional): The scheduler stream. Defaults to a seed-0 stream.
        return_result (bool, optional): Return the full :class:`AnnealResult`. Defaults to False.

    Returns:
        list | AnnealResult: The best schedule found (or the full result).
    """
    params = params or AnnealParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    initial, _ = greedy_init(start, users)
    result = _metropolis(
        start, users, initial, params, rng, lambda T: select_operator(T, params, rng)
    )
    return result if return_result else result.order


def classical_anneal(
    start: Sequence[float],
    users,
    params: Optional[AnnealParams] = None,
    rng: Optional[np.random.Generator] = None,
) -> AnnealResult:
    """Classical simulated annealing baseline: random initial schedule, swap moves only."""
    params = params or AnnealParams()
    rng = rng if rng is not None else np.random.default_rng(0)
    initial = random_schedule(len(_ground_points(users)), rng)
    return _metropolis(start, users, initial, params, rng, lambda T: SWAP)


def random_schedule(k: int, rng: np.random.Generator) -> List[int]:
    """A uniformly random permutation of ``0..k-1``."""
    return [int(v) for v in rng.permutation(k)]


def exhaustive_optimum(start: Sequence[float], users) -> Tuple[List[int], float]:
    """Brute-force shortest open tour; intended for at most 8 users.

    Raises:
        ValueError: If more than 8 users are given.
    """
    k = len(_ground_points(users))
    if k > 8:
        raise ValueError("Exhaustive search is limited to 8 users.")
    best, best_length = None, math.inf
    for perm in itertools.permutations(range(k)):
        length = tour_length(start, perm, users)
        if length < best_length:
            best, best_length = list(perm), length
    return best, best_length
