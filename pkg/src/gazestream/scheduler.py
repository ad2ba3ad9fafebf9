"""Budget-constrained LoD update planning.

The planner works on per-slot sensitivities: slot (u, k) holds the perceptual
value of stepping unit u from level k-1 to level k (slot column 0 is always
zero; level 0 is never an upgrade target).  Dividing by the step's byte cost
gives a per-bit weight, and the greedy loop repeatedly takes the highest
feasible weight, re-exposing the unit's next step after each pick, until the
byte budget is exhausted.  Multi-level jumps therefore emerge as consecutive
picks of the same unit.

``unit_sensitivity`` is the exact reference evaluation: it renders the
hypothetical upgrade chain and sums the adaptive importance over the unit's
before-frame pixel footprint.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .contrast import BandSpec
from .errors import DomainError, StalenessError
from .perception import GazeState, PerceptionParams, adaptive_field
from .scene import Frame, LoDState, SceneAsset
from .scene.raster import hypothetical_frame
from .vision import DisplayParams, RetinaParams


@dataclass(frozen=True)
class UnitSensitivity:
    """Per-slot sensitivities and footprint pixel counts.

    values[u, k]: sensitivity of the k-1 -> k step for unit u; column 0 is 0.
    pixels[u, k]: size of the unit's screen footprint in the step's
    before-frame, used downstream for normalization.
    """

    values: np.ndarray
    pixels: np.ndarray
    mode: str = "fixation"
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.values.shape != self.pixels.shape or self.values.ndim != 2:
            raise DomainError("sensitivity tables must share a (units, levels) shape")
        if not np.all(np.isfinite(self.values)):
            raise DomainError("sensitivities must be finite")
        if np.any(self.values[:, 0] != 0.0):
            raise DomainError("level-0 slots cannot carry sensitivity")


@dataclass(frozen=True)
class PlanEntry:
    unit: int
    from_level: int
    to_level: int
    bytes: int
    weight: float


@dataclass(frozen=True)
class UpdatePlan:
    """Ordered per-unit upgrades; entries are merged (one per unit)."""

    entries: tuple[PlanEntry, ...]
    budget: int

    def __post_init__(self):
        units = [e.unit for e in self.entries]
        if len(set(units)) != len(units):
            raise DomainError("plan contains duplicate units")
        for e in self.entries:
            if e.to_level <= e.from_level or e.bytes <= 0:
                raise DomainError(f"bad plan entry for unit {e.unit}")
        if self.total_bytes > self.budget:
            raise DomainError("plan exceeds its byte budget")

    @property
    def total_bytes(self) -> int:
        return sum(e.bytes for e in self.entries)

    @property
    def total_weight(self) -> float:
        """Sum of selected per-bit step weights (the planning objective)."""
        return float(sum(e.weight for e in self.entries))


def per_bit_weight(sensitivity: float, bytes_delta: int) -> float:
    """Perceptual value per byte of an upgrade step."""
    if bytes_delta <= 0:
        raise DomainError("byte delta must be positive")
    return float(sensitivity) / float(bytes_delta)


def unit_sensitivity(frame_before: Frame, gaze_state: GazeState,
                     asset: SceneAsset, lod_state: LoDState, unit: int,
                     candidate_level: int, camera, display: DisplayParams,
                     bands: BandSpec | None = None,
                     retina: RetinaParams = RetinaParams(),
                     params: PerceptionParams = PerceptionParams()) -> float:
    """Exact sensitivity of upgrading one unit to a candidate level.

    Renders the hypothetical frame chain current..candidate (one step at a
    time, so multi-level jumps accumulate their intermediate transitions) and
    sums the adaptive importance over the pixels the unit owned in the
    before-frame.  An off-screen unit scores zero.
    """
    current = int(lod_state.levels[unit])
    if candidate_level <= current:
        raise DomainError("candidate level must exceed the current level")
    if candidate_level >= asset.levels:
        raise DomainError(f"candidate level {candidate_level} out of range")
    footprint = frame_before.footprint(unit)
    if not footprint.any():
        return 0.0
    total = 0.0
    prev = frame_before
    for level in range(current + 1, candidate_level + 1):
        nxt = hypothetical_frame(asset, lod_state, unit, level, camera, display)
        step = adaptive_field(gaze_state, prev.image(), nxt.image(), display,
                              spec=bands, retina=retina, params=params)
        total += float(step.values[footprint].sum())
        prev = nxt
    return total


def plan_update(table: UnitSensitivity, asset: SceneAsset,
                lod_state: LoDState, budget: int) -> UpdatePlan:
    """Greedy per-bit-weight plan under a byte budget.

    Deterministic tie-break: higher weight, then lower unit id, then lower
    target level.  A step that no longer fits the remaining budget is
    permanently infeasible (costs are fixed), so the loop ends when no step
    fits.
    """
    lod_state.validate_for(asset)
    if budget < 0:
        raise DomainError("budget must be non-negative")
    if table.values.shape != (asset.unit_count, asset.levels):
        raise DomainError("sensitivity table does not match the asset")
    units = asset.unit_count
    next_level = lod_state.levels.astype(np.int64) + 1
    remaining = int(budget)
    # per-unit byte cost and weight of the next single step
    costs = np.zeros(units, dtype=np.int64)
    weights = np.zeros(units, dtype=np.float64)
    alive = next_level < asset.levels
    for u in np.flatnonzero(alive):
        costs[u] = asset.units[u].upgrade_bytes(next_level[u] - 1, next_level[u])
        weights[u] = per_bit_weight(table.values[u, next_level[u]], costs[u])

    picked_from = lod_state.levels.copy()
    picked_bytes = np.zeros(units, dtype=np.int64)
    picked_weight = np.zeros(units, dtype=np.float64)
    order: list[int] = []
    while True:
        feasible = alive & (costs <= remaining)
        if not feasible.any():
            break
        idx = np.flatnonzero(feasible)
        # lexicographic argmax: weight desc, unit asc, level asc
        best = idx[np.lexsort((next_level[idx], idx, -weights[idx]))[0]]
        if picked_bytes[best] == 0:
            order.append(int(best))
        remaining -= int(costs[best])
        picked_bytes[best] += costs[best]
        picked_weight[best] += weights[best]
        next_level[best] += 1
        if next_level[best] >= asset.levels:
            alive[best] = False
        else:
            costs[best] = asset.units[best].upgrade_bytes(
                next_level[best] - 1, next_level[best])
            weights[best] = per_bit_weight(
                table.values[best, next_level[best]], costs[best])

    entries = tuple(
        PlanEntry(unit=u, from_level=int(picked_from[u]),
                  to_level=int(next_level[u]) - 1,
                  bytes=int(picked_bytes[u]),
                  weight=float(picked_weight[u]))
        for u in order)
    return UpdatePlan(entries=entries, budget=int(budget))


def apply_plan(lod_state: LoDState, plan: UpdatePlan) -> LoDState:
    """Advance unit levels to the plan's targets.

    Re-applying an already-applied plan is a no-op; a plan whose from-levels
    match neither the current nor the target state is stale.
    """
    levels = lod_state.levels.copy()
    for e in plan.entries:
        current = int(levels[e.unit])
        if current == e.from_level:
            levels[e.unit] = e.to_level
        elif current == e.to_level:
            continue
        else:
            raise StalenessError(
                f"unit {e.unit}: plan expects level {e.from_level} or "
                f"{e.to_level}, state has {current}")
    return LoDState(levels)


PLAN_LOG_HEADER = "tick,unit,from_level,to_level,bytes,weight_per_byte"


def append_plan_log(path: str, tick: int, plan: UpdatePlan) -> None:
    """Append plan entries to a CSV log, writing the header on first use."""
    import os
    fresh = not os.path.exists(path) or os.path.getsize(path) == 0
    with open(path, "a") as fh:
        if fresh:
            fh.write(PLAN_LOG_HEADER + "\n")
        for e in plan.entries:
            fh.write(f"{tick},{e.unit},{e.from_level},{e.to_level},"
                     f"{e.bytes},{e.weight!r}\n")
