"""
Fleet feasibility and chunk-to-UAV assignment.

Volumes here are in liters, matching how the fleet's material loads are
quoted.  Two feasibility modes are supported:

``capacity-reuse`` (default)
    a UAV may print several chunks as long as their total volume fits its load.
``per-uav``
    every chunk needs its own UAV.
"""
from __future__ import annotations

from dataclasses import dataclass, field
from functools import lru_cache

from .bsp import BspTree, dependencies, inorder_priority, leaves
from .errors import AssignmentError

MODES = ("capacity-reuse", "per-uav")
_EPS = 1e-9


@dataclass(frozen=True)
class ExtruderSpec:
    h: float = 0.02
    l: float = 0.02
    l_ex: float = 0.3
    l_g: float = 0.2


@dataclass(frozen=True)
class FleetConfig:
    capacities: tuple
    uav_ids: tuple = ()
    extruder: ExtruderSpec = field(default_factory=ExtruderSpec)
    feasibility: str = "capacity-reuse"

    def __post_init__(self):
        caps = [float(c) for c in self.capacities]
        ids = list(self.uav_ids) or [f"uav{i}" for i in range(len(caps))]
        if len(ids) != len(caps):
            raise ValueError("uav_ids and capacities differ in length")
        if any(c <= 0 for c in caps):
            raise ValueError("UAV capacities must be positive")
        if len(set(ids)) != len(ids):
            raise ValueError("uav_ids must be unique")
        if self.feasibility not in MODES:
            raise ValueError(f"unknown feasibility mode {self.feasibility!r}")
        # stable sort keeps the given order among equal loads
        order = sorted(range(len(caps)), key=lambda i: -caps[i])
        object.__setattr__(self, "capacities", tuple(caps[i] for i in order))
        object.__setattr__(self, "uav_ids", tuple(str(ids[i]) for i in order))

    @classmethod
    def uniform(cls, n: int, capacity: float, **kw) -> "FleetConfig":
        return cls(tuple([capacity] * n), **kw)

    @property
    def total(self) -> float:
        return sum(self.capacities)


def check_primal_feasibility(total_volume: float, fleet: FleetConfig) -> bool:
    return total_volume <= fleet.total + _EPS


def _pack(chunks: tuple, bins: tuple) -> bool:
    """Exact test: do the (descending) chunks fit into the bins with reuse?"""

    @lru_cache(maxsize=None)
    def go(i, rem):
        if i == len(chunks):
            return True
        c = chunks[i]
        tried = set()
        for k, r in enumerate(rem):
            if r + _EPS < c or r in tried:
                continue
            tried.add(r)
            nxt = tuple(sorted(rem[:k] + (r - c,) + rem[k + 1:], reverse=True))
            if go(i + 1, nxt):
                return True
        return False

    return go(0, tuple(sorted(bins, reverse=True)))


def fits(chunk_volumes, capacities, mode: str = "capacity-reuse") -> bool:
    chunks = sorted((float(c) for c in chunk_volumes), reverse=True)
    caps = sorted((float(c) for c in capacities), reverse=True)
    if not chunks:
        return True
    if mode == "per-uav":
        return len(chunks) <= len(caps) and all(d + _EPS >= c for d, c in zip(caps, chunks))
    if mode != "capacity-reuse":
        raise ValueError(f"unknown feasibility mode {mode!r}")
    if sum(chunks) > sum(caps) + _EPS or chunks[0] > caps[0] + _EPS:
        return False
    return _pack(tuple(chunks), tuple(caps))


def tree_feasible(chunk_volumes, fleet: FleetConfig, mode=None) -> bool:
    """Can every chunk be printed by the fleet under ``mode`` (fleet default if None)?"""
    return fits(chunk_volumes, fleet.capacities, mode or fleet.feasibility)


@dataclass(frozen=True)
class ScheduleEntry:
    chunk_id: str
    uav_id: str
    volume_l: float


@dataclass(frozen=True)
class Schedule:
    entries: tuple
    dependencies: tuple
    capacities: dict

    @property
    def order(self) -> list:
        return [e.chunk_id for e in self.entries]

    def consumption(self) -> dict:
        used = {u: 0.0 for u in self.capacities}
        for e in self.entries:
            used[e.uav_id] += e.volume_l
        return used

    def to_json(self) -> dict:
        return {
            "entries": [{"chunk": e.chunk_id, "uav": e.uav_id, "volume_l": e.volume_l}
                        for e in self.entries],
            "dependencies": [list(d) for d in self.dependencies],
            "capacities_l": dict(self.capacities),
            "consumption_l": self.consumption(),
        }

    @classmethod
    def from_json(cls, doc) -> "Schedule":
        entries = tuple(ScheduleEntry(e["chunk"], e["uav"], float(e["volume_l"])) for e in doc["entries"])
        deps = tuple(tuple(d) for d in doc["dependencies"])
        return cls(entries, deps, {k: float(v) for k, v in doc["capacities_l"].items()})


def assign_chunks(tree: BspTree, fleet: FleetConfig, mode=None) -> Schedule:
    """
    Assign chunks to UAVs in print-priority order.

    Each chunk goes to the UAV with the smallest remaining load that still
    holds it, skipping any choice after which the remaining chunks could no
    longer be placed.

    Raises
    ------
    AssignmentError
      No UAV can take a chunk; the error names the chunk.
    """
    mode = mode or fleet.feasibility
    volumes = {lf.id: lf.volume * 1e3 for lf in leaves(tree)}
    order = inorder_priority(tree)
    remaining = list(fleet.capacities)
    usable = [True] * len(remaining)
    entries = []
    for pos, cid in enumerate(order):
        vol = volumes[cid]
        later = [volumes[c] for c in order[pos + 1:]]
        cands = sorted((r, k) for k, r in enumerate(remaining) if usable[k] and r + _EPS >= vol)
        chosen = None
        for r, k in cands:
            rem = remaining.copy()
            rem[k] = r - vol
            if mode == "per-uav":
                pool = [x for j, x in enumerate(rem) if usable[j] and j != k]
            else:
                pool = rem
            if fits(later, pool, mode):
                chosen = k
                break
        if chosen is None:
            raise AssignmentError(f"no UAV can take chunk {cid} ({vol:.4g} L)", cid)
        remaining[chosen] -= vol
        if mode == "per-uav":
            usable[chosen] = False
        entries.append(ScheduleEntry(cid, fleet.uav_ids[chosen], vol))
    caps = dict(zip(fleet.uav_ids, fleet.capacities))
    return Schedule(tuple(entries), tuple(dependencies(tree)), caps)
