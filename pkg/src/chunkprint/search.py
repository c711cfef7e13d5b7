"""Beam search over BSP-tree extensions, minimizing chunk volume dispersion."""
from __future__ import annotations

import logging
from dataclasses import dataclass, field
from typing import Callable, NamedTuple, Optional

import numpy as np

from .bsp import BspTree, insert_cut, leaves, with_cost
from .errors import CutError, InfeasibleError, SearchExhaustedError
from .mesh import MIN_CHUNK_FRACTION, TriangleMesh, slice_mesh, split_volumes
from .sampler import SamplerParams, plane_family, sample_normals
from .scheduler import FleetConfig, check_primal_feasibility, tree_feasible

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class SearchParams:
    w_inner: int = 3
    w_outer: int = 8
    sampler: SamplerParams = field(default_factory=SamplerParams)
    max_iterations: int = 32

    def __post_init__(self):
        if self.w_inner < 1 or self.w_outer < 1:
            raise ValueError("beam widths must be at least 1")
        if self.max_iterations < 1:
            raise ValueError("max_iterations must be at least 1")


def heuristic_cv(volumes) -> float:
    """Coefficient of variation (population std / mean) of chunk volumes."""
    v = np.asarray(volumes, dtype=float)
    if v.size == 0:
        raise ValueError("need at least one volume")
    if np.any(v <= 0):
        raise ValueError("volumes must be positive")
    mu = v.mean()
    return float(np.sqrt(np.mean((v - mu) ** 2)) / mu)


def tree_cost(tree: BspTree) -> float:
    return heuristic_cv(tree.leaf_volumes())


def is_feasible(tree: BspTree, fleet: FleetConfig) -> bool:
    return tree_feasible([v * 1e3 for v in tree.leaf_volumes()], fleet)


def target_leaf(tree: BspTree) -> str:
    """The leaf to cut next: largest volume, ties to the smaller id."""
    best = max(leaves(tree), key=lambda lf: (lf.volume, [-ord(ch) for ch in lf.id]))
    return best.id


class Candidate(NamedTuple):
    cost: float
    normal_index: int
    offset_index: int
    leaf_id: str
    tree: BspTree

    @property
    def key(self):
        return (self.cost, self.normal_index, self.offset_index, self.leaf_id)


class _Cache:
    """Split results keyed on the (shared) leaf mesh object and plane indices."""

    def __init__(self):
        self.volumes = {}
        self.parts = {}


def _extensions(tree: BspTree, target: str, params: SearchParams, normals,
                cache: Optional[_Cache] = None) -> list:
    cache = cache or _Cache()
    leaf = tree.leaf(target)
    mesh = leaf.mesh
    min_vol = MIN_CHUNK_FRACTION * tree.volume
    others = [lf.volume for lf in leaves(tree) if lf.id != target]
    scored = []
    for i, normal in enumerate(normals):
        for j, plane in enumerate(plane_family(mesh, normal, params.sampler.offsets_per_normal)):
            key = (mesh, i, j)
            if key not in cache.volumes:
                cache.volumes[key] = split_volumes(mesh, plane)
            v_neg, v_pos = cache.volumes[key]
            if v_neg <= 0 or v_pos <= 0 or min(v_neg, v_pos) < min_vol:
                continue
            scored.append((heuristic_cv(others + [v_neg, v_pos]), i, j, plane))
    scored.sort(key=lambda c: c[:3])
    out = []
    for _, i, j, plane in scored:
        key = (mesh, i, j)
        if key not in cache.parts:
            try:
                cache.parts[key] = slice_mesh(mesh, plane, min_vol)
            except CutError as exc:
                cache.parts[key] = exc
        parts = cache.parts[key]
        if isinstance(parts, Exception) or parts[0] is None or parts[1] is None:
            continue
        new = insert_cut(tree, plane, target, min_vol, parts=parts)
        new = with_cost(new, tree_cost(new))
        out.append(Candidate(new.cost, i, j, target, new))
        if len(out) == params.w_inner:
            break
    out.sort(key=lambda c: c.key)
    return out


def evaluate_extensions(tree: BspTree, target: str, params: SearchParams) -> list:
    """
    Best ``w_inner`` one-cut extensions of leaf ``target``, ascending by cost.

    Every sampled normal contributes its family of offset planes; planes
    that miss the leaf or leave a sliver contribute nothing.  An empty list
    means no valid extension exists.
    """
    normals = sample_normals(params.sampler)
    return [c.tree for c in _extensions(tree, target, params, normals)]


def _round_summary(k, pool, fleet, n_expanded, n_new):
    return {
        "round": k,
        "expanded": n_expanded,
        "new_trees": n_new,
        "pool": [{"cost": t.cost, "cuts": t.n_cuts, "feasible": is_feasible(t, fleet),
                  "last_cut": None if not t.cut_log else
                  {"target": t.cut_log[-1][1], **t.cut_log[-1][0].to_dict()}}
                 for t in pool],
    }


def plane_cut_search(mesh: TriangleMesh, fleet: FleetConfig, params: SearchParams,
                     trace: Optional[list] = None, map_fn: Optional[Callable] = None) -> BspTree:
    """
    Beam search for a cut tree whose chunks the fleet can print.

    Each round every infeasible tree in the pool is replaced by its best
    ``w_inner`` extensions; the merged extensions are cut back to the best
    ``w_outer`` and join the feasible trees already pooled.  The search
    stops once every pooled tree is feasible (or after ``max_iterations``
    rounds) and returns the cheapest feasible tree.

    ``trace``, when given, receives one summary dict per round.  ``map_fn``
    may replace the builtin ``map`` for evaluating trees in parallel; it is
    called as ``map_fn(func, trees)``.

    Raises
    ------
    InfeasibleError
      The fleet carries less material than the mesh volume.
    SearchExhaustedError
      No feasible tree was found; ``best_tree`` holds the cheapest attempt.
    """
    total_l = mesh.volume * 1e3
    if not check_primal_feasibility(total_l, fleet):
        raise InfeasibleError(
            f"mesh volume {total_l:.4f} L exceeds total fleet material {fleet.total:.4f} L")
    normals = sample_normals(params.sampler)
    cache = _Cache()
    pool = [BspTree.from_mesh(mesh)]
    if trace is not None:
        trace.append(_round_summary(0, pool, fleet, 0, 0))

    def expand(tree):
        return _extensions(tree, target_leaf(tree), params, normals, cache)

    for k in range(1, params.max_iterations + 1):
        feasible = [is_feasible(t, fleet) for t in pool]
        if all(feasible):
            break
        kept = [t for t, f in zip(pool, feasible) if f]
        todo = [t for t, f in zip(pool, feasible) if not f]
        results = list((map_fn or map)(expand, todo))
        new = [c for batch in results for c in batch]
        new.sort(key=lambda c: c.key)
        new = new[:params.w_outer]
        last_pool = pool
        pool = kept + [c.tree for c in new]
        log.info("round %d: expanded %d trees, kept %d new, pool %d", k, len(todo), len(new), len(pool))
        if trace is not None:
            trace.append(_round_summary(k, pool, fleet, len(todo), len(new)))
        if not pool:
            raise SearchExhaustedError(
                "no valid extension exists for any tree",
                min(last_pool, key=lambda t: (t.cost, t.n_cuts)))
    feasible = [t for t in pool if is_feasible(t, fleet)]
    if not feasible:
        raise SearchExhaustedError(
            f"no feasible tree after {params.max_iterations} rounds",
            min(pool, key=lambda t: (t.cost, t.n_cuts)))
    return min(feasible, key=lambda t: (t.cost, t.n_cuts))
