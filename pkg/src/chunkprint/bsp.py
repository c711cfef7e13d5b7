"""
Persistent binary space partitioning tree of planar cuts.

Internal nodes hold cut planes, leaves hold chunk meshes.  The negative
half (opposite the plane normal) is always the left child.  Extending a
tree rebuilds only the path from the root to the cut leaf, so trees that
share an ancestor share every untouched subtree.

Leaf ids are bit strings prefixed with ``c``: the root is ``c``, its
negative child ``c0``, its positive child ``c1`` and so on.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, replace
from typing import Union

import numpy as np

from .errors import CutMissError, UnknownLeafError
from .mesh import (
    MIN_CHUNK_FRACTION,
    CutPlane,
    TriangleMesh,
    face_normals,
    plane_basis,
    slice_mesh,
)

ROOT_ID = "c"


@dataclass(frozen=True, eq=False)
class Leaf:
    id: str
    mesh: TriangleMesh

    @property
    def volume(self) -> float:
        return self.mesh.volume


@dataclass(frozen=True, eq=False)
class Cut:
    id: str
    plane: CutPlane
    negative: "Node"
    positive: "Node"


Node = Union[Leaf, Cut]


@dataclass(frozen=True, eq=False)
class BspTree:
    root: Node
    cost: float = 0.0
    cut_log: tuple = ()
    volume: float = 0.0

    @classmethod
    def from_mesh(cls, mesh: TriangleMesh) -> "BspTree":
        return cls(Leaf(ROOT_ID, mesh.with_id(ROOT_ID)), 0.0, (), mesh.volume)

    @property
    def n_cuts(self) -> int:
        return len(self.cut_log)

    def leaf(self, leaf_id: str) -> Leaf:
        node = _descend(self.root, leaf_id)
        if not isinstance(node, Leaf):
            raise UnknownLeafError(leaf_id)
        return node

    def leaf_volumes(self) -> list:
        return [lf.volume for lf in leaves(self)]


def _descend(node: Node, leaf_id: str) -> Node:
    if not leaf_id.startswith(node.id):
        raise UnknownLeafError(leaf_id)
    for bit in leaf_id[len(node.id):]:
        if not isinstance(node, Cut) or bit not in "01":
            raise UnknownLeafError(leaf_id)
        node = node.negative if bit == "0" else node.positive
    return node


def _replace_leaf(node: Node, leaf_id: str, new: Node) -> Node:
    if node.id == leaf_id:
        return new
    if not isinstance(node, Cut):
        raise UnknownLeafError(leaf_id)
    bit = leaf_id[len(node.id)]
    if bit == "0":
        return Cut(node.id, node.plane, _replace_leaf(node.negative, leaf_id, new), node.positive)
    return Cut(node.id, node.plane, node.negative, _replace_leaf(node.positive, leaf_id, new))


def insert_cut(tree: BspTree, plane: CutPlane, target: str, min_volume=None,
               parts=None) -> BspTree:
    """
    Cut leaf ``target`` with ``plane`` and return the extended tree.

    The input tree is left untouched.  ``parts`` may carry a precomputed
    (negative, positive) split of the target mesh.  The new tree's cost is
    left as NaN for the caller to evaluate.

    Raises
    ------
    UnknownLeafError
      ``target`` is not a leaf of ``tree``.
    CutMissError
      The plane leaves the whole leaf on one side.
    DegenerateCutError
      A resulting part is below ``min_volume`` (default 0.1% of the root volume).
    """
    leaf = tree.leaf(target)
    if min_volume is None:
        min_volume = MIN_CHUNK_FRACTION * tree.volume
    neg, pos = parts if parts is not None else slice_mesh(leaf.mesh, plane, min_volume)
    if neg is None or pos is None:
        raise CutMissError(f"plane misses leaf {target}")
    node = Cut(target, plane, Leaf(target + "0", neg.with_id(target + "0")),
               Leaf(target + "1", pos.with_id(target + "1")))
    return BspTree(_replace_leaf(tree.root, target, node), math.nan,
                   tree.cut_log + ((plane, target),), tree.volume)


def _walk_leaves(node: Node, out: list):
    # explicit stack: in-order, negative side first
    stack = [node]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Leaf):
            out.append(cur)
        else:
            stack.append(cur.positive)
            stack.append(cur.negative)
    return out


def leaves(tree_or_node) -> list:
    node = tree_or_node.root if isinstance(tree_or_node, BspTree) else tree_or_node
    return _walk_leaves(node, [])


def inorder_priority(tree: BspTree) -> list:
    """Leaf ids in print order: every negative subtree before its positive sibling."""
    return [lf.id for lf in leaves(tree)]


def cut_nodes(tree: BspTree) -> list:
    out, stack = [], [tree.root]
    while stack:
        cur = stack.pop()
        if isinstance(cur, Cut):
            out.append(cur)
            stack.append(cur.positive)
            stack.append(cur.negative)
    return out


def dependencies(tree: BspTree) -> list:
    """
    Print-order edges (a, b): chunk a must finish before chunk b.

    Every leaf above a cut depends on every leaf below it; exact contact
    extraction would only drop edges.
    """
    edges = []
    for node in cut_nodes(tree):
        below = [lf.id for lf in leaves(node.negative)]
        above = [lf.id for lf in leaves(node.positive)]
        edges.extend((a, b) for a in below for b in above)
    return sorted(set(edges))


def _plane_polygons(mesh: TriangleMesh, plane: CutPlane, facing: float, tol: float):
    from shapely.geometry import Polygon
    from shapely.ops import unary_union

    d = np.abs(plane.signed_distance(mesh.vertices))
    on = d[mesh.faces].max(axis=1) <= tol
    if not on.any():
        return None
    faces = mesh.faces[on]
    up = face_normals(mesh.vertices, faces) @ np.asarray(plane.normal)
    faces = faces[up * facing > 0.5]
    if len(faces) == 0:
        return None
    u, v = plane_basis(plane.normal)
    tri = mesh.vertices[faces]
    polys = [Polygon(np.stack([t @ u, t @ v], axis=1)) for t in tri]
    return unary_union([p for p in polys if p.area > 0])


def contact_pairs(tree: BspTree, tol: float = 1e-7) -> list:
    """
    (lower id, upper id, area) for chunks touching across a cut plane.

    The upper chunk lies on the plane's positive side and rests on the
    lower one through a shared cap area.
    """
    out = []
    for node in cut_nodes(tree):
        lower = [(lf.id, _plane_polygons(lf.mesh, node.plane, +1.0, tol)) for lf in leaves(node.negative)]
        upper = [(lf.id, _plane_polygons(lf.mesh, node.plane, -1.0, tol)) for lf in leaves(node.positive)]
        for a, pa in lower:
            if pa is None:
                continue
            for b, pb in upper:
                if pb is None:
                    continue
                area = pa.intersection(pb).area
                if area > 0:
                    out.append((a, b, float(area)))
    return out


def to_json(tree: BspTree) -> dict:
    def node_doc(node):
        if isinstance(node, Leaf):
            return {"type": "leaf", "id": node.id, "volume_l": node.volume * 1e3}
        return {"type": "cut", "id": node.id, "plane": node.plane.to_dict(),
                "negative": node_doc(node.negative), "positive": node_doc(node.positive)}

    return {
        "cost": tree.cost,
        "volume_l": tree.volume * 1e3,
        "cut_log": [{"plane": p.to_dict(), "target": t} for p, t in tree.cut_log],
        "root": node_doc(tree.root),
    }


def from_json(doc: dict, chunks: dict) -> BspTree:
    """Rebuild a tree from its JSON document and a ``{leaf id: mesh}`` map."""
    def build(d):
        if d["type"] == "leaf":
            if d["id"] not in chunks:
                raise UnknownLeafError(d["id"])
            return Leaf(d["id"], chunks[d["id"]].with_id(d["id"]))
        return Cut(d["id"], CutPlane.from_dict(d["plane"]), build(d["negative"]), build(d["positive"]))

    log = tuple((CutPlane.from_dict(e["plane"]), e["target"]) for e in doc.get("cut_log", []))
    return BspTree(build(doc["root"]), doc.get("cost", math.nan), log, doc["volume_l"] * 1e-3)


def with_cost(tree: BspTree, cost: float) -> BspTree:
    return replace(tree, cost=cost)
