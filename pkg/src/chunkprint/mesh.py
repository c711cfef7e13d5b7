"""
Triangle mesh kernel.

Meshes are immutable, watertight triangle soups in meters.  Everything the
planner does (volumes, projections, planar splits with capped cross
sections, layer sections for the slicer) goes through this module.
"""
from __future__ import annotations

import math
import re
import struct
from collections import defaultdict
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path
from typing import NamedTuple, Optional, Sequence

import numpy as np

from .errors import (
    DegenerateCutError,
    MeshError,
    MeshParseError,
    NotWatertightError,
)

# vertices closer than this to a cut plane are snapped onto it
SNAP_TOL = 1e-7
# vertices closer than this are merged on load
MERGE_TOL = 1e-7
# parts smaller than this fraction of the original mesh are slivers
MIN_CHUNK_FRACTION = 1e-3
VOLUME_RTOL = 1e-6

_STL_RECORD = np.dtype([("normal", "<f4", (3,)), ("tri", "<f4", (3, 3)), ("attr", "<u2")])


@dataclass(frozen=True, eq=False)
class TriangleMesh:
    """Immutable triangle mesh; faces are CCW seen from outside."""

    vertices: np.ndarray
    faces: np.ndarray
    id: str = ""

    def __post_init__(self):
        v = np.array(self.vertices, dtype=np.float64).reshape(-1, 3)
        f = np.array(self.faces, dtype=np.int64).reshape(-1, 3)
        if f.size and (f.min() < 0 or f.max() >= len(v)):
            raise MeshError("face index out of range")
        v.flags.writeable = False
        f.flags.writeable = False
        object.__setattr__(self, "vertices", v)
        object.__setattr__(self, "faces", f)

    def __repr__(self):
        return (f"TriangleMesh(id={self.id!r}, vertices={len(self.vertices)}, "
                f"faces={len(self.faces)}, volume={self.volume:.6g})")

    @cached_property
    def volume(self) -> float:
        return signed_volume(self.vertices, self.faces)

    @property
    def bounds(self) -> np.ndarray:
        return np.array([self.vertices.min(axis=0), self.vertices.max(axis=0)])

    @property
    def is_empty(self) -> bool:
        return len(self.faces) == 0

    def boundary_edges(self) -> np.ndarray:
        return boundary_edges(self.faces, len(self.vertices))

    @property
    def is_watertight(self) -> bool:
        return len(self.faces) > 0 and len(self.boundary_edges()) == 0

    def with_id(self, new_id: str) -> "TriangleMesh":
        out = TriangleMesh(self.vertices, self.faces, new_id)
        if "volume" in self.__dict__:
            out.__dict__["volume"] = self.volume
        return out

    def validate(self) -> "TriangleMesh":
        """Raise unless the mesh is closed, consistently oriented and has positive volume."""
        edges = self.boundary_edges()
        if len(edges):
            raise NotWatertightError(edges)
        if not self.volume > 0:
            raise MeshError(f"mesh volume must be positive, got {self.volume:.6g}")
        return self


@dataclass(frozen=True)
class CutPlane:
    normal: tuple
    point: tuple

    def __post_init__(self):
        n = tuple(float(x) for x in self.normal)
        p = tuple(float(x) for x in self.point)
        if len(n) != 3 or len(p) != 3:
            raise ValueError("plane normal and point must be 3-vectors")
        if abs(math.sqrt(sum(x * x for x in n)) - 1.0) > 1e-9:
            raise ValueError(f"plane normal must be unit length, got {n}")
        object.__setattr__(self, "normal", n)
        object.__setattr__(self, "point", p)

    @classmethod
    def through(cls, normal, point) -> "CutPlane":
        n = np.asarray(normal, dtype=float)
        return cls(tuple(n / np.linalg.norm(n)), tuple(np.asarray(point, dtype=float)))

    @classmethod
    def at_offset(cls, normal, offset: float) -> "CutPlane":
        n = np.asarray(normal, dtype=float)
        return cls(tuple(n), tuple(offset * n))

    @property
    def offset(self) -> float:
        return float(np.dot(self.normal, self.point))

    @property
    def tilt(self) -> float:
        """Angle between the normal and +z, radians."""
        return math.acos(max(-1.0, min(1.0, self.normal[2])))

    def signed_distance(self, points) -> np.ndarray:
        pts = np.asarray(points, dtype=float)
        return (pts - np.asarray(self.point)) @ np.asarray(self.normal)

    def to_dict(self) -> dict:
        return {"normal": list(self.normal), "point": list(self.point)}

    @classmethod
    def from_dict(cls, d) -> "CutPlane":
        return cls(tuple(d["normal"]), tuple(d["point"]))


class Interval(NamedTuple):
    lo: float
    hi: float

    @property
    def degenerate(self) -> bool:
        return self.hi - self.lo < 2 * SNAP_TOL


# ---------------------------------------------------------------- basics


def signed_volume(vertices, faces, origin=None) -> float:
    """Divergence-theorem volume of a closed triangle surface."""
    vertices = np.asarray(vertices, dtype=float)
    faces = np.asarray(faces)
    if len(faces) == 0:
        return 0.0
    if origin is None:
        origin = vertices.mean(axis=0)
    a = vertices[faces[:, 0]] - origin
    b = vertices[faces[:, 1]] - origin
    c = vertices[faces[:, 2]] - origin
    return float(np.einsum("ij,ij->", a, np.cross(b, c)) / 6.0)


def mesh_volume(mesh: TriangleMesh) -> float:
    return mesh.volume


def _directed_edges(faces):
    return np.concatenate([faces[:, [0, 1]], faces[:, [1, 2]], faces[:, [2, 0]]])


def boundary_edges(faces, n_vertices: int) -> np.ndarray:
    """Undirected edges that do not have exactly one opposite twin."""
    faces = np.asarray(faces, dtype=np.int64)
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = _directed_edges(faces)
    n = max(int(n_vertices), int(e.max()) + 1)
    key = e[:, 0] * n + e[:, 1]
    rkey = e[:, 1] * n + e[:, 0]
    uniq, counts = np.unique(key, return_counts=True)
    dup = np.isin(key, uniq[counts > 1])
    bad = dup | ~np.isin(rkey, uniq)
    if not bad.any():
        return np.zeros((0, 2), dtype=np.int64)
    return np.unique(np.sort(e[bad], axis=1), axis=0)


def project_interval(mesh: TriangleMesh, normal) -> Interval:
    proj = mesh.vertices @ np.asarray(normal, dtype=float)
    return Interval(float(proj.min()), float(proj.max()))


def compact(vertices, faces, mesh_id="") -> TriangleMesh:
    """Drop unreferenced vertices."""
    faces = np.asarray(faces, dtype=np.int64)
    used, inverse = np.unique(faces, return_inverse=True)
    return TriangleMesh(np.asarray(vertices)[used], inverse.reshape(-1, 3), mesh_id)


def weld(vertices, faces, tol=MERGE_TOL):
    """Merge vertices on a ``tol`` grid and drop faces that collapse."""
    vertices = np.asarray(vertices, dtype=np.float64)
    faces = np.asarray(faces, dtype=np.int64)
    keys = np.round(vertices / tol).astype(np.int64)
    _, first, inverse = np.unique(keys, axis=0, return_index=True, return_inverse=True)
    f = inverse.reshape(-1)[faces]
    keep = (f[:, 0] != f[:, 1]) & (f[:, 1] != f[:, 2]) & (f[:, 2] != f[:, 0])
    return vertices[first], f[keep]


# ---------------------------------------------------------------- I/O


def _parse_stl_binary(data: bytes) -> np.ndarray:
    if len(data) < 84:
        raise MeshParseError("binary STL shorter than its 84-byte header")
    (count,) = struct.unpack_from("<I", data, 80)
    if len(data) != 84 + 50 * count:
        raise MeshParseError(
            f"binary STL declares {count} triangles but holds {len(data) - 84} payload bytes")
    rec = np.frombuffer(data, dtype=_STL_RECORD, count=count, offset=84)
    return rec["tri"].astype(np.float64)


_FLOAT = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?"
_VERTEX_RE = re.compile(rf"vertex\s+({_FLOAT})\s+({_FLOAT})\s+({_FLOAT})")


def _parse_stl_ascii(data: bytes) -> np.ndarray:
    text = data.decode("ascii", errors="replace")
    if not text.lstrip().lower().startswith("solid"):
        raise MeshParseError("ASCII STL must start with 'solid'")
    coords = _VERTEX_RE.findall(text)
    if not coords or len(coords) % 3:
        raise MeshParseError(f"ASCII STL holds {len(coords)} vertices, not a multiple of 3")
    return np.array(coords, dtype=np.float64).reshape(-1, 3, 3)


def _parse_obj(data: bytes):
    verts, faces = [], []
    for lineno, raw in enumerate(data.decode("utf-8", errors="replace").splitlines(), 1):
        parts = raw.split("#", 1)[0].split()
        if not parts:
            continue
        try:
            if parts[0] == "v":
                verts.append([float(x) for x in parts[1:4]])
            elif parts[0] == "f":
                idx = []
                for tok in parts[1:]:
                    i = int(tok.split("/")[0])
                    idx.append(i - 1 if i > 0 else len(verts) + i)
                if len(idx) < 3:
                    raise ValueError("face with fewer than 3 vertices")
                for k in range(1, len(idx) - 1):
                    faces.append([idx[0], idx[k], idx[k + 1]])
        except (ValueError, IndexError) as exc:
            raise MeshParseError(f"OBJ line {lineno}: {exc}") from None
    if not faces:
        raise MeshParseError("OBJ contains no faces")
    v = np.array(verts, dtype=np.float64).reshape(-1, 3)
    f = np.array(faces, dtype=np.int64)
    if f.min() < 0 or f.max() >= len(v):
        raise MeshParseError("OBJ face references a missing vertex")
    return v, f


def load_mesh(data: bytes, fmt: str, mesh_id: str = "", validate: bool = True) -> TriangleMesh:
    """
    Parse mesh bytes and return a validated watertight mesh.

    With ``validate=False`` the welded mesh is returned unchecked.

    Parameters
    ----------
    data : bytes
      Raw file content.
    fmt : str
      One of ``stl-binary``, ``stl-ascii``, ``obj`` or ``stl`` (sniffed).

    Raises
    ------
    MeshParseError, NotWatertightError, MeshError
    """
    fmt = fmt.lower()
    if fmt == "stl":
        fmt = "stl-ascii" if _looks_ascii_stl(data) else "stl-binary"
    if fmt == "stl-binary":
        tris = _parse_stl_binary(data)
        v, f = tris.reshape(-1, 3), np.arange(3 * len(tris)).reshape(-1, 3)
    elif fmt == "stl-ascii":
        tris = _parse_stl_ascii(data)
        v, f = tris.reshape(-1, 3), np.arange(3 * len(tris)).reshape(-1, 3)
    elif fmt == "obj":
        v, f = _parse_obj(data)
    else:
        raise MeshParseError(f"unknown mesh format {fmt!r}")
    v, f = weld(v, f)
    if len(f) == 0:
        raise MeshParseError("mesh has no non-degenerate faces")
    mesh = compact(v, f, mesh_id)
    return mesh.validate() if validate else mesh


def _looks_ascii_stl(data: bytes) -> bool:
    if not data.lstrip()[:5].lower() == b"solid":
        return False
    if len(data) >= 84:
        (count,) = struct.unpack_from("<I", data, 80)
        if len(data) == 84 + 50 * count:
            return False
    return True


def read_mesh(path, fmt: Optional[str] = None, mesh_id: str = "") -> TriangleMesh:
    path = Path(path)
    if fmt is None:
        fmt = "obj" if path.suffix.lower() == ".obj" else "stl"
    return load_mesh(path.read_bytes(), fmt, mesh_id or path.stem)


def face_normals(vertices, faces) -> np.ndarray:
    tri = np.asarray(vertices)[np.asarray(faces)]
    n = np.cross(tri[:, 1] - tri[:, 0], tri[:, 2] - tri[:, 0])
    length = np.linalg.norm(n, axis=1, keepdims=True)
    return np.divide(n, length, out=np.zeros_like(n), where=length > 0)


def to_stl_binary(mesh: TriangleMesh, header: bytes = b"chunkprint") -> bytes:
    rec = np.zeros(len(mesh.faces), dtype=_STL_RECORD)
    rec["normal"] = face_normals(mesh.vertices, mesh.faces)
    rec["tri"] = mesh.vertices[mesh.faces]
    return header[:80].ljust(80, b"\0") + struct.pack("<I", len(rec)) + rec.tobytes()


def to_stl_ascii(mesh: TriangleMesh, name: str = "mesh") -> str:
    lines = [f"solid {name}"]
    for n, tri in zip(face_normals(mesh.vertices, mesh.faces), mesh.vertices[mesh.faces]):
        lines.append(f"  facet normal {n[0]:.9g} {n[1]:.9g} {n[2]:.9g}")
        lines.append("    outer loop")
        lines.extend(f"      vertex {p[0]:.12g} {p[1]:.12g} {p[2]:.12g}" for p in tri)
        lines.append("    endloop")
        lines.append("  endfacet")
    lines.append(f"endsolid {name}")
    return "\n".join(lines) + "\n"


# ---------------------------------------------------------------- plane split


class _Split(NamedTuple):
    vertices: np.ndarray
    on_plane: np.ndarray
    negative: np.ndarray
    positive: np.ndarray


def _split(mesh: TriangleMesh, plane: CutPlane) -> _Split:
    n = np.asarray(plane.normal)
    p = np.asarray(plane.point)
    V = mesh.vertices
    F = mesh.faces
    d = (V - p) @ n
    near = np.abs(d) <= SNAP_TOL
    if near.any():
        V = V.copy()
        V[near] -= np.outer(d[near], n)
        d = np.where(near, 0.0, d)
    s = np.sign(d).astype(np.int8)
    fs = s[F]
    nneg = (fs < 0).sum(axis=1)
    npos = (fs > 0).sum(axis=1)
    crossing = (nneg > 0) & (npos > 0)
    neg_mask = (npos == 0) & (nneg > 0)
    pos_mask = (nneg == 0) & (npos > 0)
    flat = (nneg == 0) & (npos == 0)
    if flat.any():
        up = face_normals(V, F[flat]) @ n
        neg_mask[np.flatnonzero(flat)[up >= 0]] = True
        pos_mask[np.flatnonzero(flat)[up < 0]] = True

    nv = len(V)
    cf, cs = F[crossing], fs[crossing]
    zero_count = (cs == 0).sum(axis=1)

    # one vertex alone on its side: rotate it to the front
    a_faces, a_signs = cf[zero_count == 0], cs[zero_count == 0]
    lone_sign = -a_signs.sum(axis=1).astype(np.int8)
    li = np.argmax(a_signs == lone_sign[:, None], axis=1)
    roll = (li[:, None] + np.arange(3)) % 3
    a_faces = np.take_along_axis(a_faces, roll, axis=1)

    # one vertex on the plane, the others on opposite sides
    b_faces, b_signs = cf[zero_count == 1], cs[zero_count == 1]
    zi = np.argmax(b_signs == 0, axis=1)
    roll = (zi[:, None] + np.arange(3)) % 3
    b_faces = np.take_along_axis(b_faces, roll, axis=1)

    la, ba, ca = a_faces.T
    zb, bb, cb = b_faces.T
    ends = np.concatenate([np.stack([la, ba], 1), np.stack([la, ca], 1), np.stack([bb, cb], 1)])
    lo, hi = ends.min(axis=1), ends.max(axis=1)
    uk, inv = np.unique(lo * nv + hi, return_inverse=True)
    ulo, uhi = uk // nv, uk % nv
    t = d[ulo] / (d[ulo] - d[uhi])
    X = V[ulo] + t[:, None] * (V[uhi] - V[ulo])
    X -= np.outer((X - p) @ n, n)
    xidx = nv + inv.reshape(-1)
    k = len(la)
    x_lb, x_lc, x_bc = xidx[:k], xidx[k:2 * k], xidx[2 * k:]

    lone = np.stack([la, x_lb, x_lc], 1)
    rest = np.concatenate([np.stack([x_lb, ba, ca], 1), np.stack([x_lb, ca, x_lc], 1)])
    rest_neg = np.concatenate([lone_sign > 0, lone_sign > 0])
    piece_b = np.stack([zb, bb, x_bc], 1)
    piece_c = np.stack([zb, x_bc, cb], 1)
    b_neg = s[bb] < 0

    negative = np.concatenate([
        F[neg_mask], lone[lone_sign < 0], rest[rest_neg], piece_b[b_neg], piece_c[~b_neg]])
    positive = np.concatenate([
        F[pos_mask], lone[lone_sign > 0], rest[~rest_neg], piece_b[~b_neg], piece_c[b_neg]])
    vertices = np.concatenate([V, X]) if len(X) else V
    on_plane = np.concatenate([d == 0, np.ones(len(X), dtype=bool)])
    return _Split(vertices, on_plane, negative.astype(np.int64), positive.astype(np.int64))


def split_volumes(mesh: TriangleMesh, plane: CutPlane):
    """
    Volumes of the two halves of ``mesh`` without building the caps.

    Measuring the divergence sum from a point on the plane makes the cap
    contribution vanish, so only the clipped surface faces are needed.
    """
    sp = _split(mesh, plane)
    origin = np.asarray(plane.point)
    return (signed_volume(sp.vertices, sp.negative, origin),
            signed_volume(sp.vertices, sp.positive, origin))


def plane_basis(normal):
    """Orthonormal (u, v) with u x v = normal."""
    n = np.asarray(normal, dtype=float)
    helper = np.array([0.0, 1.0, 0.0]) if abs(n[1]) < 0.9 else np.array([0.0, 0.0, 1.0])
    u = np.cross(helper, n)
    u /= np.linalg.norm(u)
    return u, np.cross(n, u)


def _open_plane_edges(faces, on_plane):
    """Directed edges of ``faces`` lying in the plane and lacking an opposite twin."""
    if len(faces) == 0:
        return np.zeros((0, 2), dtype=np.int64)
    e = _directed_edges(faces)
    e = e[on_plane[e[:, 0]] & on_plane[e[:, 1]]]
    if len(e) == 0:
        return e
    n = int(e.max()) + 1
    key = e[:, 0] * n + e[:, 1]
    return e[~np.isin(e[:, 1] * n + e[:, 0], key)]


def _chain_loops(edges, xy) -> list:
    """Chain directed edges into closed vertex loops, taking the leftmost turn at branches."""
    out = defaultdict(list)
    for i, (a, _) in enumerate(edges):
        out[int(a)].append(i)
    used = np.zeros(len(edges), dtype=bool)
    loops = []
    for i0 in range(len(edges)):
        if used[i0]:
            continue
        start = int(edges[i0][0])
        loop, i = [], i0
        while True:
            used[i] = True
            a, b = int(edges[i][0]), int(edges[i][1])
            loop.append(a)
            cands = [j for j in out[b] if not used[j]]
            if b == start:
                cands.append(i0)
            if not cands:
                raise DegenerateCutError("cross-section boundary does not close")
            if len(cands) > 1:
                din = xy[b] - xy[a]
                turns = []
                for j in cands:
                    dout = xy[int(edges[j][1])] - xy[b]
                    turns.append(math.atan2(din[0] * dout[1] - din[1] * dout[0],
                                            din[0] * dout[0] + din[1] * dout[1]))
                nxt = cands[int(np.argmax(turns))]
            else:
                nxt = cands[0]
            if nxt == i0:
                break
            i = nxt
        loops.append(loop)
    return loops


def _loop_area(loop, xy) -> float:
    pts = xy[loop]
    x, y = pts[:, 0], pts[:, 1]
    return 0.5 * float(np.dot(x, np.roll(y, -1)) - np.dot(np.roll(x, -1), y))


def _point_in_polygon(pt, poly_xy) -> bool:
    x, y = pt
    xs, ys = poly_xy[:, 0], poly_xy[:, 1]
    xn, yn = np.roll(xs, -1), np.roll(ys, -1)
    crosses = (ys > y) != (yn > y)
    with np.errstate(divide="ignore", invalid="ignore"):
        xint = xs + (y - ys) * (xn - xs) / (yn - ys)
    return bool(np.count_nonzero(crosses & (x < xint)) % 2)


def _cross2(o, a, b):
    return (a[0] - o[0]) * (b[1] - o[1]) - (a[1] - o[1]) * (b[0] - o[0])


def _in_cone(prev_pt, pt, next_pt, target) -> bool:
    a, b = prev_pt - pt, next_pt - pt
    w = target - pt
    if _cross2(prev_pt, pt, next_pt) > 0:
        return (b[0] * w[1] - b[1] * w[0]) > 0 and (w[0] * a[1] - w[1] * a[0]) > 0
    return not ((a[0] * w[1] - a[1] * w[0]) >= 0 and (w[0] * b[1] - w[1] * b[0]) >= 0)


def _segment_blocked(m_id, p_id, xy, edge_sets, eps) -> bool:
    m, p = xy[m_id], xy[p_id]
    for ea, eb in edge_sets:
        keep = (ea != m_id) & (eb != m_id) & (ea != p_id) & (eb != p_id)
        a, b = xy[ea[keep]], xy[eb[keep]]
        if len(a) == 0:
            continue
        d1 = (p[0] - m[0]) * (a[:, 1] - m[1]) - (p[1] - m[1]) * (a[:, 0] - m[0])
        d2 = (p[0] - m[0]) * (b[:, 1] - m[1]) - (p[1] - m[1]) * (b[:, 0] - m[0])
        d3 = (b[:, 0] - a[:, 0]) * (m[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (m[0] - a[:, 0])
        d4 = (b[:, 0] - a[:, 0]) * (p[1] - a[:, 1]) - (b[:, 1] - a[:, 1]) * (p[0] - a[:, 0])
        if np.any((d1 * d2 < 0) & (d3 * d4 < 0)):
            return True
        # a vertex lying on the open bridge segment also blocks it
        seg = p - m
        L2 = float(seg @ seg)
        t = ((a - m) @ seg) / L2
        on = (np.abs(d1) <= eps) & (t > 0) & (t < 1)
        if on.any():
            return True
    return False


def _bridge_holes(outer, holes, xy, eps):
    """Splice CW hole loops into the CCW outer loop through mutually visible vertices."""
    poly = list(outer)
    holes = sorted(holes, key=lambda h: -max(xy[i][0] for i in h))
    for hi, hole in enumerate(holes):
        mpos = max(range(len(hole)), key=lambda k: (xy[hole[k]][0], xy[hole[k]][1]))
        m_id = hole[mpos]
        mpt = xy[m_id]
        others = holes[hi:]
        edge_sets = [(np.array(poly), np.roll(np.array(poly), -1))]
        edge_sets += [(np.array(h), np.roll(np.array(h), -1)) for h in others]
        order = sorted(range(len(poly)), key=lambda k: (float(np.sum((xy[poly[k]] - mpt) ** 2)), k))
        chosen = None
        for k in order:
            p_id = poly[k]
            if np.allclose(xy[p_id], mpt):
                continue
            prev_pt, next_pt = xy[poly[k - 1]], xy[poly[(k + 1) % len(poly)]]
            if not _in_cone(prev_pt, xy[p_id], next_pt, mpt):
                continue
            if _segment_blocked(m_id, p_id, xy, edge_sets, eps):
                continue
            chosen = k
            break
        if chosen is None:
            raise DegenerateCutError("no visible bridge vertex for cross-section hole")
        rotated = hole[mpos:] + hole[:mpos]
        poly = poly[:chosen + 1] + rotated + [m_id, poly[chosen]] + poly[chosen + 1:]
    return poly


def _ear_clip(poly, xy, eps) -> list:
    """Ear clipping of a weakly simple CCW polygon given as vertex ids (duplicates allowed)."""
    n = len(poly)
    if n < 3:
        return []
    px = np.array([xy[i][0] for i in poly], dtype=float)
    py = np.array([xy[i][1] for i in poly], dtype=float)
    pts = list(zip(px.tolist(), py.tolist()))
    prev = [(k - 1) % n for k in range(n)]
    nxt = [(k + 1) % n for k in range(n)]
    alive = n

    def cross(k):
        a, b, c = pts[prev[k]], pts[k], pts[nxt[k]]
        return (b[0] - a[0]) * (c[1] - b[1]) - (b[1] - a[1]) * (c[0] - b[0])

    reflex = np.array([cross(k) <= eps for k in range(n)])
    reflex_idx = np.flatnonzero(reflex)
    pad = math.sqrt(eps)

    def is_ear(k):
        if reflex[k]:
            return False
        ia, ic = prev[k], nxt[k]
        a, b, c = pts[ia], pts[k], pts[ic]
        if reflex_idx.size == 0:
            return True
        qx, qy = px[reflex_idx], py[reflex_idx]
        box = ((qx >= min(a[0], b[0], c[0]) - pad) & (qx <= max(a[0], b[0], c[0]) + pad)
               & (qy >= min(a[1], b[1], c[1]) - pad) & (qy <= max(a[1], b[1], c[1]) + pad))
        ids = (poly[ia], poly[k], poly[ic])
        for r in reflex_idx[box].tolist():
            if r in (ia, k, ic) or poly[r] in ids:
                continue
            q = pts[r]
            if q == a or q == b or q == c:
                continue
            if (_cross2(a, b, q) >= -eps and _cross2(b, c, q) >= -eps
                    and _cross2(c, a, q) >= -eps):
                return False
        return True

    tris = []
    k, misses = 0, 0
    while alive > 3:
        stuck = misses > alive
        if stuck or is_ear(k):
            if stuck:
                # no clean ear left: clip the most convex vertex
                k = max(_walk(k, nxt, alive), key=cross)
            ia, ic = prev[k], nxt[k]
            tris.append((poly[ia], poly[k], poly[ic]))
            nxt[ia], prev[ic] = ic, ia
            reflex[k] = False
            alive -= 1
            for j in (ia, ic):
                reflex[j] = cross(j) <= eps
            reflex_idx = np.flatnonzero(reflex)
            k, misses = ic, 0
        else:
            k = nxt[k]
            misses += 1
    tris.append((poly[prev[k]], poly[k], poly[nxt[k]]))
    return tris


def _walk(start, nxt, count):
    k = start
    for _ in range(count):
        yield k
        k = nxt[k]


def _triangulate_loops(loops, xy) -> list:
    span = float(np.ptp(xy, axis=0).max()) if len(xy) else 1.0
    eps = 1e-12 * max(span, 1e-9) ** 2
    areas = [_loop_area(lp, xy) for lp in loops]
    outers = [i for i, a in enumerate(areas) if a > 0]
    holes_of = {i: [] for i in outers}
    for i, a in enumerate(areas):
        if a > 0:
            continue
        lp = loops[i]
        pts = xy[lp]
        seg = np.roll(pts, -1, axis=0) - pts
        j = int(np.argmax(np.einsum("ij,ij->i", seg, seg)))
        probe = pts[j] + 0.5 * seg[j] + 1e-6 * np.array([-seg[j][1], seg[j][0]])
        owners = [o for o in outers if _point_in_polygon(probe, xy[loops[o]])]
        if not owners:
            raise DegenerateCutError("cross-section hole outside every outer loop")
        holes_of[min(owners, key=lambda o: areas[o])].append(lp)
    tris = []
    for o in outers:
        poly = _bridge_holes(loops[o], holes_of[o], xy, eps) if holes_of[o] else loops[o]
        tris.extend(_ear_clip(poly, xy, eps))
    return tris


def _cap(vertices, on_plane, faces, normal) -> np.ndarray:
    open_edges = _open_plane_edges(faces, on_plane)
    if len(open_edges) == 0:
        return np.zeros((0, 3), dtype=np.int64)
    cap_edges = open_edges[:, ::-1]
    u, v = plane_basis(normal)
    xy = np.zeros((len(vertices), 2))
    ids = np.unique(cap_edges)
    xy[ids] = np.stack([vertices[ids] @ u, vertices[ids] @ v], axis=1)
    loops = _chain_loops(cap_edges, xy)
    return np.array(_triangulate_loops(loops, xy), dtype=np.int64).reshape(-1, 3)


def section_loops(mesh: TriangleMesh, plane: CutPlane) -> list:
    """
    Closed cross-section loops of ``mesh`` with ``plane``.

    Returns a list of (k, 3) point arrays.  Outer boundaries run CCW seen
    from the +normal side, holes run CW.
    """
    sp = _split(mesh, plane)
    open_edges = _open_plane_edges(sp.negative, sp.on_plane)
    if len(open_edges) == 0:
        return []
    cap_edges = open_edges[:, ::-1]
    u, v = plane_basis(plane.normal)
    xy = np.stack([sp.vertices @ u, sp.vertices @ v], axis=1)
    return [sp.vertices[lp] for lp in _chain_loops(cap_edges, xy)]


def slice_mesh(mesh: TriangleMesh, plane: CutPlane, min_volume: float = 0.0):
    """
    Split ``mesh`` by ``plane`` into capped (negative, positive) parts.

    The positive part lies on the side the normal points to.  An empty
    side is returned as ``None`` and the other side is the input mesh.

    Raises
    ------
    DegenerateCutError
      A part is smaller than ``min_volume`` or its cap could not be closed.
    """
    sp = _split(mesh, plane)
    if len(sp.negative) == 0 or len(sp.positive) == 0:
        return (None, mesh) if len(sp.negative) == 0 else (mesh, None)
    origin = np.asarray(plane.point)
    v_neg = signed_volume(sp.vertices, sp.negative, origin)
    v_pos = signed_volume(sp.vertices, sp.positive, origin)
    if v_neg <= 0 and v_pos > 0 and abs(v_neg) <= VOLUME_RTOL * mesh.volume:
        return None, mesh
    if v_pos <= 0 and v_neg > 0 and abs(v_pos) <= VOLUME_RTOL * mesh.volume:
        return mesh, None
    if min(v_neg, v_pos) < max(min_volume, 0.0) or min(v_neg, v_pos) <= 0:
        raise DegenerateCutError(
            f"cut leaves a sliver (volumes {v_neg:.6g}, {v_pos:.6g}; minimum {min_volume:.6g})")
    n = np.asarray(plane.normal)
    parts = []
    for faces, normal, expected in ((sp.negative, n, v_neg), (sp.positive, -n, v_pos)):
        cap = _cap(sp.vertices, sp.on_plane, faces, normal)
        part = compact(sp.vertices, np.concatenate([faces, cap]))
        if len(part.boundary_edges()):
            raise DegenerateCutError("capped part is not watertight")
        if abs(part.volume - expected) > VOLUME_RTOL * abs(mesh.volume):
            raise DegenerateCutError("cap triangulation changed the part volume")
        parts.append(part)
    if abs(parts[0].volume + parts[1].volume - mesh.volume) > VOLUME_RTOL * abs(mesh.volume):
        raise DegenerateCutError("cut does not conserve volume")
    return parts[0], parts[1]


def min_chunk_volume(total_volume: float) -> float:
    return MIN_CHUNK_FRACTION * total_volume


def merge_meshes(meshes: Sequence[TriangleMesh], mesh_id: str = "") -> TriangleMesh:
    verts, faces, offset = [], [], 0
    for m in meshes:
        verts.append(m.vertices)
        faces.append(m.faces + offset)
        offset += len(m.vertices)
    return TriangleMesh(np.concatenate(verts), np.concatenate(faces), mesh_id)
