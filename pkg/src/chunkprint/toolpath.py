"""
Chunk slicing, waypoint timing and the nozzle-to-body transform.

A chunk is cut into horizontal layers; each layer gets one perimeter per
contour (inset by half a line width) and a rectilinear infill whose raster
direction alternates between layers.  The resulting segments are timed at a
constant average speed and finally shifted to the UAV body origin through
the arm geometry.
"""
from __future__ import annotations

import io
import math
from dataclasses import dataclass

import numpy as np
from shapely.geometry import LineString, MultiLineString, MultiPolygon, Polygon
from shapely.geometry.polygon import orient

from .errors import MeshError
from .mesh import CutPlane, TriangleMesh, section_loops

_JOIN_MITRE = 2
_CONNECT_TOL = 1e-6


@dataclass(frozen=True)
class PrintParams:
    layer_height: float = 0.01
    line_width: float = 0.01
    infill_fraction: float = 1.0
    avg_speed: float = 0.1
    deposition_rate: float = None

    def __post_init__(self):
        if self.layer_height <= 0 or self.line_width <= 0 or self.avg_speed <= 0:
            raise ValueError("layer_height, line_width and avg_speed must be positive")
        if not 0 <= self.infill_fraction <= 1:
            raise ValueError("infill_fraction must lie in [0, 1]")

    @property
    def extrusion_rate(self) -> float:
        """Liters per second while extruding."""
        if self.deposition_rate is not None:
            return self.deposition_rate
        return self.line_width * self.layer_height * self.avg_speed * 1e3


@dataclass(frozen=True)
class Toolpath:
    segments: np.ndarray        # (n, 2, 3)
    extruding: np.ndarray       # (n,) bool
    rate: np.ndarray            # (n,) liters / s
    layer: np.ndarray           # (n,) layer index

    def __len__(self):
        return len(self.segments)

    @property
    def lengths(self) -> np.ndarray:
        return np.linalg.norm(self.segments[:, 1] - self.segments[:, 0], axis=1)

    @property
    def total_length(self) -> float:
        return float(self.lengths.sum())

    @property
    def extruded_length(self) -> float:
        return float(self.lengths[self.extruding].sum())

    def to_text(self) -> str:
        buf = io.StringIO()
        for (a, b), ext, r in zip(self.segments, self.extruding, self.rate):
            buf.write(" ".join(repr(float(x)) for x in (*a, *b)))
            buf.write(f" {int(bool(ext))} {float(r)!r}\n")
        return buf.getvalue()

    @classmethod
    def from_text(cls, text: str) -> "Toolpath":
        rows = [ln.split() for ln in text.splitlines() if ln.strip()]
        arr = np.array(rows, dtype=float).reshape(-1, 8)
        return cls(arr[:, :6].reshape(-1, 2, 3), arr[:, 6] > 0.5, arr[:, 7],
                   np.zeros(len(arr), dtype=int))


@dataclass(frozen=True)
class Trajectory:
    times: np.ndarray           # (n,)
    positions: np.ndarray       # (n, 3)
    yaw: np.ndarray             # (n,)
    extruding: np.ndarray       # (n,) flag of the segment leaving each sample
    frame: str = "end-effector"

    def __len__(self):
        return len(self.times)

    @property
    def duration(self) -> float:
        return float(self.times[-1] - self.times[0]) if len(self.times) else 0.0

    def speeds(self) -> np.ndarray:
        d = np.linalg.norm(np.diff(self.positions, axis=0), axis=1)
        return d / np.diff(self.times)

    def to_csv(self) -> str:
        buf = io.StringIO()
        buf.write("time,x,y,z,yaw,extruding\n")
        for t, p, y, e in zip(self.times, self.positions, self.yaw, self.extruding):
            buf.write(f"{float(t)!r},{float(p[0])!r},{float(p[1])!r},{float(p[2])!r},"
                      f"{float(y)!r},{int(bool(e))}\n")
        return buf.getvalue()

    @classmethod
    def from_csv(cls, text: str, frame: str = "body") -> "Trajectory":
        lines = text.strip().splitlines()
        arr = np.array([ln.split(",") for ln in lines[1:]], dtype=float).reshape(-1, 6)
        return cls(arr[:, 0], arr[:, 1:4], arr[:, 4], arr[:, 5] > 0.5, frame)


@dataclass(frozen=True)
class ExtruderGeometry:
    l_ex: float = 0.0
    l_g: float = 0.0
    theta: float = 0.0

    def __post_init__(self):
        if self.l_ex < 0 or self.l_g < 0:
            raise ValueError("arm lengths must be non-negative")

    def nozzle_offset(self) -> np.ndarray:
        """Nozzle position in the (yaw-free) body frame."""
        return np.array([self.l_g * math.sin(self.theta), 0.0,
                         -self.l_ex - self.l_g * math.cos(self.theta)])


# ---------------------------------------------------------------- slicing


def _layer_heights(zmin: float, zmax: float, layer_height: float) -> list:
    height = zmax - zmin
    if height < layer_height:
        return [zmin + 0.5 * height]
    n = max(1, int(math.floor(height / layer_height + 0.5)))
    zs = []
    for k in range(n):
        z = zmin + (k + 0.5) * layer_height
        if z >= zmax:
            z = 0.5 * (zmin + k * layer_height + zmax)
        zs.append(z)
    return zs


def _layer_region(loops):
    region = None
    for lp in loops:
        if len(lp) < 3:
            continue
        poly = Polygon(lp[:, :2]).buffer(0)
        if poly.is_empty:
            continue
        region = poly if region is None else region.symmetric_difference(poly)
    if region is None or region.is_empty:
        return []
    parts = list(region.geoms) if hasattr(region, "geoms") else [region]
    parts = [orient(p) for p in parts if isinstance(p, Polygon) and p.area > 0]
    return sorted(parts, key=lambda p: (round(p.bounds[1], 9), round(p.bounds[0], 9)))


def _polygons(geom):
    if geom.is_empty:
        return []
    if isinstance(geom, Polygon):
        return [geom]
    if isinstance(geom, MultiPolygon):
        return list(geom.geoms)
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, Polygon)]


def _lines(geom):
    if geom.is_empty:
        return []
    if isinstance(geom, LineString):
        return [geom]
    if isinstance(geom, MultiLineString):
        return list(geom.geoms)
    return [g for g in getattr(geom, "geoms", []) if isinstance(g, LineString)]


def _infill(region: Polygon, spacing: float, along_x: bool) -> list:
    """Serpentine-ordered raster polylines clipped to ``region``."""
    x0, y0, x1, y1 = region.bounds
    lo, hi = (y0, y1) if along_x else (x0, x1)
    paths = []
    c = lo + 0.5 * spacing
    k = 0
    while c < hi:
        if along_x:
            ray = LineString([(x0 - 1.0, c), (x1 + 1.0, c)])
        else:
            ray = LineString([(c, y0 - 1.0), (c, y1 + 1.0)])
        pieces = [np.asarray(ln.coords) for ln in _lines(region.intersection(ray))]
        axis = 0 if along_x else 1
        pieces.sort(key=lambda p: p[:, axis].min())
        for p in pieces:
            if p[0, axis] > p[-1, axis]:
                p = p[::-1]
            paths.append(p)
        if k % 2:
            # reverse this raster row for a serpentine walk
            tail = paths[len(paths) - len(pieces):]
            paths[len(paths) - len(pieces):] = [p[::-1] for p in reversed(tail)]
        c += spacing
        k += 1
    return paths


def _layer_paths(region: Polygon, params: PrintParams, along_x: bool) -> list:
    w = params.line_width
    paths = []
    for shell in _polygons(region.buffer(-0.5 * w, join_style=_JOIN_MITRE)):
        for ring in [shell.exterior, *shell.interiors]:
            paths.append(np.asarray(ring.coords))
    if params.infill_fraction > 0:
        spacing = w / params.infill_fraction
        for core in _polygons(region.buffer(-w, join_style=_JOIN_MITRE)):
            paths.extend(_infill(core, spacing, along_x))
    return paths


def slice_chunk(chunk: TriangleMesh, params: PrintParams) -> Toolpath:
    """
    Layered perimeter-plus-infill toolpath for a chunk, bottom layer first.

    Extruding polylines are joined by explicit travel segments.
    """
    if chunk is None or chunk.is_empty:
        raise MeshError("cannot slice an empty mesh")
    zmin, zmax = chunk.bounds[:, 2]
    segs, ext, layer = [], [], []
    cursor = None
    for li, z in enumerate(_layer_heights(zmin, zmax, params.layer_height)):
        loops = section_loops(chunk, CutPlane((0.0, 0.0, 1.0), (0.0, 0.0, z)))
        for region in _layer_region(loops):
            for path in _layer_paths(region, params, along_x=(li % 2 == 0)):
                pts = np.column_stack([path, np.full(len(path), z)])
                if cursor is not None and np.linalg.norm(pts[0] - cursor) > _CONNECT_TOL:
                    segs.append((cursor, pts[0]))
                    ext.append(False)
                    layer.append(li)
                for a, b in zip(pts[:-1], pts[1:]):
                    segs.append((a, b))
                    ext.append(True)
                    layer.append(li)
                cursor = pts[-1]
    segments = np.array(segs, dtype=float).reshape(-1, 2, 3)
    extruding = np.array(ext, dtype=bool)
    rate = np.where(extruding, params.extrusion_rate, 0.0)
    return Toolpath(segments, extruding, rate, np.array(layer, dtype=int))


# ---------------------------------------------------------------- timing


def toolpath_to_trajectory(path: Toolpath, params: PrintParams) -> Trajectory:
    """Time the toolpath's waypoints at constant ``avg_speed``; zero-length segments are dropped."""
    v = params.avg_speed
    pts, flags, times = [], [], []
    cursor = None
    for (a, b), ext in zip(path.segments, path.extruding):
        length = float(np.linalg.norm(b - a))
        if length <= 1e-12:
            continue
        if cursor is None:
            pts.append(a)
            flags.append(False)
            times.append(0.0)
        elif np.linalg.norm(a - cursor) > _CONNECT_TOL:
            gap = float(np.linalg.norm(a - cursor))
            flags[-1] = False
            pts.append(a)
            flags.append(False)
            times.append(times[-1] + gap / v)
        flags[-1] = bool(ext)
        pts.append(b)
        flags.append(False)
        times.append(times[-1] + length / v)
        cursor = b
    n = len(pts)
    return Trajectory(np.array(times), np.array(pts, dtype=float).reshape(n, 3),
                      np.zeros(n), np.array(flags, dtype=bool), "end-effector")


# ---------------------------------------------------------------- frames


def _rotated_offsets(geom: ExtruderGeometry, yaw: np.ndarray) -> np.ndarray:
    off = geom.nozzle_offset()
    c, s = np.cos(yaw), np.sin(yaw)
    return np.stack([c * off[0] - s * off[1], s * off[0] + c * off[1], np.full_like(yaw, off[2])], axis=1)


def body_frame_transform(traj: Trajectory, geom: ExtruderGeometry) -> Trajectory:
    """
    Body-origin reference that places the nozzle on ``traj``.

    The arm drops ``l_ex`` from the body to the joint, then ``l_g`` along the
    nozzle axis tilted by ``theta`` about the joint's y axis; ``yaw``
    rotates the whole arm about z.
    """
    if traj.frame != "end-effector":
        raise ValueError(f"expected an end-effector trajectory, got frame {traj.frame!r}")
    body = traj.positions - _rotated_offsets(geom, traj.yaw)
    return Trajectory(traj.times, body, traj.yaw, traj.extruding, "body")


def end_effector_transform(traj: Trajectory, geom: ExtruderGeometry) -> Trajectory:
    """Inverse of :func:`body_frame_transform`."""
    if traj.frame != "body":
        raise ValueError(f"expected a body trajectory, got frame {traj.frame!r}")
    nozzle = traj.positions + _rotated_offsets(geom, traj.yaw)
    return Trajectory(traj.times, nozzle, traj.yaw, traj.extruding, "end-effector")
