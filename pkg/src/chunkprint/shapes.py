"""Closed test meshes: boxes, tetrahedra, hemispherical domes and tori."""
from __future__ import annotations

import argparse
import math
from pathlib import Path

import numpy as np

from .mesh import TriangleMesh, to_stl_binary

_BOX_FACES = np.array([
    [0, 2, 1], [0, 3, 2],  # z = lo
    [4, 5, 6], [4, 6, 7],  # z = hi
    [0, 1, 5], [0, 5, 4],  # y = lo
    [2, 3, 7], [2, 7, 6],  # y = hi
    [1, 2, 6], [1, 6, 5],  # x = hi
    [3, 0, 4], [3, 4, 7],  # x = lo
])


def box(lo=(0.0, 0.0, 0.0), hi=(1.0, 1.0, 1.0), mesh_id="box") -> TriangleMesh:
    (x0, y0, z0), (x1, y1, z1) = lo, hi
    v = [[x0, y0, z0], [x1, y0, z0], [x1, y1, z0], [x0, y1, z0],
         [x0, y0, z1], [x1, y0, z1], [x1, y1, z1], [x0, y1, z1]]
    return TriangleMesh(v, _BOX_FACES, mesh_id)


def cube(size=1.0) -> TriangleMesh:
    return box((0, 0, 0), (size, size, size), "cube")


def tetrahedron() -> TriangleMesh:
    """Corner tetrahedron with vertices at the origin and the unit axes."""
    v = [[0, 0, 0], [1, 0, 0], [0, 1, 0], [0, 0, 1]]
    f = [[0, 2, 1], [0, 1, 3], [0, 3, 2], [1, 2, 3]]
    return TriangleMesh(v, f, "tetrahedron")


def _rings(radius, rings, segments, z_top=True):
    """Vertices of a hemisphere surface from the pole down to the equator (pole first)."""
    pts = [[0.0, 0.0, radius]]
    for k in range(1, rings + 1):
        phi = 0.5 * math.pi * k / rings
        r, z = radius * math.sin(phi), radius * math.cos(phi)
        for j in range(segments):
            th = 2 * math.pi * j / segments
            pts.append([r * math.cos(th), r * math.sin(th), z])
    return np.array(pts)


def _hemisphere_faces(rings, segments, base):
    def ring(k, j):
        return base + 1 + (k - 1) * segments + (j % segments)

    faces = [[base, ring(1, j), ring(1, j + 1)] for j in range(segments)]
    for k in range(1, rings):
        for j in range(segments):
            a, b = ring(k, j), ring(k, j + 1)
            c, d = ring(k + 1, j), ring(k + 1, j + 1)
            faces.append([a, c, d])
            faces.append([a, d, b])
    return faces


def hemisphere(radius=1.0, rings=16, segments=48) -> TriangleMesh:
    """Solid hemisphere standing on the z=0 plane."""
    pts = _rings(radius, rings, segments)
    faces = _hemisphere_faces(rings, segments, 0)
    center = len(pts)
    pts = np.vstack([pts, [0.0, 0.0, 0.0]])
    last = 1 + (rings - 1) * segments
    for j in range(segments):
        faces.append([center, last + (j + 1) % segments, last + j])
    return TriangleMesh(pts, faces, "hemisphere")


def dome(outer_radius=1.0, thickness=0.2, rings=12, segments=48) -> TriangleMesh:
    """Hollow hemispherical shell (a dome) standing on the z=0 plane."""
    if not 0 < thickness < outer_radius:
        raise ValueError("thickness must lie in (0, outer_radius)")
    outer = _rings(outer_radius, rings, segments)
    inner = _rings(outer_radius - thickness, rings, segments)
    faces = _hemisphere_faces(rings, segments, 0)
    n = len(outer)
    faces += [[f[0], f[2], f[1]] for f in _hemisphere_faces(rings, segments, n)]
    last = 1 + (rings - 1) * segments
    for j in range(segments):
        o0, o1 = last + j, last + (j + 1) % segments
        i0, i1 = n + o0, n + o1
        faces.append([o0, i1, o1])
        faces.append([o0, i0, i1])
    return TriangleMesh(np.vstack([outer, inner]), faces, "dome")


def scaled_to_volume(mesh: TriangleMesh, volume: float) -> TriangleMesh:
    """Uniformly scale about the origin so the mesh encloses ``volume``."""
    k = (volume / mesh.volume) ** (1.0 / 3.0)
    return TriangleMesh(mesh.vertices * k, mesh.faces, mesh.id)


def torus(major=1.0, minor=0.35, segments=32, tube_segments=16, z_offset=None) -> TriangleMesh:
    """Torus around the z axis; by default it rests on z=0."""
    if z_offset is None:
        z_offset = minor
    pts = []
    for i in range(segments):
        u = 2 * math.pi * i / segments
        for j in range(tube_segments):
            v = 2 * math.pi * j / tube_segments
            r = major + minor * math.cos(v)
            pts.append([r * math.cos(u), r * math.sin(u), z_offset + minor * math.sin(v)])
    faces = []
    for i in range(segments):
        for j in range(tube_segments):
            a = i * tube_segments + j
            b = ((i + 1) % segments) * tube_segments + j
            c = ((i + 1) % segments) * tube_segments + (j + 1) % tube_segments
            d = i * tube_segments + (j + 1) % tube_segments
            faces.append([a, b, c])
            faces.append([a, c, d])
    mesh = TriangleMesh(pts, faces, "torus")
    if mesh.volume < 0:
        mesh = TriangleMesh(pts, np.asarray(faces)[:, ::-1], "torus")
    return mesh


DOME_VOLUME_M3 = 25.24e-3


def dome_scenario_mesh(rings=10, segments=40, thickness_ratio=0.2) -> TriangleMesh:
    """Hemispherical dome shell enclosing 25.24 L."""
    mesh = dome(1.0, thickness_ratio, rings, segments)
    return scaled_to_volume(mesh, DOME_VOLUME_M3)


SHAPES = {
    "box": box, "cube": cube, "tetrahedron": tetrahedron, "hemisphere": hemisphere,
    "dome": dome, "dome_scenario": dome_scenario_mesh, "torus": torus,
}


def main(argv=None):
    parser = argparse.ArgumentParser(description="Write a generated test mesh as binary STL.")
    parser.add_argument("shape", choices=["cube", "tetrahedron", "hemisphere", "dome", "torus"])
    parser.add_argument("output", type=Path)
    parser.add_argument("--volume-l", type=float, default=None,
                        help="rescale to this volume in liters (dome defaults to 25.24)")
    args = parser.parse_args(argv)
    mesh = SHAPES["dome_scenario" if args.shape == "dome" else args.shape]()
    if args.volume_l is not None:
        mesh = scaled_to_volume(mesh, args.volume_l * 1e-3)
    args.output.write_bytes(to_stl_binary(mesh))
    print(f"{args.shape}: {len(mesh.faces)} faces, {mesh.volume * 1e3:.4f} L -> {args.output}")


if __name__ == "__main__":
    main()
