import math
from fractions import Fraction

import numpy as np
import pytest
import trimesh
from hypothesis import given
from hypothesis import strategies as st
from scipy.spatial import ConvexHull

from chunkprint.errors import DegenerateCutError, MeshParseError, NotWatertightError, MeshError
from chunkprint.mesh import (
    CutPlane,
    TriangleMesh,
    load_mesh,
    project_interval,
    read_mesh,
    section_loops,
    signed_volume,
    slice_mesh,
    split_volumes,
    to_stl_ascii,
    to_stl_binary,
)
from chunkprint.shapes import box, cube, dome_scenario_mesh, hemisphere, tetrahedron, torus

from conftest import unit_vector

CUBE_OBJ = b"""
v 0 0 0
v 1 0 0
v 1 1 0
v 0 1 0
v 0 0 1
v 1 0 1
v 1 1 1
v 0 1 1
f 1 4 3 2
f 5 6 7 8
f 1 2 6 5
f 2 3 7 6
f 3 4 8 7
f 4 1 5 8
"""


# ---------------------------------------------------------------- loading


def test_ascii_stl_cube_welds_to_8_vertices():
    text = to_stl_ascii(cube()).encode()
    assert text.lstrip().startswith(b"solid")
    m = load_mesh(text, "stl-ascii")
    assert (len(m.vertices), len(m.faces)) == (8, 12)
    assert m.volume == pytest.approx(1.0, abs=1e-12)


def test_binary_stl_roundtrip_preserves_geometry():
    src = torus()
    back = load_mesh(to_stl_binary(src), "stl")
    assert len(back.faces) == len(src.faces)
    assert back.volume == pytest.approx(src.volume, rel=1e-6)  # float32 storage


def test_stl_format_is_sniffed():
    ascii_ = to_stl_ascii(cube()).encode()
    binary = to_stl_binary(cube())
    assert load_mesh(ascii_, "stl").volume == pytest.approx(1.0)
    assert load_mesh(binary, "stl").volume == pytest.approx(1.0)


def test_obj_quads_are_fanned():
    m = load_mesh(CUBE_OBJ, "obj")
    assert (len(m.vertices), len(m.faces)) == (8, 12)
    assert m.volume == pytest.approx(1.0)


def test_obj_missing_face_reports_boundary_edges():
    data = CUBE_OBJ.replace(b"f 5 6 7 8\n", b"")
    with pytest.raises(NotWatertightError) as err:
        load_mesh(data, "obj")
    edges = np.asarray(err.value.boundary_edges)
    assert len(edges) == 4
    raw = np.array([[0, 0, 0], [1, 0, 0], [1, 1, 0], [0, 1, 0],
                    [0, 0, 1], [1, 0, 1], [1, 1, 1], [0, 1, 1]], dtype=float)
    assert str(edges[0].tolist()[0]) in str(err.value)
    m = load_mesh(data, "obj", validate=False)
    ends = m.vertices[edges.ravel()]
    assert np.all(ends[:, 2] == 1.0)  # the open rim is the missing top face
    assert {tuple(p) for p in ends} == {tuple(p) for p in raw[4:]}


def test_inside_out_mesh_is_rejected():
    inv = TriangleMesh(cube().vertices, cube().faces[:, ::-1])
    with pytest.raises(MeshError, match="volume"):
        inv.validate()


@pytest.mark.parametrize("data, fmt", [
    (b"garbage", "stl-binary"),
    (b"solid x\nfacet normal 0 0 1\nvertex 1 2\nendsolid", "stl-ascii"),
    (b"v 0 0 0\nf 1 2", "obj"),
    (b"v 0 0 0\nf 1 2 9", "obj"),
    (b"", "obj"),
    (b"x", "ply"),
])
def test_parse_failures(data, fmt):
    with pytest.raises(MeshParseError):
        load_mesh(data, fmt)


def test_icosphere_binary_stl_volume(tmp_path):
    # independent generator: trimesh's subdivided icosahedron
    ico = trimesh.creation.icosphere(subdivisions=3, radius=1.0)
    assert len(ico.faces) == 1280
    path = tmp_path / "ico.stl"
    ico.export(path, file_type="stl")
    m = read_mesh(path)
    assert m.is_watertight
    assert m.volume == pytest.approx(4 * math.pi / 3, rel=0.02)
    assert m.volume == pytest.approx(ico.volume, rel=1e-6)


# ---------------------------------------------------------------- volume


def test_unit_cube_volume():
    assert cube().volume == 1.0


def test_tetrahedron_volume_is_one_sixth():
    assert tetrahedron().volume == pytest.approx(1 / 6, abs=1e-15)


def test_volume_independent_of_origin():
    m = torus()
    assert signed_volume(m.vertices, m.faces, origin=(3.0, -2.0, 7.0)) == pytest.approx(m.volume, rel=1e-12)


def test_hemisphere_volume_converges():
    exact = 2 * math.pi / 3
    coarse = abs(hemisphere(1.0, 8, 24).volume - exact)
    fine = abs(hemisphere(1.0, 32, 96).volume - exact)
    assert fine < coarse
    assert fine / exact < 3e-3


def test_dome_scenario_volume():
    assert dome_scenario_mesh().volume == pytest.approx(0.02524, rel=1e-12)


def test_volume_matches_trimesh():
    m = torus()
    assert m.volume == pytest.approx(trimesh.Trimesh(m.vertices, m.faces).volume, rel=1e-12)


# ---------------------------------------------------------------- projection


def test_project_interval_axis():
    assert tuple(project_interval(cube(), (0, 0, 1))) == (0.0, 1.0)


def test_project_interval_diagonal():
    lo, hi = project_interval(cube(), np.ones(3) / math.sqrt(3))
    assert lo == 0.0
    assert hi == pytest.approx(math.sqrt(3), abs=1e-15)


def test_flat_projection_is_degenerate():
    assert project_interval(box(hi=(1, 1, 1e-9)), (0, 0, 1)).degenerate
    assert not project_interval(cube(), (0, 0, 1)).degenerate


def test_plane_normal_must_be_unit():
    with pytest.raises(ValueError):
        CutPlane((0, 0, 2), (0, 0, 0))
    assert CutPlane.through((0, 0, 2), (0, 0, 1)).normal == (0.0, 0.0, 1.0)


# ---------------------------------------------------------------- slicing


def test_cube_half_split():
    neg, pos = slice_mesh(cube(), CutPlane((0, 0, 1), (0, 0, 0.5)))
    assert neg.volume == pytest.approx(0.5, abs=1e-15)
    assert pos.volume == pytest.approx(0.5, abs=1e-15)
    assert neg.is_watertight and pos.is_watertight
    assert neg.bounds[1, 2] == pytest.approx(0.5) and pos.bounds[0, 2] == pytest.approx(0.5)


def test_plane_missing_mesh_returns_input():
    c = cube()
    neg, pos = slice_mesh(c, CutPlane((0, 0, 1), (0, 0, 2)))
    assert neg is c and pos is None
    neg, pos = slice_mesh(c, CutPlane((0, 0, 1), (0, 0, -2)))
    assert neg is None and pos is c


def test_plane_through_face_is_a_miss():
    c = cube()
    neg, pos = slice_mesh(c, CutPlane((0, 0, 1), (0, 0, 1.0)))
    assert neg is c and pos is None


def _exact_clip_volume(tet, normal, offset):
    """Volume of {x : n.x >= offset} inside a tetrahedron, with exact rationals."""
    # split the tetrahedron by enumerating the clipped polytope's vertices and
    # fanning it into tetrahedra from one vertex (convex polytope).
    verts = [tuple(Fraction(c) for c in v) for v in tet]
    n = [Fraction(c) for c in normal]
    d = Fraction(offset)
    dist = [sum(a * b for a, b in zip(n, v)) - d for v in verts]
    pts = [v for v, s in zip(verts, dist) if s >= 0]
    for i in range(4):
        for j in range(i + 1, 4):
            if (dist[i] > 0 > dist[j]) or (dist[i] < 0 < dist[j]):
                t = dist[i] / (dist[i] - dist[j])
                pts.append(tuple(a + t * (b - a) for a, b in zip(verts[i], verts[j])))
    hull = ConvexHull(np.array(pts, dtype=float))
    p0 = pts[0]
    total = Fraction(0)
    for simplex in hull.simplices:
        a, b, c = (pts[k] for k in simplex)
        u = [x - y for x, y in zip(a, p0)]
        v = [x - y for x, y in zip(b, p0)]
        w = [x - y for x, y in zip(c, p0)]
        det = (u[0] * (v[1] * w[2] - v[2] * w[1]) - u[1] * (v[0] * w[2] - v[2] * w[0])
               + u[2] * (v[0] * w[1] - v[1] * w[0]))
        total += abs(det) / 6
    return total


def test_tetrahedron_split_matches_exact_oracle():
    tet = [(0, 0, 0), (1, 0, 0), (0, 1, 0), (0, 0, 1)]
    above = _exact_clip_volume(tet, (0, 0, 1), Fraction(1, 4))
    assert above == Fraction(27, 384)
    below = Fraction(1, 6) - above
    assert below == Fraction(37, 384)
    neg, pos = slice_mesh(tetrahedron(), CutPlane((0, 0, 1), (0, 0, 0.25)))
    assert neg.volume == pytest.approx(float(below), abs=1e-15)
    assert pos.volume == pytest.approx(float(above), abs=1e-15)


def _convex_part_volume(mesh, plane, positive):
    d = plane.signed_distance(mesh.vertices)
    keep = mesh.vertices[(d >= 0) if positive else (d <= 0)]
    pts = [keep]
    for a, b in mesh.faces[:, [0, 1, 1, 2, 2, 0]].reshape(-1, 2):
        if d[a] * d[b] < 0:
            t = d[a] / (d[a] - d[b])
            pts.append((mesh.vertices[a] + t * (mesh.vertices[b] - mesh.vertices[a]))[None])
    return ConvexHull(np.concatenate(pts)).volume


@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi / 2), st.floats(0.2, 0.8))
def test_cube_split_matches_convex_hull_oracle(theta, phi, frac):
    c = cube()
    n = unit_vector(theta, phi)
    lo, hi = project_interval(c, n)
    plane = CutPlane.at_offset(n, lo + frac * (hi - lo))
    neg, pos = slice_mesh(c, plane)
    assert neg.volume == pytest.approx(_convex_part_volume(c, plane, False), rel=1e-9, abs=1e-12)
    assert pos.volume == pytest.approx(_convex_part_volume(c, plane, True), rel=1e-9, abs=1e-12)


@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi / 3), st.floats(0.05, 0.95))
def test_split_conserves_volume_and_stays_watertight(theta, phi, frac):
    m = torus()
    n = unit_vector(theta, phi)
    lo, hi = project_interval(m, n)
    plane = CutPlane.at_offset(n, lo + frac * (hi - lo))
    neg, pos = slice_mesh(m, plane)
    parts = [p for p in (neg, pos) if p is not None]
    assert sum(p.volume for p in parts) == pytest.approx(m.volume, rel=1e-6)
    for p in parts:
        assert p.is_watertight
        assert p.volume > 0
    if pos is not None:
        assert plane.signed_distance(pos.vertices).min() >= -1e-7
    if neg is not None:
        assert plane.signed_distance(neg.vertices).max() <= 1e-7


@given(st.floats(0, 2 * math.pi), st.floats(0, math.pi / 4), st.floats(0.05, 0.95))
def test_fast_volume_split_agrees_with_full_split(theta, phi, frac):
    m = dome_scenario_mesh()
    n = unit_vector(theta, phi)
    lo, hi = project_interval(m, n)
    plane = CutPlane.at_offset(n, lo + frac * (hi - lo))
    v_neg, v_pos = split_volumes(m, plane)
    neg, pos = slice_mesh(m, plane)
    assert v_neg == pytest.approx(neg.volume if neg is not None else 0.0, abs=1e-12)
    assert v_pos == pytest.approx(pos.volume if pos is not None else 0.0, abs=1e-12)


def test_sliver_below_minimum_is_degenerate():
    with pytest.raises(DegenerateCutError):
        slice_mesh(cube(), CutPlane((0, 0, 1), (0, 0, 1e-4)), min_volume=1e-3)


def test_torus_section_has_a_hole():
    loops = section_loops(torus(1.0, 0.35), CutPlane((0, 0, 1), (0, 0, 0.35)))
    assert len(loops) == 2
    areas = []
    for lp in loops:
        x, y = lp[:, 0], lp[:, 1]
        areas.append(0.5 * float(np.sum(x * np.roll(y, -1) - np.roll(x, -1) * y)))
    outer, hole = sorted(areas, reverse=True)
    assert outer > 0 > hole  # outer CCW, hole CW seen from +z
