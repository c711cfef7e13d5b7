import json
import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from chunkprint.bsp import BspTree
from chunkprint.errors import SimulationError
from chunkprint.scheduler import Schedule, ScheduleEntry
from chunkprint.shapes import box
from chunkprint.sim import (
    SimParams,
    SimTrace,
    bead_sphere_radius,
    deposition_volume_check,
    overlay_csv,
    simulate,
    summary_csv,
    trace_to_jsonl,
    tracking_error_report,
)
from chunkprint.toolpath import (
    ExtruderGeometry,
    PrintParams,
    Trajectory,
    body_frame_transform,
    slice_chunk,
    toolpath_to_trajectory,
)


def polyline(points, speed, extruding=True):
    pts = np.asarray(points, dtype=float)
    t = np.concatenate([[0.0], np.cumsum(np.linalg.norm(np.diff(pts, axis=0), axis=1) / speed)])
    flags = np.full(len(pts), extruding)
    flags[-1] = False
    return Trajectory(t, pts, np.zeros(len(pts)), flags, "body")


def one_chunk(cid="c", uav="u", cap=100.0):
    return Schedule((ScheduleEntry(cid, uav, 0.0),), (), {uav: cap})


def test_params_validation():
    for kw in (dict(dt=0), dict(tracking_time_constant=-1), dict(deposition_sphere_radius=0),
               dict(disturbance_std=-0.1)):
        with pytest.raises(ValueError):
            SimParams(**kw)


def test_bead_radius_preserves_volume_per_length():
    r = bead_sphere_radius(0.01, 0.01)
    assert 4 / 3 * math.pi * r ** 3 / (2 * r) == pytest.approx(0.01 * 0.01, rel=1e-12)


def test_perfect_tracker():
    traj = polyline([(0, 0, 1), (1, 0, 1), (1, 1, 1)], 0.1)
    trace = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.0, 0.01))
    (run,) = trace.runs
    assert np.array_equal(run.actual, run.desired)
    rep = tracking_error_report(trace)
    assert (rep["max"], rep["mean"], rep["rms"]) == (0.0, 0.0, 0.0)


def test_one_meter_gives_ten_spheres():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    trace = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.3, 0.05))
    assert trace.runs[0].n_events == 10
    assert trace.deposited()["c"] == pytest.approx(10 * 4 / 3 * math.pi * 0.05 ** 3 * 1e3)


def test_no_spheres_while_travelling():
    pts = [(0, 0, 0), (0.5, 0, 0), (1.0, 0, 0), (1.5, 0, 0)]
    t = np.array([0.0, 5.0, 10.0, 15.0])
    traj = Trajectory(t, np.array(pts, float), np.zeros(4), np.array([True, False, True, False]), "body")
    run = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.3, 0.025)).runs[0]
    assert run.n_events == 20
    assert not np.any((run.event_times > 5.0 + 1e-9) & (run.event_times < 10.0 - 1e-9))
    x = run.event_positions[:, 0]
    assert not np.any((x > 0.5 + 0.1) & (x < 1.0 - 0.1))


def test_straight_line_steady_state_error_is_v_tau():
    v, tau = 0.1, 0.3
    traj = polyline([(0, 0, 0), (2, 0, 0)], v)
    run = simulate(one_chunk(), {"c": traj}, SimParams(0.01, tau, 0.01)).runs[0]
    err = np.linalg.norm(run.desired - run.actual, axis=1)
    assert err[-1] == pytest.approx(v * tau, rel=1e-6)
    assert np.all(np.diff(err) >= -1e-15)  # the error builds up monotonically


@given(st.floats(0.05, 0.5), st.floats(0.1, 1.0), st.floats(0.01, 0.05))
def test_lag_error_never_exceeds_ramp_bound(tau, speed, dt):
    # any constant-speed path, corners included: |e| <= v * tau for a first-order lag
    traj = polyline([(0, 0, 0), (1, 0, 0), (1, 1, 0), (0, 1, 0)], speed)
    run = simulate(one_chunk(), {"c": traj}, SimParams(dt, tau, 0.01)).runs[0]
    err = np.linalg.norm(run.desired - run.actual, axis=1)
    assert err.max() <= speed * max(tau, dt) * (1 + 1e-9)


def test_corner_turns_the_error_vector():
    v, tau = 0.1, 0.3
    traj = polyline([(0, 0, 0), (1, 0, 0), (1, 1, 0)], v)
    run = simulate(one_chunk(), {"c": traj}, SimParams(0.01, tau, 0.01)).runs[0]
    e = run.desired - run.actual
    t_corner = 10.0
    before = e[np.searchsorted(run.times, t_corner) - 1]
    after = e[np.searchsorted(run.times, t_corner + 3 * tau)]
    assert before[0] > 0.9 * v * tau and abs(before[1]) < 1e-12
    assert after[1] > after[0] > 0  # mixed direction while the tracker cuts the corner


def test_noise_is_seeded():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    a = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.3, 0.01, 3, 1e-3))
    b = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.3, 0.01, 3, 1e-3))
    c = simulate(one_chunk(), {"c": traj}, SimParams(0.05, 0.3, 0.01, 4, 1e-3))
    assert trace_to_jsonl(a) == trace_to_jsonl(b)
    assert np.array_equal(a.runs[0].actual, b.runs[0].actual)
    assert not np.array_equal(a.runs[0].actual, c.runs[0].actual)


def test_material_exhaustion_names_chunk_and_uav():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    with pytest.raises(SimulationError, match=r"UAV u .*chunk c"):
        simulate(one_chunk(cap=1e-3), {"c": traj}, SimParams(0.05, 0.3, 0.05))


def test_dependency_violation():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    sched = Schedule((ScheduleEntry("b", "u", 0.1), ScheduleEntry("a", "u", 0.1)), (("a", "b"),), {"u": 10.0})
    with pytest.raises(SimulationError, match="dependencies"):
        simulate(sched, {"a": traj, "b": traj}, SimParams())


def test_missing_trajectory_and_wrong_frame():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    with pytest.raises(SimulationError, match="no trajectory"):
        simulate(one_chunk(), {}, SimParams())
    nozzle = Trajectory(traj.times, traj.positions, traj.yaw, traj.extruding, "end-effector")
    with pytest.raises(SimulationError, match="body frame"):
        simulate(one_chunk(), {"c": nozzle}, SimParams())


def test_chunks_run_back_to_back():
    a = polyline([(0, 0, 0), (1, 0, 0)], 0.1)
    b = polyline([(0, 0, 0.1), (0.5, 0, 0.1)], 0.1)
    sched = Schedule((ScheduleEntry("a", "u", 0.1), ScheduleEntry("b", "w", 0.1)), (("a", "b"),),
                     {"u": 10.0, "w": 10.0})
    trace = simulate(sched, {"a": a, "b": b}, SimParams(0.05, 0.3, 0.01))
    assert trace.completion == pytest.approx({"a": 10.0, "b": 15.0})
    assert trace.runs[1].event_times.min() >= trace.completion["a"]
    series = trace.uav_series()
    assert set(series) == {"u", "w"}
    assert trace.consumption()["w"] == pytest.approx(trace.deposited()["b"])


def _slab_tree():
    return BspTree.from_mesh(box(hi=(0.3, 0.3, 0.01)))


def test_solid_slab_deposits_its_volume():
    tree = _slab_tree()
    params = PrintParams(0.01, 0.01, 1.0, 0.1)
    geom = ExtruderGeometry(0.3, 0.2, 0.0)
    traj = body_frame_transform(toolpath_to_trajectory(slice_chunk(tree.root.mesh, params), params), geom)
    sim = SimParams(0.05, 0.3, bead_sphere_radius(0.01, 0.01))
    trace = simulate(one_chunk("c"), {"c": traj}, sim, geom)
    report = deposition_volume_check(trace, tree)
    assert report["c"]["chunk_l"] == pytest.approx(0.9)
    assert report["c"]["gap"] <= 0.25
    # spheres land on the nozzle path, not at the body origin
    assert trace.runs[0].event_positions[:, 2].max() < 0.011


def test_no_extrusion_deposits_nothing():
    traj = polyline([(0, 0, 0), (1, 0, 0)], 0.1, extruding=False)
    trace = simulate(one_chunk(), {"c": traj}, SimParams())
    report = deposition_volume_check(trace, _slab_tree())
    assert report["c"]["deposited_l"] == 0.0


def test_empty_trace_gives_empty_report():
    trace = SimTrace((), 1e-6, {"u": 1.0})
    assert deposition_volume_check(trace, _slab_tree()) == {}
    assert tracking_error_report(trace)["max"] == 0.0


def test_exports():
    a = polyline([(0, 0, 0), (0.2, 0, 0), (0.2, 0.2, 0)], 0.1)
    trace = simulate(one_chunk(), {"c": a}, SimParams(0.05, 0.3, 0.01))
    lines = [json.loads(ln) for ln in trace_to_jsonl(trace).splitlines()]
    assert sum(ln["type"] == "deposit" for ln in lines) == trace.runs[0].n_events
    assert lines[-1] == {"type": "complete", "t": 4.0, "chunk": "c", "uav": "u"}
    report = tracking_error_report(trace)
    assert overlay_csv(report).startswith("chunk,z,time,desired_x,desired_y,actual_x,actual_y\n")
    assert summary_csv(trace, report).splitlines()[1].startswith("c,u,0.0,4.0,")
    assert len(report["overlay"]) == 1 and report["overlay"][0]["z"] == 0.0
