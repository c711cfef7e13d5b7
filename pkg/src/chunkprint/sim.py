"""
Kinematic print simulation.

Chunks run one after another in schedule order.  The UAV body follows its
reference through a first-order lag with time constant tau, optionally with
seeded Gaussian position noise, and material is laid down as spheres: one sphere
each time the nozzle has covered a sphere diameter of extruding path.
"""
from __future__ import annotations

import io
import json
import math
from dataclasses import dataclass, field

import numpy as np

from .bsp import BspTree, leaves
from .errors import SimulationError
from .scheduler import Schedule
from .toolpath import ExtruderGeometry, Trajectory, _rotated_offsets

_BUDGET_EPS = 1e-9


@dataclass(frozen=True)
class SimParams:
    dt: float = 0.05
    tracking_time_constant: float = 0.3
    deposition_sphere_radius: float = 0.005
    rng_seed: int = 0
    disturbance_std: float = 0.0

    def __post_init__(self):
        if self.dt <= 0:
            raise ValueError("dt must be positive")
        if self.tracking_time_constant < 0:
            raise ValueError("tracking_time_constant must be non-negative")
        if self.deposition_sphere_radius <= 0:
            raise ValueError("deposition_sphere_radius must be positive")
        if self.disturbance_std < 0:
            raise ValueError("disturbance_std must be non-negative")

    @property
    def sphere_volume_l(self) -> float:
        return 4.0 / 3.0 * math.pi * self.deposition_sphere_radius ** 3 * 1e3


def bead_sphere_radius(line_width: float, layer_height: float) -> float:
    """Sphere radius whose volume per diameter of travel equals a bead's cross-section."""
    return math.sqrt(1.5 * line_width * layer_height / math.pi)


@dataclass(frozen=True)
class ChunkRun:
    chunk_id: str
    uav_id: str
    start: float
    end: float
    times: np.ndarray           # global step times
    desired: np.ndarray         # body-frame reference at each step
    actual: np.ndarray          # tracked body position at each step
    extruding: np.ndarray       # active sample's flag at each step
    event_times: np.ndarray
    event_positions: np.ndarray  # nozzle positions of the deposited spheres

    @property
    def n_events(self) -> int:
        return len(self.event_times)


@dataclass(frozen=True)
class SimTrace:
    runs: tuple
    sphere_volume_l: float
    capacities: dict
    completion: dict = field(default_factory=dict)

    @property
    def empty(self) -> bool:
        return not self.runs

    def consumption(self) -> dict:
        used = {u: 0.0 for u in self.capacities}
        for r in self.runs:
            used[r.uav_id] = used.get(r.uav_id, 0.0) + r.n_events * self.sphere_volume_l
        return used

    def deposited(self) -> dict:
        return {r.chunk_id: r.n_events * self.sphere_volume_l for r in self.runs}

    def uav_series(self) -> dict:
        """uav id -> (times, desired, actual), concatenated over that UAV's chunks."""
        out = {}
        for r in self.runs:
            t, d, a = out.get(r.uav_id, (np.empty(0), np.empty((0, 3)), np.empty((0, 3))))
            out[r.uav_id] = (np.concatenate([t, r.times]), np.vstack([d, r.desired]),
                             np.vstack([a, r.actual]))
        return out


def _step_times(duration: float, dt: float) -> np.ndarray:
    n = max(1, int(math.ceil(duration / dt - 1e-9)))
    t = np.arange(n + 1) * dt
    t[-1] = duration
    return t


def _track(times: np.ndarray, desired: np.ndarray, tau: float, noise: np.ndarray) -> np.ndarray:
    """
    Exact step response of ``tau * x' = d - x`` for a piecewise-linear ``d``.

    The tracking error e = d - x obeys e' = v - e / tau within each step, so
    e[k+1] = b e[k] + (1 - b) tau v[k] with b = exp(-dt / tau); ``noise``
    is added to the position after every step.  ``tau = 0`` tracks exactly.
    """
    out = desired.copy()
    if len(desired) == 1:
        return out
    dt = np.diff(times)
    vel = np.diff(desired, axis=0) / dt[:, None]
    if tau == 0:
        beta = np.zeros_like(dt)
        gain = np.zeros_like(dt)
    else:
        beta = np.exp(-dt / tau)
        gain = (1.0 - beta) * tau
    err = np.zeros(3)
    for k in range(len(dt)):
        err = beta[k] * err + gain[k] * vel[k] - noise[k]
        out[k + 1] = desired[k + 1] - err
    return out


def _event_times(traj: Trajectory, diameter: float) -> np.ndarray:
    """Local times at which the extruded arc length reaches each multiple of ``diameter``."""
    seg = np.linalg.norm(np.diff(traj.positions, axis=0), axis=1)
    ext = traj.extruding[:-1] & (seg > 0)
    if not ext.any():
        return np.empty(0)
    lens = np.where(ext, seg, 0.0)
    s_end = np.cumsum(lens)
    total = s_end[-1]
    n = int(math.floor(total / diameter + 1e-9))
    if n == 0:
        return np.empty(0)
    targets = np.minimum(np.arange(1, n + 1) * diameter, total)
    idx = np.searchsorted(s_end, targets - 1e-12, side="left")
    idx = np.minimum(idx, len(s_end) - 1)
    s_start = s_end[idx] - lens[idx]
    frac = np.clip((targets - s_start) / lens[idx], 0.0, 1.0)
    t0, t1 = traj.times[idx], traj.times[idx + 1]
    return t0 + frac * (t1 - t0)


def _interp(t: np.ndarray, tp: np.ndarray, fp: np.ndarray) -> np.ndarray:
    return np.stack([np.interp(t, tp, fp[:, k]) for k in range(fp.shape[1])], axis=1)


def simulate(schedule: Schedule, trajectories: dict, params: SimParams,
             geometry: ExtruderGeometry = ExtruderGeometry()) -> SimTrace:
    """
    Run the schedule chunk by chunk and record tracking and deposition.

    Raises
    ------
    SimulationError
      A chunk has no trajectory, starts before one of its dependencies has
      finished, or its UAV runs out of material.
    """
    rng = np.random.default_rng(params.rng_seed)
    tau = params.tracking_time_constant
    diameter = 2.0 * params.deposition_sphere_radius
    sphere = params.sphere_volume_l
    budget = dict(schedule.capacities)
    needs = {}
    for a, b in schedule.dependencies:
        needs.setdefault(b, set()).add(a)
    completion = {}
    runs = []
    clock = 0.0
    for entry in schedule.entries:
        cid, uav = entry.chunk_id, entry.uav_id
        missing = sorted(needs.get(cid, set()) - completion.keys())
        if missing:
            raise SimulationError(f"chunk {cid} scheduled before its dependencies {missing}")
        if cid not in trajectories:
            raise SimulationError(f"no trajectory for chunk {cid}")
        if uav not in budget:
            raise SimulationError(f"chunk {cid} assigned to unknown UAV {uav}")
        traj = trajectories[cid]
        if traj.frame != "body":
            raise SimulationError(f"trajectory for chunk {cid} is not in the body frame")
        local = _step_times(traj.duration, params.dt) + traj.times[0]
        desired = _interp(local, traj.times, traj.positions)
        noise = np.zeros((len(local) - 1, 3))
        if params.disturbance_std > 0:
            noise = rng.normal(0.0, params.disturbance_std, size=noise.shape)
        actual = _track(local, desired, tau, noise)
        idx = np.clip(np.searchsorted(traj.times, local, side="right") - 1, 0, len(traj) - 1)
        flags = traj.extruding[idx]

        ev_local = _event_times(traj, diameter)
        need = len(ev_local) * sphere
        if need > budget[uav] + _BUDGET_EPS:
            raise SimulationError(
                f"UAV {uav} runs out of material on chunk {cid}: "
                f"needs {need:.6g} L, has {budget[uav]:.6g} L")
        budget[uav] -= need
        yaw = np.interp(ev_local, traj.times, traj.yaw)
        body = _interp(ev_local, local, actual) if len(ev_local) else np.empty((0, 3))
        nozzle = body + _rotated_offsets(geometry, yaw) if len(ev_local) else body

        shift = clock - traj.times[0]
        runs.append(ChunkRun(cid, uav, clock, clock + traj.duration, local + shift, desired, actual,
                             flags, ev_local + shift, nozzle))
        clock += traj.duration
        completion[cid] = clock
    return SimTrace(tuple(runs), sphere, dict(schedule.capacities), completion)


# ---------------------------------------------------------------- reports


def _stats(err: np.ndarray) -> dict:
    if err.size == 0:
        return {"max": 0.0, "mean": 0.0, "rms": 0.0}
    return {"max": float(err.max()), "mean": float(err.mean()), "rms": float(np.sqrt(np.mean(err ** 2)))}


def tracking_error_report(trace: SimTrace) -> dict:
    """
    Position error statistics (m) over every simulated step, overall and per chunk.

    ``overlay`` holds, per chunk and layer height, the desired and actual
    xy paths for plotting.
    """
    errs, per_chunk, overlay = [], {}, []
    for r in trace.runs:
        e = np.linalg.norm(r.desired - r.actual, axis=1)
        errs.append(e)
        per_chunk[r.chunk_id] = _stats(e)
        zs = np.round(r.desired[:, 2], 6)
        for z in np.unique(zs):
            sel = zs == z
            overlay.append({"chunk": r.chunk_id, "z": float(z), "t": r.times[sel],
                            "desired": r.desired[sel, :2], "actual": r.actual[sel, :2]})
    report = _stats(np.concatenate(errs) if errs else np.empty(0))
    report["per_chunk"] = per_chunk
    report["overlay"] = overlay
    return report


def deposition_volume_check(trace: SimTrace, tree: BspTree) -> dict:
    """chunk id -> deposited liters, chunk liters and relative gap, for every simulated chunk."""
    volumes = {lf.id: lf.volume * 1e3 for lf in leaves(tree)}
    out = {}
    for cid, dep in trace.deposited().items():
        ref = volumes.get(cid, 0.0)
        gap = abs(dep - ref) / ref if ref > 0 else math.inf
        out[cid] = {"deposited_l": dep, "chunk_l": ref, "gap": gap}
    return out


# ---------------------------------------------------------------- export


def trace_to_jsonl(trace: SimTrace) -> str:
    buf = io.StringIO()
    for r in trace.runs:
        for t, p in zip(r.event_times, r.event_positions):
            buf.write(json.dumps({"type": "deposit", "t": float(t), "chunk": r.chunk_id, "uav": r.uav_id,
                                  "position": [float(x) for x in p],
                                  "volume_l": trace.sphere_volume_l}) + "\n")
        buf.write(json.dumps({"type": "complete", "t": r.end, "chunk": r.chunk_id, "uav": r.uav_id}) + "\n")
    return buf.getvalue()


def summary_csv(trace: SimTrace, report: dict = None) -> str:
    buf = io.StringIO()
    buf.write("chunk,uav,start,end,events,deposited_l,max_error,rms_error\n")
    per = (report or tracking_error_report(trace))["per_chunk"]
    for r in trace.runs:
        s = per[r.chunk_id]
        buf.write(f"{r.chunk_id},{r.uav_id},{r.start!r},{r.end!r},{r.n_events},"
                  f"{r.n_events * trace.sphere_volume_l!r},{s['max']!r},{s['rms']!r}\n")
    return buf.getvalue()


def overlay_csv(report: dict) -> str:
    buf = io.StringIO()
    buf.write("chunk,z,time,desired_x,desired_y,actual_x,actual_y\n")
    for layer in report["overlay"]:
        for t, d, a in zip(layer["t"], layer["desired"], layer["actual"]):
            buf.write(f"{layer['chunk']},{layer['z']!r},{float(t)!r},{float(d[0])!r},{float(d[1])!r},"
                      f"{float(a[0])!r},{float(a[1])!r}\n")
    return buf.getvalue()
