"""
Command-line pipeline: ``decompose``, ``print`` and ``verify``.

Exit codes: 0 ok, 2 infeasible, 3 invariant violation, 4 I/O or parse error.
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from . import shapes
from .bsp import contact_pairs, dependencies, from_json, leaves, to_json
from .errors import (
    AssignmentError,
    ChunkPrintError,
    InfeasibleError,
    MeshError,
    SearchExhaustedError,
    SimulationError,
)
from .mesh import TriangleMesh, load_mesh, read_mesh, to_stl_binary
from .sampler import PHI_CONN_MAX, SamplerParams
from .scheduler import ExtruderSpec, FleetConfig, Schedule, assign_chunks, check_primal_feasibility
from .search import SearchParams, plane_cut_search
from .sim import (
    SimParams,
    bead_sphere_radius,
    deposition_volume_check,
    overlay_csv,
    simulate,
    summary_csv,
    trace_to_jsonl,
    tracking_error_report,
)
from .toolpath import ExtruderGeometry, PrintParams, body_frame_transform, slice_chunk, toolpath_to_trajectory

log = logging.getLogger("chunkprint")

EXIT_OK, EXIT_INFEASIBLE, EXIT_INVARIANT, EXIT_IO = 0, 2, 3, 4
VOLUME_RTOL = 1e-6
ANGLE_TOL = 1e-9


class ConfigError(ChunkPrintError):
    pass


@dataclass(frozen=True)
class PipelineConfig:
    mesh: dict
    fleet: FleetConfig
    search: SearchParams
    sampler_mode: str
    print: PrintParams
    geometry: ExtruderGeometry
    sim: SimParams
    out_dir: Path
    base_dir: Path

    @property
    def sampler(self) -> SamplerParams:
        return self.search.sampler


def _section(doc, name):
    sec = doc.get(name, {})
    if not isinstance(sec, dict):
        raise ConfigError(f"[{name}] must be a table")
    return sec


def load_config(path, mode=None, feasibility=None, out=None) -> PipelineConfig:
    """Parse a TOML pipeline config; command-line overrides win over file values."""
    path = Path(path)
    try:
        doc = tomllib.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"bad TOML in {path}: {exc}") from exc
    base = path.resolve().parent
    try:
        return _build_config(doc, base, mode, feasibility, out)
    except (TypeError, ValueError, KeyError) as exc:
        raise ConfigError(f"invalid config {path}: {exc}") from exc


def _build_config(doc, base, mode, feasibility, out) -> PipelineConfig:
    mesh = dict(_section(doc, "mesh"))
    if "path" not in mesh and "shape" not in mesh:
        raise ConfigError("[mesh] needs either path or shape")

    ext = _section(doc, "extruder")
    spec = ExtruderSpec(float(ext.get("h", 0.02)), float(ext.get("l", 0.02)),
                        float(ext.get("l_ex", 0.3)), float(ext.get("l_g", 0.2)))
    geometry = ExtruderGeometry(spec.l_ex, spec.l_g, math.radians(float(ext.get("theta_deg", 0.0))))

    fl = _section(doc, "fleet")
    if "capacities_l" in fl:
        caps = tuple(float(c) for c in fl["capacities_l"])
    else:
        caps = tuple([float(fl["capacity_l"])] * int(fl["count"]))
    fleet = FleetConfig(caps, tuple(fl.get("uav_ids", ())), spec,
                        feasibility or fl.get("feasibility", "capacity-reuse"))

    sa = _section(doc, "sampler")
    sampler_mode = mode or sa.get("mode", "safe-min")
    sampler = SamplerParams.from_constraints(
        int(sa.get("M", 16)), int(sa.get("offsets_per_normal", 7)), spec.h, spec.l,
        math.radians(float(sa.get("phi_conn_max_deg", math.degrees(PHI_CONN_MAX)))), sampler_mode)

    se = _section(doc, "search")
    search = SearchParams(int(se.get("w_inner", 3)), int(se.get("w_outer", 8)), sampler,
                          int(se.get("max_iterations", 32)))

    pr = _section(doc, "print")
    rate = pr.get("deposition_rate")
    printp = PrintParams(float(pr.get("layer_height", 0.01)), float(pr.get("line_width", 0.01)),
                         float(pr.get("infill_fraction", 1.0)), float(pr.get("avg_speed", 0.1)),
                         None if rate is None else float(rate))

    si = _section(doc, "sim")
    radius = si.get("deposition_sphere_radius")
    if radius is None:
        radius = bead_sphere_radius(printp.line_width, printp.layer_height)
    sim = SimParams(float(si.get("dt", 0.05)), float(si.get("tracking_time_constant", 0.3)),
                    float(radius), int(si.get("rng_seed", 0)), float(si.get("disturbance_std", 0.0)))

    out_dir = Path(out) if out else base / _section(doc, "output").get("dir", "out")
    return PipelineConfig(mesh, fleet, search, sampler_mode, printp, geometry, sim, out_dir, base)


def load_input_mesh(cfg: PipelineConfig) -> TriangleMesh:
    spec = cfg.mesh
    if "path" in spec:
        mesh = read_mesh(cfg.base_dir / spec["path"], spec.get("format"))
    else:
        kw = {k: v for k, v in spec.items() if k not in ("shape", "volume_l")}
        mesh = shapes.SHAPES[spec["shape"]](**kw)
    if "volume_l" in spec:
        mesh = shapes.scaled_to_volume(mesh, float(spec["volume_l"]) * 1e-3)
    return mesh.validate()


# ---------------------------------------------------------------- io helpers


def _write(path: Path, data):
    path.parent.mkdir(parents=True, exist_ok=True)
    if isinstance(data, bytes):
        path.write_bytes(data)
    else:
        path.write_text(data)


def _dump(obj) -> str:
    return json.dumps(obj, indent=2) + "\n"


def _read_json(path: Path):
    try:
        return json.loads(path.read_text())
    except OSError as exc:
        raise ConfigError(f"missing artifact {path}: {exc}") from exc
    except json.JSONDecodeError as exc:
        raise ConfigError(f"bad JSON in {path}: {exc}") from exc


def _load_chunks(out: Path, ids, validate: bool = True) -> dict:
    chunks = {}
    for cid in ids:
        path = out / "chunks" / f"{cid}.stl"
        try:
            chunks[cid] = load_mesh(path.read_bytes(), "stl", cid, validate=validate)
        except OSError as exc:
            raise ConfigError(f"missing chunk file {path}: {exc}") from exc
    return chunks


def _leaf_ids(node_doc) -> list:
    if node_doc["type"] == "leaf":
        return [node_doc["id"]]
    return _leaf_ids(node_doc["negative"]) + _leaf_ids(node_doc["positive"])


def _load_tree(out: Path):
    doc = _read_json(out / "bsp.json")
    chunks = _load_chunks(out, _leaf_ids(doc["root"]))
    return doc, chunks, from_json(doc, chunks)


# ---------------------------------------------------------------- commands


def cmd_decompose(cfg: PipelineConfig) -> int:
    mesh = load_input_mesh(cfg)
    total_l = mesh.volume * 1e3
    if not check_primal_feasibility(total_l, cfg.fleet):
        print(f"infeasible: mesh volume {total_l:.6g} L exceeds total fleet material "
              f"{cfg.fleet.total:.6g} L", file=sys.stderr)
        return EXIT_INFEASIBLE
    trace = []
    try:
        tree = plane_cut_search(mesh, cfg.fleet, cfg.search, trace)
        schedule = assign_chunks(tree, cfg.fleet)
    except SearchExhaustedError as exc:
        vols = sorted(exc.best_tree.leaf_volumes(), reverse=True) if exc.best_tree else []
        print(f"infeasible: {exc}; largest chunk {vols[0] * 1e3 if vols else float('nan'):.6g} L "
              f"vs largest UAV load {cfg.fleet.capacities[0]:.6g} L", file=sys.stderr)
        _write(cfg.out_dir / "search_trace.json", _dump(trace))
        return EXIT_INFEASIBLE
    except AssignmentError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE

    out = cfg.out_dir
    chunk_dir = out / "chunks"
    if chunk_dir.exists():
        for old in chunk_dir.glob("*.stl"):
            old.unlink()
    for lf in leaves(tree):
        _write(chunk_dir / f"{lf.id}.stl", to_stl_binary(lf.mesh))
    _write(out / "bsp.json", _dump(to_json(tree)))
    _write(out / "schedule.json", _dump(schedule.to_json()))
    _write(out / "search_trace.json", _dump(trace))
    _write(out / "decompose.json", _dump({
        "phi_max": cfg.sampler.phi_max,
        "sampler_mode": cfg.sampler_mode,
        "feasibility": cfg.fleet.feasibility,
        "capacities_l": dict(zip(cfg.fleet.uav_ids, cfg.fleet.capacities)),
        "mesh_volume_l": total_l,
        "chunks": len(leaves(tree)),
        "cost": tree.cost,
    }))
    print(f"{len(leaves(tree))} chunks, c_v {tree.cost:.4f}, written to {out}")
    return EXIT_OK


def _chunk_trajectory(args):
    mesh, printp, geometry = args
    path = slice_chunk(mesh, printp)
    nozzle = toolpath_to_trajectory(path, printp)
    return path, nozzle, body_frame_transform(nozzle, geometry)


def cmd_print(cfg: PipelineConfig, jobs: int = 1) -> int:
    out = cfg.out_dir
    schedule = Schedule.from_json(_read_json(out / "schedule.json"))
    _, chunks, tree = _load_tree(out)
    missing = [e.chunk_id for e in schedule.entries if e.chunk_id not in chunks]
    if missing:
        raise ConfigError(f"schedule references chunks without files: {missing}")
    ids = [e.chunk_id for e in schedule.entries]
    work = [(chunks[c], cfg.print, cfg.geometry) for c in ids]
    if jobs > 1:
        with ProcessPoolExecutor(jobs) as pool:
            results = list(pool.map(_chunk_trajectory, work))
    else:
        results = [_chunk_trajectory(w) for w in work]

    trajectories, durations = {}, {}
    for cid, (path, nozzle, body) in zip(ids, results):
        _write(out / "toolpaths" / f"{cid}.txt", path.to_text())
        _write(out / "trajectories" / f"{cid}.csv", body.to_csv())
        trajectories[cid] = body
        durations[cid] = body.duration

    trace = simulate(schedule, trajectories, cfg.sim, cfg.geometry)
    report = tracking_error_report(trace)
    volumes = deposition_volume_check(trace, tree)
    _write(out / "sim" / "trace.jsonl", trace_to_jsonl(trace))
    _write(out / "sim" / "summary.csv", summary_csv(trace, report))
    _write(out / "sim" / "overlay.csv", overlay_csv(report))
    consumption = trace.consumption()
    _write(out / "report.json", _dump({
        "completed": [r.chunk_id for r in trace.runs],
        "completion_times_s": trace.completion,
        "durations_s": durations,
        "tracking_error_m": {k: report[k] for k in ("max", "mean", "rms")},
        "tracking_error_per_chunk_m": report["per_chunk"],
        "volumes": volumes,
        "consumption_l": consumption,
        "capacities_l": trace.capacities,
    }))
    print(f"printed {len(trace.runs)} chunks in {trace.runs[-1].end if trace.runs else 0.0:.1f} s, "
          f"max tracking error {report['max']:.4g} m")
    return EXIT_OK


def verify_artifacts(out: Path) -> list:
    """Re-check the written decomposition; returns a list of violation messages."""
    out = Path(out)
    problems = []
    doc = _read_json(out / "bsp.json")
    meta = _read_json(out / "decompose.json")
    sched = Schedule.from_json(_read_json(out / "schedule.json"))
    ids = _leaf_ids(doc["root"])
    chunks = _load_chunks(out, ids, validate=False)

    for cid, mesh in chunks.items():
        edges = mesh.boundary_edges()
        if len(edges):
            problems.append(f"chunk {cid}: not watertight or inconsistently oriented "
                            f"({len(edges)} bad edges)")
        elif not mesh.volume > 0:
            problems.append(f"chunk {cid}: non-positive volume {mesh.volume:.6g}")
    total = doc["volume_l"]
    summed = sum(m.volume for m in chunks.values()) * 1e3
    if abs(summed - total) > VOLUME_RTOL * total:
        problems.append(f"volume not conserved: chunks sum to {summed:.9g} L, mesh is {total:.9g} L")

    tree = from_json(doc, chunks)
    for plane, target in tree.cut_log:
        if plane.tilt > meta["phi_max"] + ANGLE_TOL:
            problems.append(f"cut on {target}: tilt {math.degrees(plane.tilt):.3f} deg exceeds "
                            f"{math.degrees(meta['phi_max']):.3f} deg")

    order = sched.order
    if sorted(order) != sorted(ids) or len(set(order)) != len(order):
        problems.append(f"schedule covers {sorted(order)}, tree has {sorted(ids)}")
    pos = {c: i for i, c in enumerate(order)}
    for a, b in dependencies(tree):
        if a in pos and b in pos and pos[a] > pos[b]:
            problems.append(f"priority violation: {b} printed before its support {a}")
    for a, b, _ in contact_pairs(tree):
        if a in pos and b in pos and pos[a] > pos[b]:
            problems.append(f"priority violation: {b} rests on {a} but prints first")

    caps = meta["capacities_l"]
    used = {}
    for e in sched.entries:
        if e.uav_id not in caps:
            problems.append(f"chunk {e.chunk_id} assigned to unknown UAV {e.uav_id}")
            continue
        if e.chunk_id in chunks and abs(e.volume_l - chunks[e.chunk_id].volume * 1e3) > VOLUME_RTOL * total:
            problems.append(f"chunk {e.chunk_id}: scheduled volume {e.volume_l:.6g} L does not match its mesh")
        used.setdefault(e.uav_id, []).append(e.volume_l)
    for uav, vols in used.items():
        if uav in caps and sum(vols) > caps[uav] + 1e-9:
            problems.append(f"UAV {uav}: {sum(vols):.6g} L scheduled, capacity {caps[uav]:.6g} L")
        if meta["feasibility"] == "per-uav" and len(vols) > 1:
            problems.append(f"UAV {uav}: {len(vols)} chunks in per-uav mode")
    return problems


def cmd_verify(out: Path) -> int:
    problems = verify_artifacts(out)
    for p in problems:
        print(f"FAIL {p}")
    if problems:
        return EXIT_INVARIANT
    print("all checks passed")
    return EXIT_OK


# ---------------------------------------------------------------- entry


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="chunkprint", description=__doc__.strip().splitlines()[0])
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)
    for name in ("decompose", "print", "verify"):
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, required=(name != "verify"))
        p.add_argument("--out", type=Path)
        p.add_argument("--mode", choices=("paper-max", "safe-min"))
        p.add_argument("--feasibility", choices=("per-uav", "capacity-reuse"))
        if name == "print":
            p.add_argument("--jobs", type=int, default=1, help="parallel slicing processes")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        if args.command == "verify":
            if args.out is None and args.config is None:
                print("verify needs --out or --config", file=sys.stderr)
                return EXIT_IO
            out = args.out or load_config(args.config).out_dir
            return cmd_verify(out)
        cfg = load_config(args.config, args.mode, args.feasibility, args.out)
        if args.command == "decompose":
            return cmd_decompose(cfg)
        return cmd_print(cfg, args.jobs)
    except InfeasibleError as exc:
        print(f"infeasible: {exc}", file=sys.stderr)
        return EXIT_INFEASIBLE
    except (ConfigError, MeshError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (SimulationError, ChunkPrintError) as exc:
        print(f"invariant violation: {exc}", file=sys.stderr)
        return EXIT_INVARIANT


if __name__ == "__main__":
    sys.exit(main())
