"""Split a mesh into chunks a UAV fleet can print, schedule them, and simulate the print."""
from .bsp import BspTree, contact_pairs, dependencies, inorder_priority, insert_cut, leaves
from .errors import (
    AssignmentError,
    ChunkPrintError,
    CutError,
    InfeasibleError,
    MeshError,
    SearchExhaustedError,
    SimulationError,
)
from .mesh import CutPlane, TriangleMesh, load_mesh, read_mesh, slice_mesh
from .sampler import SamplerParams, sample_normals
from .scheduler import FleetConfig, Schedule, assign_chunks
from .search import SearchParams, heuristic_cv, plane_cut_search
from .sim import SimParams, simulate
from .toolpath import ExtruderGeometry, PrintParams, body_frame_transform, slice_chunk, toolpath_to_trajectory

__version__ = "0.1.0"

__all__ = [
    "AssignmentError", "BspTree", "ChunkPrintError", "CutError", "CutPlane", "ExtruderGeometry",
    "FleetConfig", "InfeasibleError", "MeshError", "PrintParams", "SamplerParams", "Schedule",
    "SearchExhaustedError", "SearchParams", "SimParams", "SimulationError", "TriangleMesh",
    "assign_chunks", "body_frame_transform", "contact_pairs", "dependencies", "heuristic_cv",
    "inorder_priority", "insert_cut", "leaves", "load_mesh", "plane_cut_search", "read_mesh",
    "sample_normals", "simulate", "slice_chunk", "slice_mesh", "toolpath_to_trajectory",
]
