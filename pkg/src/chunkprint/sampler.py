"""Candidate cut planes: normals on the tilt-limited cap and offset families."""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .mesh import CutPlane, SNAP_TOL, TriangleMesh, project_interval

PHI_CONN_MAX = math.radians(45.0)


def extruder_phi_max(h: float, l: float) -> float:
    """Steepest cut slope the extruder head clears, ``atan(h / l)``."""
    if l <= 0:
        raise ValueError(f"nozzle-to-head length must be positive, got {l}")
    if h < 0:
        raise ValueError(f"nozzle height must be non-negative, got {h}")
    return math.atan(h / l)


def combine_phi_max(phi_conn: float, phi_extr: float, mode: str = "safe-min") -> float:
    if mode == "paper-max":
        return max(phi_conn, phi_extr)
    if mode == "safe-min":
        return min(phi_conn, phi_extr)
    raise ValueError(f"unknown angle combination mode {mode!r}")


@dataclass(frozen=True)
class SamplerParams:
    M: int = 16
    offsets_per_normal: int = 7
    phi_max: float = PHI_CONN_MAX
    extruder: tuple = (0.02, 0.02)
    phi_conn_max: float = PHI_CONN_MAX

    def __post_init__(self):
        if self.M < 1 or self.offsets_per_normal < 1:
            raise ValueError("M and offsets_per_normal must be at least 1")
        if not 0 <= self.phi_max <= math.pi / 2:
            raise ValueError(f"phi_max must lie in [0, pi/2], got {self.phi_max}")

    @classmethod
    def from_constraints(cls, M=16, offsets_per_normal=7, h=0.02, l=0.02,
                         phi_conn_max=PHI_CONN_MAX, mode="safe-min") -> "SamplerParams":
        """Derive ``phi_max`` from the bonding and extruder-clearance limits."""
        phi = combine_phi_max(phi_conn_max, extruder_phi_max(h, l), mode)
        return cls(M, offsets_per_normal, phi, (h, l), phi_conn_max)


def grid_shape(M: int) -> tuple:
    """(azimuth steps, tilt steps) of the largest square-ish grid not exceeding M."""
    n_theta = max(1, math.ceil(math.sqrt(M)))
    n_phi = max(1, M // n_theta)
    return n_theta, n_phi


def sample_normals(params: SamplerParams) -> list:
    """
    Unit normals on a fixed-step (azimuth, tilt) grid inside the cap.

    Tilt levels run evenly from 0 to ``phi_max``; the zero-tilt level
    collapses to the single +z normal, which is emitted once.  Order is
    azimuth-major, then tilt.
    """
    if params.phi_max == 0:
        return [np.array([0.0, 0.0, 1.0])]
    n_theta, n_phi = grid_shape(params.M)
    tilts = [0.0] if n_phi == 1 else list(np.linspace(0.0, params.phi_max, n_phi))
    normals = []
    seen_pole = False
    for j in range(n_theta):
        theta = 2.0 * math.pi * j / n_theta
        for phi in tilts:
            if phi == 0.0:
                if seen_pole:
                    continue
                seen_pole = True
                normals.append(np.array([0.0, 0.0, 1.0]))
                continue
            n = np.array([math.sin(phi) * math.cos(theta), math.sin(phi) * math.sin(theta), math.cos(phi)])
            normals.append(n / np.linalg.norm(n))
    return normals


def plane_family(mesh: TriangleMesh, normal, count: int) -> list:
    """``count`` planes evenly spaced strictly inside the mesh's extent along ``normal``."""
    lo, hi = project_interval(mesh, normal)
    if hi - lo < 2 * SNAP_TOL:
        return []
    step = (hi - lo) / (count + 1)
    planes = []
    for k in range(1, count + 1):
        off = lo + k * step
        if off - lo <= SNAP_TOL or hi - off <= SNAP_TOL:
            continue
        planes.append(CutPlane.at_offset(normal, off))
    return planes
