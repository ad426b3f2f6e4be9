"""Simulation configuration objects."""
from dataclasses import dataclass, field

import numpy as np

from .errors import SceneError

SIDES = ("x-", "x+", "y-", "y+", "z-", "z+")


@dataclass
class SimConfig:
    """Global engine settings.

    ``grid_resolution`` and ``gas_resolution`` count cells along the first
    axis; the other axes get as many cells of the same width as fit the
    domain (which must therefore be an integer multiple of ``dx``).
    """

    dim: int = 2
    grid_resolution: int = 32
    gas_resolution: int = None
    domain_lo: tuple = None
    domain_hi: tuple = None
    dt_substep: float = 1e-4
    substeps_per_step: int = 10
    gravity: tuple = None
    boundary_cells: int = 3
    contact_threshold: float = 3.0
    contact_model: str = "soft"
    mass_epsilon: float = 1e-12
    cfl_factor: float = 0.9
    mode: str = "deterministic"

    def __post_init__(self):
        if self.dim not in (2, 3):
            raise SceneError("dim must be 2 or 3")
        d = self.dim
        self.domain_lo = np.zeros(d) if self.domain_lo is None else np.asarray(self.domain_lo, float)
        self.domain_hi = np.ones(d) if self.domain_hi is None else np.asarray(self.domain_hi, float)
        if self.gravity is None:
            g = np.zeros(d)
            g[1] = -9.8
            self.gravity = g
        self.gravity = np.asarray(self.gravity, float)
        if self.domain_lo.shape != (d,) or self.domain_hi.shape != (d,) or self.gravity.shape != (d,):
            raise SceneError("domain bounds and gravity must have `dim` components")
        if not np.all(self.domain_hi > self.domain_lo):
            raise SceneError("empty domain")
        if not self.dt_substep > 0:
            raise SceneError("dt_substep must be positive")
        if self.substeps_per_step < 1:
            raise SceneError("substeps_per_step must be >= 1")
        if self.contact_model not in ("soft", "hard"):
            raise SceneError("contact_model must be 'soft' or 'hard'")
        if self.mode not in ("deterministic", "fast"):
            raise SceneError("mode must be 'deterministic' or 'fast'")
        self.grid_shape = self._cells(self.grid_resolution)
        if self.gas_resolution is not None:
            self.gas_shape = self._cells(self.gas_resolution)

    def _cells(self, res):
        ext = self.domain_hi - self.domain_lo
        h = ext[0] / res
        cells = ext / h
        if not np.allclose(cells, np.round(cells), atol=1e-9):
            raise SceneError("domain extents must be integer multiples of the cell width")
        return tuple(int(round(c)) for c in cells)

    @property
    def dx(self):
        return float((self.domain_hi[0] - self.domain_lo[0]) / self.grid_resolution)

    @property
    def gas_dx(self):
        return float((self.domain_hi[0] - self.domain_lo[0]) / self.gas_resolution)

    @property
    def v_max(self):
        return self.cfl_factor * self.dx / self.dt_substep

    def to_dict(self):
        return {
            "dim": self.dim,
            "grid_resolution": self.grid_resolution,
            "gas_resolution": self.gas_resolution,
            "domain_lo": self.domain_lo.tolist(),
            "domain_hi": self.domain_hi.tolist(),
            "dt_substep": self.dt_substep,
            "substeps_per_step": self.substeps_per_step,
            "gravity": self.gravity.tolist(),
            "boundary_cells": self.boundary_cells,
            "contact_threshold": self.contact_threshold,
            "contact_model": self.contact_model,
            "mass_epsilon": self.mass_epsilon,
            "cfl_factor": self.cfl_factor,
            "mode": self.mode,
        }


@dataclass
class ProjectionSolve:
    kind: str = "jacobi"
    iterations: int = 200
    tolerance: float = 1e-4
    omega: float = 2.0 / 3.0
    strict: bool = True

    def __post_init__(self):
        if self.kind not in ("jacobi", "cg"):
            raise SceneError("projection kind must be 'jacobi' or 'cg'")
        if self.iterations < 1 or not self.tolerance > 0:
            raise SceneError("projection needs iterations >= 1 and tolerance > 0")


@dataclass
class GasConfig:
    """Static description of the Eulerian gas domain."""

    boundaries: dict = field(default_factory=dict)
    ambient_temperature: float = 0.0
    kappa_smoke: float = 0.0
    beta_temp: float = 1.0
    coupling_strength: float = 0.0
    projection: ProjectionSolve = field(default_factory=ProjectionSolve)
    vertical_axis: int = 1

    def side(self, name):
        b = self.boundaries.get(name, "wall")
        if isinstance(b, str):
            return {"type": b}
        return dict(b)
