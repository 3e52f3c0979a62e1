"""Forward model bundle: assembled system plus source and flux plumbing.

Everything here is immutable after construction and can be shared between
threads; batched states are plain ``(node_count, n)`` arrays owned by the
caller.
"""
from __future__ import annotations

import numpy as np

from .fields import AMPLITUDE, SIDE, SourceSquare, project_source
from .mesh_fem import (
    FluxOperator,
    Mesh,
    assemble_mass,
    assemble_stiffness,
    build_mesh,
    factorize,
)


class ForwardModel:
    """Backward-Euler heat solver with boundary-flux observation.

    Parameters
    ----------
    mesh : Mesh
    kappa : float or callable
        Permeability; raster fields are sampled per cell.
    segments : sequence of BoundarySegment
        Observed boundary pieces, stacked in the given order.
    dt : float
    steps_per_interval : int
        Backward-Euler steps during which one source square is active.
    """

    def __init__(self, mesh: Mesh, kappa, segments, dt: float = 1e-3, steps_per_interval: int = 10,
                 q=0.0, flux_kind: str = "conormal", side: float = SIDE, amplitude: float = AMPLITUDE):
        self.mesh = mesh
        self.kappa = kappa
        self.q = q
        self.dt = float(dt)
        self.steps_per_interval = int(steps_per_interval)
        self.side = float(side)
        self.amplitude = float(amplitude)
        self.mass = assemble_mass(mesh)
        self.stiffness = assemble_stiffness(mesh, kappa, q)
        self.fact = factorize(self.mass, self.stiffness, self.dt, mesh)
        self.flux = FluxOperator(mesh, self.mass, self.stiffness, self.dt, segments, kappa=kappa, kind=flux_kind)
        self.segments = list(segments)
        self._mass_dt = (self.mass / self.dt).tocsr()

    @classmethod
    def from_grid(cls, n: int, kappa, segments, **kw) -> "ForwardModel":
        return cls(build_mesh(n, n), kappa, segments, **kw)

    @property
    def n_observed(self) -> int:
        return self.flux.n_observed

    @property
    def interval_dim(self) -> int:
        return self.n_observed * self.steps_per_interval

    def square(self, vertex) -> SourceSquare:
        return SourceSquare((float(vertex[0]), float(vertex[1])), self.side, self.amplitude)

    def load(self, vertex) -> np.ndarray:
        return project_source(self.mesh, self.square(vertex))

    def loads(self, vertices) -> np.ndarray:
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        out = np.empty((self.mesh.node_count, len(vertices)))
        for i, v in enumerate(vertices):
            out[:, i] = self.load(v)
        return out

    def step(self, u: np.ndarray, load: np.ndarray) -> np.ndarray:
        rhs = self._mass_dt @ u + load
        new = np.zeros_like(u, dtype=float)
        new[self.fact.interior] = self.fact.solve(rhs[self.fact.interior])
        return new

    def advance_interval(self, u: np.ndarray, vertices) -> tuple[np.ndarray, np.ndarray]:
        """Run one source interval for a batch.

        ``u`` is ``(node_count, n)``; returns the new states and the stacked
        observations ``(interval_dim, n)`` ordered step-major.
        """
        b = self.loads(vertices)
        if u.ndim == 1:
            u = u[:, None]
        obs = np.empty((self.steps_per_interval, self.n_observed, u.shape[1]))
        for s in range(self.steps_per_interval):
            new = self.step(u, b)
            obs[s] = self.flux(new, u, b)
            u = new
        return u, obs.reshape(self.interval_dim, -1)

    def simulate(self, vertices) -> tuple[np.ndarray, np.ndarray]:
        """Noiseless observations for a vertex sequence: ``(K, interval_dim)``.

        Also returns the final nodal field.
        """
        vertices = np.asarray(vertices, dtype=float).reshape(-1, 2)
        u = np.zeros((self.mesh.node_count, 1))
        rows = []
        for v in vertices:
            u, y = self.advance_interval(u, v[None, :])
            rows.append(y[:, 0])
        return np.array(rows).reshape(len(vertices), self.interval_dim), u[:, 0]
