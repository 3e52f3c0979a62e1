"""Bilinear finite elements on a uniform grid of the unit square.

Homogeneous Dirichlet conditions are imposed by elimination: only interior
nodes are unknowns, boundary values are stored as explicit zeros. Time
stepping is backward Euler with one sparse LU factorization of
``M/dt + A`` reused for every step.

Node ``(i, j)`` sits at ``(i*dx, j*dy)`` and has flat index ``j*(nx+1) + i``.
"""
from __future__ import annotations

from dataclasses import dataclass
from functools import cached_property

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla
from scipy.linalg import solve_banded

EDGES = ("south", "east", "north", "west")

_GAUSS = 0.5 + np.array([-0.5, 0.5]) / np.sqrt(3.0)


@dataclass(frozen=True)
class Mesh:
    nx: int
    ny: int

    @property
    def dx(self) -> float:
        return 1.0 / self.nx

    @property
    def dy(self) -> float:
        return 1.0 / self.ny

    @property
    def node_count(self) -> int:
        return (self.nx + 1) * (self.ny + 1)

    @property
    def cell_count(self) -> int:
        return self.nx * self.ny

    def node_index(self, i, j):
        return np.asarray(j) * (self.nx + 1) + np.asarray(i)

    def lattice(self, k):
        """Inverse of :meth:`node_index`: flat index -> ``(i, j)``."""
        return np.divmod(np.asarray(k), self.nx + 1)[::-1]

    @cached_property
    def coords(self) -> tuple[np.ndarray, np.ndarray]:
        i, j = self.lattice(np.arange(self.node_count))
        return i * self.dx, j * self.dy

    @cached_property
    def cells(self) -> np.ndarray:
        """``(cell_count, 4)`` node indices, counter-clockwise from lower left."""
        ci, cj = np.meshgrid(np.arange(self.nx), np.arange(self.ny))
        ci, cj = ci.ravel(), cj.ravel()
        n0 = self.node_index(ci, cj)
        return np.stack([n0, n0 + 1, n0 + self.nx + 2, n0 + self.nx + 1], axis=1)

    @cached_property
    def cell_origins(self) -> tuple[np.ndarray, np.ndarray]:
        x, y = self.coords
        n0 = self.cells[:, 0]
        return x[n0], y[n0]

    @cached_property
    def boundary_nodes(self) -> dict[str, np.ndarray]:
        """Node indices per edge, ordered by increasing edge coordinate."""
        nx, ny = self.nx, self.ny
        ii = np.arange(nx + 1)
        jj = np.arange(ny + 1)
        return {
            "south": self.node_index(ii, 0),
            "east": self.node_index(nx, jj),
            "north": self.node_index(ii, ny),
            "west": self.node_index(0, jj),
        }

    def edge_coords(self, edge: str) -> np.ndarray:
        if edge in ("south", "north"):
            return np.arange(self.nx + 1) * self.dx
        if edge in ("east", "west"):
            return np.arange(self.ny + 1) * self.dy
        raise ValueError(f"unknown edge {edge!r}")

    @cached_property
    def boundary_mask(self) -> np.ndarray:
        mask = np.zeros(self.node_count, dtype=bool)
        for nodes in self.boundary_nodes.values():
            mask[nodes] = True
        return mask

    @cached_property
    def interior_nodes(self) -> np.ndarray:
        return np.flatnonzero(~self.boundary_mask)


def build_mesh(nx: int, ny: int) -> Mesh:
    if int(nx) != nx or int(ny) != ny or nx < 2 or ny < 2:
        raise ValueError(f"mesh needs nx, ny >= 2 (got {nx}, {ny})")
    return Mesh(int(nx), int(ny))


@dataclass(frozen=True)
class BoundarySegment:
    edge: str
    a: float
    b: float

    def __post_init__(self):
        if self.edge not in EDGES:
            raise ValueError(f"unknown edge {self.edge!r}; expected one of {EDGES}")
        if not 0.0 <= self.a < self.b <= 1.0:
            raise ValueError(f"segment needs 0 <= a < b <= 1 (got [{self.a}, {self.b}])")

    def local_indices(self, mesh: Mesh) -> np.ndarray:
        """Positions along the edge whose coordinate lies in ``[a, b]``."""
        # lattice arithmetic, tolerant to decimal endpoints like 0.45
        n = mesh.nx if self.edge in ("south", "north") else mesh.ny
        lo = int(np.ceil(self.a * n - 1e-9))
        hi = int(np.floor(self.b * n + 1e-9))
        if hi < lo:
            raise ValueError(
                f"segment below mesh resolution: no node of the {self.edge} edge in [{self.a}, {self.b}]"
            )
        return np.arange(lo, hi + 1)

    def nodes(self, mesh: Mesh) -> np.ndarray:
        return mesh.boundary_nodes[self.edge][self.local_indices(mesh)]

    def coords(self, mesh: Mesh) -> np.ndarray:
        return mesh.edge_coords(self.edge)[self.local_indices(mesh)]


@dataclass
class FieldState:
    """Nodal values (boundary entries zero) at ``time = step * dt``.

    ``values`` may be ``(node_count,)`` or ``(node_count, n)`` for a batch.
    """

    values: np.ndarray
    step: int = 0
    dt: float | None = None

    @property
    def time(self) -> float:
        return 0.0 if self.dt is None else self.step * self.dt

    def copy(self) -> "FieldState":
        return FieldState(self.values.copy(), self.step, self.dt)


def zero_state(mesh: Mesh, n: int | None = None) -> FieldState:
    shape = (mesh.node_count,) if n is None else (mesh.node_count, n)
    return FieldState(np.zeros(shape))


def _reference_shapes():
    """Bilinear shapes and reference gradients at the 2x2 Gauss points."""
    xi, eta = np.meshgrid(_GAUSS, _GAUSS, indexing="ij")
    xi, eta = xi.ravel(), eta.ravel()
    N = np.stack([(1 - xi) * (1 - eta), xi * (1 - eta), xi * eta, (1 - xi) * eta], axis=1)
    dN_dxi = np.stack([-(1 - eta), 1 - eta, eta, -eta], axis=1)
    dN_deta = np.stack([-(1 - xi), -xi, xi, 1 - xi], axis=1)
    return xi, eta, N, dN_dxi, dN_deta


def _quadrature_points(mesh: Mesh):
    xi, eta, *_ = _reference_shapes()
    x0, y0 = mesh.cell_origins
    return x0[:, None] + xi[None, :] * mesh.dx, y0[:, None] + eta[None, :] * mesh.dy


def _assemble(mesh: Mesh, local: np.ndarray) -> sp.csr_matrix:
    rows = np.repeat(mesh.cells, 4, axis=1).ravel()
    cols = np.tile(mesh.cells, (1, 4)).ravel()
    n = mesh.node_count
    return sp.coo_matrix((local.ravel(), (rows, cols)), shape=(n, n)).tocsr()


def _sample(coef, mesh: Mesh, name: str) -> np.ndarray:
    """Coefficient values at quadrature points, shape ``(cells, 4)``.

    Objects flagged ``cellwise`` (raster fields) are sampled once at each
    cell centre and held constant over the cell.
    """
    if np.isscalar(coef):
        return np.full((mesh.cell_count, 4), float(coef))
    if getattr(coef, "cellwise", False):
        x0, y0 = mesh.cell_origins
        vals = np.asarray(coef(x0 + 0.5 * mesh.dx, y0 + 0.5 * mesh.dy), dtype=float)
        return np.repeat(vals[:, None], 4, axis=1)
    qx, qy = _quadrature_points(mesh)
    vals = np.asarray(coef(qx, qy), dtype=float)
    if vals.shape != qx.shape:
        vals = np.broadcast_to(vals, qx.shape).copy()
    if not np.all(np.isfinite(vals)):
        raise ValueError(f"{name} is not finite at some quadrature point")
    return vals


def assemble_mass(mesh: Mesh) -> sp.csr_matrix:
    _, _, N, _, _ = _reference_shapes()
    w = 0.25 * mesh.dx * mesh.dy
    local = w * np.einsum("ga,gb->ab", N, N)
    return _assemble(mesh, np.broadcast_to(local, (mesh.cell_count, 4, 4)))


def assemble_stiffness(mesh: Mesh, kappa=1.0, q=0.0) -> sp.csr_matrix:
    """Galerkin matrix of ``-div(kappa grad u) + q u``.

    Raises ``ValueError`` if ``kappa <= 0`` or ``q < 0`` anywhere it is sampled.
    """
    kq = _sample(kappa, mesh, "kappa")
    if np.any(kq <= 0):
        raise ValueError("kappa must be strictly positive (ellipticity)")
    qq = _sample(q, mesh, "q")
    if np.any(qq < 0):
        raise ValueError("q must be non-negative")

    _, _, N, dxi, deta = _reference_shapes()
    hx, hy = mesh.dx, mesh.dy
    w = 0.25 * hx * hy
    grad = np.einsum("ga,gb->gab", dxi, dxi) / hx**2 + np.einsum("ga,gb->gab", deta, deta) / hy**2
    mass = np.einsum("ga,gb->gab", N, N)
    local = w * (np.einsum("cg,gab->cab", kq, grad) + np.einsum("cg,gab->cab", qq, mass))
    return _assemble(mesh, local)


class Factorization:
    """Reusable solver for ``(M/dt + A)`` restricted to interior unknowns."""

    def __init__(self, mass, stiffness, dt: float, interior: np.ndarray):
        if not dt > 0:
            raise ValueError(f"dt must be positive (got {dt})")
        if mass.shape != stiffness.shape:
            raise ValueError("mass and stiffness dimensions differ")
        self.dt = float(dt)
        self.interior = interior
        self.system = (mass / self.dt + stiffness).tocsr()
        block = self.system[interior][:, interior].tocsc()
        try:
            self._lu = spla.splu(block)
        except RuntimeError as exc:
            raise RuntimeError(f"internal error: backward-Euler matrix is singular ({exc})") from exc

    def solve(self, rhs: np.ndarray) -> np.ndarray:
        """Solve on interior unknowns; ``rhs`` is ``(n_interior,)`` or ``(n_interior, k)``."""
        return self._lu.solve(np.ascontiguousarray(rhs, dtype=float))


def factorize(mass, stiffness, dt: float, mesh: Mesh | None = None) -> Factorization:
    if mesh is None:
        n = mass.shape[0]
        side = int(round(np.sqrt(n))) - 1
        if (side + 1) ** 2 != n:
            raise ValueError("pass the mesh explicitly for non-square lattices")
        mesh = Mesh(side, side)
    return Factorization(mass, stiffness, dt, mesh.interior_nodes)


def step_backward_euler(state: FieldState, fact: Factorization, mass, load) -> FieldState:
    """Solve ``(M/dt + A) u_new = (M/dt) u + load`` with zero boundary values."""
    if state.dt is not None and not np.isclose(state.dt, fact.dt, rtol=1e-12, atol=0.0):
        raise ValueError(f"state was advanced with dt={state.dt}, factorization has dt={fact.dt}")
    u = state.values
    rhs = mass @ u / fact.dt + load
    new = np.zeros_like(u, dtype=float)
    new[fact.interior] = fact.solve(rhs[fact.interior])
    return FieldState(new, state.step + 1, fact.dt)


def _edge_mass_banded(h: float, n: int) -> np.ndarray:
    """Consistent P1 mass matrix along one edge, in ``solve_banded`` layout."""
    ab = np.zeros((3, n))
    ab[0, 1:] = h / 6
    ab[2, :-1] = h / 6
    ab[1, :] = 2 * h / 3
    ab[1, 0] = ab[1, -1] = h / 3
    return ab


class FluxOperator:
    """Consistent (variational) boundary flux on a set of segments.

    For each edge the nodal flux ``f`` solves ``M_edge f = r`` where ``r`` is
    the backward-Euler residual ``(M/dt)(u_new - u_old) + A u_new - load``
    evaluated at that edge's nodes. Corner residuals are split evenly between
    the two edges meeting there. The result is the outward conormal flux
    ``kappa du/dn``; ``kind="normal"`` divides by kappa at each node.
    """

    def __init__(self, mesh: Mesh, mass, stiffness, dt: float, segments, kappa=None, kind: str = "conormal"):
        if kind not in ("conormal", "normal"):
            raise ValueError(f"flux kind must be 'conormal' or 'normal' (got {kind!r})")
        if kind == "normal" and kappa is None:
            raise ValueError("normal flux needs kappa")
        self.mesh = mesh
        self.dt = float(dt)
        self.segments = list(segments)
        self.kind = kind
        self._edges = sorted({s.edge for s in self.segments}, key=EDGES.index)
        self._M = {}
        self._A = {}
        self._ab = {}
        self._weight = {}
        for edge in self._edges:
            nodes = mesh.boundary_nodes[edge]
            self._M[edge] = mass[nodes].tocsr()
            self._A[edge] = stiffness[nodes].tocsr()
            h = mesh.dx if edge in ("south", "north") else mesh.dy
            self._ab[edge] = _edge_mass_banded(h, len(nodes))
            wgt = np.ones(len(nodes))
            wgt[0] = wgt[-1] = 0.5
            self._weight[edge] = wgt
        self._local = [s.local_indices(mesh) for s in self.segments]
        self.coords = [s.coords(mesh) for s in self.segments]
        self.sizes = [len(ix) for ix in self._local]
        self.scale = []
        for seg, ix in zip(self.segments, self._local):
            if kind == "normal":
                nodes = mesh.boundary_nodes[seg.edge][ix]
                x, y = mesh.coords
                kv = np.asarray(kappa(x[nodes], y[nodes]), dtype=float) if not np.isscalar(kappa) else np.full(len(nodes), float(kappa))
                self.scale.append(1.0 / kv)
            else:
                self.scale.append(np.ones(len(ix)))

    @property
    def n_observed(self) -> int:
        return int(sum(self.sizes))

    def edge_flux(self, edge: str, new, old, load) -> np.ndarray:
        nodes = self.mesh.boundary_nodes[edge]
        r = self._M[edge] @ (new - old) / self.dt + self._A[edge] @ new - load[nodes]
        w = self._weight[edge]
        r = r * (w if r.ndim == 1 else w[:, None])
        return solve_banded((1, 1), self._ab[edge], r)

    def __call__(self, new, old, load) -> np.ndarray:
        """Stacked flux over all segments: ``(n_observed,)`` or ``(n_observed, k)``."""
        per_edge = {e: self.edge_flux(e, new, old, load) for e in self._edges}
        parts = []
        for seg, ix, sc in zip(self.segments, self._local, self.scale):
            f = per_edge[seg.edge][ix]
            parts.append(f * (sc if f.ndim == 1 else sc[:, None]))
        return np.concatenate(parts, axis=0)


def boundary_flux(new: FieldState, old: FieldState, load, mesh: Mesh, mass, stiffness,
                  segment: BoundarySegment, kappa=None, kind: str = "conormal") -> np.ndarray:
    """Consistent flux at the nodes of one segment for the step ``old -> new``."""
    dt = new.dt
    if dt is None:
        raise ValueError("flux needs a stepped state (its dt is unknown)")
    op = FluxOperator(mesh, mass, stiffness, dt, [segment], kappa=kappa, kind=kind)
    return op(new.values, old.values, load)
