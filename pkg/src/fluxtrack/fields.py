"""Permeability fields and the moving-square source model."""
from __future__ import annotations

from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np

from .mesh_fem import Mesh

SIDE = 0.06
AMPLITUDE = 1250.0
INTERVAL = 0.01

# Left-top vertex convention: the square is [x, x+side] x [y-side, y].
VERTEX_CONVENTION = "left-top"

TRAJECTORIES = {
    1: [(0.12, 0.12), (0.20, 0.20), (0.28, 0.28), (0.36, 0.36), (0.44, 0.44),
        (0.52, 0.52), (0.60, 0.60), (0.68, 0.68), (0.76, 0.76), (0.84, 0.84)],
    2: [(0.12, 0.12), (0.20, 0.24), (0.28, 0.36), (0.36, 0.48), (0.44, 0.56),
        (0.52, 0.64), (0.60, 0.72), (0.68, 0.78), (0.76, 0.84), (0.84, 0.90)],
}


def kappa1(x, y):
    """Multi-frequency permeability; ranges over roughly [0.052, 0.398]."""
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    return (15.0 * np.sin(2 * np.pi * 0.01 * x) * np.sin(2 * np.pi * 0.05 * y)
            + 0.05 * np.sin(2 * np.pi * 6.5 * x) * np.sin(2 * np.pi * 6.0 * y)
            + 0.1)


class RasterPermeability:
    """Piecewise-constant field on a ``rows x cols`` raster over [0,1]^2.

    Row 0 is the top of the domain (y = 1), column 0 the left (x = 0).
    Points on a cell boundary take the lower-index cell.
    """

    cellwise = True

    def __init__(self, grid):
        grid = np.array(grid, dtype=float)
        if grid.ndim != 2 or grid.size == 0:
            raise ValueError("raster must be a non-empty 2D array")
        if not np.all(np.isfinite(grid)) or np.any(grid <= 0):
            raise ValueError("raster entries must be finite and strictly positive")
        self.grid = grid
        self.grid.setflags(write=False)

    @property
    def shape(self):
        return self.grid.shape

    def cell_index(self, x, y):
        rows, cols = self.grid.shape
        x = np.asarray(x, dtype=float)
        y = np.asarray(y, dtype=float)
        col = np.clip(np.ceil(x * cols).astype(int) - 1, 0, cols - 1)
        row = np.clip(np.ceil((1.0 - y) * rows).astype(int) - 1, 0, rows - 1)
        return row, col

    def __call__(self, x, y):
        row, col = self.cell_index(x, y)
        return self.grid[row, col]

    def __eq__(self, other):
        return isinstance(other, RasterPermeability) and np.array_equal(self.grid, other.grid)

    __hash__ = None


def kappa2_eval(field_: RasterPermeability, x, y):
    return field_(x, y)


def _format_value(v: float) -> str:
    return repr(float(v)) if not float(v).is_integer() else str(int(v))


def format_raster(raster: RasterPermeability) -> str:
    rows, cols = raster.shape
    lines = [f"{rows} {cols}"]
    lines += [" ".join(_format_value(v) for v in row) for row in raster.grid]
    return "\n".join(lines) + "\n"


def parse_raster(text: str) -> RasterPermeability:
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ValueError("empty raster file")
    try:
        rows, cols = (int(t) for t in lines[0].split())
    except ValueError as exc:
        raise ValueError(f"bad raster header {lines[0]!r}; expected 'rows cols'") from exc
    if rows < 1 or cols < 1:
        raise ValueError("raster dimensions must be positive")
    if len(lines) - 1 != rows:
        raise ValueError(f"raster declares {rows} rows but has {len(lines) - 1}")
    grid = []
    for r, ln in enumerate(lines[1:]):
        try:
            vals = [float(t) for t in ln.split()]
        except ValueError as exc:
            raise ValueError(f"non-numeric entry in raster row {r}") from exc
        if len(vals) != cols:
            raise ValueError(f"raster row {r} has {len(vals)} values, expected {cols}")
        grid.append(vals)
    return RasterPermeability(grid)


def default_raster_path() -> Path:
    return Path(str(resources.files("fluxtrack") / "data" / "kappa2_default.txt"))


def kappa2_load(path=None) -> RasterPermeability:
    """Read a raster file; ``None`` loads the bundled high-contrast field."""
    path = default_raster_path() if path is None else Path(path)
    if not path.is_file():
        raise FileNotFoundError(f"raster file not found: {path}")
    return parse_raster(path.read_text())


def kappa2_save(raster: RasterPermeability, path) -> None:
    Path(path).write_text(format_raster(raster), newline="\n")


def make_channel_raster(n: int = 100, high: float = 1e4, low: float = 1.0) -> RasterPermeability:
    """High-contrast field with long thin channels and small inclusions.

    Geometry is fixed (no randomness); it was used once to write the bundled
    default file and is kept so the file can be regenerated.
    """
    g = np.full((n, n), low)

    def box(x0, x1, y0, y1):
        # coordinates in [0,1]; rows counted from the top
        c0, c1 = int(round(x0 * n)), int(round(x1 * n))
        r0, r1 = int(round((1 - y1) * n)), int(round((1 - y0) * n))
        g[r0:r1, c0:c1] = high

    # horizontal channels
    for yc, x0, x1 in [(0.16, 0.05, 0.62), (0.31, 0.30, 0.95), (0.47, 0.05, 0.70),
                       (0.63, 0.25, 0.95), (0.79, 0.05, 0.60), (0.92, 0.40, 0.95)]:
        box(x0, x1, yc, yc + 0.02)
    # vertical channels
    for xc, y0, y1 in [(0.33, 0.52, 0.74), (0.76, 0.06, 0.27)]:
        box(xc, xc + 0.02, y0, y1)
    # inclusions
    for xc, yc in [(0.10, 0.05), (0.22, 0.25), (0.45, 0.24), (0.85, 0.20), (0.15, 0.38),
                   (0.55, 0.40), (0.82, 0.45), (0.12, 0.56), (0.78, 0.54), (0.45, 0.71),
                   (0.88, 0.72), (0.20, 0.88), (0.72, 0.85), (0.30, 0.96)]:
        box(xc, xc + 0.03, yc, yc + 0.03)
    return RasterPermeability(g)


def resolve_kappa(kappa):
    """Accept a field object or a string: ``analytic1``, ``raster[:path]``, ``constant:k``."""
    if not isinstance(kappa, str):
        return kappa
    kind, _, arg = kappa.partition(":")
    if kind == "analytic1":
        return kappa1
    if kind == "raster":
        return kappa2_load(arg or None)
    if kind == "constant":
        return constant_field(float(arg))
    raise ValueError(f"unknown permeability {kappa!r}")


def constant_field(value: float):
    value = float(value)
    if value <= 0:
        raise ValueError("constant permeability must be positive")

    def kappa(x, y):
        return np.full(np.broadcast(np.asarray(x), np.asarray(y)).shape, value)

    kappa.value = value
    return kappa


@dataclass(frozen=True)
class SourceSquare:
    vertex: tuple[float, float]
    side: float = SIDE
    amplitude: float = AMPLITUDE

    @property
    def bounds(self) -> tuple[float, float, float, float]:
        """``(x0, x1, y0, y1)`` of the square."""
        x, y = self.vertex
        return x, x + self.side, y - self.side, y

    def inside(self, tol: float = 1e-12) -> bool:
        x0, x1, y0, y1 = self.bounds
        return x0 >= -tol and y0 >= -tol and x1 <= 1 + tol and y1 <= 1 + tol


@dataclass(frozen=True)
class SemiDiscreteSource:
    t_grid: tuple[float, ...]
    squares: tuple[SourceSquare, ...]
    min_gap: float = field(default=1e-9, compare=False)

    def __post_init__(self):
        t = np.asarray(self.t_grid, dtype=float)
        if t.ndim != 1 or len(t) != len(self.squares) + 1:
            raise ValueError("t_grid must have exactly one more entry than squares")
        if len(t) > 1 and np.min(np.diff(t)) < self.min_gap:
            raise ValueError("time grid must be strictly increasing with a positive minimum gap")
        for k, sq in enumerate(self.squares):
            if sq.amplitude == 0:
                raise ValueError(f"source {k + 1} has zero amplitude")
            if not sq.inside():
                raise ValueError(f"source {k + 1} at {sq.vertex} leaves the domain")
        for k in range(len(self.squares) - 1):
            if self.squares[k] == self.squares[k + 1]:
                raise ValueError(f"sources {k + 1} and {k + 2} coincide; merge the intervals")

    @property
    def K(self) -> int:
        return len(self.squares)

    @property
    def vertices(self) -> np.ndarray:
        return np.array([sq.vertex for sq in self.squares], dtype=float).reshape(-1, 2)

    @classmethod
    def from_vertices(cls, vertices, interval: float = INTERVAL, t0: float = 0.0,
                      side: float = SIDE, amplitude: float = AMPLITUDE) -> "SemiDiscreteSource":
        vertices = [tuple(float(c) for c in v) for v in vertices]
        t_grid = tuple(t0 + interval * k for k in range(len(vertices) + 1))
        return cls(t_grid, tuple(SourceSquare(v, side, amplitude) for v in vertices))


def truth_trajectory(trajectory_id: int) -> SemiDiscreteSource:
    if trajectory_id not in TRAJECTORIES:
        raise ValueError(f"unknown trajectory id {trajectory_id!r}; expected 1 or 2")
    return SemiDiscreteSource.from_vertices(TRAJECTORIES[trajectory_id])


def _hat_integrals(lo, hi, a, b):
    """Integrals of the two linear shapes of cell ``[lo, hi]`` over ``[a, b]``."""
    h = hi - lo
    a = np.clip(a, lo, hi)
    b = np.clip(b, lo, hi)
    # int (hi - s)/h ds and int (s - lo)/h ds
    left = ((hi - a) ** 2 - (hi - b) ** 2) / (2 * h)
    right = ((b - lo) ** 2 - (a - lo) ** 2) / (2 * h)
    return left, right


def project_source(mesh: Mesh, sq: SourceSquare) -> np.ndarray:
    """Load vector ``b_i = amplitude * int_square phi_i`` (exact for bilinear phi)."""
    if not sq.inside():
        raise ValueError(f"source square at {sq.vertex} escapes the domain")
    x0, x1, y0, y1 = sq.bounds
    dx, dy = mesh.dx, mesh.dy
    i_lo = max(int(np.floor(x0 / dx + 1e-12)), 0)
    i_hi = min(int(np.ceil(x1 / dx - 1e-12)), mesh.nx)
    j_lo = max(int(np.floor(y0 / dy + 1e-12)), 0)
    j_hi = min(int(np.ceil(y1 / dy - 1e-12)), mesh.ny)
    ci = np.arange(i_lo, i_hi)
    cj = np.arange(j_lo, j_hi)
    lx, rx = _hat_integrals(ci * dx, (ci + 1) * dx, x0, x1)
    ly, ry = _hat_integrals(cj * dy, (cj + 1) * dy, y0, y1)

    load = np.zeros(mesh.node_count)
    I, J = np.meshgrid(ci, cj, indexing="ij")
    for wx, wy, di, dj in ((lx, ly, 0, 0), (rx, ly, 1, 0), (rx, ry, 1, 1), (lx, ry, 0, 1)):
        vals = sq.amplitude * np.outer(wx, wy)
        np.add.at(load, mesh.node_index(I + di, J + dj).ravel(), vals.ravel())
    return load
