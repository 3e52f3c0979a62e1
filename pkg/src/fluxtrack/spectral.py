"""Eigen-expansion solution for constant kappa, q = 0 on the unit square.

Modes are ``phi_mn = 2 sin(m pi x) sin(n pi y)`` with eigenvalues
``kappa0 pi^2 (m^2 + n^2)``. A piecewise-constant-in-time source is
integrated exactly against ``exp(-lambda (t - s))`` on each interval, so the
only approximation is truncation at ``m, n <= M``.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .fields import SemiDiscreteSource, SourceSquare
from .mesh_fem import BoundarySegment

DEFAULT_MODES = 50


@dataclass(frozen=True)
class EigenMode:
    m: int
    n: int
    kappa0: float

    @property
    def eigenvalue(self) -> float:
        return self.kappa0 * np.pi**2 * (self.m**2 + self.n**2)

    def __call__(self, x, y):
        return 2.0 * np.sin(self.m * np.pi * np.asarray(x)) * np.sin(self.n * np.pi * np.asarray(y))


@dataclass(frozen=True)
class SpectralTruncation:
    M: int = DEFAULT_MODES

    def __post_init__(self):
        if int(self.M) != self.M or self.M < 1:
            raise ValueError(f"truncation needs M >= 1 (got {self.M})")

    @property
    def index(self) -> np.ndarray:
        return np.arange(1, self.M + 1)


def eigenpair(m: int, n: int, kappa0: float) -> EigenMode:
    if m < 1 or n < 1:
        raise ValueError("mode indices start at 1")
    if kappa0 <= 0:
        raise ValueError("kappa0 must be positive")
    return EigenMode(int(m), int(n), float(kappa0))


def _square_factors(m, n, sq: SourceSquare):
    """Separable parts of ``<indicator, phi_mn>`` without the amplitude."""
    x0, x1, y0, y1 = sq.bounds
    m = np.asarray(m, dtype=float)
    n = np.asarray(n, dtype=float)
    fx = (np.cos(m * np.pi * x0) - np.cos(m * np.pi * x1)) / (m * np.pi)
    fy = (np.cos(n * np.pi * y0) - np.cos(n * np.pi * y1)) / (n * np.pi)
    return fx, fy


def source_coefficient(mode: EigenMode, sq: SourceSquare) -> float:
    fx, fy = _square_factors(mode.m, mode.n, sq)
    return float(2.0 * sq.amplitude * fx * fy)


def coefficient_matrix(sq: SourceSquare, trunc: SpectralTruncation) -> np.ndarray:
    """``(M, M)`` array of source coefficients indexed ``[m-1, n-1]``."""
    k = trunc.index
    fx, fy = _square_factors(k, k, sq)
    return 2.0 * sq.amplitude * np.outer(fx, fy)


def eigenvalues(trunc: SpectralTruncation, kappa0: float) -> np.ndarray:
    k = trunc.index.astype(float)
    return kappa0 * np.pi**2 * (k[:, None] ** 2 + k[None, :] ** 2)


def modal_amplitudes(source: SemiDiscreteSource, trunc: SpectralTruncation,
                     kappa0: float, t: float) -> np.ndarray:
    """Coefficients ``a_mn(t)`` with ``u(x, t) = sum a_mn phi_mn(x)``."""
    if t < 0:
        raise ValueError("t must be non-negative")
    lam = eigenvalues(trunc, kappa0)
    a = np.zeros_like(lam)
    tg = source.t_grid
    for k, sq in enumerate(source.squares):
        start, stop = tg[k], tg[k + 1]
        if t <= start:
            continue
        end = min(t, stop)
        # int_start^end exp(-lam (t - s)) ds
        kernel = (np.exp(-lam * (t - end)) - np.exp(-lam * (t - start))) / lam
        a += coefficient_matrix(sq, trunc) * kernel
    return a


def spectral_solution(source: SemiDiscreteSource, trunc: SpectralTruncation, kappa0: float,
                      t: float, x, y) -> np.ndarray:
    """Solution at points ``(x, y)`` (broadcastable arrays)."""
    a = modal_amplitudes(source, trunc, kappa0, t)
    return evaluate_modes(a, x, y)


def evaluate_modes(a: np.ndarray, x, y) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    shape = np.broadcast(x, y).shape
    x, y = np.broadcast_to(x, shape).ravel(), np.broadcast_to(y, shape).ravel()
    k = np.arange(1, a.shape[0] + 1)
    sx = np.sin(np.pi * np.outer(x, k))
    sy = np.sin(np.pi * np.outer(y, k))
    return 2.0 * np.einsum("pm,mn,pn->p", sx, a, sy).reshape(shape)


def evaluate_modes_grid(a: np.ndarray, xs, ys) -> np.ndarray:
    """Tensor-grid evaluation; result indexed ``[ix, iy]``."""
    k = np.arange(1, a.shape[0] + 1)
    sx = np.sin(np.pi * np.outer(np.asarray(xs, dtype=float), k))
    sy = np.sin(np.pi * np.outer(np.asarray(ys, dtype=float), k))
    return 2.0 * sx @ a @ sy.T


def modal_flux(a: np.ndarray, kappa0: float, edge: str, coord) -> np.ndarray:
    """Outward ``kappa0 du/dn`` from modal amplitudes at edge coordinates."""
    k = np.arange(1, a.shape[0] + 1)
    s = np.asarray(coord, dtype=float)
    # d/dn of sin(k pi x) at x=0 is -k pi (outward normal -x), at x=1 it is k pi cos(k pi)
    sgn_lo = -k * np.pi
    sgn_hi = k * np.pi * (-1.0) ** k
    tang = np.sin(np.pi * np.outer(np.atleast_1d(s), k))
    if edge == "west":
        vals = 2.0 * tang @ (a.T @ sgn_lo)
    elif edge == "east":
        vals = 2.0 * tang @ (a.T @ sgn_hi)
    elif edge == "south":
        vals = 2.0 * tang @ (a @ sgn_lo)
    elif edge == "north":
        vals = 2.0 * tang @ (a @ sgn_hi)
    else:
        raise ValueError(f"unknown edge {edge!r}")
    vals = kappa0 * vals
    return vals if np.ndim(coord) else vals[0]


def spectral_flux(source: SemiDiscreteSource, trunc: SpectralTruncation, kappa0: float,
                  t: float, segment: BoundarySegment | str, coord) -> np.ndarray:
    edge = segment.edge if isinstance(segment, BoundarySegment) else segment
    a = modal_amplitudes(source, trunc, kappa0, t)
    return modal_flux(a, kappa0, edge, coord)
