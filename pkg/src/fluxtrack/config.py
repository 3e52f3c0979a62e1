"""Experiment configuration: JSON schema, validation and the built-in presets.

A config file is a JSON object. Every key is optional and unknown keys are
rejected. ``"preset"`` names a base configuration whose values the remaining
keys override::

    {
      "preset": "exp1-multifreq",
      "permeability": "analytic1",          # or "raster", "raster:<path>", "constant:<k>"
      "trajectory": 1,                      # 1, 2 or [[x, y], ...]
      "nx": 100, "ny": 100, "dt": 0.001, "T": 0.1, "K": 10,
      "n_particles": 320,
      "transition": {"s0": 6, "st": 5, "r1": 4, "r2": 4},
      "segments": [{"edge": "south", "a": 0.45, "b": 0.52}, ...],
      "sigma_relative": 0.01,               # noise std as a fraction of truth-flux RMS
      "sigma": null,                        # absolute noise std; overrides sigma_relative
      "seed": 0,
      "prior_halfwidth": 0.0,
      "flux_kind": "conormal",              # or "normal"
      "estimate": "filter",                 # or "path"
      "vertex_convention": "left-top"
    }
"""
from __future__ import annotations

import dataclasses
import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .fields import (
    TRAJECTORIES,
    VERTEX_CONVENTION,
    default_raster_path,
    resolve_kappa,
)
from .filter import TransitionParams
from .mesh_fem import EDGES, BoundarySegment, build_mesh


class ConfigError(ValueError):
    pass


def _segments(a: float, b: float) -> list[dict]:
    return [{"edge": e, "a": a, "b": b} for e in EDGES]


PRESETS: dict[str, dict] = {
    "exp1-multifreq": {
        "permeability": "analytic1", "trajectory": 1,
        "transition": {"s0": 6, "st": 5, "r1": 4, "r2": 4},
        "segments": _segments(0.45, 0.52),
    },
    "exp1-highcontrast": {
        "permeability": "raster", "trajectory": 1,
        "transition": {"s0": 6, "st": 5, "r1": 4, "r2": 4},
        "segments": _segments(0.50, 0.55),
    },
    "exp2-multifreq": {
        "permeability": "analytic1", "trajectory": 2,
        "transition": {"s0": 4, "st": 5, "r1": 4, "r2": 5},
        "segments": _segments(0.40, 0.60),
    },
    "exp2-highcontrast": {
        "permeability": "raster", "trajectory": 2,
        "transition": {"s0": 4, "st": 5, "r1": 4, "r2": 5},
        "segments": _segments(0.43, 0.58),
    },
}


@dataclass
class ExperimentConfig:
    permeability: str = "analytic1"
    trajectory: int | list = 1
    nx: int = 100
    ny: int = 100
    dt: float = 1e-3
    T: float = 0.1
    K: int = 10
    n_particles: int = 320
    transition: dict = field(default_factory=lambda: {"s0": 6, "st": 5, "r1": 4, "r2": 4})
    segments: list = field(default_factory=lambda: _segments(0.45, 0.52))
    sigma_relative: float = 0.01
    sigma: float | None = None
    seed: int = 0
    prior_halfwidth: float = 0.0
    flux_kind: str = "conormal"
    estimate: str = "filter"
    vertex_convention: str = VERTEX_CONVENTION
    preset: str | None = None

    # ---- derived -------------------------------------------------------
    @property
    def steps_per_interval(self) -> int:
        return int(round(self.T / self.K / self.dt))

    @property
    def interval(self) -> float:
        return self.T / self.K

    @property
    def vertices(self) -> np.ndarray:
        if isinstance(self.trajectory, int):
            v = TRAJECTORIES[self.trajectory]
        else:
            v = self.trajectory
        return np.asarray(v, dtype=float).reshape(-1, 2)[: self.K]

    @property
    def start(self) -> np.ndarray:
        return self.vertices[0]

    @property
    def transition_params(self) -> TransitionParams:
        return TransitionParams(dx=1.0 / self.nx, **self.transition)

    @property
    def boundary_segments(self) -> list[BoundarySegment]:
        return [BoundarySegment(s["edge"], float(s["a"]), float(s["b"])) for s in self.segments]

    def kappa(self):
        return resolve_kappa(self.permeability)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True)

    # ---- validation ----------------------------------------------------
    def validate(self) -> "ExperimentConfig":
        kind, _, arg = self.permeability.partition(":")
        if kind not in ("analytic1", "raster", "constant"):
            raise ConfigError(f"unknown permeability {self.permeability!r}")
        if kind == "raster":
            path = Path(arg) if arg else default_raster_path()
            if not path.is_file():
                raise ConfigError(f"raster file not found: {path}")
        if kind == "constant":
            try:
                if float(arg) <= 0:
                    raise ConfigError("constant permeability must be positive")
            except ValueError as exc:
                raise ConfigError(f"bad constant permeability {arg!r}") from exc
        if isinstance(self.trajectory, bool) or (
            isinstance(self.trajectory, int) and self.trajectory not in TRAJECTORIES
        ):
            raise ConfigError(f"unknown trajectory id {self.trajectory!r}")
        if not isinstance(self.trajectory, int):
            v = np.asarray(self.trajectory, dtype=float)
            if v.ndim != 2 or v.shape[1] != 2:
                raise ConfigError("explicit trajectory must be a list of [x, y] pairs")
        for name in ("nx", "ny", "K", "n_particles", "seed"):
            val = getattr(self, name)
            if not isinstance(val, int) or isinstance(val, bool):
                raise ConfigError(f"{name} must be an integer")
        try:
            build_mesh(self.nx, self.ny)
        except ValueError as exc:
            raise ConfigError(str(exc)) from exc
        if self.nx != self.ny:
            raise ConfigError("the transition grid step assumes nx == ny")
        if self.K < 0 or self.n_particles < 1 or self.seed < 0:
            raise ConfigError("K >= 0, n_particles >= 1 and seed >= 0 are required")
        if self.K > len(self.vertices) or (self.K and len(self.vertices) < self.K):
            raise ConfigError(f"trajectory has fewer than K={self.K} vertices")
        if not (self.dt > 0 and self.T > 0):
            raise ConfigError("dt and T must be positive")
        if self.K:
            steps = self.T / self.K / self.dt
            if abs(steps - round(steps)) > 1e-9 or round(steps) < 1:
                raise ConfigError("T / K must be a whole number of time steps")
        if set(self.transition) != {"s0", "st", "r1", "r2"}:
            raise ConfigError("transition needs exactly the keys s0, st, r1, r2")
        try:
            self.transition_params
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        if not self.segments:
            raise ConfigError("at least one observation segment is required")
        mesh = build_mesh(self.nx, self.ny)
        for s in self.segments:
            if set(s) != {"edge", "a", "b"}:
                raise ConfigError(f"segment needs keys edge, a, b (got {sorted(s)})")
            try:
                BoundarySegment(s["edge"], float(s["a"]), float(s["b"])).local_indices(mesh)
            except ValueError as exc:
                raise ConfigError(str(exc)) from exc
        if self.sigma is not None and not self.sigma >= 0:
            raise ConfigError("sigma must be non-negative")
        if not self.sigma_relative >= 0:
            raise ConfigError("sigma_relative must be non-negative")
        if self.prior_halfwidth < 0:
            raise ConfigError("prior_halfwidth must be non-negative")
        if self.flux_kind not in ("conormal", "normal"):
            raise ConfigError(f"flux_kind must be 'conormal' or 'normal' (got {self.flux_kind!r})")
        if self.estimate not in ("filter", "path"):
            raise ConfigError(f"estimate must be 'filter' or 'path' (got {self.estimate!r})")
        if self.vertex_convention != VERTEX_CONVENTION:
            raise ConfigError(f"only the {VERTEX_CONVENTION!r} vertex convention is supported")
        return self


_FIELDS = {f.name for f in dataclasses.fields(ExperimentConfig)}


def _normalise(data: dict) -> dict:
    out = dict(data)
    if isinstance(out.get("trajectory"), list):
        out["trajectory"] = [[float(x), float(y)] for x, y in out["trajectory"]]
    for key in ("dt", "T", "sigma_relative", "prior_halfwidth"):
        if key in out and out[key] is not None:
            out[key] = float(out[key])
    if out.get("sigma") is not None:
        out["sigma"] = float(out["sigma"])
    if "transition" in out:
        out["transition"] = {k: float(v) for k, v in out["transition"].items()}
    if "segments" in out:
        out["segments"] = [{**s, "a": float(s["a"]), "b": float(s["b"])} for s in out["segments"]]
    return out


def from_dict(data: dict, preset: str | None = None) -> ExperimentConfig:
    data = dict(data)
    unknown = set(data) - _FIELDS
    if unknown:
        raise ConfigError(f"unknown config keys: {sorted(unknown)}")
    name = preset or data.get("preset")
    base = {}
    if name is not None:
        if name not in PRESETS:
            raise ConfigError(f"unknown preset {name!r}; available: {sorted(PRESETS)}")
        base = dict(PRESETS[name])
        data["preset"] = name
    merged = _normalise({**ExperimentConfig().to_dict(), **_normalise(base), **data})
    return ExperimentConfig(**merged).validate()


def parse_config(source=None, preset: str | None = None) -> ExperimentConfig:
    """Config from a file path, JSON text, dict, or nothing (defaults / preset)."""
    if source is None:
        data = {}
    elif isinstance(source, dict):
        data = source
    elif isinstance(source, Path) or (isinstance(source, str) and not source.lstrip().startswith("{")):
        path = Path(source)
        if not path.is_file():
            raise ConfigError(f"config file not found: {path}")
        data = json.loads(path.read_text())
    else:
        data = json.loads(source)
    if not isinstance(data, dict):
        raise ConfigError("config must be a JSON object")
    return from_dict(data, preset)
