import numpy as np
import pytest

from fluxtrack.forward import ForwardModel
from fluxtrack.mesh_fem import EDGES, BoundarySegment, build_mesh


@pytest.fixture(scope="session")
def mesh100():
    return build_mesh(100, 100)


@pytest.fixture(scope="session")
def small_model():
    """Coarse forward model with a few steps per interval, for fast filter tests."""
    segs = [BoundarySegment(e, 0.3, 0.7) for e in EDGES]
    return ForwardModel(build_mesh(20, 20), 0.1, segs, dt=1e-3, steps_per_interval=3)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


_RUNS = {}


@pytest.fixture(scope="session")
def preset_run(tmp_path_factory):
    """Cached full preset runs keyed by ``(preset, seed, workers)``; returns (report, out_dir)."""
    from fluxtrack.config import parse_config
    from fluxtrack.harness import run_experiment

    def get(preset, seed=0, workers=1):
        key = (preset, seed, workers)
        if key not in _RUNS:
            out = tmp_path_factory.mktemp(f"{preset}-s{seed}-w{workers}")
            _RUNS[key] = (run_experiment(parse_config({"preset": preset, "seed": seed}), out, n_jobs=workers), out)
        return _RUNS[key]

    return get
