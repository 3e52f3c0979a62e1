import numpy as np
import pytest
from sklearn.base import clone
from sklearn.exceptions import NotFittedError

from fluxtrack.estimators import FluxForwardModel, ParticleSourceTracker
from fluxtrack.mesh_fem import EDGES, BoundarySegment

SEGS = tuple((e, 0.3, 0.7) for e in EDGES)
PATH = np.array([[0.12, 0.12], [0.2, 0.2], [0.28, 0.28]])


@pytest.fixture(scope="module")
def forward():
    return FluxForwardModel(kappa="constant:0.1", segments=SEGS, n_cells=20, steps_per_interval=3).fit()


def test_forward_params_round_trip():
    f = FluxForwardModel(kappa="analytic1", n_cells=50)
    p = f.get_params()
    assert p["kappa"] == "analytic1" and p["n_cells"] == 50
    g = clone(f)
    assert g.get_params() == p and not hasattr(g, "model_")
    g.set_params(dt=2e-3)
    assert g.dt == 2e-3


def test_forward_transform_shape(forward):
    Y = forward.transform(PATH)
    assert Y.shape == (3, forward.n_features_out_)
    assert forward.n_features_out_ == 3 * 4 * 9
    assert len(forward.get_feature_names_out()) == forward.n_features_out_
    assert np.array_equal(Y, forward.model_.simulate(PATH)[0])


def test_forward_segments_accept_objects(forward):
    f = FluxForwardModel(kappa="constant:0.1", n_cells=20, steps_per_interval=3,
                         segments=[BoundarySegment(*s) for s in SEGS]).fit()
    assert np.array_equal(f.transform(PATH), forward.transform(PATH))


def test_forward_input_validation(forward):
    with pytest.raises(NotFittedError):
        FluxForwardModel().transform(PATH)
    with pytest.raises(ValueError):
        forward.transform(np.ones((2, 3)) * 0.2)
    with pytest.raises(ValueError):
        forward.transform([[1.5, 0.2]])
    with pytest.raises(ValueError):
        FluxForwardModel(dt=-1.0).fit()


def test_tracker_fit_predict(forward):
    Y = forward.transform(PATH)
    trk = ParticleSourceTracker(forward=forward, sigma=1e-3, n_particles=30, start=(0.12, 0.12), random_state=2)
    est = trk.fit(Y, PATH).predict()
    assert est.shape == (3, 2)
    assert trk.paths_.shape == (3, 30, 2)
    assert trk.trajectory_.rel_err.shape == (3,)
    assert np.array_equal(est, trk.fit_predict(Y))
    assert trk.score(Y, PATH) <= 0


def test_tracker_clone_and_params(forward):
    trk = ParticleSourceTracker(forward=forward, sigma=0.5, s0=4, r2=5)
    c = clone(trk)
    assert c.get_params()["s0"] == 4 and c.get_params()["r2"] == 5 and c.sigma == 0.5
    assert "forward__n_cells" in trk.get_params(deep=True)


def test_tracker_path_estimate(forward):
    Y = forward.transform(PATH)
    trk = ParticleSourceTracker(forward=forward, sigma=1e-3, n_particles=20, estimate="path").fit(Y)
    assert np.allclose(trk.mean_, trk.paths_.mean(axis=1))
    # the last interval agrees between the two estimates
    filt = ParticleSourceTracker(forward=forward, sigma=1e-3, n_particles=20).fit(Y)
    assert np.allclose(filt.mean_[-1], trk.mean_[-1], atol=1e-15)


def test_tracker_deterministic_across_jobs(forward):
    Y = forward.transform(PATH)
    a = ParticleSourceTracker(forward=forward, sigma=1e-3, n_particles=70, random_state=5).fit_predict(Y)
    b = ParticleSourceTracker(forward=forward, sigma=1e-3, n_particles=70, random_state=5, n_jobs=3).fit_predict(Y)
    assert np.array_equal(a, b)


@pytest.mark.parametrize("kw", [dict(sigma=None), dict(sigma=0.0), dict(sigma=1.0, random_state=-1),
                                dict(sigma=1.0, random_state=1.5), dict(sigma=1.0, estimate="mode")])
def test_tracker_rejects_bad_params(forward, kw):
    Y = forward.transform(PATH)
    with pytest.raises(ValueError):
        ParticleSourceTracker(forward=forward, **kw).fit(Y)


def test_tracker_rejects_wrong_width(forward):
    with pytest.raises(ValueError):
        ParticleSourceTracker(forward=forward, sigma=1.0).fit(np.zeros((2, 7)))


def test_tracker_unfitted_predict():
    with pytest.raises(NotFittedError):
        ParticleSourceTracker(sigma=1.0).predict()
