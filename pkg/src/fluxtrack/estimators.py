"""Scikit-learn style front ends for the forward model and the tracker."""
from __future__ import annotations

import numpy as np
from sklearn.base import BaseEstimator, TransformerMixin
from sklearn.utils.validation import check_is_fitted

from ._validation import check_observations, check_positive, check_seed, check_vertices
from .fields import AMPLITUDE, SIDE, resolve_kappa
from .filter import TransitionParams, relative_error, run_filter
from .forward import ForwardModel
from .mesh_fem import EDGES, BoundarySegment, build_mesh


def _as_segments(segments):
    out = []
    for s in segments:
        if isinstance(s, BoundarySegment):
            out.append(s)
        elif isinstance(s, dict):
            out.append(BoundarySegment(s["edge"], float(s["a"]), float(s["b"])))
        else:
            out.append(BoundarySegment(*s))
    return out


class FluxForwardModel(TransformerMixin, BaseEstimator):
    """Map a sequence of source vertices to stacked boundary-flux records.

    ``fit`` assembles and factorizes the system (its input is ignored);
    ``transform`` takes ``(K, 2)`` left-top vertices and returns ``(K, d)``
    noiseless observations, one row per source interval.
    """

    def __init__(self, kappa="analytic1", segments=tuple((e, 0.45, 0.52) for e in EDGES), n_cells=100,
                 dt=1e-3, steps_per_interval=10, q=0.0, flux_kind="conormal", side=SIDE, amplitude=AMPLITUDE):
        self.kappa = kappa
        self.segments = segments
        self.n_cells = n_cells
        self.dt = dt
        self.steps_per_interval = steps_per_interval
        self.q = q
        self.flux_kind = flux_kind
        self.side = side
        self.amplitude = amplitude

    def fit(self, X=None, y=None):
        check_positive(self.dt, "dt")
        self.model_ = ForwardModel(
            build_mesh(self.n_cells, self.n_cells),
            resolve_kappa(self.kappa),
            _as_segments(self.segments),
            dt=self.dt,
            steps_per_interval=self.steps_per_interval,
            q=self.q,
            flux_kind=self.flux_kind,
            side=self.side,
            amplitude=self.amplitude,
        )
        self.n_features_out_ = self.model_.interval_dim
        return self

    def transform(self, X):
        check_is_fitted(self, "model_")
        X = check_vertices(X)
        return self.model_.simulate(X)[0]

    def get_feature_names_out(self, input_features=None):
        check_is_fitted(self, "model_")
        names = []
        for s in range(self.steps_per_interval):
            for seg, coords in zip(self.model_.segments, self.model_.flux.coords):
                names += [f"step{s}_{seg.edge}_{c:.4f}" for c in coords]
        return np.asarray(names, dtype=object)


class ParticleSourceTracker(BaseEstimator):
    """SIR particle filter that tracks the source square from flux records.

    Parameters
    ----------
    forward : FluxForwardModel
        Fitted or unfitted; an unfitted one is fitted on first use.
    sigma : float
        Observation noise standard deviation (likelihood covariance sigma^2 I).
    estimate : {"filter", "path"}
        ``"filter"`` reports the ensemble mean right after interval k;
        ``"path"`` reports the mean of the final particle trajectories at k.

    Attributes
    ----------
    trajectory_ : TrajectoryEstimate
    mean_, std_ : ndarray of shape (K, 2)
    paths_ : ndarray of shape (K, n_particles, 2)
    """

    def __init__(self, forward=None, sigma=None, n_particles=320, s0=6.0, st=5.0, r1=4.0, r2=4.0,
                 start=(0.12, 0.12), prior_halfwidth=0.0, random_state=0, n_jobs=1, estimate="filter"):
        self.forward = forward
        self.sigma = sigma
        self.n_particles = n_particles
        self.s0 = s0
        self.st = st
        self.r1 = r1
        self.r2 = r2
        self.start = start
        self.prior_halfwidth = prior_halfwidth
        self.random_state = random_state
        self.n_jobs = n_jobs
        self.estimate = estimate

    def _forward_model(self):
        fwd = self.forward if self.forward is not None else FluxForwardModel()
        if not hasattr(fwd, "model_"):
            fwd.fit()
        return fwd.model_

    def fit(self, Y, y=None):
        """Run the filter on ``Y`` (K, d). ``y`` optionally holds true vertices."""
        if self.estimate not in ("filter", "path"):
            raise ValueError(f"estimate must be 'filter' or 'path' (got {self.estimate!r})")
        sigma = check_positive(self.sigma, "sigma")
        seed = check_seed(self.random_state)
        model = self._forward_model()
        Y = check_observations(Y, model.interval_dim)
        truth = None if y is None else check_vertices(y, "y")
        params = TransitionParams(self.s0, self.st, self.r1, self.r2, dx=model.mesh.dx)
        last = {}
        est = run_filter(model, Y, sigma, params, n_particles=int(self.n_particles), start=self.start,
                         seed=seed, prior_halfwidth=self.prior_halfwidth, n_jobs=int(self.n_jobs),
                         truth=truth, callback=lambda e: last.__setitem__("ens", e))
        K = len(Y)
        self.trajectory_ = est
        self.paths_ = last["ens"].paths if K else np.empty((0, int(self.n_particles), 2))
        if self.estimate == "path" and K:
            self.mean_ = self.paths_.mean(axis=1)
            self.std_ = self.paths_.std(axis=1)
            est.mean, est.std = self.mean_, self.std_
            est.samples = list(self.paths_)
        else:
            self.mean_ = est.mean
            self.std_ = est.std
        return self

    def predict(self, Y=None):
        """Estimated vertex per interval; refits when ``Y`` is given."""
        if Y is not None:
            self.fit(Y)
        check_is_fitted(self, "mean_")
        return self.mean_

    def fit_predict(self, Y, y=None):
        return self.fit(Y, y).mean_

    def score(self, Y, y):
        """Negative mean relative error of the estimate against true vertices ``y``."""
        est = self.fit_predict(Y)
        return -float(np.mean(relative_error(est, check_vertices(y, "y"))))
