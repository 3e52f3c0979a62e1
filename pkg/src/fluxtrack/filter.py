"""Sequential importance resampling over source-square positions.

The proposal is the transition prior, so the importance weight of a particle
is updated by its likelihood alone. Each particle carries its own PDE field:
the flux observed during interval ``k`` depends on every square the particle
visited before, so resampling duplicates fields together with vertices.

Randomness comes from counter-addressed substreams (``seed``, stream tag,
interval, particle), which makes results independent of evaluation order and
of how many workers share the particle map.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .fields import SIDE

STREAM_PRIOR = 0
STREAM_PROPOSAL = 1
STREAM_RESAMPLE = 2
STREAM_NOISE = 3

BLOCK_SIZE = 32


class EnsembleCollapse(RuntimeError):
    """All importance weights vanished."""


def substream(seed: int, *counters: int) -> np.random.Generator:
    """Philox generator keyed by ``(seed, *counters)``."""
    return np.random.Generator(np.random.Philox(np.random.SeedSequence([int(seed), *map(int, counters)])))


@dataclass(frozen=True)
class TransitionParams:
    s0: float
    st: float
    r1: float
    r2: float
    dx: float = 0.01

    def __post_init__(self):
        for name in ("s0", "st", "r1", "r2", "dx"):
            if not getattr(self, name) > 0:
                raise ValueError(f"transition parameter {name} must be positive")

    @property
    def mean_offset(self) -> float:
        return (self.s0 + self.st / 2) * self.dx


def clamp_vertex(vertex, side: float = SIDE) -> np.ndarray:
    """Keep the left-top vertex such that the whole square lies in [0,1]^2."""
    v = np.asarray(vertex, dtype=float)
    x = np.clip(v[..., 0], 0.0, 1.0 - side)
    y = np.clip(v[..., 1], side, 1.0)
    return np.stack([x, y], axis=-1)


def transition_sample(rng: np.random.Generator, vertex, params: TransitionParams,
                      side: float = SIDE, clamp: bool = True) -> np.ndarray:
    s = rng.uniform(0.0, params.st)
    u1, u2 = rng.uniform(size=2)
    # rectangle given by its top-right corner and size (2 r1 dx, 2 r2 dx)
    top_x = vertex[0] + (params.s0 + s + params.r1) * params.dx
    top_y = vertex[1] + (params.s0 + s + params.r2) * params.dx
    out = np.array([top_x - 2 * params.r1 * params.dx * u1,
                    top_y - 2 * params.r2 * params.dx * u2])
    return clamp_vertex(out, side) if clamp else out


def log_likelihood(y_obs, y_pred, sigma: float):
    """Gaussian log density with covariance ``sigma^2 I``.

    ``y_pred`` may carry a trailing particle axis, giving one value per column.
    """
    y_obs = np.asarray(y_obs, dtype=float)
    y_pred = np.asarray(y_pred, dtype=float)
    if y_pred.shape[0] != y_obs.shape[0] or y_obs.ndim != 1:
        raise ValueError(f"dimension mismatch: observation {y_obs.shape} vs prediction {y_pred.shape}")
    if not sigma > 0:
        raise ValueError("sigma must be positive")
    d = y_obs.shape[0]
    r = y_pred - (y_obs if y_pred.ndim == 1 else y_obs[:, None])
    sq = np.sum(r * r, axis=0)
    return -0.5 * sq / sigma**2 - 0.5 * d * np.log(2 * np.pi * sigma**2)


def normalize_log_weights(log_w) -> np.ndarray:
    log_w = np.asarray(log_w, dtype=float)
    if np.any(np.isnan(log_w)):
        raise EnsembleCollapse("ensemble collapse: NaN log-weight")
    top = np.max(log_w)
    if not np.isfinite(top):
        raise EnsembleCollapse("ensemble collapse: every weight is zero")
    w = np.exp(log_w - top)
    return w / w.sum()


def systematic_resample(rng: np.random.Generator, weights, n: int | None = None) -> np.ndarray:
    """Ancestor indices (ascending) from one uniform offset ``U1 ~ U[0, 1/N)``.

    ``n`` offspring are drawn (default: as many as there are weights).
    """
    w = np.asarray(weights, dtype=float)
    if np.any(w < 0):
        raise ValueError("negative weight")
    if abs(w.sum() - 1.0) > 1e-9:
        raise ValueError(f"weights must sum to 1 (got {w.sum()!r})")
    n = len(w) if n is None else int(n)
    if n < 1:
        raise ValueError("need at least one offspring")
    u = (rng.uniform() + np.arange(n)) / n
    c = np.cumsum(w)
    c[-1] = 1.0
    # particle i owns the stratum [c[i-1], c[i]); zero-weight particles own nothing
    return np.minimum(np.searchsorted(c, u, side="right"), len(w) - 1)


def offspring_counts(indices, n: int) -> np.ndarray:
    return np.bincount(indices, minlength=n)


@dataclass
class Particle:
    vertex: np.ndarray
    field: np.ndarray
    weight: float


@dataclass
class ParticleEnsemble:
    vertices: np.ndarray      # (N, 2)
    fields: np.ndarray        # (node_count, N)
    weights: np.ndarray       # (N,)
    k: int = 0
    seed: int = 0
    pre_weights: np.ndarray | None = field(default=None, repr=False)
    paths: np.ndarray | None = field(default=None, repr=False)    # (k, N, 2) ancestry

    @property
    def size(self) -> int:
        return len(self.weights)

    def particle(self, i: int) -> Particle:
        return Particle(self.vertices[i], self.fields[:, i], float(self.weights[i]))

    def mean(self) -> np.ndarray:
        return self.weights @ self.vertices

    def std(self) -> np.ndarray:
        return np.sqrt(self.weights @ (self.vertices - self.mean()) ** 2)


def initial_ensemble(model, n_particles: int, start, seed: int = 0, halfwidth: float = 0.0) -> ParticleEnsemble:
    """Particles for the first interval drawn from the initial prior.

    With ``halfwidth == 0`` every particle sits at ``start``; otherwise they are
    uniform on the box ``start +/- halfwidth`` (clamped into the domain).
    """
    if n_particles < 1:
        raise ValueError("need at least one particle")
    start = np.asarray(start, dtype=float)
    if halfwidth > 0:
        v = np.array([substream(seed, STREAM_PRIOR, i).uniform(-halfwidth, halfwidth, size=2)
                      for i in range(n_particles)]) + start
        v = clamp_vertex(v, model.side)
    else:
        v = np.tile(start, (n_particles, 1))
    return ParticleEnsemble(
        vertices=v,
        fields=np.zeros((model.mesh.node_count, n_particles)),
        weights=np.full(n_particles, 1.0 / n_particles),
        k=0,
        seed=int(seed),
    )


def _propagate(model, ensemble, vertices, obs, sigma, n_jobs, block_size):
    n = ensemble.size
    blocks = [slice(i, min(i + block_size, n)) for i in range(0, n, block_size)]

    def work(blk):
        u, y = model.advance_interval(ensemble.fields[:, blk], vertices[blk])
        return u, log_likelihood(obs, y, sigma)

    if n_jobs > 1 and len(blocks) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            results = list(pool.map(work, blocks))
    else:
        results = [work(b) for b in blocks]
    fields = np.concatenate([r[0] for r in results], axis=1)
    loglik = np.concatenate([r[1] for r in results])
    return fields, loglik


def sir_step(ensemble: ParticleEnsemble, obs_k, model, params: TransitionParams | None, sigma: float,
             n_jobs: int = 1, block_size: int = BLOCK_SIZE, propose: bool = True) -> ParticleEnsemble:
    """Propose, propagate, weight and resample for the next source interval.

    ``propose=False`` keeps the current vertices; it is used for the first
    interval, whose states come straight from the initial prior.
    """
    k = ensemble.k + 1
    n = ensemble.size
    if propose:
        vertices = np.array([
            transition_sample(substream(ensemble.seed, STREAM_PROPOSAL, k, i), ensemble.vertices[i],
                              params, side=model.side)
            for i in range(n)
        ])
    else:
        vertices = ensemble.vertices.copy()

    fields, loglik = _propagate(model, ensemble, vertices, np.asarray(obs_k, dtype=float),
                                sigma, n_jobs, block_size)
    with np.errstate(divide="ignore"):
        log_w = np.log(ensemble.weights) + loglik
    w = normalize_log_weights(log_w)
    idx = systematic_resample(substream(ensemble.seed, STREAM_RESAMPLE, k), w)
    history = vertices[None] if ensemble.paths is None else np.concatenate([ensemble.paths, vertices[None]])
    return ParticleEnsemble(
        paths=history[:, idx],
        vertices=vertices[idx],
        fields=fields[:, idx],
        weights=np.full(n, 1.0 / n),
        k=k,
        seed=ensemble.seed,
        pre_weights=w,
    )


@dataclass
class TrajectoryEstimate:
    initial_mean: np.ndarray
    mean: np.ndarray                      # (K, 2)
    std: np.ndarray                       # (K, 2)
    samples: list = field(default_factory=list, repr=False)   # (N, 2) per interval
    truth: np.ndarray | None = None

    @property
    def K(self) -> int:
        return len(self.mean)

    @property
    def rel_err(self) -> np.ndarray | None:
        if self.truth is None:
            return None
        return relative_error(self.mean, self.truth)


def relative_error(mean, truth) -> np.ndarray:
    mean = np.asarray(mean, dtype=float)
    truth = np.asarray(truth, dtype=float)
    return np.linalg.norm(mean - truth, axis=-1) / np.linalg.norm(truth, axis=-1)


def run_filter(model, observations, sigma: float, params: TransitionParams, n_particles: int = 320,
               start=(0.12, 0.12), seed: int = 0, prior_halfwidth: float = 0.0, n_jobs: int = 1,
               truth=None, block_size: int = BLOCK_SIZE, callback=None) -> TrajectoryEstimate:
    """Track the source square through ``K = len(observations)`` intervals."""
    obs = np.asarray(observations, dtype=float)
    if obs.ndim != 2 and obs.size:
        raise ValueError("observations must be (K, interval_dim)")
    K = obs.shape[0] if obs.size else 0
    if K and obs.shape[1] != model.interval_dim:
        raise ValueError(f"observation width {obs.shape[1]} does not match the model ({model.interval_dim})")

    ens = initial_ensemble(model, n_particles, start, seed, prior_halfwidth)
    initial_mean = ens.mean()
    means, stds, samples = [], [], []
    for k in range(K):
        ens = sir_step(ens, obs[k], model, params, sigma, n_jobs=n_jobs,
                       block_size=block_size, propose=k > 0)
        means.append(ens.mean())
        stds.append(ens.std())
        samples.append(ens.vertices.copy())
        if callback is not None:
            callback(ens)
    return TrajectoryEstimate(
        initial_mean=initial_mean,
        mean=np.array(means).reshape(K, 2),
        std=np.array(stds).reshape(K, 2),
        samples=samples,
        truth=None if truth is None else np.asarray(truth, dtype=float)[:K],
    )
