import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from fluxtrack.filter import (
    STREAM_PROPOSAL,
    EnsembleCollapse,
    ParticleEnsemble,
    TransitionParams,
    clamp_vertex,
    initial_ensemble,
    log_likelihood,
    normalize_log_weights,
    offspring_counts,
    relative_error,
    run_filter,
    sir_step,
    substream,
    systematic_resample,
    transition_sample,
)

EXP1 = TransitionParams(6, 5, 4, 4, dx=0.01)


# ---- random streams ----------------------------------------------------

def test_substreams_are_keyed():
    a = substream(7, 1, 2, 3).uniform(size=4)
    assert np.array_equal(a, substream(7, 1, 2, 3).uniform(size=4))
    assert not np.array_equal(a, substream(7, 1, 2, 4).uniform(size=4))
    assert not np.array_equal(a, substream(8, 1, 2, 3).uniform(size=4))


# ---- transition --------------------------------------------------------

class _FixedS:
    """Generator stand-in: first draw returns s, then the two rectangle uniforms."""

    def __init__(self, s, u1, u2):
        self.s, self.u = s, np.array([u1, u2])

    def uniform(self, low=0.0, high=1.0, size=None):
        return self.u if size == 2 else self.s


@pytest.mark.parametrize("u1,u2,expected", [(0.0, 0.0, (0.22, 0.22)), (1.0, 1.0, (0.14, 0.14)), (0.5, 0.25, (0.18, 0.20))])
def test_transition_rectangle_at_s_zero(u1, u2, expected):
    out = transition_sample(_FixedS(0.0, u1, u2), np.array([0.12, 0.12]), EXP1, clamp=False)
    assert out == pytest.approx(expected, abs=1e-14)


def test_transition_rectangle_bounds_at_s_zero():
    rng = np.random.default_rng(3)
    pts = np.array([transition_sample(_FixedS(0.0, *rng.uniform(size=2)), np.array([0.12, 0.12]), EXP1)
                    for _ in range(2000)])
    assert pts.min() >= 0.14 - 1e-14 and pts.max() <= 0.22 + 1e-14
    # uniform on the rectangle: mean at the centre
    assert np.allclose(pts.mean(axis=0), 0.18, atol=0.003)


def test_transition_degenerate_limit():
    p = TransitionParams(6, 1e-12, 1e-12, 1e-12)
    v = transition_sample(substream(0, 1), np.array([0.3, 0.4]), p)
    assert v == pytest.approx((0.36, 0.46), abs=1e-12)


def test_transition_mean_offset():
    rng = np.random.Generator(np.random.Philox(11))
    v = np.array([0.3, 0.3])
    off = np.array([transition_sample(rng, v, EXP1, clamp=False) for _ in range(20_000)]) - v
    se = off.std(axis=0, ddof=1) / np.sqrt(len(off))
    assert EXP1.mean_offset == pytest.approx(0.085)
    assert np.all(np.abs(off.mean(axis=0) - 0.085) <= 3 * se)


def test_transition_clamps_into_domain():
    v = transition_sample(substream(0, 2), np.array([0.93, 0.99]), EXP1)
    assert 0 <= v[0] <= 0.94 and 0.06 <= v[1] <= 1.0
    assert np.array_equal(clamp_vertex([[-0.1, 0.0], [2.0, 2.0]]), [[0.0, 0.06], [0.94, 1.0]])


@pytest.mark.parametrize("bad", [dict(s0=0), dict(st=-1), dict(r1=0), dict(dx=0)])
def test_transition_params_positive(bad):
    kw = dict(s0=6, st=5, r1=4, r2=4, dx=0.01) | bad
    with pytest.raises(ValueError):
        TransitionParams(**kw)


# ---- likelihood and weights --------------------------------------------

def test_loglik_maximum():
    y = np.arange(5.0)
    sigma = 0.3
    assert log_likelihood(y, y, sigma) == pytest.approx(-2.5 * np.log(2 * np.pi * sigma**2))


def test_loglik_quadratic_in_residual():
    y = np.zeros(4)
    r = np.array([0.1, -0.2, 0.05, 0.3])
    base = log_likelihood(y, y, 0.5)
    one = log_likelihood(y, r, 0.5) - base
    two = log_likelihood(y, 2 * r, 0.5) - base
    assert two == pytest.approx(4 * one, rel=1e-12)


def test_loglik_flat_for_huge_sigma():
    y = np.zeros(6)
    preds = np.random.default_rng(0).standard_normal((6, 5))
    w = normalize_log_weights(log_likelihood(y, preds, 1e12))
    assert np.allclose(w, 0.2, rtol=1e-12)


def test_loglik_batched_matches_single():
    y = np.ones(3)
    P = np.random.default_rng(1).standard_normal((3, 4))
    batch = log_likelihood(y, P, 0.7)
    assert np.allclose(batch, [log_likelihood(y, P[:, i], 0.7) for i in range(4)], rtol=1e-14)


def test_loglik_dimension_mismatch():
    with pytest.raises(ValueError):
        log_likelihood(np.zeros(3), np.zeros(4), 1.0)
    with pytest.raises(ValueError):
        log_likelihood(np.zeros(3), np.zeros(3), 0.0)


def test_normalize_equal():
    assert np.array_equal(normalize_log_weights(np.full(4, -3.0)), np.full(4, 0.25))


@settings(max_examples=50, deadline=None)
@given(st.lists(st.floats(-50, 50), min_size=1, max_size=20), st.floats(-1e3, 1e3))
def test_normalize_shift_invariant(lw, c):
    lw = np.array(lw)
    a = normalize_log_weights(lw)
    b = normalize_log_weights(lw + c)
    assert np.allclose(a, b, rtol=1e-9, atol=1e-15)
    assert a.sum() == pytest.approx(1.0)


def test_normalize_minus_infinity():
    assert np.array_equal(normalize_log_weights([0.0, -np.inf]), [1.0, 0.0])


def test_normalize_collapse():
    with pytest.raises(EnsembleCollapse, match="ensemble collapse"):
        normalize_log_weights([-np.inf, -np.inf])
    with pytest.raises(EnsembleCollapse):
        normalize_log_weights([0.0, np.nan])


# ---- systematic resampling --------------------------------------------

def test_resample_degenerate():
    assert np.array_equal(systematic_resample(substream(0, 2), [1.0, 0.0, 0.0]), [0, 0, 0])


@pytest.mark.parametrize("seed", range(5))
def test_resample_uniform_is_identity(seed):
    n = 37
    assert np.array_equal(systematic_resample(substream(seed, 2), np.full(n, 1 / n)), np.arange(n))


class _Offset:
    def __init__(self, u):
        self.u = u

    def uniform(self):
        return self.u


@pytest.mark.parametrize("u1", [0.0, 0.1, 0.49, 0.5, 0.9, 0.999999])
def test_resample_two_equal_weights(u1):
    # U1 = u1 / N ranges over [0, 0.5)
    assert np.array_equal(offspring_counts(systematic_resample(_Offset(u1), [0.5, 0.5]), 2), [1, 1])


def test_resample_never_picks_zero_weight():
    for u1 in (0.0, 0.3, 0.999):
        idx = systematic_resample(_Offset(u1), [0.0, 0.25, 0.0, 0.75, 0.0])
        assert set(idx) <= {1, 3}


def test_resample_rejects_bad_weights():
    with pytest.raises(ValueError):
        systematic_resample(substream(0), [1.2, -0.2])
    with pytest.raises(ValueError):
        systematic_resample(substream(0), [0.3, 0.3])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.floats(0.0, 1.0), min_size=1, max_size=30), st.integers(0, 2**32))
def test_resample_counts_within_one_of_expectation(raw, seed):
    w = np.array(raw) + 1e-3
    w /= w.sum()
    n = len(w)
    counts = offspring_counts(systematic_resample(substream(seed), w), n)
    assert counts.sum() == n
    assert np.all(np.abs(counts - n * w) < 1 + 1e-9)


def test_resample_offspring_fractions_unbiased():
    w = np.array([0.5, 0.3, 0.2])
    rng = np.random.Generator(np.random.Philox(0))
    frac = np.array([offspring_counts(systematic_resample(rng, w, 10), 3) / 10 for _ in range(2000)])
    assert np.all(frac.sum(axis=1) == 1.0)
    assert np.allclose(frac.mean(axis=0), w, atol=1e-12)


# ---- ensemble step -----------------------------------------------------

def _observe(model, vertices):
    return model.simulate(vertices)[0]


def test_initial_ensemble_point_mass(small_model):
    ens = initial_ensemble(small_model, 8, (0.3, 0.4))
    assert np.array_equal(ens.vertices, np.tile([0.3, 0.4], (8, 1)))
    assert ens.fields.shape == (small_model.mesh.node_count, 8)
    assert np.all(ens.weights == 1 / 8)


def test_initial_ensemble_box_prior(small_model):
    ens = initial_ensemble(small_model, 50, (0.3, 0.4), seed=3, halfwidth=0.05)
    assert np.all(np.abs(ens.vertices - [0.3, 0.4]) <= 0.05 + 1e-15)
    again = initial_ensemble(small_model, 50, (0.3, 0.4), seed=3, halfwidth=0.05)
    assert np.array_equal(ens.vertices, again.vertices)


def test_sir_step_flat_likelihood_keeps_every_particle(small_model):
    ens = initial_ensemble(small_model, 16, (0.2, 0.2), seed=1, halfwidth=0.05)
    obs = np.zeros(small_model.interval_dim)
    out = sir_step(ens, obs, small_model, EXP1, sigma=1e12)
    order = np.lexsort(out.vertices.T)
    # proposals are fresh, so compare against the proposals themselves
    props = np.array([transition_sample(substream(1, STREAM_PROPOSAL, 1, i), ens.vertices[i], EXP1)
                      for i in range(16)])
    assert np.array_equal(out.vertices[order], props[np.lexsort(props.T)])
    assert np.all(out.weights == 1 / 16)


def test_sir_step_concentrates_on_truth(small_model):
    truth = np.array([[0.3, 0.5]])
    obs = _observe(small_model, truth)[0]
    ens = initial_ensemble(small_model, 10, (0.3, 0.5))
    ens.vertices[1:] += np.linspace(0.02, 0.2, 9)[:, None]
    out = sir_step(ens, obs, small_model, EXP1, sigma=1e-9, propose=False)
    assert np.all(out.vertices == truth)
    assert out.pre_weights[0] == pytest.approx(1.0)


def test_sir_step_collapse(small_model):
    ens = initial_ensemble(small_model, 4, (0.3, 0.5))
    with pytest.raises(EnsembleCollapse), np.errstate(all="ignore"):
        sir_step(ens, np.full(small_model.interval_dim, 1e200), small_model, EXP1, sigma=1e-200)


def test_sir_step_bitwise_replayable(small_model):
    obs = _observe(small_model, [[0.12, 0.12]])[0]
    ens = initial_ensemble(small_model, 24, (0.12, 0.12), seed=5, halfwidth=0.03)
    a = sir_step(ens, obs, small_model, EXP1, sigma=1e-3)
    b = sir_step(ens, obs, small_model, EXP1, sigma=1e-3, n_jobs=3, block_size=32)
    assert np.array_equal(a.vertices, b.vertices)
    assert np.array_equal(a.fields, b.fields)
    assert np.array_equal(a.pre_weights, b.pre_weights)


def test_post_resampling_weights_exact(small_model):
    obs = _observe(small_model, [[0.12, 0.12], [0.2, 0.2]])
    est_ens = []
    run_filter(small_model, obs, 1e-3, EXP1, n_particles=10, seed=2, callback=est_ens.append)
    for ens in est_ens:
        assert np.all(ens.weights == 1 / 10)


def test_resampling_copies_fields_with_vertices(small_model):
    obs = _observe(small_model, [[0.12, 0.12], [0.2, 0.2], [0.28, 0.28]])
    est_ens = []
    run_filter(small_model, obs, 1e-2, EXP1, n_particles=12, seed=4, callback=est_ens.append)
    ens = est_ens[-1]
    for i in range(ens.size):
        # re-simulating the particle's ancestry reproduces the field it carries
        u = small_model.simulate(ens.paths[:, i])[1]
        assert np.allclose(u, ens.fields[:, i], rtol=1e-12, atol=1e-14)


# ---- run_filter --------------------------------------------------------

def test_run_filter_no_observations(small_model):
    est = run_filter(small_model, np.empty((0, small_model.interval_dim)), 1.0, EXP1, n_particles=5,
                     start=(0.4, 0.4))
    assert est.K == 0 and est.mean.shape == (0, 2)
    assert est.initial_mean == pytest.approx([0.4, 0.4], abs=1e-15)


def test_run_filter_deterministic(small_model):
    obs = _observe(small_model, [[0.12, 0.12], [0.2, 0.2], [0.28, 0.28]])
    a = run_filter(small_model, obs, 1e-3, EXP1, n_particles=40, seed=9, truth=[[0.12, 0.12], [0.2, 0.2], [0.28, 0.28]])
    b = run_filter(small_model, obs, 1e-3, EXP1, n_particles=40, seed=9, n_jobs=2)
    assert np.array_equal(a.mean, b.mean) and np.array_equal(a.std, b.std)
    assert a.rel_err.shape == (3,) and b.rel_err is None
    assert a.rel_err[0] == pytest.approx(0.0, abs=1e-15)


def test_run_filter_rejects_bad_width(small_model):
    with pytest.raises(ValueError):
        run_filter(small_model, np.zeros((2, 5)), 1.0, EXP1)


def test_relative_error():
    assert relative_error([[3.0, 4.0]], [[0.0, 0.0] + np.array([3.0, 4.0]) * 2])[0] == pytest.approx(0.5)


def test_ensemble_moments():
    ens = ParticleEnsemble(np.array([[0.0, 1.0], [1.0, 3.0]]), np.zeros((3, 2)), np.array([0.25, 0.75]))
    assert ens.mean() == pytest.approx([0.75, 2.5])
    assert ens.std() == pytest.approx([np.sqrt(0.1875), np.sqrt(0.75)])
    assert ens.particle(1).weight == 0.75
