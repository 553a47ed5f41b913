import math

import numpy as np
import pytest

from bayesimp.core import NumericalError, ParameterError
from bayesimp.experiments import gen_ablation
from bayesimp.gp import (GpModel, HyperState, OptimizerConfig, fit_gp_hypers, gp_fit,
                         krr_fit, optimize_hypers)
from bayesimp.kernels import NuclearDominantKernel, RbfKernel


def test_krr_scalar_cases():
    k = RbfKernel(1.0)
    assert krr_fit([0.0], [2.0], k, 1e-12).predict([0.0])[0] == pytest.approx(2.0)
    model = krr_fit([0.0], [2.0], k, 1.0)
    assert model.predict([0.0])[0] == pytest.approx(1.0)
    assert abs(model.predict([50.0])[0]) < 1e-12


def test_krr_validation():
    with pytest.raises(ParameterError):
        krr_fit([0.0], [1.0], RbfKernel(1.0), 0.0)
    with pytest.raises(ParameterError):
        krr_fit([0.0, 1.0], [1.0], RbfKernel(1.0), 0.1)
    with pytest.raises(ParameterError):
        krr_fit(np.zeros((0, 1)), [], RbfKernel(1.0), 0.1)


def test_gp_posterior_scalar():
    model = gp_fit([0.0], [2.0], RbfKernel(1.0), 1.0)
    mean, cov = model.posterior([0.0])
    assert mean[0] == pytest.approx(1.0)
    assert cov[0, 0] == pytest.approx(0.5)


def test_gp_interpolates_with_small_noise():
    y = np.array([-1.0, 0.0, 2.0])
    t = np.array([0.5, -1.0, 3.0])
    model = gp_fit(y, t, RbfKernel(1.0), 1e-10)
    mean, cov = model.posterior(y)
    np.testing.assert_allclose(mean, t, atol=1e-6)
    assert np.all(np.diag(cov) < 1e-6)


def test_gp_prior():
    k = RbfKernel(0.7)
    model = GpModel(k, 0.1)
    q = np.array([[0.0], [0.5]])
    mean, cov = model.posterior(q)
    np.testing.assert_allclose(mean, 0.0)
    np.testing.assert_allclose(cov, k(q, q))
    assert model.log_marginal() == 0.0


def test_gp_log_marginal_scalar():
    model = gp_fit([0.0], [0.0], RbfKernel(1.0), 1.0)
    expected = -0.5 * math.log(2) - 0.5 * math.log(2 * math.pi)
    assert model.log_marginal() == pytest.approx(expected)
    assert expected == pytest.approx(-1.265512, abs=1e-6)


def test_gp_gradient_at_zero_targets(rng):
    y = rng.normal(size=5)
    model = gp_fit(y, np.zeros(5), RbfKernel(1.0, 2.0), 0.3)
    grads = model.log_marginal_gradient()
    K = model.kernel(y, y)
    Ainv = model.factor.inverse()
    assert grads['signal_variance'][0] == pytest.approx(-0.5 * np.trace(Ainv @ K))


@pytest.mark.parametrize('kernel', [RbfKernel(0.8, 1.5),
                                    NuclearDominantKernel(RbfKernel(0.8, 1.5), 2.0)])
def test_gp_gradient_matches_finite_differences(rng, kernel):
    y = rng.normal(size=5)
    t = np.sin(y) + 0.1 * rng.normal(size=5)
    model = gp_fit(y, t, kernel, 0.2)
    state = model.hyper_state()
    analytic = state.gradient_vector(model.log_marginal_gradient())
    v = state.vector()
    h = 1e-5
    for i in range(v.size):
        e = np.zeros_like(v)
        e[i] = h
        up = model.with_hyper_state(state.with_vector(v + e)).log_marginal()
        down = model.with_hyper_state(state.with_vector(v - e)).log_marginal()
        assert analytic[i] == pytest.approx((up - down) / (2 * h), rel=1e-4, abs=1e-7)


def test_gp_sample_shape_and_moments(rng):
    model = gp_fit([0.0, 1.0], [1.0, -1.0], RbfKernel(1.0), 0.1)
    q = np.linspace(-1, 2, 4)
    draws = model.sample(q, 20000, rng)
    assert draws.shape == (20000, 4)
    mean, cov = model.posterior(q)
    np.testing.assert_allclose(draws.mean(axis=0), mean, atol=0.03)
    np.testing.assert_allclose(draws.var(axis=0), np.diag(cov), rtol=0.1, atol=0.01)


def test_hyper_state():
    s = HyperState.from_values({'a': 2.0, 'b': [1.0, 3.0]}, frozen=('a',))
    assert s.free == ['b']
    np.testing.assert_allclose(s.vector(), np.log([1.0, 3.0]))
    s2 = s.with_vector([0.0, 0.0])
    assert s2.scalar('a') == pytest.approx(2.0)
    np.testing.assert_allclose(s2['b'], [1.0, 1.0])
    with pytest.raises(ParameterError):
        HyperState.from_values({'a': 1.0}, frozen=('c',))
    with pytest.raises(ParameterError):
        HyperState.from_values({'a': -1.0})


def test_optimize_concave_quadratic():
    def objective(state):
        return -(state.log('theta')[0] - 3.0) ** 2

    state = optimize_hypers(objective, HyperState.from_values({'theta': 1.0}))
    assert state.log('theta')[0] == pytest.approx(3.0, abs=1e-4)
    assert all(b >= a for a, b in zip(state.trace, state.trace[1:]))


def test_optimize_fixed_point():
    def objective(state):
        return -(state.log('theta')[0]) ** 2

    state = optimize_hypers(objective, HyperState.from_values({'theta': 1.0}))
    assert state.log('theta')[0] == 0.0
    assert state.trace == [0.0]


def test_optimize_honors_frozen():
    def objective(state):
        return -(state.log('a')[0] - 1) ** 2 - (state.log('b')[0] - 2) ** 2

    init = HyperState.from_values({'a': 1.0, 'b': 1.0}, frozen=('b',))
    state = optimize_hypers(objective, init)
    assert state.log('a')[0] == pytest.approx(1.0, abs=1e-4)
    assert state.log('b')[0] == 0.0


def test_optimize_rejects_nonfinite_start():
    with pytest.raises(NumericalError):
        optimize_hypers(lambda s: math.nan, HyperState.from_values({'a': 1.0}))


def test_optimize_warns_on_nan_gradient():
    def objective(state):
        return -(state.log('a')[0] - 1) ** 2

    def gradient(state):
        return {'a': np.array([np.nan])}

    with pytest.warns(UserWarning, match="non-finite gradient"):
        state = optimize_hypers(objective, HyperState.from_values({'a': 1.0}),
                                gradient=gradient)
    assert state.log('a')[0] == 0.0


def test_fit_gp_hypers_improves_evidence():
    _, d2 = gen_ablation(10, 100, seed=3)
    model, state = fit_gp_hypers(d2['y'], d2['t'], config=OptimizerConfig(max_iters=50))
    assert state.trace[-1] >= state.trace[0]
    assert all(b >= a for a, b in zip(state.trace, state.trace[1:]))
    assert model.log_marginal() == pytest.approx(state.trace[-1])
