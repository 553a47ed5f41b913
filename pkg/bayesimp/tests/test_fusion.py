import numpy as np
import pytest

from bayesimp.bayes import causal_bayescme
from bayesimp.bo import GridPrior
from bayesimp.core import DataError, ParameterError
from bayesimp.embeddings import AdjustmentSpec
from bayesimp.formats import ObservationalDataset
from bayesimp.fusion import (BayesImeModel, GaussianMoments, bayesime_build,
                             bayesimp_build, finite_approx, imp_build,
                             inner_product_covariance, inner_product_moments,
                             moment_match_to_gp, select_landmarks)
from bayesimp.gp import GpModel
from bayesimp.kernels import KernelSet, NuclearDominantKernel, RbfKernel

PLAIN = AdjustmentSpec('none', 'x', 'y')


def test_inner_product_moments_examples():
    m = inner_product_moments([2.0], [[0.0]], [5.0], [[3.0]])
    assert (m.mean, m.variance) == (10.0, 12.0)
    m = inner_product_moments([0.0], [[1.0]], [0.0], [[1.0]])
    assert (m.mean, m.variance) == (0.0, 1.0)
    m = inner_product_moments([1.0, 2.0], np.zeros((2, 2)), [3.0, 4.0], np.zeros((2, 2)))
    assert (m.mean, m.variance) == (11.0, 0.0)


def test_inner_product_moments_validation():
    with pytest.raises(ParameterError):
        inner_product_moments([1.0, 2.0], np.eye(2), [1.0], [[1.0]])
    with pytest.raises(ParameterError):
        inner_product_moments([1.0], np.eye(2), [1.0], [[1.0]])
    with pytest.raises(ParameterError):
        GaussianMoments(0.0, -1.0)
    assert GaussianMoments(0.0, -1e-14).variance == 0.0


def _random_moments(rng, d):
    mx, my = rng.normal(size=d), rng.normal(size=d)
    A, B = rng.normal(size=(d, d)), rng.normal(size=(d, d))
    return mx, 0.3 * A @ A.T, my, 0.3 * B @ B.T


def _check_moments_by_sampling(rng, n):
    mx, Sx, my, Sy = _random_moments(rng, 3)
    X = rng.multivariate_normal(mx, Sx, size=n)
    Y = rng.multivariate_normal(my, Sy, size=n)
    products = np.einsum('ij,ij->i', X, Y)
    moments = inner_product_moments(mx, Sx, my, Sy)
    se = np.sqrt(moments.variance / n)
    assert abs(products.mean() - moments.mean) < 5 * se
    assert products.var() == pytest.approx(moments.variance, rel=0.05)


def test_inner_product_moments_monte_carlo(rng):
    _check_moments_by_sampling(rng, 100000)


@pytest.mark.slow
def test_inner_product_moments_monte_carlo_large(rng):
    for _ in range(5):
        _check_moments_by_sampling(rng, 1000000)


def test_inner_product_covariance_reduces_to_variance(rng):
    mx, Sx, my, Sy = _random_moments(rng, 4)
    cov = inner_product_covariance(mx, Sx, my, my, Sy)
    assert cov == pytest.approx(inner_product_moments(mx, Sx, my, Sy).variance)
    with pytest.raises(ParameterError):
        inner_product_covariance(mx, Sx, my[:2], my, Sy)


def test_select_landmarks():
    np.testing.assert_array_equal(select_landmarks([0.0, 0.0, 1.0]), [[0.0], [1.0]])
    np.testing.assert_array_equal(select_landmarks([0.0, 0.1, 5.0], cap=2), [[0.0], [5.0]])
    np.testing.assert_array_equal(select_landmarks([[2.0]]), [[2.0]])
    assert select_landmarks(np.arange(50.0), cap=10).shape == (10, 1)
    with pytest.raises(ParameterError):
        select_landmarks(np.zeros((0, 1)))
    with pytest.raises(ParameterError):
        select_landmarks([1.0, 1.0, 1.0])


def test_finite_approx_matches_source_at_landmarks():
    kernel = RbfKernel(0.5)
    source = GpModel(kernel, 0.1, [-1.0, 0.3, 2.0], [0.5, -1.0, 1.0])
    xi = np.arange(-3.0, 4.0)
    finite = finite_approx(source, xi, kernel)
    mean, cov = source.posterior(xi)
    np.testing.assert_allclose(finite.mean_at(xi), mean, atol=1e-8)
    np.testing.assert_allclose(finite.cov_at(xi), cov, atol=1e-8)


def test_finite_gp_inner_product(rng):
    kernel = RbfKernel(0.5)
    xi = np.arange(-2.0, 3.0)
    f = finite_approx(GpModel(kernel, 0.1, [0.0, 1.0], [1.0, -1.0]), xi, kernel)
    g = finite_approx(GpModel(kernel, 0.2, [-1.0], [2.0]), xi, kernel)
    m = f.inner(g)
    K = kernel(f.landmarks, f.landmarks)
    assert m.mean == pytest.approx(f.coef_mean @ K @ g.coef_mean)
    assert m.variance >= 0
    h = finite_approx(GpModel(kernel, 0.1, [0.0], [1.0]), xi[:3], kernel)
    with pytest.raises(ParameterError):
        f.inner(h)


def fusion_data(rng, n=12, m=10):
    """Mediator samples on half-integer offsets, with a well-conditioned
    nuclear Gram on the pooled samples."""
    x = rng.normal(size=n)
    y = np.arange(n) - n / 2.0 + 0.1 * np.sign(x)
    d1 = ObservationalDataset({'x': x, 'y': y, 'z': np.cos(x) + 0.2 * rng.normal(size=n)})
    y2 = np.arange(m) - m / 2.0 + 0.5
    d2 = ObservationalDataset({'y': y2, 't': np.sin(y2) + 0.1 * rng.normal(size=m)})
    return d1, d2


def fusion_kernels():
    k_y = RbfKernel(0.3)
    return KernelSet(RbfKernel(1.0), k_y, NuclearDominantKernel(k_y, 10.0), RbfKernel(1.0))


@pytest.fixture
def fitted(rng):
    d1, d2 = fusion_data(rng)
    kernels = fusion_kernels()
    cme = causal_bayescme(d1, PLAIN, kernels, 0.1)
    return d1, d2, kernels, cme


def test_freeze_f_matches_bayesime(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme, freeze_f=True)
    ime = BayesImeModel(cme, model.landmarks, model.finite_f.coef_mean)
    grid = np.linspace(-2, 2, 9)
    np.testing.assert_allclose(model.mean(grid), ime.mean(grid), atol=1e-6)
    np.testing.assert_allclose(model.cov(grid), ime.cov(grid), atol=1e-6)
    terms = model.cov_terms(grid)
    assert np.all(terms['d2'] == 0)
    assert np.all(terms['interaction'] == 0)


def test_freeze_embedding_keeps_second_stage_only(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme, freeze_embedding=True)
    grid = np.linspace(-2, 2, 9)
    terms = model.cov_terms(grid)
    assert np.all(terms['d1'] == 0)
    np.testing.assert_allclose(model.cov(grid), terms['d2'])


@pytest.mark.parametrize('kind', ['none', 'backdoor', 'frontdoor'])
def test_models_are_psd(rng, kind):
    d1, d2 = fusion_data(rng)
    kernels = fusion_kernels()
    spec = AdjustmentSpec(kind, 'x', 'y', None if kind == 'none' else 'z')
    grid = np.linspace(-3, 3, 21)
    models = [imp_build(d1, d2, spec, kernels, 0.1, 0.1),
              bayesime_build(d1, d2, spec, kernels, 0.1, 0.1),
              bayesimp_build(d1, d2, spec, kernels, 0.1, 0.1)]
    for model in models:
        C = model.cov(grid)
        scale = max(np.trace(C), 1e-12)
        assert np.all(model.variance(grid) >= -1e-8 * scale)
        assert np.linalg.eigvalsh(0.5 * (C + C.T))[0] >= -1e-6 * scale
        assert np.all(model.std(grid) >= 0)
        assert np.all(np.isfinite(model.mean(grid)))


def test_bayesimp_terms_are_psd(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme)
    b, c = model.d1_coefs
    assert b >= c - 1e-10 and c >= -1e-10
    ta, tb = model.interaction_coefs
    assert ta >= tb - 1e-10 and tb >= -1e-10
    assert model.provenance == 'BayesIMP'


def test_bayesimp_printed_mode_runs(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme, printed=True)
    grid = np.linspace(-2, 2, 5)
    assert np.all(np.isfinite(model.mean(grid)))
    assert np.all(model.variance(grid) >= -1e-8)


def test_bayesimp_landmark_cap(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme, landmark_cap=5)
    assert model.landmarks.shape == (5, 1)


def test_missing_second_stage_columns(fitted):
    d1, d2, kernels, _ = fitted
    with pytest.raises(DataError):
        imp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, target='outcome')


def test_bayesime_warns_when_diagnostic_fails(fitted):
    _, _, _, cme = fitted

    class Inflated:
        kernels = cme.kernels
        mediator = cme.mediator
        K_yy = cme.K_yy
        omega = cme.omega

        def mediator_weights(self, y):
            return 2 * cme.mediator_weights(y)

    with pytest.warns(UserWarning, match="B=.* < C="):
        BayesImeModel(Inflated(), cme.mediator[:3], [1.0, 0.5, -0.2])


@pytest.mark.slow
def test_bayesimp_variance_against_sampling(fitted, rng):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme)
    finite = model.finite_f
    xs = np.array([-1.0, 0.0, 1.0])
    xi = model.landmarks
    n = 20000
    a = rng.multivariate_normal(finite.coef_mean, finite.coef_cov, size=n, method='eigh',
                                check_valid='ignore')
    # Embedding at the landmarks, jointly over the treatment values
    pts_x = np.repeat(xs, xi.shape[0])[:, None]
    pts_y = np.tile(xi, (len(xs), 1))
    mu = rng.multivariate_normal(cme.mean(xs, xi).ravel(), cme.cov(pts_x, pts_y),
                                 size=n, method='eigh', check_valid='ignore')
    mu = mu.reshape(n, len(xs), xi.shape[0])
    # <sum a_i k(., xi_i), sum b_j k(., xi_j)> with K b = mu is a' mu
    values = np.einsum('nl,nxl->nx', a, mu)
    np.testing.assert_allclose(values.mean(axis=0), model.mean(xs), atol=0.05)
    np.testing.assert_allclose(values.var(axis=0), model.variance(xs), rtol=0.15, atol=1e-3)


def test_moment_match_to_gp(fitted):
    d1, d2, kernels, cme = fitted
    model = bayesimp_build(d1, d2, PLAIN, kernels, 0.1, 0.1, cme=cme)
    grid = np.linspace(-2, 2, 7)
    prior = moment_match_to_gp(model, grid)
    assert isinstance(prior, GridPrior)
    np.testing.assert_allclose(prior.mean, model.mean(grid))
    np.testing.assert_allclose(prior.cov, prior.cov.T)
    with pytest.raises(ParameterError):
        moment_match_to_gp(model, np.zeros((0, 1)))


def test_moment_match_clips_negative_eigenvalues():
    class Indefinite:
        provenance = 'IMP'

        def mean(self, x):
            return np.zeros(2)

        def cov(self, x):
            return np.array([[1.0, 2.0], [2.0, 1.0]])

    with pytest.warns(UserWarning, match="clipped"):
        prior = moment_match_to_gp(Indefinite(), [0.0, 1.0])
    assert np.linalg.eigvalsh(prior.cov)[0] > 0
    np.linalg.cholesky(prior.cov)
    np.testing.assert_allclose(prior.cov, [[1.5, 1.5], [1.5, 1.5]], atol=1e-9)
    assert prior.cov[0, 0] > prior.cov[0, 1]
