"""Bayesian conditional and interventional mean embeddings.

The embedding is modelled as a GP ``mu(x, y)`` over treatment-mediator pairs,
with the nuclear dominant kernel ``r_y`` as the prior over the mediator so
that posterior samples lie in the RKHS of ``k_y``. The observations are the
kernel evaluations ``k_y(y_i, y_j)``, which are noisy evaluations of
``mu(x_i, y_j)``.
"""
import numpy as np

from .core import ParameterError, SingularMatrixError
from .embeddings import AdjustmentSpec, OmegaFeatures, build_omega
from .gp import HyperState, optimize_hypers
from .kernels import KernelSet, as_points, cross_gram, factorize_spd

__all__ = ('BayesCmeModel', 'bayescme_fit', 'causal_bayescme', 'log_likelihood_from_grams')

# Default ridge on R_yy, relative to its mean diagonal
R_RIDGE_SCALE = 1e-8


def log_likelihood_from_grams(K, ridge, K_yy, R):
    """Marginal likelihood of the embedding hyperparameters.

    ``-N/2 (log|K + lambda I| + log|R|) - 1/2 tr((K + lambda I)^{-1} K_yy R^{-1} K_yy)``

    No ``2 pi`` constant is included, so values are comparable only between
    models on the same number of samples.

    Parameters
    ----------
    K : ndarray
        Treatment (or adjustment feature) Gram, ``(N, N)``.
    ridge : float
        ``lambda``.
    K_yy, R : ndarray
        Mediator Grams under ``k_y`` and ``r_y`` (``R`` already ridged).

    Examples
    --------
    >>> round(float(log_likelihood_from_grams([[1.]], 0.1, [[1.]], [[2.]])), 10)
    -0.6215014075
    """
    K = np.atleast_2d(np.asarray(K, dtype=float))
    K_yy = np.atleast_2d(np.asarray(K_yy, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    A = factorize_spd(K, ridge=ridge, name="K_xx + ridge")
    Rf = factorize_spd(R, name="R_yy")
    return _log_likelihood(A, Rf, K_yy)


def _log_likelihood(A, Rf, K_yy):
    N = K_yy.shape[0]
    M = K_yy @ Rf.solve(K_yy)
    return -0.5 * N * (A.logdet() + Rf.logdet()) - 0.5 * float(np.trace(A.solve(M)))


class BayesCmeModel:
    """Posterior GP over a (causal) conditional mean embedding.

    Parameters
    ----------
    omega : OmegaFeatures
        Treatment features of the first dataset. With ``kind='none'`` this
        is the plain Bayesian CME; with an adjustment it is the causal one
        where ``Phi_Omega`` replaces ``k_X``.
    r_ridge : float or 'auto', optional
        Ridge added to ``R_yy`` before inversion. ``'auto'`` (default) uses
        ``1e-8`` times its mean diagonal.

    Notes
    -----
    Posterior mean and covariance::

        m(x, y) = Phi(x)' (K + lambda I)^{-1} K_yy R^{-1} r(Y, y)
        k((x, y), (x', y')) = F(x, x') r(y, y')
                              - G(x, x') r(y, Y) R^{-1} r(Y, y')

    with ``G(x, x') = Phi(x)' (K + lambda I)^{-1} Phi(x')`` and ``F`` the
    feature-space inner product (``k_x`` without adjustment).
    """
    def __init__(self, omega, r_ridge='auto'):
        self.omega = omega
        self.kernels = omega.kernels
        self.mediator = omega.mediator
        self.K_yy = self.kernels.mediator(self.mediator, self.mediator)
        R = self.kernels.nuclear(self.mediator, self.mediator)
        self.R_yy = 0.5 * (R + R.T)
        if r_ridge == 'auto':
            r_ridge = R_RIDGE_SCALE * float(np.mean(np.diag(self.R_yy)))
        if r_ridge < 0:
            raise ParameterError("r_ridge must be nonnegative, got %r" % r_ridge)
        self.r_ridge = float(r_ridge)
        try:
            self.R_factor = factorize_spd(self.R_yy, ridge=self.r_ridge, name="R_yy")
        except SingularMatrixError as e:
            raise SingularMatrixError("%s; the nuclear measure width eta=%g may be too "
                                      "small or too large for these mediator samples"
                                      % (e, self.kernels.nuclear.eta))

    def __repr__(self):
        return "BayesCmeModel<%s, N=%d, ridge=%g>" % (self.omega.spec.kind, self.n,
                                                     self.omega.ridge)

    @property
    def n(self):
        return self.omega.n

    @property
    def ridge(self):
        return self.omega.ridge

    def mediator_weights(self, y):
        """``R^{-1} r(Y, y)``, shape ``(N, p)``."""
        return self.R_factor.solve(cross_gram(self.kernels.nuclear, self.mediator, y))

    def mean(self, x, y):
        """Posterior mean ``m(x_a, y_b)`` for every pair, shape ``(q, p)``."""
        W = self.omega.weights(x)
        return W @ self.K_yy @ self.mediator_weights(y)

    def cov(self, x_a, y_a, x_b=None, y_b=None):
        """Posterior covariance between paired points ``(x_a[i], y_a[i])``
        and ``(x_b[j], y_b[j])``.

        Returns
        -------
        cov : ndarray, shape (n_a, n_b)
        """
        x_a, y_a = as_points(x_a), as_points(y_a)
        if x_a.shape[0] != y_a.shape[0]:
            raise ParameterError("x and y must have the same number of rows")
        if x_b is None:
            x_b, y_b = x_a, y_a
        x_b, y_b = as_points(x_b), as_points(y_b)
        if x_b.shape[0] != y_b.shape[0]:
            raise ParameterError("x and y must have the same number of rows")
        F = self.omega.prior_inner(x_a, x_b)
        G = self.omega.gram(x_a, x_b)
        r_ab = self.kernels.nuclear(y_a, y_b)
        q_ab = cross_gram(self.kernels.nuclear, y_a, self.mediator) @ self.mediator_weights(y_b)
        return F * r_ab - G * q_ab

    def log_likelihood(self):
        """Marginal likelihood of the hyperparameters (no ``2 pi`` constant)."""
        return _log_likelihood(self.omega.factor, self.R_factor, self.K_yy)

    def log_likelihood_gradient(self):
        """Gradient of ``log_likelihood`` w.r.t. the log-hyperparameters.

        Keys match ``hyper_state()``. The mediator lengthscale and the
        signal variances of the treatment and adjustment kernels are not
        included; they stay fixed when optimizing this likelihood.
        """
        N = self.n
        A = self.omega.factor
        Ainv = A.inverse()
        M = self.K_yy @ self.R_factor.solve(self.K_yy)
        AinvMAinv = Ainv @ M @ Ainv

        def d_outer(dK):
            return (-0.5 * N * np.einsum('ij,pji->p', Ainv, dK)
                    + 0.5 * np.einsum('ij,pji->p', AinvMAinv, dK))

        grads = {k: d_outer(dK) for k, dK in self.omega.gram_gradients().items()}
        grads['ridge'] = d_outer(self.ridge * np.eye(N)[None])
        dR = self.kernels.nuclear.gram_gradients(self.mediator)['eta']
        Rinv = self.R_factor.inverse()
        P = self.R_factor.solve(self.K_yy @ Ainv @ self.K_yy)
        P = P @ Rinv
        grads['eta'] = (-0.5 * N * np.einsum('ij,pji->p', Rinv, dR)
                        + 0.5 * np.einsum('ij,pji->p', P, dR))
        return grads

    def hyper_state(self, frozen=('eta',)):
        values = {'treatment_lengthscale': self.kernels.treatment.lengthscale}
        if self.kernels.adjustment is not None and self.omega.spec.kind != 'none':
            values['adjustment_lengthscale'] = self.kernels.adjustment.lengthscale
        values['ridge'] = self.ridge
        values['eta'] = self.kernels.nuclear.eta
        return HyperState.from_values(values, [f for f in frozen if f in values])

    def with_hyper_state(self, state):
        """Refit with the hyperparameters in ``state``, keeping ``r_ridge``."""
        kernels = self.kernels
        update = {'treatment': kernels.treatment.replace(
            lengthscale=state['treatment_lengthscale'])}
        if 'adjustment_lengthscale' in state:
            update['adjustment'] = kernels.adjustment.replace(
                lengthscale=state['adjustment_lengthscale'])
        update['nuclear'] = kernels.nuclear.replace(measure_width=state.scalar('eta'))
        kernels = kernels.replace(**update)
        omega = self.omega.replace(kernels=kernels, ridge=state.scalar('ridge'))
        return BayesCmeModel(omega, r_ridge=self.r_ridge)

    def optimize(self, config=None, frozen=('eta',)):
        """Maximize the marginal likelihood.

        The mediator kernel lengthscale is always held fixed, which avoids
        the trivial maximum at vanishing lengthscale.

        Returns
        -------
        model : BayesCmeModel
        state : HyperState
        """
        def objective(state):
            return self.with_hyper_state(state).log_likelihood()

        def gradient(state):
            return self.with_hyper_state(state).log_likelihood_gradient()

        state = optimize_hypers(objective, self.hyper_state(frozen), config, gradient)
        return self.with_hyper_state(state), state


def bayescme_fit(x, y, kernels, ridge, r_ridge='auto'):
    """Fit a Bayesian conditional mean embedding of ``Y | X``.

    Parameters
    ----------
    x, y : array_like
        Paired treatment and mediator samples.
    kernels : KernelSet
        ``treatment``, ``mediator`` and ``nuclear`` kernels are used.
    ridge : float
        ``lambda > 0``.
    r_ridge : float or 'auto', optional
        Ridge on ``R_yy``.

    Returns
    -------
    BayesCmeModel
    """
    x, y = as_points(x), as_points(y)
    if x.shape[0] == 0:
        raise ParameterError("Cannot fit a Bayesian CME on an empty dataset")
    spec = AdjustmentSpec('none', 'x', 'y')
    return BayesCmeModel(OmegaFeatures(spec, kernels, ridge, x, y), r_ridge=r_ridge)


def causal_bayescme(data, spec, kernels, ridge, r_ridge='auto'):
    """Fit a causal Bayesian mean embedding of ``Y | do(X)``.

    Parameters
    ----------
    data : ObservationalDataset
        The first dataset.
    spec : AdjustmentSpec
    kernels : KernelSet
    ridge : float
    r_ridge : float or 'auto', optional

    Returns
    -------
    BayesCmeModel
    """
    if not isinstance(kernels, KernelSet):
        raise ParameterError("kernels must be a KernelSet")
    return BayesCmeModel(build_omega(data, spec, kernels, ridge), r_ridge=r_ridge)
