"""Treatment-effect models fusing two datasets.

The first dataset links the treatment ``X`` to a mediator ``Y``; the second
links ``Y`` to the target ``T``. Each model represents
``g(x) = E[T | do(X) = x] = <f, mu_{Y|do(X)=x}>`` and differs in which of the
two factors it treats as uncertain:

* ``ImpModel``: ``f`` is a GP, the embedding is a point estimate.
* ``BayesImeModel``: ``f`` is a point estimate, the embedding is a GP.
* ``BayesImpModel``: both are GPs; the inner product is not Gaussian and
  only its first two moments are computed.
"""
import numpy as np
from scipy.linalg import eigh
from scipy.spatial.distance import cdist

from .bayes import causal_bayescme
from .core import DataError, ParameterError, context
from .embeddings import build_omega
from .gp import GpModel, krr_fit
from .kernels import JITTER_LADDER, as_points, cross_gram, factorize_spd

__all__ = ('TreatmentEffectModel', 'ImpModel', 'BayesImeModel', 'BayesImpModel',
           'GaussianMoments', 'FiniteGp', 'inner_product_moments',
           'inner_product_covariance', 'finite_approx', 'select_landmarks',
           'imp_build', 'bayesime_build', 'bayesimp_build', 'moment_match_to_gp',
           'LANDMARK_CAP', 'DEDUP_TOL')

LANDMARK_CAP = 300
DEDUP_TOL = 1e-9


class TreatmentEffectModel:
    """A treatment-effect surrogate with mean ``m(x)`` and covariance ``k(x, x')``.

    Attributes
    ----------
    provenance : str
        One of ``'IMP'``, ``'BayesIME'``, ``'BayesIMP'``, ``'Sampling'``.
    """
    provenance = None

    def __repr__(self):
        return "%s<%s>" % (type(self).__name__, self.provenance)

    def mean(self, x):
        raise NotImplementedError

    def cov(self, x_a, x_b=None):
        raise NotImplementedError

    def variance(self, x):
        return np.diag(self.cov(x)).copy()

    def std(self, x):
        """Pointwise standard deviation, with negative roundoff clipped to 0."""
        return np.sqrt(np.maximum(self.variance(x), 0.0))


class GaussianMoments:
    """Mean and variance of a scalar random variable.

    Parameters
    ----------
    mean : float
    variance : float
        Must be nonnegative; roundoff below zero is clipped.
    """
    __slots__ = ('mean', 'variance')

    def __init__(self, mean, variance):
        mean, variance = float(mean), float(variance)
        if variance < 0:
            if variance < -1e-10 * max(1.0, abs(mean)):
                raise ParameterError("variance must be nonnegative, got %g" % variance)
            variance = 0.0
        self.mean = mean
        self.variance = variance

    def __repr__(self):
        return "GaussianMoments<mean=%g, variance=%g>" % (self.mean, self.variance)


def _vec_cov(m, S, name):
    m = np.atleast_1d(np.asarray(m, dtype=float))
    S = np.atleast_2d(np.asarray(S, dtype=float))
    if m.ndim != 1 or S.shape != (m.size, m.size):
        raise ParameterError("%s: mean of length %d does not match covariance of shape %r"
                             % (name, m.size, S.shape))
    return m, S


def inner_product_moments(mx, Sx, my, Sy):
    """Moments of ``X'Y`` for independent Gaussian vectors ``X`` and ``Y``.

    ``E = mx'my`` and ``Var = mx'Sy mx + my'Sx my + tr(Sx Sy)``.

    Examples
    --------
    >>> m = inner_product_moments([2.], [[0.]], [5.], [[3.]])
    >>> m.mean, m.variance
    (10.0, 12.0)
    """
    mx, Sx = _vec_cov(mx, Sx, "X")
    my, Sy = _vec_cov(my, Sy, "Y")
    if mx.size != my.size:
        raise ParameterError("Dimension mismatch: %d vs %d" % (mx.size, my.size))
    var = mx @ Sy @ mx + my @ Sx @ my + np.sum(Sx * Sy.T)
    return GaussianMoments(mx @ my, var)


def inner_product_covariance(mx, Sx, my1, my2, S12):
    """``Cov(X'Y1, X'Y2)`` for ``X`` independent of the jointly Gaussian ``(Y1, Y2)``.

    ``S12`` is the cross-covariance ``Cov(Y1, Y2)``.
    """
    mx, Sx = _vec_cov(mx, Sx, "X")
    my1 = np.atleast_1d(np.asarray(my1, dtype=float))
    my2 = np.atleast_1d(np.asarray(my2, dtype=float))
    S12 = np.atleast_2d(np.asarray(S12, dtype=float))
    n = mx.size
    if my1.size != n or my2.size != n or S12.shape != (n, n):
        raise ParameterError("Dimension mismatch in inner_product_covariance")
    return float(mx @ S12 @ mx + my1 @ Sx @ my2 + np.sum(Sx * S12.T))


def select_landmarks(points, cap=LANDMARK_CAP, tol=DEDUP_TOL):
    """Deduplicate points and optionally subsample them.

    Points within ``tol`` of an earlier point are dropped. If more than
    ``cap`` remain, a farthest-point subset of size ``cap`` is kept, starting
    from the first point. The result preserves the input order.

    Raises
    ------
    ParameterError
        If ``points`` is empty, or several points collapse to one.
    """
    points = as_points(points)
    n = points.shape[0]
    if n == 0:
        raise ParameterError("Landmark set is empty")
    D = cdist(points, points)
    keep = []
    for i in range(n):
        if not keep or D[i, keep].min() > tol:
            keep.append(i)
    if n > 1 and len(keep) == 1:
        raise ParameterError("All %d landmarks are duplicates of one point" % n)
    if cap is not None and len(keep) > cap:
        sub = D[np.ix_(keep, keep)]
        chosen = [0]
        dist = sub[0].copy()
        for _ in range(cap - 1):
            j = int(np.argmax(dist))
            chosen.append(j)
            dist = np.minimum(dist, sub[j])
        keep = [keep[j] for j in sorted(chosen)]
    return points[keep]


class FiniteGp:
    """A GP restricted to the span of kernel functions at landmarks.

    ``f~(.) = sum_i a_i k(., xi_i)`` with ``a ~ N(coef_mean, coef_cov)``.
    Use :func:`finite_approx` to construct one matching a source GP at the
    landmarks.
    """
    __slots__ = ('landmarks', 'kernel', 'coef_mean', 'coef_cov', 'factor')

    def __init__(self, landmarks, kernel, coef_mean, coef_cov, factor):
        self.landmarks = landmarks
        self.kernel = kernel
        self.coef_mean = coef_mean
        self.coef_cov = coef_cov
        self.factor = factor

    def __repr__(self):
        return "FiniteGp<%d landmarks>" % self.landmarks.shape[0]

    @property
    def gram(self):
        return self.kernel(self.landmarks, self.landmarks)

    def mean_at(self, points):
        return cross_gram(self.kernel, points, self.landmarks) @ self.coef_mean

    def cov_at(self, points_a, points_b=None):
        ka = cross_gram(self.kernel, points_a, self.landmarks)
        kb = ka if points_b is None else cross_gram(self.kernel, points_b, self.landmarks)
        return ka @ self.coef_cov @ kb.T

    def inner(self, other):
        """Moments of the RKHS inner product with an independent ``FiniteGp``
        on the same landmarks, ``a' K b``."""
        if other.landmarks.shape != self.landmarks.shape or not np.allclose(
                other.landmarks, self.landmarks):
            raise ParameterError("FiniteGp inner products need identical landmarks")
        w, V = eigh(self.gram)
        half = (V * np.sqrt(np.clip(w, 0, None))) @ V.T
        return inner_product_moments(half @ self.coef_mean, half @ self.coef_cov @ half,
                                     half @ other.coef_mean, half @ other.coef_cov @ half)


def finite_approx(source, landmarks, kernel):
    """Finite-dimensional approximation of a GP at landmarks.

    Parameters
    ----------
    source : object
        Anything with ``posterior(points) -> (mean, cov)``, e.g. ``GpModel``.
    landmarks : array_like
        Landmark points; near-duplicates are removed first.
    kernel : RbfKernel
        The RKHS kernel spanning the approximation.

    Returns
    -------
    FiniteGp
        Coefficients ``a ~ N(K^{-1} m, K^{-1} C K^{-1})`` where ``m`` and ``C``
        are the source mean and covariance at the landmarks, so that
        evaluations at the landmarks have the source distribution.
    """
    xi = select_landmarks(landmarks, cap=None)
    mean, cov = source.posterior(xi)
    factor = factorize_spd(kernel(xi, xi), name="K_landmarks")
    a = factor.solve(mean)
    S = factor.solve(factor.solve(cov).T)
    return FiniteGp(xi, kernel, a, 0.5 * (S + S.T), factor)


class ImpModel(TreatmentEffectModel):
    """``f ~ GP(0, k_y)`` posterior from the second dataset, integrated
    against the interventional embedding.

    ``m(x) = w(x)' m_f(Y)`` and ``k(x, x') = w(x)' C_f(Y, Y) w(x')``.
    """
    provenance = 'IMP'

    def __init__(self, omega, f):
        self.omega = omega
        self.f = f
        self._f_mean, self._f_cov = f.posterior(omega.mediator)

    def mean(self, x):
        return self.omega.weights(x) @ self._f_mean

    def cov(self, x_a, x_b=None):
        Wa = self.omega.weights(x_a)
        Wb = Wa if x_b is None else self.omega.weights(x_b)
        return Wa @ self._f_cov @ Wb.T


class BayesImeModel(TreatmentEffectModel):
    """A fixed ``f = sum_j A_j k_y(., s_j)`` integrated against the causal
    Bayesian embedding.

    ``m(x) = m_mu(x, s) A`` and ``k(x, x') = B F(x, x') - C G(x, x')`` with
    ``B = A' R_ss A`` and ``C = A' R_sY R^{-1} R_Ys A``.

    Parameters
    ----------
    cme : BayesCmeModel
        The causal Bayesian embedding fitted on the first dataset.
    landmarks : array_like
        Points ``s`` at which ``f`` is expanded.
    coefficients : array_like
        ``A``.
    """
    provenance = 'BayesIME'

    def __init__(self, cme, landmarks, coefficients):
        self.cme = cme
        self.landmarks = as_points(landmarks)
        A = np.asarray(coefficients, dtype=float).ravel()
        if A.size != self.landmarks.shape[0]:
            raise ParameterError("Got %d coefficients for %d landmarks"
                                 % (A.size, self.landmarks.shape[0]))
        self.coefficients = A
        nuclear = cme.kernels.nuclear
        self._R_sY_w = cme.mediator_weights(self.landmarks)
        self.B = float(A @ nuclear(self.landmarks, self.landmarks) @ A)
        R_sY = cross_gram(nuclear, self.landmarks, cme.mediator)
        self.C = float(A @ R_sY @ self._R_sY_w @ A)
        if self.B < self.C - 1e-10 * max(abs(self.B), 1.0):
            context.warn("BayesIME diagnostic: B=%.6g < C=%.6g" % (self.B, self.C))
        self._mean_vec = cme.K_yy @ self._R_sY_w @ A

    def mean(self, x):
        return self.cme.omega.weights(x) @ self._mean_vec

    def cov(self, x_a, x_b=None):
        omega = self.cme.omega
        return self.B * omega.prior_inner(x_a, x_b) - self.C * omega.gram(x_a, x_b)


class BayesImpModel(TreatmentEffectModel):
    """Inner product of a finite-dimensional ``f~`` and embedding ``mu~``.

    Both are expanded on landmarks ``xi``. With ``a`` the coefficient mean
    and ``S_f`` the coefficient covariance of ``f~``, ``P = R_xiY R^{-1} K_yy``
    and ``Q = R_xiY R^{-1} R_Yxi``::

        m(x) = w(x)' P' a
        k(x, x') = w(x)' P' S_f P w(x')                  (second dataset)
                   + (a' R_xixi a) F - (a' Q a) G         (first dataset)
                   + tr(S_f R_xixi) F - tr(S_f Q) G       (interaction)

    Parameters
    ----------
    cme : BayesCmeModel
        Causal Bayesian embedding on the first dataset.
    f : GpModel
        ``f ~ GP(0, r_y)`` posterior on the second dataset.
    landmarks : array_like
        ``xi``, usually :func:`select_landmarks` of both mediator samples.
    printed : bool, optional
        Use the closed forms with ``K_Yxi`` in the mean and the KRR
        coefficients of ``f`` in the first-dataset term, instead of the
        finite-dimensional recipe. Default is False.
    freeze_embedding : bool, optional
        Treat the embedding as deterministic (no first-dataset or
        interaction terms).
    freeze_f : bool, optional
        Treat ``f~`` as deterministic at its mean (no second-dataset or
        interaction terms).
    """
    provenance = 'BayesIMP'

    def __init__(self, cme, f, landmarks, printed=False, freeze_embedding=False,
                 freeze_f=False):
        self.cme = cme
        self.f = f
        self.printed = printed
        self.freeze_embedding = freeze_embedding
        self.freeze_f = freeze_f
        kernels = cme.kernels
        self.finite_f = finite_approx(f, landmarks, kernels.mediator)
        xi = self.finite_f.landmarks
        self.landmarks = xi
        a = self.finite_f.coef_mean
        S = self.finite_f.coef_cov if not freeze_f else np.zeros_like(self.finite_f.coef_cov)

        mw = cme.mediator_weights(xi)
        P = mw.T @ cme.K_yy
        Q = cross_gram(kernels.nuclear, xi, cme.mediator) @ mw
        Q = 0.5 * (Q + Q.T)
        R_xx = kernels.nuclear(xi, xi)

        if printed:
            self._mean_vec = cross_gram(kernels.mediator, cme.mediator, xi) @ a
            krr = krr_fit(f.inputs, f.targets, kernels.mediator, f.noise)
            a_emb = self.finite_f.factor.solve(
                cross_gram(kernels.nuclear, xi, f.inputs) @ krr.coefficients)
        else:
            self._mean_vec = P.T @ a
            a_emb = a
        self.d1_coefs = (float(a_emb @ R_xx @ a_emb), float(a_emb @ Q @ a_emb))
        self.interaction_coefs = (float(np.sum(S * R_xx)), float(np.sum(S * Q)))
        self._PSP = P.T @ S @ P

    @property
    def jitter_used(self):
        return self.finite_f.factor.jitter_used

    def mean(self, x):
        return self.cme.omega.weights(x) @ self._mean_vec

    def cov_terms(self, x_a, x_b=None):
        """The three covariance contributions separately.

        Returns
        -------
        terms : dict
            ``'d1'`` (embedding uncertainty), ``'d2'`` (uncertainty in
            ``f``) and ``'interaction'``, each of shape ``(n_a, n_b)``.
        """
        omega = self.cme.omega
        Wa = omega.weights(x_a)
        Wb = Wa if x_b is None else omega.weights(x_b)
        d2 = Wa @ self._PSP @ Wb.T
        if self.freeze_embedding:
            zero = np.zeros_like(d2)
            return {'d1': zero, 'd2': d2, 'interaction': zero.copy()}
        F = omega.prior_inner(x_a, x_b)
        G = omega.gram(x_a, x_b)
        b, c = self.d1_coefs
        ta, tb = self.interaction_coefs
        return {'d1': b * F - c * G, 'd2': d2, 'interaction': ta * F - tb * G}

    def cov(self, x_a, x_b=None):
        terms = self.cov_terms(x_a, x_b)
        return terms['d1'] + terms['d2'] + terms['interaction']


def _stage_two(d2, spec, target):
    missing = [c for c in spec.mediator + (target,) if c not in d2]
    if missing:
        raise DataError("Second dataset is missing column(s) %s" % ', '.join(missing))
    if len(d2) == 0:
        raise ParameterError("Second dataset is empty")
    return d2.points(spec.mediator), d2[target]


def imp_build(d1, d2, spec, kernels, ridge, noise, target='t'):
    """Build the IMP model.

    Parameters
    ----------
    d1, d2 : ObservationalDataset
        First dataset (treatment, adjustment, mediator) and second dataset
        (mediator, target).
    spec : AdjustmentSpec
    kernels : KernelSet
    ridge : float
        Embedding ridge ``lambda``.
    noise : float
        ``lambda_f``, the noise variance of ``f``.
    target : str, optional
        Target column of ``d2``. Default is ``'t'``.

    Returns
    -------
    ImpModel
    """
    y2, t = _stage_two(d2, spec, target)
    omega = build_omega(d1, spec, kernels, ridge)
    return ImpModel(omega, GpModel(kernels.mediator, noise, y2, t))


def bayesime_build(d1, d2, spec, kernels, ridge, noise, target='t', r_ridge='auto',
                   cme=None):
    """Build the BayesIME model with ``f`` the KRR fit on the second dataset.

    Parameters are as for :func:`imp_build`; ``r_ridge`` is passed to the
    Bayesian embedding, and ``cme`` replaces it with a pre-fitted one.

    Returns
    -------
    BayesImeModel
    """
    y2, t = _stage_two(d2, spec, target)
    if cme is None:
        cme = causal_bayescme(d1, spec, kernels, ridge, r_ridge=r_ridge)
    krr = krr_fit(y2, t, kernels.mediator, noise)
    return BayesImeModel(cme, krr.inputs, krr.coefficients)


def bayesimp_build(d1, d2, spec, kernels, ridge, noise, target='t', r_ridge='auto',
                   landmark_cap=LANDMARK_CAP, printed=False, freeze_embedding=False,
                   freeze_f=False, cme=None):
    """Build the BayesIMP model.

    Parameters are as for :func:`imp_build`, plus:

    r_ridge : float or 'auto', optional
        Ridge on ``R_yy`` in the Bayesian embedding.
    landmark_cap : int, optional
        Maximum number of landmarks taken from the pooled mediator samples.
        Default is 300.
    printed, freeze_embedding, freeze_f : bool, optional
        See :class:`BayesImpModel`.
    cme : BayesCmeModel, optional
        A pre-fitted (e.g. hyperparameter-optimized) embedding to use
        instead of fitting one.

    Returns
    -------
    BayesImpModel
    """
    y2, t = _stage_two(d2, spec, target)
    if cme is None:
        cme = causal_bayescme(d1, spec, kernels, ridge, r_ridge=r_ridge)
    f = GpModel(cme.kernels.nuclear, noise, y2, t)
    xi = select_landmarks(np.vstack([cme.mediator, as_points(y2)]), cap=landmark_cap)
    return BayesImpModel(cme, f, xi, printed=printed, freeze_embedding=freeze_embedding,
                         freeze_f=freeze_f)


def moment_match_to_gp(model, grid):
    """Gaussian prior on a treatment grid matching a model's two moments.

    The covariance is symmetrized. Any negative eigenvalues are clipped to
    zero and jitter of 1e-10 times the mean diagonal is then added, so the
    prior stays positive definite.

    Returns
    -------
    GridPrior
    """
    from .bo import GridPrior

    grid = as_points(grid)
    if grid.shape[0] == 0:
        raise ParameterError("Moment matching needs a nonempty grid")
    mean = np.asarray(model.mean(grid), dtype=float)
    cov = np.asarray(model.cov(grid), dtype=float)
    cov = 0.5 * (cov + cov.T)
    w, V = eigh(cov)
    if w[0] < 0:
        n = cov.shape[0]
        if w[0] < -1e-6 * max(np.trace(cov), 0.0) / n:
            context.warn("%s covariance had eigenvalue %.3g, clipped to 0"
                         % (model.provenance, w[0]))
        cov = (V * np.clip(w, 0, None)) @ V.T
        cov = 0.5 * (cov + cov.T)
        cov += JITTER_LADDER[1] * max(np.trace(cov) / n, 1e-12) * np.eye(n)
    return GridPrior(grid, mean, cov)
