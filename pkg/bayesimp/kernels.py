"""Positive-definite kernels, Gram construction and jittered SPD solves."""
import math

import numpy as np
from scipy import integrate
from scipy.linalg import LinAlgError, cho_factor, cho_solve
from scipy.spatial.distance import cdist, pdist

from .core import NumericalError, ParameterError, SingularMatrixError, context

__all__ = ('RbfKernel', 'NuclearDominantKernel', 'GramBundle', 'SpdFactor', 'KernelSet',
           'as_points', 'rbf_eval', 'nuclear_eval', 'quadrature_oracle', 'gram',
           'cross_gram', 'factorize_spd', 'solve_spd', 'median_heuristic',
           'JITTER_LADDER')

# Multiples of the mean diagonal tried in turn when a factorization fails
JITTER_LADDER = (0.0, 1e-10, 1e-8, 1e-6)


def as_points(a, dim=None):
    """Coerce ``a`` to a 2-D float array of shape ``(n, D)``.

    Scalars become a single 1-D point and 1-D arrays become ``n`` points of
    dimension one.
    """
    a = np.asarray(a, dtype=float)
    if a.ndim == 0:
        a = a.reshape(1, 1)
    elif a.ndim == 1:
        a = a[:, None]
    elif a.ndim != 2:
        raise ParameterError("Expected points of shape (n, D), got shape %r" % (a.shape,))
    if dim is not None and a.shape[1] != dim:
        raise ParameterError("Dimension mismatch: expected %d, got %d" % (dim, a.shape[1]))
    return a


def _positive(name, value):
    value = np.atleast_1d(np.asarray(value, dtype=float))
    if value.ndim != 1 or value.size == 0:
        raise ParameterError("%s must be a scalar or a 1-D array" % name)
    if not np.all(np.isfinite(value)) or np.any(value <= 0):
        raise ParameterError("%s must be positive, got %r" % (name, value.tolist()))
    return value


class RbfKernel:
    """Squared-exponential kernel.

    ``k(a, b) = signal_variance * exp(-sum_d (a_d - b_d)**2 / (2 * l_d**2))``

    Parameters
    ----------
    lengthscale : float or array_like
        A scalar (isotropic, any input dimension) or one positive value per
        input dimension.
    signal_variance : float, optional
        Value of ``k(a, a)``. Default is 1.
    """
    __slots__ = ('lengthscale', 'signal_variance')

    def __init__(self, lengthscale, signal_variance=1.0):
        self.lengthscale = _positive("lengthscale", lengthscale)
        self.signal_variance = float(_positive("signal_variance", signal_variance)[0])

    def __repr__(self):
        return "RbfKernel<lengthscale=%s, signal_variance=%g>" % (
            np.array2string(self.lengthscale, precision=4), self.signal_variance)

    @property
    def dim(self):
        """Input dimension, or None for an isotropic kernel."""
        return None if self.lengthscale.size == 1 else self.lengthscale.size

    def _scaled(self, a):
        a = as_points(a, self.dim)
        return a / self.lengthscale

    def __call__(self, a, b):
        a, b = self._scaled(a), self._scaled(b)
        if a.shape[1] != b.shape[1]:
            raise ParameterError("Dimension mismatch: %d vs %d" % (a.shape[1], b.shape[1]))
        if a.shape[0] == 0 or b.shape[0] == 0:
            return np.zeros((a.shape[0], b.shape[0]))
        return self.signal_variance * np.exp(-0.5 * cdist(a, b, 'sqeuclidean'))

    def diag(self, a):
        return np.full(as_points(a, self.dim).shape[0], self.signal_variance)

    def replace(self, lengthscale=None, signal_variance=None):
        return RbfKernel(self.lengthscale if lengthscale is None else lengthscale,
                         self.signal_variance if signal_variance is None else signal_variance)

    def gram_gradients(self, points):
        """Derivatives of the Gram w.r.t. the log-hyperparameters.

        Returns
        -------
        grads : dict
            ``{'lengthscale': array (L, n, n), 'signal_variance': array (1, n, n)}``
            where ``L`` is the number of lengthscales.
        """
        x = as_points(points, self.dim)
        K = self(x, x)
        diff2 = (x[:, None, :] - x[None, :, :]) ** 2 / self.lengthscale ** 2
        if self.lengthscale.size == 1:
            dls = (K * diff2.sum(axis=-1))[None]
        else:
            dls = np.moveaxis(K[..., None] * diff2, -1, 0)
        return {'lengthscale': dls, 'signal_variance': K[None]}


class NuclearDominantKernel:
    """The nuclear dominant companion ``r`` of an RBF kernel ``k``.

    ``r(y, y') = integral k(y, u) k(u, y') exp(-|u|^2 / (2 eta^2)) du``, which
    for diagonal RBF lengthscales has the closed form evaluated here.
    Samples of ``GP(0, r)`` lie in the RKHS of ``k`` almost surely.

    Parameters
    ----------
    base : RbfKernel
        The kernel being dominated.
    measure_width : float
        Width ``eta`` of the Gaussian measure.
    dim : int, optional
        Input dimension. Inferred from ``base`` for ARD kernels; if None
        the dimension of the inputs is used.
    """
    __slots__ = ('base', 'measure_width', 'dim')

    def __init__(self, base, measure_width, dim=None):
        if not isinstance(base, RbfKernel):
            raise ParameterError("NuclearDominantKernel requires an RbfKernel base")
        self.base = base
        self.measure_width = float(_positive("measure_width", measure_width)[0])
        if dim is None:
            dim = base.dim
        elif base.dim is not None and base.dim != dim:
            raise ParameterError("Dimension mismatch: base kernel has %d dims, "
                                 "got dim=%d" % (base.dim, dim))
        self.dim = dim

    def __repr__(self):
        return "NuclearDominantKernel<%r, eta=%g>" % (self.base, self.measure_width)

    @property
    def eta(self):
        return self.measure_width

    def replace(self, base=None, measure_width=None):
        return NuclearDominantKernel(self.base if base is None else base,
                                     self.measure_width if measure_width is None
                                     else measure_width, self.dim)

    def _parts(self, a, b):
        a = as_points(a, self.dim)
        b = as_points(b, self.dim)
        if a.shape[1] != b.shape[1]:
            raise ParameterError("Dimension mismatch: %d vs %d" % (a.shape[1], b.shape[1]))
        D = a.shape[1]
        ls2 = np.broadcast_to(self.base.lengthscale ** 2, (D,))
        eta2 = self.measure_width ** 2
        diff2 = (a[:, None, :] - b[None, :, :]) ** 2
        mid2 = ((a[:, None, :] + b[None, :, :]) / 2.0) ** 2
        s = ls2 / 2.0 + eta2
        prec = 2.0 / ls2 + 1.0 / eta2
        return ls2, eta2, diff2, mid2, s, prec

    def __call__(self, a, b):
        ls2, eta2, diff2, mid2, s, prec = self._parts(a, b)
        log_const = np.sum(0.5 * math.log(2 * math.pi) - 0.5 * np.log(prec))
        expo = -(diff2 / (4.0 * ls2)).sum(axis=-1) - (mid2 / (2.0 * s)).sum(axis=-1)
        return self.base.signal_variance ** 2 * np.exp(log_const + expo)

    def diag(self, a):
        a = as_points(a, self.dim)
        return np.array([self(p[None], p[None])[0, 0] for p in a])

    def gram_gradients(self, points):
        """Derivatives of the Gram w.r.t. the log-hyperparameters.

        Returns
        -------
        grads : dict
            Keys ``'lengthscale'``, ``'signal_variance'`` and ``'eta'``, each
            an array of shape ``(P, n, n)``.
        """
        x = as_points(points, self.dim)
        R = self(x, x)
        ls2, eta2, diff2, mid2, s, prec = self._parts(x, x)
        per_dim = (2.0 / ls2) / prec + diff2 / (2.0 * ls2) + mid2 * ls2 / (2.0 * s ** 2)
        if self.base.lengthscale.size == 1:
            dls = (R * per_dim.sum(axis=-1))[None]
        else:
            dls = np.moveaxis(R[..., None] * per_dim, -1, 0)
        deta = R * ((1.0 / eta2) / prec + mid2 * eta2 / s ** 2).sum(axis=-1)
        return {'lengthscale': dls, 'signal_variance': 2.0 * R[None], 'eta': deta[None]}


class GramBundle:
    """A dense symmetric Gram matrix.

    Parameters
    ----------
    matrix : ndarray
        The ``(N, N)`` kernel evaluations.
    jitter_used : float
        Diagonal jitter added to ``matrix``; always 0 at construction since
        jitter is only added at solve time.
    """
    __slots__ = ('matrix', 'jitter_used')

    def __init__(self, matrix, jitter_used=0.0):
        self.matrix = matrix
        self.jitter_used = jitter_used

    def __repr__(self):
        return "GramBundle<%d x %d, jitter=%g>" % (self.matrix.shape + (self.jitter_used,))

    def min_eigenvalue(self):
        return float(np.linalg.eigvalsh(self.matrix)[0])

    def is_psd(self, rtol=1e-8):
        """Whether the minimum eigenvalue is at least ``-rtol * trace / N``."""
        n = self.matrix.shape[0]
        return self.min_eigenvalue() >= -rtol * np.trace(self.matrix) / n


def rbf_eval(kernel, a, b):
    """Evaluate an RBF kernel at a single pair of points."""
    return float(kernel(as_points(a, kernel.dim).reshape(1, -1),
                        as_points(b, kernel.dim).reshape(1, -1))[0, 0])


def nuclear_eval(kernel, y, y2):
    """Evaluate the nuclear dominant kernel at a single pair of points."""
    return float(kernel(np.atleast_1d(np.asarray(y, float))[None],
                        np.atleast_1d(np.asarray(y2, float))[None])[0, 0])


def quadrature_oracle(base, eta, y, y2, epsabs=1e-9, epsrel=1e-10):
    """Adaptive quadrature of ``integral k(y, u) k(u, y') nu(du)``.

    Reference implementation of the nuclear dominant kernel for inputs of
    dimension one or two. The integration box extends 20 lengthscales past
    ``y`` and ``y'``, beyond which the integrand is below ``exp(-200)``.
    """
    eta = float(_positive("eta", eta)[0])
    y = np.atleast_1d(np.asarray(y, dtype=float))
    y2 = np.atleast_1d(np.asarray(y2, dtype=float))
    D = y.size
    if D > 2 or y2.size != D:
        raise ParameterError("quadrature_oracle supports matching inputs of dimension <= 2")
    ls = np.broadcast_to(base.lengthscale, (D,))
    lo = np.minimum(y, y2) - 20 * ls
    hi = np.maximum(y, y2) + 20 * ls

    def integrand(*u):
        u = np.asarray(u[::-1]) if D == 2 else np.asarray(u)
        k1 = base(y[None], u[None])[0, 0]
        k2 = base(u[None], y2[None])[0, 0]
        return k1 * k2 * math.exp(-float(u @ u) / (2 * eta ** 2))

    try:
        if D == 1:
            points = sorted({float(y[0]), float(y2[0]), float((y[0] + y2[0]) / 2)})
            value, _ = integrate.quad(integrand, lo[0], hi[0], points=points,
                                      epsabs=epsabs, epsrel=epsrel, limit=500)
        else:
            value, _ = integrate.dblquad(integrand, lo[0], hi[0], lo[1], hi[1],
                                         epsabs=epsabs, epsrel=epsrel)
    except integrate.IntegrationWarning as e:  # pragma: nocover
        raise NumericalError("Quadrature did not converge: %s" % e)
    return value


def gram(kernel, points):
    """Gram matrix of ``kernel`` on ``points``."""
    points = as_points(points)
    if points.shape[0] == 0:
        raise ParameterError("Cannot build a Gram matrix on an empty point set")
    K = kernel(points, points)
    return GramBundle(0.5 * (K + K.T), 0.0)


def cross_gram(kernel, points_a, points_b):
    """Matrix of ``kernel(a_i, b_j)``."""
    points_a, points_b = as_points(points_a), as_points(points_b)
    if points_a.shape[0] == 0 or points_b.shape[0] == 0:
        raise ParameterError("Cannot build a cross Gram on an empty point set")
    return kernel(points_a, points_b)


class SpdFactor:
    """Cholesky factor of ``matrix + (ridge + jitter) * I``.

    Use :func:`factorize_spd` rather than the constructor.

    Attributes
    ----------
    name : str
        Name of the factorized matrix, used in error messages.
    jitter_used : float
        The jitter that was needed for the factorization to succeed.
    """
    __slots__ = ('name', 'size', 'jitter_used', '_chol')

    def __init__(self, name, size, jitter_used, chol):
        self.name = name
        self.size = size
        self.jitter_used = jitter_used
        self._chol = chol

    def __repr__(self):
        return "SpdFactor<%r, %d x %d, jitter=%g>" % (self.name, self.size, self.size,
                                                      self.jitter_used)

    def solve(self, rhs):
        rhs = np.asarray(rhs, dtype=float)
        if rhs.shape[0] != self.size:
            raise ParameterError("Right-hand side has %d rows, expected %d"
                                 % (rhs.shape[0], self.size))
        if self.size == 0:
            return rhs.copy()
        return cho_solve(self._chol, rhs)

    def logdet(self):
        if self.size == 0:
            return 0.0
        return 2.0 * float(np.sum(np.log(np.diag(self._chol[0]))))

    def inverse(self):
        return self.solve(np.eye(self.size))

    def quad(self, left, right=None):
        """``left.T @ inv(A) @ right``."""
        right = left if right is None else right
        return np.asarray(left).T @ self.solve(right)


def factorize_spd(matrix, ridge=0.0, name="matrix", warn=True):
    """Factorize ``matrix + ridge * I``, escalating jitter until it succeeds.

    Jitter of ``0, 1e-10, 1e-8, 1e-6`` times the mean diagonal is tried in
    turn. When jitter was needed a warning naming the matrix is emitted.

    Raises
    ------
    SingularMatrixError
        If the factorization fails at the largest jitter.
    """
    A = np.asarray(matrix, dtype=float)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ParameterError("%s must be square, got shape %r" % (name, A.shape))
    if ridge < 0:
        raise ParameterError("ridge must be nonnegative, got %r" % ridge)
    n = A.shape[0]
    if n == 0:
        return SpdFactor(name, 0, 0.0, None)
    if not np.all(np.isfinite(A)):
        raise NumericalError("%s contains non-finite entries" % name)
    scale = np.abs(A).max()
    if not np.allclose(A, A.T, rtol=0, atol=1e-8 * max(scale, 1.0)):
        raise ParameterError("%s is not symmetric" % name)
    A = 0.5 * (A + A.T) + ridge * np.eye(n)
    mean_diag = float(np.mean(np.diag(A)))
    if mean_diag <= 0:
        mean_diag = 1.0
    for rel in JITTER_LADDER:
        jitter = rel * mean_diag
        try:
            chol = cho_factor(A + jitter * np.eye(n), lower=True, check_finite=False)
        except LinAlgError:
            continue
        if np.any(np.diag(chol[0]) <= 0):
            continue
        if jitter > 0 and warn:
            context.warn("%s: added jitter %.1e to factorize" % (name, jitter))
        return SpdFactor(name, n, jitter, chol)
    raise SingularMatrixError("%s is singular: factorization failed with jitter %.1e"
                              % (name, JITTER_LADDER[-1] * mean_diag))


def solve_spd(matrix, rhs, ridge=0.0, name="matrix"):
    """Solve ``(matrix + ridge * I + jitter * I) x = rhs``.

    Returns
    -------
    x : ndarray
        The solution, with the same shape as ``rhs``.
    jitter_used : float
        The jitter added on top of ``ridge``.
    """
    factor = factorize_spd(matrix, ridge=ridge, name=name)
    return factor.solve(rhs), factor.jitter_used


def median_heuristic(points):
    """Median pairwise Euclidean distance, or 1.0 if it is degenerate."""
    points = as_points(points)
    if points.shape[0] < 2:
        return 1.0
    d = pdist(points)
    d = d[d > 0]
    if d.size == 0:
        return 1.0
    return float(np.median(d))


class KernelSet:
    """The kernels of a two-stage fusion problem.

    Parameters
    ----------
    treatment : RbfKernel
        ``k_x`` on the treatment columns.
    mediator : RbfKernel
        ``k_y`` on the mediator columns.
    nuclear : NuclearDominantKernel
        ``r_y`` dominating ``mediator``.
    adjustment : RbfKernel, optional
        ``k_z`` on the adjustment columns, if any.
    """
    __slots__ = ('treatment', 'mediator', 'nuclear', 'adjustment')

    def __init__(self, treatment, mediator, nuclear, adjustment=None):
        if nuclear.base is not mediator:
            nuclear = nuclear.replace(base=mediator)
        self.treatment = treatment
        self.mediator = mediator
        self.nuclear = nuclear
        self.adjustment = adjustment

    def __repr__(self):
        return "KernelSet<x=%r, z=%r, y=%r, eta=%g>" % (
            self.treatment, self.adjustment, self.mediator, self.nuclear.eta)

    def replace(self, **kwargs):
        fields = {k: getattr(self, k) for k in self.__slots__}
        fields.update(kwargs)
        if 'mediator' in kwargs and 'nuclear' not in kwargs:
            fields['nuclear'] = self.nuclear.replace(base=kwargs['mediator'])
        return KernelSet(**fields)

    @classmethod
    def from_data(cls, treatment, mediator, adjustment=None, lengthscale=None,
                  eta=None, signal_variance=1.0):
        """Kernels set by the median heuristic.

        Parameters
        ----------
        treatment, mediator, adjustment : array_like
            Points for each role; ``mediator`` should pool the mediator
            samples of both datasets.
        lengthscale : float, optional
            Overrides the median heuristic for every kernel.
        eta : float, optional
            Width of the nuclear measure. Defaults to twice the median norm
            of the mediator points.
        signal_variance : float, optional
            Signal variance of every kernel. Default is 1.
        """
        def make(points):
            ls = median_heuristic(points) if lengthscale is None else lengthscale
            return RbfKernel(ls, signal_variance)

        mediator = as_points(mediator)
        k_y = make(mediator)
        if eta is None:
            eta = 2.0 * float(np.median(np.linalg.norm(mediator, axis=1)))
            if eta <= 0:
                eta = 1.0
        k_z = None if adjustment is None else make(adjustment)
        return cls(make(treatment), k_y, NuclearDominantKernel(k_y, eta), k_z)
