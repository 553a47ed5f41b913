"""Conditional and interventional mean embeddings.

The interventional embedding of ``p(Y | do(X) = x)`` is estimated from
observational samples by reweighting the mediator samples::

    mu_{Y|do(X)=x} = Phi_Y (K_Omega + lambda I)^{-1} Phi_Omega(x)

where the features ``Phi_Omega`` depend on the adjustment used to identify
the effect:

* ``'none'``: no adjustment, ``Phi_Omega(x) = k_X(X, x)`` and
  ``K_Omega = K_XX`` (the classical conditional mean embedding).
* ``'backdoor'``: adjustment columns ``Z`` block every backdoor path;
  ``Phi_Omega(x)_i = k_X(x_i, x) * mean_j k_Z(z_i, z_j)``.
* ``'frontdoor'``: columns ``Z`` mediate every directed path from the
  treatment; ``Phi_Omega(x)_i = mean_j k_X(x_i, x_j) * [K_ZZ w_Z(x)]_i`` with
  ``w_Z(x) = (K_XX + lambda_z I)^{-1} k_X(X, x)``.

In the adjusted cases ``K_Omega = K_XX * K_ZZ`` (elementwise).
"""
import numpy as np

from .core import DataError, ParameterError
from .kernels import as_points, cross_gram, factorize_spd

__all__ = ('AdjustmentSpec', 'OmegaFeatures', 'build_omega', 'ime_evaluate',
           'cme_weights', 'KINDS')

KINDS = ('none', 'backdoor', 'frontdoor')


def _as_columns(columns):
    if columns is None:
        return ()
    if isinstance(columns, str):
        return (columns,)
    return tuple(columns)


class AdjustmentSpec:
    """Which columns play the treatment, adjustment and mediator roles.

    Parameters
    ----------
    kind : {'none', 'backdoor', 'frontdoor'}
        The adjustment identifying the interventional distribution.
    treatment : str or sequence of str
        Treatment column(s) ``X``.
    mediator : str or sequence of str
        Column(s) ``Y`` shared with the second dataset.
    adjustment : str or sequence of str, optional
        Column(s) ``Z``. Required unless ``kind='none'``.
    inner_ridge : float, optional
        Ridge ``lambda_z`` of the front-door inner embedding of ``Z | X``.
        Defaults to the outer ridge.
    """
    __slots__ = ('kind', 'treatment', 'adjustment', 'mediator', 'inner_ridge')

    def __init__(self, kind, treatment, mediator, adjustment=None, inner_ridge=None):
        if kind not in KINDS:
            raise ParameterError("Unknown adjustment kind %r, expected one of %s"
                                 % (kind, ', '.join(KINDS)))
        self.kind = kind
        self.treatment = _as_columns(treatment)
        self.mediator = _as_columns(mediator)
        self.adjustment = _as_columns(adjustment)
        if not self.treatment or not self.mediator:
            raise ParameterError("treatment and mediator columns are required")
        if kind == 'none' and self.adjustment:
            raise ParameterError("adjustment columns given with kind='none'")
        if kind != 'none' and not self.adjustment:
            raise ParameterError("%s adjustment requires adjustment columns" % kind)
        roles = self.treatment + self.adjustment + self.mediator
        if len(set(roles)) != len(roles):
            raise ParameterError("treatment, adjustment and mediator columns must be "
                                 "disjoint, got %s" % (roles,))
        if inner_ridge is not None and not inner_ridge > 0:
            raise ParameterError("inner_ridge must be positive, got %r" % inner_ridge)
        self.inner_ridge = inner_ridge

    def __repr__(self):
        return ("AdjustmentSpec<%s, X=%s, Z=%s, Y=%s>"
                % (self.kind, ','.join(self.treatment), ','.join(self.adjustment) or '-',
                   ','.join(self.mediator)))

    def validate(self, dataset):
        """Raise ``DataError`` if ``dataset`` lacks any referenced column."""
        missing = [c for c in self.treatment + self.adjustment + self.mediator
                   if c not in dataset]
        if missing:
            raise DataError("Dataset is missing column(s) %s (available: %s)"
                            % (', '.join(missing), ', '.join(dataset.names)))


class OmegaFeatures:
    """Adjustment features ``Phi_Omega`` and their Gram ``K_Omega``.

    Use :func:`build_omega` to construct.
    """
    def __init__(self, spec, kernels, ridge, treatment, mediator, adjustment=None):
        if not ridge > 0:
            raise ParameterError("ridge must be positive, got %r" % ridge)
        self.spec = spec
        self.kernels = kernels
        self.ridge = float(ridge)
        self.treatment = as_points(treatment)
        self.mediator = as_points(mediator)
        self.adjustment = None if adjustment is None else as_points(adjustment)
        N = self.treatment.shape[0]
        if N == 0:
            raise ParameterError("Cannot build embedding features from an empty dataset")
        if self.mediator.shape[0] != N or (self.adjustment is not None
                                           and self.adjustment.shape[0] != N):
            raise DataError("Treatment, adjustment and mediator row counts differ")

        K_xx = kernels.treatment(self.treatment, self.treatment)
        self._K_xx = K_xx
        if spec.kind == 'none':
            self._K_zz = None
            K_omega = K_xx
        else:
            if kernels.adjustment is None:
                raise ParameterError("%s adjustment requires an adjustment kernel"
                                     % spec.kind)
            self._K_zz = kernels.adjustment(self.adjustment, self.adjustment)
            K_omega = K_xx * self._K_zz
        self.K_omega = 0.5 * (K_omega + K_omega.T)
        self.factor = factorize_spd(self.K_omega, ridge=self.ridge, name="K_Omega")

        if spec.kind == 'backdoor':
            self._z_mean = self._K_zz.mean(axis=1)
            self._z_total = float(self._K_zz.mean())
        elif spec.kind == 'frontdoor':
            inner = self.ridge if spec.inner_ridge is None else spec.inner_ridge
            self.inner_ridge = float(inner)
            self._inner_factor = factorize_spd(K_xx, ridge=self.inner_ridge,
                                               name="K_XX (front-door inner CME)")
            self._x_mean = K_xx.mean(axis=1)
            self._x_total = float(K_xx.mean())

    def __repr__(self):
        return "OmegaFeatures<%s, N=%d, ridge=%g>" % (self.spec.kind, self.n, self.ridge)

    @property
    def n(self):
        return self.treatment.shape[0]

    def _inner_weights(self, x):
        return self._inner_factor.solve(cross_gram(self.kernels.treatment, self.treatment, x))

    def phi(self, x):
        """Features ``Phi_Omega(x)`` for each query row, shape ``(q, N)``."""
        x = as_points(x)
        k = cross_gram(self.kernels.treatment, x, self.treatment)
        kind = self.spec.kind
        if kind == 'none':
            return k
        elif kind == 'backdoor':
            return k * self._z_mean
        else:
            return (self._K_zz @ self._inner_weights(x)).T * self._x_mean

    def weights(self, x):
        """IME weights ``(K_Omega + lambda I)^{-1} Phi_Omega(x)``, one row per query."""
        return self.factor.solve(self.phi(x).T).T

    def gram(self, x_a, x_b=None):
        """``Phi_Omega(x_a)' (K_Omega + lambda I)^{-1} Phi_Omega(x_b)``."""
        pa = self.phi(x_a)
        pb = pa if x_b is None else self.phi(x_b)
        return pa @ self.factor.solve(pb.T)

    def prior_inner(self, x_a, x_b=None):
        """Feature-space inner products ``<Phi_Omega(x_a), Phi_Omega(x_b)>``.

        This is the prior covariance scale of the embedding at treatment
        values far from the data.
        """
        x_a = as_points(x_a)
        x_b = x_a if x_b is None else as_points(x_b)
        kind = self.spec.kind
        if kind == 'none':
            return self.kernels.treatment(x_a, x_b)
        elif kind == 'backdoor':
            return self.kernels.treatment(x_a, x_b) * self._z_total
        wa = self._inner_weights(x_a)
        wb = wa if x_b is x_a else self._inner_weights(x_b)
        return self._x_total * (wa.T @ self._K_zz @ wb)

    def gram_gradients(self):
        """Derivatives of ``K_Omega`` w.r.t. the log-lengthscales.

        Returns
        -------
        grads : dict
            ``'treatment_lengthscale'`` and, when adjusted,
            ``'adjustment_lengthscale'``; arrays of shape ``(P, N, N)``.
        """
        dx = self.kernels.treatment.gram_gradients(self.treatment)['lengthscale']
        if self._K_zz is None:
            return {'treatment_lengthscale': dx}
        dz = self.kernels.adjustment.gram_gradients(self.adjustment)['lengthscale']
        return {'treatment_lengthscale': dx * self._K_zz,
                'adjustment_lengthscale': self._K_xx * dz}

    def replace(self, kernels=None, ridge=None):
        """Rebuild with new kernels or ridge on the same samples."""
        return OmegaFeatures(self.spec, self.kernels if kernels is None else kernels,
                             self.ridge if ridge is None else ridge,
                             self.treatment, self.mediator, self.adjustment)


def build_omega(data, spec, kernels, ridge):
    """Build the adjustment features of the first dataset.

    Parameters
    ----------
    data : ObservationalDataset
        Samples of treatment, adjustment and mediator columns.
    spec : AdjustmentSpec
    kernels : KernelSet
    ridge : float
        Ridge ``lambda > 0`` of the embedding.

    Returns
    -------
    OmegaFeatures
    """
    spec.validate(data)
    adjustment = data.points(spec.adjustment) if spec.adjustment else None
    return OmegaFeatures(spec, kernels, ridge, data.points(spec.treatment),
                         data.points(spec.mediator), adjustment)


def ime_evaluate(omega, x, y_query):
    """Evaluate the interventional embedding ``mu_{Y|do(X)=x}`` at ``y_query``.

    Returns
    -------
    values : ndarray
        ``k(y_query, Y) w(x)``, one entry per query point (empty if
        ``y_query`` is empty).
    """
    y_query = np.asarray(y_query, dtype=float)
    if y_query.size == 0:
        return np.zeros(0)
    w = omega.weights(np.asarray(x, dtype=float).reshape(1, -1))[0]
    return cross_gram(omega.kernels.mediator, y_query, omega.mediator) @ w


def cme_weights(inputs, kernel, ridge, query):
    """Conditional mean embedding weights ``(K + lambda I)^{-1} k(X, query)``.

    Returns
    -------
    weights : ndarray, shape (N, q)
    """
    if not ridge > 0:
        raise ParameterError("ridge must be positive, got %r" % ridge)
    inputs = as_points(inputs)
    factor = factorize_spd(kernel(inputs, inputs), ridge=ridge, name="K_XX (CME)")
    return factor.solve(cross_gram(kernel, inputs, query))
