"""Bayesian optimization of interventional effects on a treatment grid."""
from dataclasses import dataclass
from timeit import default_timer

import numpy as np
from scipy.stats import norm

from ._random import stream
from .core import BayesImpException, NumericalError, ParameterError
from .fusion import TreatmentEffectModel
from .gp import fit_gp_hypers
from .kernels import RbfKernel, as_points, factorize_spd

__all__ = ('expected_improvement', 'GridPrior', 'Surrogate', 'BoTrace', 'BoConfig',
           'bo_run', 'plain_gp_prior', 'estimate_obs_noise', 'aggregate_traces',
           'race_summary', 'SamplingModel', 'sampling_baseline', 'DIRECTIONS')

DIRECTIONS = ('max', 'min')


def _check_direction(direction):
    if direction not in DIRECTIONS:
        raise ParameterError("direction must be 'max' or 'min', got %r" % direction)


def expected_improvement(mean, std, best, direction='max'):
    """Expected improvement over ``best`` under ``N(mean, std**2)``.

    ``std * (z Phi(z) + phi(z))`` with ``z = (mean - best) / std`` for
    maximization; where ``std == 0`` the improvement is deterministic.

    Examples
    --------
    >>> round(float(expected_improvement(0.0, 1.0, 0.0)), 6)
    0.398942
    >>> float(expected_improvement(3.0, 0.0, 0.0))
    3.0
    """
    _check_direction(direction)
    mean = np.asarray(mean, dtype=float)
    std = np.asarray(std, dtype=float)
    if np.any(std < 0):
        raise ParameterError("std must be nonnegative")
    improvement = mean - best if direction == 'max' else best - mean
    mean, std, improvement = np.broadcast_arrays(mean, std, improvement)
    out = np.array(np.maximum(improvement, 0.0), dtype=float)
    pos = std > 0
    z = improvement[pos] / std[pos]
    out[pos] = std[pos] * (z * norm.cdf(z) + norm.pdf(z))
    out = np.maximum(out, 0.0)
    return out if out.ndim else out[()]


class GridPrior:
    """A Gaussian prior over treatment values on a fixed grid.

    Parameters
    ----------
    grid : array_like
        Treatment points, shape ``(n, D)``.
    mean : array_like
        Prior mean at each grid point.
    cov : array_like
        PSD prior covariance, ``(n, n)``.
    """
    __slots__ = ('grid', 'mean', 'cov')

    def __init__(self, grid, mean, cov):
        self.grid = as_points(grid)
        self.mean = np.asarray(mean, dtype=float).ravel()
        self.cov = np.asarray(cov, dtype=float)
        n = self.grid.shape[0]
        if self.mean.size != n or self.cov.shape != (n, n):
            raise ParameterError("Prior mean/cov do not match a grid of %d points" % n)

    def __repr__(self):
        return "GridPrior<%d points>" % self.grid.shape[0]

    def __len__(self):
        return self.grid.shape[0]

    def index_of(self, x):
        """Index of the grid point nearest to ``x``."""
        x = np.asarray(x, dtype=float).reshape(1, -1)
        return int(np.argmin(((self.grid - x) ** 2).sum(axis=1)))

    def best_index(self, direction='max'):
        _check_direction(direction)
        return int(np.argmax(self.mean) if direction == 'max' else np.argmin(self.mean))


def plain_gp_prior(grid, lengthscale=None, variance=1.0):
    """Zero-mean RBF prior with lengthscale a tenth of the grid range."""
    grid = as_points(grid)
    if lengthscale is None:
        span = grid.max(axis=0) - grid.min(axis=0)
        lengthscale = np.where(span > 0, span / 10.0, 1.0)
    kernel = RbfKernel(lengthscale, variance)
    return GridPrior(grid, np.zeros(grid.shape[0]), kernel(grid, grid))


class Surrogate:
    """A grid prior conditioned on interventional observations.

    Parameters
    ----------
    prior : GridPrior
    noise : float
        Observation noise variance ``sigma_obs**2 > 0``.
    """
    def __init__(self, prior, noise):
        if not noise > 0:
            raise ParameterError("Observation noise variance must be positive, got %r"
                                 % noise)
        self.prior = prior
        self.noise = float(noise)
        self.indices = []
        self.values = []

    def __repr__(self):
        return "Surrogate<%d observations, noise=%g>" % (len(self.values), self.noise)

    def observe(self, x, value):
        """Record an observation, snapping ``x`` to the nearest grid point."""
        idx = self.prior.index_of(x)
        self.indices.append(idx)
        self.values.append(float(value))
        return idx

    def posterior(self):
        """Posterior mean and covariance on the grid.

        Returns
        -------
        mean : ndarray, shape (n,)
        cov : ndarray, shape (n, n)
        """
        m, S = self.prior.mean, self.prior.cov
        if not self.indices:
            return m.copy(), S.copy()
        idx = np.asarray(self.indices)
        factor = factorize_spd(S[np.ix_(idx, idx)], ridge=self.noise,
                               name="observation covariance")
        K_go = S[:, idx]
        mean = m + K_go @ factor.solve(np.asarray(self.values) - m[idx])
        cov = S - K_go @ factor.solve(K_go.T)
        return mean, 0.5 * (cov + cov.T)


class BoTrace:
    """Per-iteration record of one optimization run.

    Attributes
    ----------
    rows : list of tuple
        ``(iter, x, T, incumbent, ei)`` per completed iteration.
    wall_clock : list of float
        Seconds since the start of the run at each iteration.
    error : str or None
        Set if the run stopped early because the oracle failed.
    """
    header = ('iter', 'x', 'T', 'incumbent', 'ei')

    def __init__(self, method, seed):
        self.method = method
        self.seed = seed
        self.rows = []
        self.wall_clock = []
        self.error = None

    def __repr__(self):
        return "BoTrace<%s, seed=%d, %d iterations>" % (self.method, self.seed, len(self))

    def __len__(self):
        return len(self.rows)

    @property
    def incumbents(self):
        return np.array([r[3] for r in self.rows])

    def iterations_to_within(self, optimum, rel=0.05):
        """First iteration (1-based) whose incumbent is within ``rel`` of
        ``optimum``, or None."""
        tol = rel * max(abs(optimum), 1e-12)
        for r in self.rows:
            if abs(r[3] - optimum) <= tol:
                return r[0]
        return None


@dataclass
class BoConfig:
    """Settings of an optimization run.

    ``noise`` is either ``'pilot'`` (estimated from ``pilot_calls`` oracle
    queries at the grid midpoint) or a positive variance.
    """
    grid_low: float = -5.0
    grid_high: float = 5.0
    grid_size: int = 200
    budget: int = 30
    noise: object = 'pilot'
    pilot_calls: int = 10
    direction: str = 'max'

    def grid(self):
        if self.grid_size < 1:
            raise ParameterError("grid_size must be >= 1")
        if not self.grid_high > self.grid_low:
            raise ParameterError("grid_high must exceed grid_low")
        return np.linspace(self.grid_low, self.grid_high, self.grid_size)[:, None]


def estimate_obs_noise(oracle, x, rng, calls=10):
    """Sample variance of repeated oracle queries at ``x``, floored at 1e-6."""
    if calls < 2:
        raise ParameterError("At least two pilot calls are needed")
    values = np.array([oracle.query(x, rng) for _ in range(calls)])
    return max(float(np.var(values, ddof=1)), 1e-6)


def bo_run(oracle, prior, budget, seed, config=None, method='BayesIMP', noise=None):
    """Run expected-improvement optimization against an intervention oracle.

    Parameters
    ----------
    oracle : InterventionOracle
        Anything with ``query(x, rng) -> float``.
    prior : GridPrior
        Warm-start prior (``moment_match_to_gp``) or ``plain_gp_prior``.
    budget : int
        Number of oracle queries.
    seed : int
        Root seed; the oracle draws from a named sub-stream.
    config : BoConfig, optional
    method : str, optional
        Label recorded on the trace.
    noise : float, optional
        Observation noise variance. Overrides ``config.noise``.

    Returns
    -------
    BoTrace
    """
    config = config or BoConfig()
    _check_direction(config.direction)
    if budget < 0:
        raise ParameterError("budget must be nonnegative")
    rng = stream(seed, 'bo', 'oracle')
    if noise is None:
        noise = config.noise
    if noise == 'pilot':
        mid = prior.grid[len(prior) // 2]
        noise = estimate_obs_noise(oracle, mid, stream(seed, 'bo', 'pilot'),
                                   config.pilot_calls)
    surrogate = Surrogate(prior, float(noise))
    better = max if config.direction == 'max' else min

    trace = BoTrace(method, seed)
    start = default_timer()
    incumbent = None
    for it in range(1, budget + 1):
        mean, cov = surrogate.posterior()
        std = np.sqrt(np.clip(np.diag(cov), 0, None))
        best = incumbent if incumbent is not None else better(mean)
        ei = expected_improvement(mean, std, best, config.direction)
        idx = int(np.argmax(ei))
        x = prior.grid[idx]
        try:
            value = float(oracle.query(x, rng))
        except (BayesImpException, ArithmeticError, ValueError) as e:
            trace.error = "oracle failed at iteration %d: %s" % (it, e)
            break
        surrogate.observe(x, value)
        post_mean, _ = surrogate.posterior()
        current = better(post_mean[surrogate.indices])
        incumbent = current if incumbent is None else better(incumbent, current)
        trace.rows.append((it, float(x[0]) if x.size == 1 else tuple(x), value,
                           float(incumbent), float(ei[idx])))
        trace.wall_clock.append(default_timer() - start)
    return trace


def aggregate_traces(traces):
    """Median and interquartile range of the incumbent per method and iteration.

    Returns
    -------
    rows : list of tuple
        ``(method, iter, median, q25, q75)`` sorted by method then iteration.
    """
    by_method = {}
    for tr in traces:
        for row in tr.rows:
            by_method.setdefault(tr.method, {}).setdefault(row[0], []).append(row[3])
    rows = []
    for method in sorted(by_method):
        for it in sorted(by_method[method]):
            q25, med, q75 = np.percentile(by_method[method][it], [25, 50, 75])
            rows.append((method, it, float(med), float(q25), float(q75)))
    return rows


def race_summary(traces, optimum, budget, rel=0.05):
    """Iterations each run needed to come within ``rel`` of ``optimum``.

    Runs that never get there are counted as ``budget + 1``.

    Parameters
    ----------
    traces : list of BoTrace
    optimum : float
        The best value of the true effect over the grid.
    budget : int
    rel : float, optional
        Relative tolerance. Default is 5%.

    Returns
    -------
    runs : list of tuple
        ``(method, seed, iterations, reached)`` per trace, in input order.
    summary : list of tuple
        ``(method, median, reached)`` sorted by method, where ``reached``
        counts the runs that got within tolerance.
    """
    runs = []
    by_method = {}
    for tr in traces:
        it = tr.iterations_to_within(optimum, rel)
        reached = it is not None
        it = it if reached else budget + 1
        runs.append((tr.method, tr.seed, it, int(reached)))
        by_method.setdefault(tr.method, []).append((it, reached))
    summary = [(method, float(np.median([it for it, _ in by_method[method]])),
                sum(r for _, r in by_method[method]))
               for method in sorted(by_method)]
    return runs, summary


class SamplingModel(TreatmentEffectModel):
    """Empirical moments on a grid with independent uncertainty across ``x``.

    Queries are snapped to the nearest grid point.
    """
    provenance = 'Sampling'

    def __init__(self, grid, means, stds):
        self.grid = as_points(grid)
        self.means = np.asarray(means, dtype=float)
        self.stds = np.asarray(stds, dtype=float)

    def _index(self, x):
        x = as_points(x, self.grid.shape[1])
        d = ((x[:, None, :] - self.grid[None, :, :]) ** 2).sum(axis=-1)
        return np.argmin(d, axis=1)

    def mean(self, x):
        return self.means[self._index(x)]

    def variance(self, x):
        return self.stds[self._index(x)] ** 2

    def cov(self, x_a, x_b=None):
        ia = self._index(x_a)
        ib = ia if x_b is None else self._index(x_b)
        return np.where(ia[:, None] == ib[None, :], self.stds[ia][:, None] ** 2, 0.0)


def _predictive_draws(model, points, rng, deterministic):
    mean, cov = model.posterior(points)
    if deterministic:
        return mean
    sd = np.sqrt(np.clip(np.diag(cov), 0, None) + model.noise)
    return mean + sd * rng.standard_normal(mean.shape)


def sampling_baseline(d1, d2, spec, x_grid, L=100, R=100, seed=0, target='t',
                      config=None, deterministic_stage_one=False):
    """Monte-Carlo estimate of ``E[T | do(X)]`` from two stage-wise GPs.

    Stage one models the mediator under intervention following the
    do-formula of ``spec``:

    * ``'none'``: a GP from ``X`` to ``Y``.
    * ``'backdoor'``: a GP from ``(X, Z)`` to ``Y`` evaluated at empirical
      draws of ``Z``.
    * ``'frontdoor'``: a GP from ``X`` to ``Z`` and a GP from ``(Z, X')``
      to ``Y`` evaluated at empirical draws of ``X'``.

    For each grid ``x``, ``L`` mediator samples are drawn and ``R`` joint
    posterior draws of ``f`` (a GP fitted on the second dataset) are
    evaluated at them; the mean and standard deviation of the ``L * R``
    values are reported.

    Parameters
    ----------
    d1, d2 : ObservationalDataset
    spec : AdjustmentSpec
    x_grid : array_like
        Treatment grid.
    L, R : int, optional
        Number of mediator samples and of ``f`` draws per grid point.
        ``R=1`` uses the posterior mean of ``f``.
    seed : int, optional
    target : str, optional
        Target column of ``d2``.
    config : OptimizerConfig, optional
        Settings of the GP hyperparameter fits.
    deterministic_stage_one : bool, optional
        Use stage-one posterior means instead of predictive draws.

    Returns
    -------
    SamplingModel
    """
    if L < 1 or R < 1:
        raise ParameterError("L and R must be >= 1")
    spec.validate(d1)
    if len(spec.mediator) != 1:
        raise ParameterError("The sampling baseline needs a one-dimensional mediator")
    grid = as_points(x_grid)
    rng = stream(seed, 'sampling')
    X = d1.points(spec.treatment)
    Y = d1[spec.mediator[0]]
    f, _ = fit_gp_hypers(d2.points(spec.mediator), d2[target], config=config)

    if spec.kind == 'none':
        g, _ = fit_gp_hypers(X, Y, config=config)
    elif spec.kind == 'backdoor':
        Z = d1.points(spec.adjustment)
        g, _ = fit_gp_hypers(np.hstack([X, Z]), Y, config=config)
    else:
        if len(spec.adjustment) != 1:
            raise ParameterError("Front-door sampling needs a one-dimensional adjustment")
        Z = d1.points(spec.adjustment)
        g1, _ = fit_gp_hypers(X, Z[:, 0], config=config)
        g, _ = fit_gp_hypers(np.hstack([Z, X]), Y, config=config)

    means = np.empty(grid.shape[0])
    stds = np.empty(grid.shape[0])
    N = X.shape[0]
    for i, x in enumerate(grid):
        xs = np.repeat(x[None], L, axis=0)
        if spec.kind == 'none':
            inputs = xs
        elif spec.kind == 'backdoor':
            inputs = np.hstack([xs, Z[rng.integers(0, N, size=L)]])
        else:
            z = _predictive_draws(g1, xs, rng, deterministic_stage_one)
            inputs = np.hstack([z[:, None], X[rng.integers(0, N, size=L)]])
        y = _predictive_draws(g, inputs, rng, deterministic_stage_one)
        if R == 1:
            values = f.predict(y[:, None])[None]
        else:
            values = f.sample(y[:, None], R, rng)
        values = values.ravel()
        means[i] = values.mean()
        stds[i] = values.std(ddof=1) if values.size > 1 else 0.0
    if not np.all(np.isfinite(stds)):
        raise NumericalError("Sampling baseline produced non-finite moments")
    return SamplingModel(grid, means, stds)
