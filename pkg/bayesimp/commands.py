"""Drivers behind the ``bayesimp`` subcommands.

Every driver computes all of its results before writing anything; if a
write fails, files already written by that call are removed.
"""
import os
import subprocess

import numpy as np

from ._version import version
from .bayes import causal_bayescme
from .bo import (BoConfig, aggregate_traces, bo_run, plain_gp_prior, race_summary,
                 sampling_baseline)
from .core import ConfigError, ParameterError, context
from .embeddings import AdjustmentSpec
from .experiments import (GeneratorSpec, InterventionOracle, ablation_summary,
                          calibration_analysis, default_adjustment, generate, true_effect)
from .formats import map_replicates, write_csv, write_text
from .fusion import bayesime_build, bayesimp_build, imp_build, moment_match_to_gp
from .gp import fit_gp_hypers
from .kernels import KernelSet

__all__ = ('Experiment', 'gen', 'ablation', 'bo', 'calibrate', 'COMMANDS')


def git_describe():
    """``git describe`` of the source tree, or ``'unknown'`` outside a checkout."""
    try:
        out = subprocess.check_output(['git', 'describe', '--always', '--dirty'],
                                      cwd=os.path.dirname(os.path.abspath(__file__)),
                                      stderr=subprocess.DEVNULL)
    except (OSError, subprocess.CalledProcessError):
        return 'unknown'
    return out.decode('utf-8').strip() or 'unknown'


class Experiment:
    """A generator, an adjustment and model settings resolved from a config.

    Replicate ``k`` uses the data seed ``seed + k``.

    Parameters
    ----------
    config : RunConfig
    seed : int, optional
        Overrides ``[data] seed``.
    """
    def __init__(self, config, seed=None):
        self.config = config
        data = config.data
        self.seed = data.seed if seed is None else int(seed)
        if self.seed < 0:
            raise ConfigError("seed must be nonnegative, got %d" % self.seed)
        try:
            self.spec = GeneratorSpec(data.generator, data.n, data.m,
                                      noise=None if data.noise == 'auto' else data.noise,
                                      mixture=data.mixture, seed=self.seed,
                                      treatment=data.treatment or None)
        except ParameterError as e:
            raise ConfigError("[data] %s" % e)
        self.generator = self.spec.build()
        self.adjustment = self._resolve_adjustment()

    def __repr__(self):
        return "Experiment<%s, %r>" % (self.spec, self.adjustment)

    def _resolve_adjustment(self):
        model = self.config.model
        kind = self.spec.kind
        inner = None if model.inner_ridge == 'auto' else model.inner_ridge
        if not model.adjustment_columns:
            if model.adjustment == 'none':
                return AdjustmentSpec('none', self.spec.treatment, self.generator.mediator)
            preset = default_adjustment(kind, self.spec.treatment,
                                        frontdoor=model.adjustment == 'frontdoor',
                                        inner_ridge=inner)
            if model.adjustment not in ('auto', preset.kind):
                raise ConfigError("[model] no %s preset for generator %r; set "
                                  "adjustment_columns" % (model.adjustment, kind))
            return preset
        if model.adjustment == 'auto':
            raise ConfigError("[model] adjustment_columns requires an explicit "
                              "adjustment kind")
        try:
            return AdjustmentSpec(model.adjustment, self.spec.treatment,
                                  self.generator.mediator, model.adjustment_columns,
                                  inner_ridge=inner)
        except ParameterError as e:
            raise ConfigError("[model] %s" % e)

    @property
    def oracle(self):
        return InterventionOracle(self.generator, self.spec.treatment,
                                  self.config.bo.oracle_samples)

    def data(self, k=0):
        """Both datasets of replicate ``k``."""
        return generate(self.spec.with_seed(self.seed + k), generator=self.generator)

    def kernels(self, d1, d2):
        adj = self.adjustment
        k = self.config.kernel
        mediator = np.vstack([d1.points(adj.mediator), d2.points(adj.mediator)])
        return KernelSet.from_data(
            d1.points(adj.treatment), mediator,
            d1.points(adj.adjustment) if adj.adjustment else None,
            lengthscale=None if k.lengthscale == 'median' else k.lengthscale,
            eta=None if k.eta == 'auto' else k.eta,
            signal_variance=k.signal_variance)

    def f_noise(self, d2, kernels):
        """``lambda_f``: configured, or the evidence-optimal noise of a GP
        with the mediator kernel held fixed."""
        noise = self.config.model.noise
        if noise != 'auto':
            return noise
        f, _ = fit_gp_hypers(d2.points(self.adjustment.mediator), d2['t'],
                             kernel=kernels.mediator,
                             frozen=('lengthscale', 'signal_variance'))
        return f.noise

    def fit(self, method, d1, d2, seed, grid):
        """Fit one treatment-effect model on a replicate.

        Parameters
        ----------
        method : {'IMP', 'BayesIME', 'BayesIMP', 'Sampling'}
        d1, d2 : ObservationalDataset
        seed : int
            Seed of the sampling baseline's Monte-Carlo draws.
        grid : ndarray
            Treatment grid of the sampling baseline.

        Returns
        -------
        TreatmentEffectModel
        """
        adj = self.adjustment
        model = self.config.model
        if method == 'Sampling':
            bo = self.config.bo
            return sampling_baseline(d1, d2, adj, grid, L=bo.samples_l, R=bo.samples_r,
                                     seed=seed)
        kernels = self.kernels(d1, d2)
        noise = self.f_noise(d2, kernels)
        if method == 'IMP':
            return imp_build(d1, d2, adj, kernels, model.ridge, noise)
        r_ridge = model.r_ridge
        cme = causal_bayescme(d1, adj, kernels, model.ridge, r_ridge=r_ridge)
        if model.optimize:
            cme, _ = cme.optimize(frozen=model.frozen)
        if method == 'BayesIME':
            return bayesime_build(d1, d2, adj, kernels, model.ridge, noise, cme=cme)
        elif method == 'BayesIMP':
            return bayesimp_build(d1, d2, adj, kernels, model.ridge, noise,
                                  landmark_cap=model.landmark_cap, cme=cme)
        raise ParameterError("Unknown method %r" % method)


def _grid(low, high, size, section):
    if not high > low:
        raise ConfigError("[%s] grid_high must exceed grid_low" % section)
    return np.linspace(low, high, size)[:, None]


def _table(dataset):
    names = dataset.names
    return tuple(names), list(zip(*(dataset[n] for n in names)))


def _commit(directory, outputs):
    """Write ``(name, header, rows)`` CSVs and ``(name, text)`` files.

    On failure every file written so far is removed before re-raising.
    """
    os.makedirs(directory, exist_ok=True)
    written = []
    try:
        for name, *content in outputs:
            path = os.path.join(directory, name)
            if len(content) == 1:
                write_text(path, content[0])
            else:
                write_csv(path, *content)
            written.append(path)
    except BaseException:
        for path in written:
            os.remove(path)
        raise
    return written


def gen(config, out=None, seed=None, n_threads=1, verbose=False):
    """Generate both datasets of a configuration.

    Writes ``d1.csv``, ``d2.csv`` and ``meta.txt`` to ``out`` (default
    ``[out] directory``).

    Returns
    -------
    paths : list of str
    """
    exp = Experiment(config, seed)
    if verbose:
        print("Generating data...")
    d1, d2 = exp.data()
    meta = ("seed = %d\ngenerator = %s\nversion = %s\ngit = %s\n"
            % (exp.seed, exp.spec.kind, version, git_describe()))
    return _commit(out or config.out.directory,
                   [('d1.csv',) + _table(d1), ('d2.csv',) + _table(d2),
                    ('meta.txt', meta)])


def ablation(config, out=None, seed=None, n_threads=1, verbose=False):
    """Uncertainty curves of each method over a treatment grid.

    Writes ``<method>_curves.csv`` (``x, mean, std`` for the first replicate)
    and ``summary.csv`` (one row of curve diagnostics per method and
    replicate).
    """
    exp = Experiment(config, seed)
    section = config.ablation
    grid = _grid(section.grid_low, section.grid_high, section.grid_size, 'ablation')

    def run(k):
        d1, d2 = exp.data(k)
        curves = {}
        for method in section.methods:
            model = exp.fit(method, d1, d2, exp.seed + k, grid)
            curves[method] = (model.mean(grid), model.std(grid))
        return curves

    if verbose:
        print("Fitting %s..." % ', '.join(section.methods))
    results = map_replicates(run, range(section.seeds), n_threads, label="ablation",
                             verbose=verbose)
    xs = grid[:, 0]
    outputs = []
    for method in section.methods:
        mean, std = results[0][method]
        outputs.append(('%s_curves.csv' % method, ('x', 'mean', 'std'),
                        list(zip(xs, mean, std))))
    keys = ('std_min', 'std_max', 'uniformity', 'spike_ratio', 'tail_ratio')
    summary = []
    for k, curves in enumerate(results):
        for method in section.methods:
            diag = ablation_summary(xs, curves[method][1])
            summary.append((method, exp.seed + k) + tuple(diag[key] for key in keys))
    outputs.append(('summary.csv', ('method', 'seed') + keys, summary))
    return _commit(out or config.out.directory, outputs)


def bo(config, out=None, seed=None, n_threads=1, verbose=False):
    """Race expected-improvement runs warm-started by each method.

    Writes ``<method>_seed<seed>.csv`` traces and ``aggregate.csv`` with
    the median and interquartile range of the incumbent per iteration.
    ``race.csv`` holds the iterations each run needed to come within 5% of
    the Monte-Carlo optimum of the true effect over the grid, and
    ``race_summary.csv`` their median per method.
    """
    exp = Experiment(config, seed)
    section = config.bo
    bo_config = BoConfig(grid_low=section.grid_low, grid_high=section.grid_high,
                         grid_size=section.grid_size, budget=section.budget,
                         noise=section.noise, direction=section.direction)
    grid = _grid(section.grid_low, section.grid_high, section.grid_size, 'bo')
    oracle = exp.oracle
    if verbose:
        print("Computing ground truth...")
    truth = [true_effect(oracle, x, section.mc_samples, exp.seed)[0] for x in grid]
    optimum = max(truth) if section.direction == 'max' else min(truth)

    def run(k):
        d1, d2 = exp.data(k)
        traces = []
        for method in section.methods:
            if method == 'PlainGP':
                prior = plain_gp_prior(grid)
            else:
                prior = moment_match_to_gp(exp.fit(method, d1, d2, exp.seed + k, grid), grid)
            traces.append(bo_run(oracle, prior, section.budget, exp.seed + k,
                                 config=bo_config, method=method))
        return traces

    if verbose:
        print("Running optimization for %s..." % ', '.join(section.methods))
    results = map_replicates(run, range(section.seeds), n_threads, label="bo",
                             verbose=verbose)
    traces = [t for replicate in results for t in replicate]
    outputs = [('%s_seed%d.csv' % (t.method, t.seed), t.header, t.rows) for t in traces]
    outputs.append(('aggregate.csv', ('method', 'iter', 'median', 'q25', 'q75'),
                    aggregate_traces(traces)))
    runs, summary = race_summary(traces, optimum, section.budget)
    outputs.append(('race.csv', ('method', 'seed', 'iterations', 'reached'), runs))
    outputs.append(('race_summary.csv', ('method', 'optimum', 'median', 'reached'),
                    [(method, optimum, med, n) for method, med, n in summary]))
    for t in traces:
        if t.error:
            context.warn("%s seed %d: %s" % (t.method, t.seed, t.error))
    return _commit(out or config.out.directory, outputs)


def calibrate(config, out=None, seed=None, n_threads=1, verbose=False):
    """Coverage of each method's credible intervals against the true effect.

    Writes ``calibration.csv`` with one row per method and nominal mass.
    """
    exp = Experiment(config, seed)
    section = config.calibrate
    xs = np.asarray(section.test_points, dtype=float)[:, None]
    if xs.shape[0] == 0:
        raise ConfigError("[calibrate] test_points is empty")
    if not section.mass_grid:
        raise ConfigError("[calibrate] mass_grid is empty")
    oracle = exp.oracle
    if verbose:
        print("Computing ground truth...")
    truths = np.array([true_effect(oracle, x, section.mc_samples, exp.seed)[0]
                       for x in xs])

    def run(k):
        d1, d2 = exp.data(k)
        return {method: exp.fit(method, d1, d2, exp.seed + k, xs)
                for method in section.methods}

    if verbose:
        print("Fitting %s..." % ', '.join(section.methods))
    fitted = map_replicates(run, range(section.seeds), n_threads, label="calibrate",
                            verbose=verbose)
    rows = []
    for method in section.methods:
        table = calibration_analysis(lambda k: fitted[k][method], oracle, xs,
                                     section.mass_grid, range(section.seeds),
                                     method=method, truths=truths)
        rows.extend(table.rows())
    return _commit(out or config.out.directory,
                   [('calibration.csv', ('method', 'nominal', 'empirical', 'deviation'),
                     rows)])


COMMANDS = {'gen': gen, 'ablation': ablation, 'bo': bo, 'calibrate': calibrate}
