"""Data-generating processes, intervention oracles and calibration.

Each generator is a structural causal model written as functions of its
exogenous draws, so the observational sampler and the intervened sampler
share one code path: ``structural(exo)`` samples the observational graph and
``structural(exo, do={'x': value})`` the mutilated one, where the incoming
edges of the intervened variable are removed and its value fixed.
"""
import math
import os

import numpy as np
from scipy.special import expit
from scipy.stats import norm

from ._random import stream
from .core import DataError, ParameterError
from .embeddings import AdjustmentSpec
from .formats import ObservationalDataset, read_dataset
from .gp import fit_gp_hypers

__all__ = ('GeneratorSpec', 'AblationGenerator', 'SimpleSyntheticGenerator',
           'HardSyntheticGenerator', 'HealthcareGenerator', 'InterventionOracle',
           'GENERATORS', 'generate', 'gen_ablation', 'gen_simple_synthetic',
           'gen_hard_synthetic', 'gen_healthcare', 'true_effect', 'coverage',
           'calibration_analysis', 'CalibrationTable', 'ablation_summary',
           'default_adjustment', 'FIXTURE_PATH')

FIXTURE_PATH = os.path.join(os.path.dirname(os.path.abspath(__file__)), 'data',
                            'psa_volume.csv')


class _Generator:
    kind = None
    columns = ()
    mediator = 'y'
    treatments = ()
    d2_range = (0.0, 1.0)
    default_noise = 0.1

    def __init__(self, noise=None, mixture=0.0, seed=0):
        noise = self.default_noise if noise is None else float(noise)
        if noise < 0:
            raise ParameterError("noise must be nonnegative, got %r" % noise)
        if not 0.0 <= mixture <= 1.0:
            raise ParameterError("mixture: π out of range [0,1], got %r" % mixture)
        self.noise = noise
        self.mixture = float(mixture)
        self.seed = int(seed)

    def __repr__(self):
        return "%s<noise=%g, mixture=%g>" % (type(self).__name__, self.noise, self.mixture)

    def exogenous(self, n, rng):
        raise NotImplementedError

    def structural(self, exo, do=None):
        raise NotImplementedError

    def target(self, y, eps):
        """The target ``T`` given mediator values and standard normal noise."""
        raise NotImplementedError

    def _do(self, do, name, value):
        if do and name in do:
            return np.broadcast_to(np.asarray(do[name], dtype=float), value.shape).copy()
        return value

    def _check_do(self, do):
        for name in do or ():
            if name not in self.treatments:
                raise ParameterError("%s does not support interventions on %r"
                                     % (self.kind, name))

    def sample_d1(self, n, rng):
        if n < 1:
            raise ParameterError("n must be >= 1")
        cols = self.structural(self.exogenous(n, rng))
        return ObservationalDataset({c: cols[c] for c in self.columns})

    def sample_d2(self, m, rng):
        if m < 1:
            raise ParameterError("m must be >= 1")
        lo, hi = self.d2_range
        y = rng.uniform(lo, hi, size=m)
        t = self.target(y, rng.standard_normal(m))
        return ObservationalDataset({self.mediator: y, 't': t})

    def sample_target(self, x, treatment, n, rng):
        """``n`` draws of ``T`` under ``do(treatment = x)``."""
        self._check_do({treatment: x})
        cols = self.structural(self.exogenous(n, rng), do={treatment: x})
        return self.target(cols[self.mediator], rng.standard_normal(n))


class AblationGenerator(_Generator):
    """``Y = X cos(pi X) + e`` with ``X ~ N(0, 2.5^2)``; ``T = 0.5 Y cos(Y) + e``.

    Exogenous draws: ``x`` (standard normal) and ``e_y``.
    """
    kind = 'ablation'
    columns = ('x', 'y')
    treatments = ('x',)
    d2_range = (-2.0, 4.0)

    def exogenous(self, n, rng):
        return {'x': rng.standard_normal(n), 'e_y': rng.standard_normal(n)}

    def structural(self, exo, do=None):
        self._check_do(do)
        x = self._do(do, 'x', 2.5 * exo['x'])
        y = x * np.cos(np.pi * x) + self.noise * exo['e_y']
        return {'x': x, 'y': y}

    def target(self, y, eps):
        return 0.5 * y * np.cos(y) + self.noise * eps


class SimpleSyntheticGenerator(_Generator):
    """Confounded chain ``Z -> X -> U -> Y <- Z`` with a bimodal ``Y``.

    With probability ``mixture`` a row takes the shifted mechanism
    ``U = 2 (X - 1) - 3 + e``. Exogenous draws: ``z``, ``e_x``, ``e_u``,
    ``e_y`` and the boolean ``shift``.
    """
    kind = 'simple'
    columns = ('x', 'u', 'z', 'y')
    treatments = ('x',)
    d2_range = (-10.0, 10.0)

    def exogenous(self, n, rng):
        return {'z': rng.uniform(-4, 4, size=n),
                'e_x': rng.standard_normal(n),
                'e_u': rng.standard_normal(n),
                'e_y': rng.standard_normal(n),
                'shift': rng.random(n) < self.mixture}

    def structural(self, exo, do=None):
        self._check_do(do)
        s = self.noise
        z = exo['z']
        x = self._do(do, 'x', 3 * np.cos(z) + s * exo['e_x'])
        u = np.where(exo['shift'], 2 * (x - 1) - 3, 2 * x) + s * exo['e_u']
        y = u + np.exp(-z) + s * exo['e_y']
        return {'x': x, 'u': u, 'z': z, 'y': y}

    def target(self, y, eps):
        return np.cos(y) - np.exp(-y / 20) + self.noise * eps


class HardSyntheticGenerator(_Generator):
    """Nine-node graph with treatments ``d`` and ``e`` and a mode switch on ``Y``.

    With probability ``mixture`` a row's ``Y`` is shifted by ``2 pi``.
    Noise terms are ``N(0, noise^2)`` with ``noise`` defaulting to 1.
    """
    kind = 'hard'
    columns = ('u1', 'u2', 'f', 'a', 'b', 'c', 'd', 'e', 'y')
    treatments = ('d', 'e')
    d2_range = (-2.0, 9.0)
    default_noise = 1.0

    def exogenous(self, n, rng):
        exo = {k: rng.standard_normal(n) for k in ('u1', 'u2', 'f', 'e_a', 'e_b', 'e_c',
                                                 'e_d', 'e_e', 'e_y')}
        exo['shift'] = rng.random(n) < self.mixture
        return exo

    def structural(self, exo, do=None):
        self._check_do(do)
        s = self.noise
        u1, u2, f = exo['u1'], exo['u2'], exo['f']
        a = f ** 2 + u1 + s * exo['e_a']
        b = u2 + s * exo['e_b']
        c = np.exp(-b) + s * exo['e_c']
        d = self._do(do, 'd', np.exp(-c) / 10 + s * exo['e_d'])
        e = self._do(do, 'e', np.cos(a) + c / 10 + s * exo['e_e'])
        y = np.cos(d) + np.sin(e) + u1 + u2 + np.where(exo['shift'], 2 * np.pi, 0.0)
        y = y + s * exo['e_y']
        return {'u1': u1, 'u2': u2, 'f': f, 'a': a, 'b': b, 'c': c, 'd': d, 'e': e, 'y': y}

    def target(self, y, eps):
        return 6 * np.sin(3 * y) + self.noise * eps


class HealthcareGenerator(_Generator):
    """Statin dosage, PSA and cancer volume.

    The first dataset follows fixed structural equations. The PSA to
    cancer-volume relation is one function drawn, per seed, from the
    posterior of a GP fitted to the bundled fixture; both the second dataset
    and interventional queries use that draw, plus the GP's noise. The draw
    is held constant beyond a margin of one fixture range on either side.
    """
    kind = 'healthcare'
    columns = ('age', 'bmi', 'aspirin', 'statin', 'cancer', 'psa')
    mediator = 'psa'
    treatments = ('statin',)

    def __init__(self, noise=None, mixture=0.0, seed=0, fixture=FIXTURE_PATH):
        super().__init__(noise, mixture, seed)
        if not os.path.exists(fixture):
            raise DataError("Healthcare fixture not found: %s" % fixture)
        table = read_dataset(fixture)
        missing = [c for c in ('psa', 'volume') if c not in table]
        if missing:
            raise DataError("%s lacks column(s) %s" % (fixture, ', '.join(missing)))
        self.fixture = table
        self.volume_gp, _ = fit_gp_hypers(table['psa'], table['volume'])
        lo, hi = float(table['psa'].min()), float(table['psa'].max())
        self.d2_range = (lo, hi)
        self.anchors = np.linspace(2 * lo - hi, 2 * hi - lo, 301)
        self.volume = self.volume_gp.sample(self.anchors[:, None], 1,
                                            stream(self.seed, 'healthcare', 'volume'))[0]

    def exogenous(self, n, rng):
        return {'age': rng.uniform(15, 75, size=n),
                'e_bmi': rng.standard_normal(n),
                'e_psa': rng.standard_normal(n)}

    def structural(self, exo, do=None):
        self._check_do(do)
        age = exo['age']
        bmi = 27 - 0.01 * age + 0.7 * exo['e_bmi']
        aspirin = expit(-8.0 + 0.10 * age + 0.03 * bmi)
        statin = self._do(do, 'statin', -13 + 0.10 * age + 0.20 * bmi)
        cancer = expit(2.2 - 0.05 * age + 0.01 * bmi - 0.04 * statin + 0.02 * aspirin)
        psa = (6.8 + 0.04 * age - 0.15 * bmi - 0.60 * statin + 0.55 * aspirin + cancer
               + 0.4 * exo['e_psa'])
        return {'age': age, 'bmi': bmi, 'aspirin': aspirin, 'statin': statin,
                'cancer': cancer, 'psa': psa}

    def target(self, y, eps):
        f = np.interp(np.asarray(y, dtype=float), self.anchors, self.volume)
        return f + math.sqrt(self.volume_gp.noise) * eps


GENERATORS = {g.kind: g for g in (AblationGenerator, SimpleSyntheticGenerator,
                                  HardSyntheticGenerator, HealthcareGenerator)}


class GeneratorSpec:
    """Which generator to run and with which settings.

    Parameters
    ----------
    kind : {'ablation', 'simple', 'hard', 'healthcare'}
    n, m : int
        Sizes of the first and second datasets.
    noise : float, optional
        Noise scale. Defaults to 0.1, or 1 for the hard graph.
    mixture : float, optional
        Mode-switch probability ``pi`` in ``[0, 1]``. Default is 0.
    seed : int, optional
        Root seed. Default is 0.
    treatment : str, optional
        Intervened variable. Defaults to the generator's first treatment.
    """
    __slots__ = ('kind', 'n', 'm', 'noise', 'mixture', 'seed', 'treatment')

    def __init__(self, kind, n, m, noise=None, mixture=0.0, seed=0, treatment=None):
        if kind not in GENERATORS:
            raise ParameterError("Unknown generator %r, expected one of %s"
                                 % (kind, ', '.join(GENERATORS)))
        if n < 1 or m < 1:
            raise ParameterError("n and m must be >= 1")
        if not 0.0 <= mixture <= 1.0:
            raise ParameterError("mixture: π out of range [0,1], got %r" % mixture)
        treatments = GENERATORS[kind].treatments
        treatment = treatments[0] if treatment is None else treatment
        if treatment not in treatments:
            raise ParameterError("Generator %r supports treatments %s, got %r"
                                 % (kind, ', '.join(treatments), treatment))
        self.kind = kind
        self.n = int(n)
        self.m = int(m)
        self.noise = noise
        self.mixture = float(mixture)
        self.seed = int(seed)
        self.treatment = treatment

    def __repr__(self):
        return "GeneratorSpec<%s, n=%d, m=%d, seed=%d>" % (self.kind, self.n, self.m,
                                                           self.seed)

    def build(self):
        return GENERATORS[self.kind](noise=self.noise, mixture=self.mixture, seed=self.seed)

    def with_seed(self, seed):
        return GeneratorSpec(self.kind, self.n, self.m, self.noise, self.mixture, seed,
                             self.treatment)

    def oracle(self, samples=10):
        return InterventionOracle(self.build(), self.treatment, samples)


def generate(spec, generator=None):
    """Sample both datasets of a ``GeneratorSpec``.

    Returns
    -------
    d1, d2 : ObservationalDataset
    """
    generator = generator or spec.build()
    d1 = generator.sample_d1(spec.n, stream(spec.seed, 'data', 'd1'))
    d2 = generator.sample_d2(spec.m, stream(spec.seed, 'data', 'd2'))
    return d1, d2


def gen_ablation(n, m, noise=0.1, seed=0):
    """Ablation datasets ``{(x, y)}`` and ``{(y, t)}``."""
    return generate(GeneratorSpec('ablation', n, m, noise=noise, seed=seed))


def gen_simple_synthetic(n, m, mixture=0.5, seed=0, noise=0.1):
    """Simple-graph datasets with columns ``x, u, z, y`` and ``y, t``."""
    return generate(GeneratorSpec('simple', n, m, noise=noise, mixture=mixture, seed=seed))


def gen_hard_synthetic(n, m, mixture=0.5, seed=0, noise=1.0):
    """Hard-graph datasets over ``u1, u2, f, a, b, c, d, e, y`` and ``y, t``."""
    return generate(GeneratorSpec('hard', n, m, noise=noise, mixture=mixture, seed=seed))


def gen_healthcare(n, m, seed=0):
    """Healthcare datasets over ``age, bmi, aspirin, statin, cancer, psa`` and
    ``psa, t``."""
    return generate(GeneratorSpec('healthcare', n, m, seed=seed))


def default_adjustment(kind, treatment=None, frontdoor=False, inner_ridge=None):
    """The adjustment identifying ``E[T | do(treatment)]`` on a generator's graph.

    Parameters
    ----------
    kind : str
        Generator kind.
    treatment : str, optional
        Defaults to the generator's first treatment.
    frontdoor : bool, optional
        On the simple graph, adjust through ``u`` instead of ``z``.
    inner_ridge : float, optional
        Front-door inner ridge.

    Returns
    -------
    AdjustmentSpec
    """
    gen = GENERATORS[kind]
    treatment = treatment or gen.treatments[0]
    if kind == 'ablation':
        return AdjustmentSpec('none', 'x', 'y')
    elif kind == 'simple':
        if frontdoor:
            return AdjustmentSpec('frontdoor', 'x', 'y', 'u', inner_ridge=inner_ridge)
        return AdjustmentSpec('backdoor', 'x', 'y', 'z')
    elif kind == 'hard':
        if treatment == 'd':
            return AdjustmentSpec('backdoor', 'd', 'y', 'c')
        return AdjustmentSpec('backdoor', 'e', 'y', ('a', 'c'))
    return AdjustmentSpec('backdoor', 'statin', 'psa', ('age', 'bmi'))


class InterventionOracle:
    """Noisy queries of ``T`` under ``do(treatment = x)``.

    Parameters
    ----------
    generator : generator instance
    treatment : str
        Intervened variable.
    samples : int, optional
        Each query returns the mean of this many draws. Default is 10.
    """
    def __init__(self, generator, treatment, samples=10):
        if treatment not in generator.treatments:
            raise ParameterError("%s does not support interventions on %r"
                                 % (generator.kind, treatment))
        if samples < 1:
            raise ParameterError("samples must be >= 1")
        self.generator = generator
        self.treatment = treatment
        self.samples = int(samples)

    def __repr__(self):
        return "InterventionOracle<%s, do(%s)>" % (self.generator.kind, self.treatment)

    def sample(self, x, n, rng):
        return self.generator.sample_target(float(np.ravel(x)[0]), self.treatment, n, rng)

    def query(self, x, rng):
        return float(self.sample(x, self.samples, rng).mean())


def true_effect(oracle, x, mc_samples=10000, seed=0):
    """Monte-Carlo ``E[T | do(X) = x]`` on the mutilated graph.

    Returns
    -------
    mean : float
    se : float
        Standard error of ``mean``.
    """
    if mc_samples < 10000:
        raise ParameterError("mc_samples must be >= 1e4, got %d" % mc_samples)
    rng = stream(seed, 'truth', repr(float(np.ravel(x)[0])))
    draws = oracle.sample(x, int(mc_samples), rng)
    return float(draws.mean()), float(draws.std(ddof=1) / math.sqrt(draws.size))


def coverage(means, stds, truths, mass_grid):
    """Fraction of truths inside central Gaussian credible intervals.

    Parameters
    ----------
    means, stds, truths : array_like
        One entry per (replicate, test point) cell.
    mass_grid : array_like
        Nominal masses in ``(0, 1)``.

    Returns
    -------
    empirical : ndarray
        Empirical coverage for each nominal mass.
    """
    mass_grid = np.asarray(mass_grid, dtype=float)
    if np.any((mass_grid <= 0) | (mass_grid >= 1)):
        raise ParameterError("mass_grid values must lie in (0, 1)")
    means = np.ravel(means)
    stds = np.ravel(stds)
    truths = np.ravel(truths)
    if not means.size == stds.size == truths.size:
        raise ParameterError("means, stds and truths must have the same size")
    z = norm.ppf((1 + mass_grid) / 2)
    inside = np.abs(truths - means)[None, :] <= z[:, None] * stds[None, :]
    return inside.mean(axis=1)


class CalibrationTable:
    """Nominal against empirical coverage for one method."""
    __slots__ = ('method', 'nominal', 'empirical')

    def __init__(self, method, nominal, empirical):
        self.method = method
        self.nominal = np.asarray(nominal, dtype=float)
        self.empirical = np.asarray(empirical, dtype=float)

    def __repr__(self):
        return "CalibrationTable<%s, deviation=%.4f>" % (self.method, self.deviation)

    @property
    def deviation(self):
        """Mean absolute difference between empirical and nominal coverage."""
        return float(np.mean(np.abs(self.empirical - self.nominal)))

    def rows(self):
        dev = self.deviation
        return [(self.method, float(p), float(e), dev)
                for p, e in zip(self.nominal, self.empirical)]


def calibration_analysis(build_model, oracle, test_xs, mass_grid, seeds, method=None,
                         mc_samples=10000, truths=None):
    """Coverage of a model's credible intervals over seeds and test points.

    Parameters
    ----------
    build_model : callable
        ``build_model(seed) -> TreatmentEffectModel``, fitting the model on
        data generated with that seed.
    oracle : InterventionOracle
    test_xs : array_like
        Treatment values.
    mass_grid : array_like
        Nominal masses in ``(0, 1)``.
    seeds : iterable of int
    method : str, optional
        Label; defaults to the models' provenance.
    mc_samples : int, optional
        Monte-Carlo samples per ground-truth value.
    truths : array_like, optional
        Precomputed ground truth at ``test_xs``.

    Returns
    -------
    CalibrationTable
    """
    test_xs = np.asarray(test_xs, dtype=float).reshape(-1, 1)
    if truths is None:
        truths = np.array([true_effect(oracle, x, mc_samples)[0] for x in test_xs])
    truths = np.asarray(truths, dtype=float)
    means, stds = [], []
    for seed in seeds:
        model = build_model(seed)
        method = method or model.provenance
        means.append(model.mean(test_xs))
        stds.append(model.std(test_xs))
    cells = len(means)
    empirical = coverage(np.concatenate(means), np.concatenate(stds),
                         np.tile(truths, cells), mass_grid)
    return CalibrationTable(method, mass_grid, empirical)


def _nearest(xs, value):
    return int(np.argmin(np.abs(xs - value)))


def ablation_summary(xs, stds, spike_at=-5.0, center=0.0, tail=5.0):
    """Diagnostics of an uncertainty curve over treatment values.

    Returns
    -------
    summary : dict
        ``std_min``, ``std_max`` and ``uniformity`` (max/min) over
        ``|x| <= tail``; ``spike_ratio`` (std at ``spike_at`` over std at
        ``center``); ``tail_ratio`` (mean std for ``|x| >= tail`` over std at
        ``center``).
    """
    xs = np.ravel(np.asarray(xs, dtype=float))
    stds = np.asarray(stds, dtype=float)
    inner = np.abs(xs) <= tail
    if not inner.any():
        raise ParameterError("No grid points with |x| <= %g" % tail)
    lo, hi = float(stds[inner].min()), float(stds[inner].max())
    at_center = float(stds[_nearest(xs, center)])
    outer = np.abs(xs) >= tail

    def ratio(a, b):
        return a / b if b > 0 else math.inf

    return {'std_min': lo,
            'std_max': hi,
            'uniformity': ratio(hi, lo),
            'spike_ratio': ratio(float(stds[_nearest(xs, spike_at)]), at_center),
            'tail_ratio': ratio(float(stds[outer].mean()) if outer.any() else math.nan,
                                at_center)}
