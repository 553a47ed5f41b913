from . import _version
from .bayes import BayesCmeModel, bayescme_fit, causal_bayescme
from .bo import (BoConfig, BoTrace, GridPrior, bo_run, expected_improvement,
                 plain_gp_prior, sampling_baseline)
from .config import RunConfig
from .core import (BayesImpException, ConfigError, DataError, NumericalError,
                   ParameterError, SingularMatrixError)
from .embeddings import AdjustmentSpec, build_omega, cme_weights, ime_evaluate
from .experiments import (GeneratorSpec, InterventionOracle, calibration_analysis,
                          coverage, gen_ablation, gen_hard_synthetic, gen_healthcare,
                          gen_simple_synthetic, true_effect)
from .formats import ObservationalDataset, read_dataset, write_dataset
from .fusion import (BayesImeModel, BayesImpModel, ImpModel, bayesime_build,
                     bayesimp_build, imp_build, moment_match_to_gp)
from .gp import GpModel, KrrModel, fit_gp_hypers, gp_fit, krr_fit, optimize_hypers
from .kernels import KernelSet, NuclearDominantKernel, RbfKernel, gram, solve_spd

__version__ = _version.get_versions()['version']
