"""Kernel density and plug-in entropy estimation for the mark law of Poisson
marked point processes with marks on circles, tori and spheres."""
__version__ = "0.1.0"

from .clt import (CltReport, MovingAverageField, block_sums, chen_shao_bound, clt_rate_bound,
                  limit_variance, random_sum_bound, standardized_statistic)
from .densities import (MixtureVMF, UniformDensity, VonMisesFisher, WrappedNormalCircle,
                        density_constants, density_from_dict, true_entropy)
from .entropy import (EntropyConfig, EntropyEstimate, entropy_estimate, entropy_estimate_modified,
                      entropy_l2_bound, estimate_e_log_fhat, mu_hat, optimal_bandwidth_entropy,
                      sigma_n_estimate)
from .estimators import ManifoldKernelDensity, MarkEntropyEstimator
from .exceptions import (AccuracyError, DegenerateError, DomainError, InputError, InternalError,
                         MppError, ResourceError)
from .experiments import ExperimentConfig, ExperimentResult, ks_distance, loglog_slope, run_experiment
from .kde import (KdeConfig, as_consistency_schedule, bias_bound, kde_evaluate, kde_translated,
                  l2_bound, optimal_bandwidth_density, variance_bound)
from .kernels import KernelProfile, make_kernel
from .manifold import Manifold, get_manifold
from .point_process import BoxWindow, MppSample, restrict, simulate_mpp

__all__ = [n for n in dir() if not n.startswith("_")]
