"""Sparse Gaussian process regression with swap-based inducing point selection.

A low-rank factored representation (partial Cholesky of the kernel matrix
plus a thin QR of its noise-augmented form) supports O(mn) swap updates of
the inducing set, exact objective deltas for candidate points, and fast
approximate candidate ranking through a small set of information pivots.
Training alternates these discrete swap phases with conjugate-gradient steps
on the continuous hyperparameters under a single objective, either the
projected-process marginal likelihood or its variational free energy.
"""

from .baselines import SelectorKind, select_entropy_greedy, select_greedy_subset, select_random
from .errors import ConfigError, DegenerateCandidateError, NumericalError, StaleCacheError
from .factor_core import FactoredModel, build, residual_column
from .hyper_opt import CGConfig, cg_optimize, minimize_cg, objective_and_grad
from .info_pivots import InfoPivotSet, approx_delta_all, build_info_pivots, refresh, update_on_swap
from .kernels import (Dataset, HistogramIntersection, Hyperparameters,
                      PrecomputedCompound, RbfArd, default_hyperparameters,
                      load_kernel_matrix, save_kernel_matrix)
from .objective import DeltaTerms, EnergyTerms, dense_oracle_energy, energy, exact_delta
from .predictor import Prediction, Predictor, smse, snlp
from .swap_select import PhaseStats, SwapOutcome, discrete_phase, run_to_fixed_point, swap_once
from .trainer import (TrainConfig, TrainedModel, dataset_fingerprint, fit,
                      load_model, save_model)

__version__ = "0.1.0"
