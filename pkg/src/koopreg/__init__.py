"""Kernel-based transfer-operator regression for Markovian dynamical systems.

Fits ridge (KRR), principal-subspace (PCR) and reduced-rank (RRR) estimators
of the one-step conditional-expectation operator from trajectory data, exposes
their spectral decompositions, dynamic modes and modal forecasts, and ships
synthetic benchmark systems with analytic ground truth.
"""

from ._accel import backend_name, numba_enabled
from .datagen import (BlockSplit, LogisticOracle, Trajectory, block_subsample,
                      build_logistic_oracle, make_rng, read_trajectory_csv,
                      sample_trig_noise, simulate_logistic, simulate_lorenz63,
                      simulate_ou, split_time, trig_noise_normalizer,
                      write_trajectory_csv)
from .estimators import (FittedEstimator, empirical_risk, fit_krr, fit_pcr,
                         fit_rrr, fit_rrr_featurespace, hs_norm, load_model,
                         model_from_dict, model_to_dict, predict_observable,
                         predict_state, regularized_empirical_risk, save_model,
                         test_risk)
from .experiments import (TrainCache, eigenvalue_benchmark,
                          ivanov_bound_experiment, match_eigenvalues,
                          match_hs_norm, write_report)
from .kernels import (GramCache, KernelSpec, build_gram, build_gram_trajectory,
                      eval_kernel, explicit_features, gaussian, kernel_matrix,
                      kernel_vector, linear, polynomial)
from .linalg import (ComplexEig, DefectiveSpectrumError, EigPairList,
                     NotSPDError, eig_small_nonsym, gep_symdef, psd_sqrt_pinv,
                     sym_eig, trunc_svd)
from .spectral import (ModeSet, SpectralDecomposition, decompose,
                       eval_eigenfunctions, eval_eigenfunctions_grid, forecast,
                       modes)

__version__ = "0.1.0"
