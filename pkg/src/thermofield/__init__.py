"""Desk-scale numerics for free and spatially cutoff interacting thermal scalar fields in 1+1 dimensions."""

__version__ = "0.1.0"

from .spectral import (DiagonalSystem, ModeGrid, TestVector, bose_factor, build_charged, build_neutral,
                       dispersion, kg_time_zero_embedding)
from .quasifree import (WeylWord, charged_nonpositivity_witness, euclid_cov_C, euclid_greens_weyl,
                        greens_weyl, kms_residual, time_reversal_check, two_point_R, weyl_expectation)
from .pathspace import (CholeskySampler, PathEnsemble, PeriodicGaussianSampler, TimeGrid,
                        cholesky_oracle_sample, gram_positivity_check, markov_residual,
                        os_positivity_check, sample_paths)
from .wick import WickPolynomial, reorder, reorder_matrix, wick_coefficients, wick_exp, wick_power
from .interactions import (CutoffSpec, InteractionSpec, InteractionTransformer, convergence_study,
                           exact_l2_inner, exp_series, kernel_wp, l2_distance)
from .fkn import (FknReweighter, FknWeights, axioms_check, fkn_kernel, lp_bound_check, perturb_measure,
                  perturbed_greens, perturbed_os_markov_check)
from .standard_form import (FiniteKmsSystem, StandardFormObjects, feynman_kac_crosscheck,
                            gauge_sector_check, gns_build, kms_verify, liouvillean_verify, perturb)

__all__ = [name for name in dir() if not name.startswith("_")]
