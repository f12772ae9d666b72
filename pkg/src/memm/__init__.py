"""Minimal entropy martingale measures for jump-diffusion stochastic volatility models."""

__version__ = "0.1.0"

from .errors import (AdmissibilityError, ClampError, CorruptionError, EvaluationError,
                     MemmError, ModelFileError, ModelValidationError, NonConvergenceError,
                     TruncationError)
from .ipde import (FixedPointReport, Grid, Surface, apply_F, delta_u, flow_characteristic,
                   picard_solve)
from .kernel import (MemmFields, PhiSolution, compute_phi_sigma, g_value, g_value_direct,
                     solve_fixed_point, solve_phi_k, solve_WL)
from .measure import GirsanovKernels, kernels_at, log_density_increment
from .model import (LevyMeasure, MarketModel, ValidationReport, lambda_hat, nu_integral,
                    validate_model)
from .modelfile import load_model_file, load_preset
from .montecarlo import (PathBatch, PathSample, VerifyStats, pathwise_residual, simulate_paths,
                         verify_suite)
from .special import (BnsParams, build_bns_model, check_bns_admissibility,
                      exponential_tail_atoms, solve_deterministic_phi, solve_orthogonal)
