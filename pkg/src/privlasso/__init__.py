"""AMP analysis of the LASSO with objective perturbation under heterogeneous covariate scales."""
from .amp import AmpConfig, AmpState, Status, amp_init, amp_run, amp_step, generalization_error, rho_hat
from .core import (ConstantOne, Explicit, HyperParams, LogNormal, NoiseRealization, PerturbationScheme,
                   ProblemInstance, Scheme, UniformUnit, check_params, validate_params)
from .instance import generate_instance, sample_scales
from .integrators import IntegrationError, MonteCarlo, Quadrature
from .kernels import SingularityError, big_r, r_hat, r_hat_d1, r_hat_d2, soft_mean, soft_var
from .oracle import (OracleMaxIterError, UnboundedObjectiveError, coordinate_descent, objective_value,
                     oracle_solve)
from .perturbation import allocate_variances, draw_eta, effective_noise_probe, make_noise
from .privacy import cw_on_ave_kl, tradeoff_curve
from .state_evolution import (SeSolution, SeState, decoupled_sample, se_fixed_point, se_update,
                              stability_margin)

__version__ = "0.1.0"
