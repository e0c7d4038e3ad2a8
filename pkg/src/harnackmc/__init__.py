"""Coupling by change of measure, Harnack-type bounds and their Monte Carlo verification."""

__version__ = "0.1.0"

from .errors import ConfigurationError, DomainError, NumericalFailure
from .modulus import (ModulusSpec, constant_modulus, log_modulus, loglog_modulus, power_modulus, eval_phi, eval_G,
                      inv_G, bihari_C, eval_Phi, check_class_membership)
from .model import SdeSpec, SfdeSpec, SegmentPath, catalog_model, CATALOG
from .coupling import CouplingConfig, xi, xi_tilde, coupled_drift_sde, coupled_drift_sfde, girsanov_increment
from .simulate import (StepPolicy, PathRecord, simulate_sde, simulate_coupled_sde, simulate_sfde,
                       simulate_coupled_sfde, uniqueness_probe)
from .oracle import LinearModelParams, exact_Ptf, exact_log_harnack_gap
from .harnack import (BoundSet, HarnackReport, log_harnack_bound, power_harnack_bound, entropy_and_moment_bounds,
                      sfde_log_harnack_bound, estimate_semigroup, estimate_weighted, verdict, test_function)
