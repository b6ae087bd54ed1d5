"""Monotone switching-system solver for nonlocal HJB variational inequalities.

Mixed optimal stopping and control problems with jumps, evaluated under a
BSDE-driven nonlinear expectation, reduce to an obstacle-constrained nonlocal
HJB equation.  This package discretizes it by a switching system with small
switching cost, piecewise constant policy timestepping, monotone quadrature
stencils for the jump operators, a semi-Lagrangian stencil for the (possibly
degenerate) diffusion, and a Lax-Friedrichs flux for the gradient
nonlinearity, solved implicitly through Picard iteration.
"""

from .exceptions import (ConfigurationError, ConvergenceError, HJBVIError,
                         IntegrationError, SchemeValidationError)
from .grid import EXTERIOR, SpaceTimeGrid, interp, tent_weights
from .levy import (LevyMeasure, QuadratureSet, build_quadrature,
                   drift_correction, small_jump_variance, tempered_stable,
                   truncated_mass, zero_measure)
from .model import (BenchmarkParams, ControlGrid, ProblemSpec,
                    discretize_controls, driver_lipschitz_in_p,
                    recursive_utility_spec, zero_dynamics_spec)
from .ops import (LocalStencil, NonlocalStencil, apply_A, apply_B, apply_K1,
                  build_local, build_nonlocal, lf_flux)
from .solver import (SchemeParams, SolveResult, SwitchingState,
                     SwitchingSystemSolver, extract_policy, solve,
                     switching_step)

__version__ = "0.1.0"
