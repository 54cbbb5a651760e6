"""Viscosity-solution toolkit for ergodic HJB equations with boundary-degenerate diffusions.

Modules: ``geometry`` (signed distance and jets), ``problem`` (coefficients,
operator and barriers), ``conditions`` (sampling certificates), ``discretize``
(monotone stencils), ``solvers`` (discounted and ergodic solves), ``sde``
(Monte Carlo checks) and ``cli``.
"""
from .conditions import AssumptionReport, LyapunovReport, check_condition, lyapunov_margin
from .discretize import (DiscreteField, FeedbackPolicy, Grid, StencilSet, apply, assemble,
                         build_grid, extract_feedback)
from .errors import *  # noqa: F401,F403
from .geometry import DomainGeometry, ball, annulus, halfplane_patch, interval, signed_distance
from .models import REGISTRY, build_model
from .problem import (Barrier, ControlSet, Jet, ProblemSpec, Regularity, barrier_jet,
                      barrier_value, hamiltonian_value, hjb_value)
from .sde import (MonteCarloValue, SimulationConfig, TrajectoryBatch, check_invariance,
                  check_viability, exit_statistics, exit_value, mc_discounted_value, simulate)
from .solvers import (DiscountedSolution, ErgodicSolution, VanishingDiscountSchedule,
                      boundary_growth_report, check_liouville, check_uniqueness,
                      solve_discounted, solve_ergodic)

__version__ = "0.1.0"
