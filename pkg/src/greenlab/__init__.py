"""Discrete nonlinear potential theory on graph metric measure spaces."""

__version__ = "0.1.0"

from .errors import (DisconnectedDomain, EmptyBall, EmptyLevelSet, EmptyShell, GreenlabError,
                     InsufficientRows, InsufficientShells, InvalidCutoff, InvalidProblem,
                     NonConvergence, SingularityOnBoundary)
from .mmspace import (MetricMeasureSpace, build_cone, build_glued_balls, build_grid,
                      estimate_pointwise_dimension, load_space, save_space)
from .penergy import EnergyConfig, PotentialField, minimize, p_energy
from .capacity import (CapacityProblem, CapacityResult, check_capacity_sandwich,
                       level_set_capacity, ring_capacity_sweep, solve_capacity)
from .green import (GreenFunction, RadialProfile, check_definition_criteria,
                    check_growth_bounds, compute_K, normalize, radial_extrema, solve_singular)
from .asympt import fit_local_behavior, harnack_sphere_ratio, integrability_scan
