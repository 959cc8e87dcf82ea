"""Finite-sample confidence regions for incomplete structural models.

Test statistics are optimal-transport (assignment) values between simulated
latent draws and the latent sections rationalizing the data; critical values
come from Monte Carlo latent samples.
"""
from .assignment import INF, TransportPlan, brute_force_assignment, solve_assignment
from .entrygame import EntryGame, GameTheta, enumerate_ne, is_pure_ne, simulate_dgp
from .errors import (BudgetExceeded, ConfigError, DimensionMismatch, Infeasible, MaxIterations,
                     NotEnumerable, OTInferenceError, OutOfDomain, TooLarge, TooManyPlayers)
from .inference import (ColumnChoiceSet, MinMaxResult, TestDecision, build_cost_matrix,
                        column_choices, cx_critical_stat, mc_membership_test, ncx_critical_stat,
                        outer_critical_value, outer_stat, test_statistic)
from .latent import LatentSample, derive_seed, draw_uniforms, latent_sample, materialize
from .model import Dataset, MetricConfig, ModelSpec, Observation, Theta
from .region import ParameterGrid, RegionResult, compute_exact_region, compute_outer_region

__version__ = "0.1.0"
