"""Monte Carlo laboratory for path decoupling, weighted-BMO estimates, and
backward-equation tail inequalities on discretized Brownian drivers."""

__version__ = "0.1.0"

from .grid_paths import (TimeGrid, PathBundle, MixingFunction, make_grid, sample_paths,
                         brownian_at, save_bundle, load_bundle)
from .decouple import (GridFunctional, DecoupleWindow, mixed_increments,
                       decoupled_increments, decouple_functional, conditional_over_window,
                       conditional_given_time, sandwich_check, terminal_brownian,
                       window_increment)
from .estimators import BasisSpec, ConditionalEstimator, cond_expect, linf_proxy
from .forward_sde import (SdeCoefficients, ForwardSolution, FbsdePreset, PRESETS,
                          euler_forward, coupling_distance_experiment,
                          forward_terminal_functional, save_forward_solution,
                          load_forward_states)
from .bsde_solver import (GeneratorSpec, BsdeGridSolution, closed_form_example,
                          regression_backward_euler, zpi_aggregate, spot_check_generator,
                          export_solution_csv, solution_summary)
from .bmo import (phi, phi_excess, phi_inverse, phi_inverse_excess, psi, c8_min_p,
                  rh_bound, RHBound, ProcessSample, SliceableEstimate, bmo_s2_norm,
                  sliceable_numbers, fefferman_check, fefferman_conditional)
from .weights import (WeightComponents, WeightSample, fbsde_weight, assemble_weight,
                      c6_estimate, c7_estimate, weighted_bmo_ratio, good_lambda_constants,
                      GoodLambdaConstants, tail_check, default_tail_grids)
