"""Minimum-information reachability policies for Markov decision processes.

An agent must reach a target set with at least a required probability while
an observer watches its transitions at a subset of states and tries to
infer the transition probabilities there.  This package synthesizes
stationary (and observation-stationary) policies minimizing the expected
total information leaked, measured through the Fisher information of the
observed transition rows, and validates them with an estimation-error
simulator and the matching lower bounds.
"""

from .mdp import (Mdp, MarkovChain, StationaryPolicy, Violation,
                  induce_chain, lint, reach_probability, residence_times,
                  validate)
from .components import (EndComponentReport, SubMdp,
                         all_unobserved_mecs_closed, end_component_report,
                         is_closed, is_union_uec, maximal_end_components,
                         stay_state_set, unobserved_mecs)
from .information import (InfoTerm, build_info_term,
                          expected_total_information, info_term_gradient,
                          info_term_value, path_total_information,
                          transition_information)
from .solver import PenaltyGroup
from .synthesis import (OccupationSolution, SwitchPolicy, SynthesisResult,
                        act, build_switch_mdp, exhaustive_search,
                        extract_policy, feasibility_check, max_reach_policy,
                        solve_occupation_program, solve_switch, stay_policy,
                        synthesize)
from .adversary import (BoundReport, EstimationReport, PathSample,
                        cramer_rao_bounds, estimate, mse_report,
                        simulate_paths)
from .worlds import (ExitGroup, GridSpec, build_grid_mdp,
                     exit_information_terms, export_heatmap,
                     four_region_spec, obstacle_grid_spec)

__version__ = "0.1.0"

__all__ = [name for name in dir() if not name.startswith("_")]
