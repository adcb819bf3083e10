"""Multi-resource VM reservation: greedy planning, dynamic reservation and simulation."""

__version__ = "0.1.0"

from .core_model import (CloudProfile, ConfigExplosionError, ProfileError, VMType, config_cmp,
                         config_reward, enumerate_configs, is_feasible, load_profile, max_reward)
from .greedy_planner import (GpaResult, GreedyPlan, adversarial_closed_forms, check_monotone_greedy,
                             gen_adversarial, global_greedy, gpa, greedy_reward, greedy_value)
from .lp_bounds import LinearProgram, LpSolution, optimal_normalized, optimal_static, solve_lp

__all__ = [
    "CloudProfile", "ConfigExplosionError", "ProfileError", "VMType", "config_cmp",
    "config_reward", "enumerate_configs", "is_feasible", "load_profile", "max_reward",
    "GpaResult", "GreedyPlan", "adversarial_closed_forms", "check_monotone_greedy",
    "gen_adversarial", "global_greedy", "gpa", "greedy_reward", "greedy_value",
    "LinearProgram", "LpSolution", "optimal_normalized", "optimal_static", "solve_lp",
]
