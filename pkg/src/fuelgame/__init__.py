"""Nash equilibria of N-player finite-fuel singular control games."""

from .boundary import BoundarySolution, PEvaluator, find_x0, jump_root_minus, jump_root_plus, p_eval
from .core import (
    CostFunction,
    GameSpec,
    JointState,
    RegionLabel,
    allocation_weights,
    classify_region,
    relative_positions,
    total_accessible,
)
from .dynamics import (
    GeometryModel,
    SchemeParams,
    check_reflection_compatibility,
    jump_cascade,
    rank_diagnostic,
    reflect_step,
    simulate_path,
    two_player_explicit,
)
from .montecarlo import deviation_test, estimate_value, summary_stats
from .value import ValueQuery, compare_games, game_values, qvi_residuals, value_game

__version__ = "0.1.0"
