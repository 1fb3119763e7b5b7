"""State-lattice kinodynamic planning with stochastic pure-pursuit rollout
validation (NR / PER / GER / GEGR) and a deterministic benchmark harness."""

from .ara_search import (
    FailureKind,
    PlanFailure,
    Planner,
    SearchConfig,
    Solution,
    ara_iteration,
    plan,
    remove_node_descendants,
)
from .controller_rollout import (
    ControllerConfig,
    Rollout,
    RolloutEnsemble,
    RolloutOutcome,
    VelocityCommand,
    pure_pursuit_command,
    rollout_ensemble,
    simulate_rollout,
    unicycle_step,
)
from .geometry import Pose2D, normalize_angle
from .lattice import (
    LatticeConfig,
    LatticeEdge,
    LatticeGraph,
    LatticeNode,
    LatticeState,
    MotionPrimitive,
    SnapFailure,
    build_primitive_set,
    edge_duration,
    expand,
    heuristic,
)
from .problems import PlanningProblem, ProblemRef, load_problem_set, save_problem_set
from .strategies import (
    Strategy,
    StrategyVerdict,
    VerdictKind,
    gegr_on_collision,
    map_collision_to_node,
    validate_expansion_per,
    validate_goal_gegr,
    validate_goal_ger,
)
from .world_map import (
    CellState,
    DimensionMismatch,
    Footprint,
    GridMap,
    MalformedHeader,
    MapFormatError,
    PerlinMapConfig,
    UnknownCellCode,
    UnreachableGoals,
    ZeroSpeedCell,
    check_footprint_collision,
    generate_perlin_map,
    inflate_obstacles,
    load_map,
    make_ring_problem_set,
    save_map,
)

__version__ = "0.1.0"
