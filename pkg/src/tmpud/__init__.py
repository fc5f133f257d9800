"""tmpud: task-and-motion planning for simulated urban driving.

A lane-graph task planner whose utility blends traveling cost with
motion-level safety, a Monte-Carlo safety estimator over safe control sets,
an interactive replanning executor with literature baselines, and an
abstract traffic simulator plus benchmark harness.
"""

from .config import (
    ControllerGains,
    EstimatorParams,
    PlannerParams,
    SimParams,
    StackConfig,
    VehicleParams,
)
from .geometry import ControlEnvelope, ControlSignal, Pose, Trajectory, normalize_angle
from .network import NetworkFormatError, RoadNetwork, Segment, parse_network
from .symbolic import (
    ACTION_KINDS,
    DrivingAction,
    InfeasibleState,
    Plan,
    SymbolicState,
    action_preconditions,
    map_state,
    sample_state_pose,
    successors,
    validate_plan,
)
from .task_planner import (
    NoPlanExists,
    PlanningProblem,
    UtilityTables,
    compute_plan,
    plan_utility,
    transition_utility,
)
from .motion_planner import (
    NoPath,
    TrackingController,
    VehicleState,
    path_length,
    plan_path,
    simulate_vehicle,
)
from .safety import (
    SafetyQuery,
    aggregate_over_time,
    estimate_safety,
    predict_surrounding,
    safe_probability,
)

__version__ = "0.1.0"
