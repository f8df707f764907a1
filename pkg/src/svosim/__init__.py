"""Semi-cooperative highway planning and simulation.

Every vehicle plans with a short-horizon optimizer whose objective blends
its own driving reward with its neighbors' rewards through a social value
orientation angle. A round-based coordinator lets each agent briefly
co-optimize its nearest neighbors' controls before settling on a pure best
response, and the experiment layer measures how the prosocial share of a
population shifts realized speeds.
"""

from .dynamics import (
    ControlInput,
    ControlLimits,
    VehicleGeometry,
    VehicleState,
    rollout,
    step,
)
from .experiments import (
    MatrixConfig,
    MatrixResult,
    MatrixVariant,
    run_experiment_matrix,
)
from .ibr import AgentPlan, IbrConfig, PlanSet, default_schedule, run_ibr
from .metrics import (
    PairedComparison,
    RunMetrics,
    average_speed,
    compute_isi_psi,
    lane_change_events,
    subgroup_report,
    trace_metrics,
)
from .rewards import AgentProfile, CostWeights, performance_reward, social_utility
from .road import RoadSpec
from .safety import TtcParams, collision_check, modified_ttc, ttc_cost
from .solver import (
    AgentView,
    SolveCandidate,
    SolverConfig,
    WorldSnapshot,
    assemble_problem,
    select_solution,
    solve_time_limited,
)
from .trajectories import DesiredTrajectory, generate_bank, generate_warm_starts
from .world import (
    SimulationConfig,
    WorldState,
    WorldTrace,
    assign_population,
    load_trace,
    run_simulation,
    save_trace,
    spawn_vehicles,
    step_world,
)

__version__ = "0.1.0"

__all__ = [
    "AgentPlan",
    "AgentProfile",
    "AgentView",
    "ControlInput",
    "ControlLimits",
    "CostWeights",
    "DesiredTrajectory",
    "IbrConfig",
    "MatrixConfig",
    "MatrixResult",
    "MatrixVariant",
    "PairedComparison",
    "PlanSet",
    "RoadSpec",
    "RunMetrics",
    "SimulationConfig",
    "SolveCandidate",
    "SolverConfig",
    "TtcParams",
    "VehicleGeometry",
    "VehicleState",
    "WorldSnapshot",
    "WorldState",
    "WorldTrace",
    "assemble_problem",
    "assign_population",
    "average_speed",
    "collision_check",
    "compute_isi_psi",
    "default_schedule",
    "generate_bank",
    "generate_warm_starts",
    "lane_change_events",
    "load_trace",
    "modified_ttc",
    "performance_reward",
    "rollout",
    "run_experiment_matrix",
    "run_ibr",
    "run_simulation",
    "save_trace",
    "select_solution",
    "social_utility",
    "solve_time_limited",
    "spawn_vehicles",
    "step",
    "step_world",
    "subgroup_report",
    "trace_metrics",
    "ttc_cost",
    "__version__",
]
