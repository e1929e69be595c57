"""Biped gait generation toolkit: three-mass dynamics, receding-horizon
control, footstep planning, reference trajectories and a simulation harness."""

from .dynamics import (
    StateSpace,
    ThreeMassParams,
    build_continuous,
    discretize,
    step_plant,
    zmp,
)
from .engine import Setpoints, WalkEngine, WalkPhase, filter_setpoints
from .footstep import (
    FeetState,
    Footprint,
    FootstepPlan,
    GridMap,
    PlanningError,
    StepAction,
    footsteps_from_path,
    inflate,
    plan_footsteps,
    plan_path,
    transition,
)
from .harness import (
    Disturbance,
    NoiseSpec,
    RunMetrics,
    Scenario,
    max_withstand,
    noise_sample,
    run,
)
from .mpc import (
    AxisController,
    ControllerFault,
    MpcConfig,
    Observer,
    ObserverConfig,
    ReferenceBundle,
    build_constraints,
    build_cost,
    build_prediction,
)
from .qp import ActiveSetSolver, QpProblem, QpSolution, kkt_residual
from .refgen import (
    GaitTiming,
    WalkTimeline,
    hip_reference,
    mass_references,
    swing_reference,
    zmp_reference,
)

__all__ = [
    "ActiveSetSolver",
    "AxisController",
    "ControllerFault",
    "Disturbance",
    "FeetState",
    "Footprint",
    "FootstepPlan",
    "GaitTiming",
    "GridMap",
    "MpcConfig",
    "NoiseSpec",
    "Observer",
    "ObserverConfig",
    "PlanningError",
    "QpProblem",
    "QpSolution",
    "ReferenceBundle",
    "RunMetrics",
    "Scenario",
    "Setpoints",
    "StateSpace",
    "StepAction",
    "ThreeMassParams",
    "WalkEngine",
    "WalkPhase",
    "WalkTimeline",
    "build_constraints",
    "build_continuous",
    "build_cost",
    "build_prediction",
    "discretize",
    "filter_setpoints",
    "footsteps_from_path",
    "hip_reference",
    "inflate",
    "kkt_residual",
    "mass_references",
    "max_withstand",
    "noise_sample",
    "plan_footsteps",
    "plan_path",
    "run",
    "step_plant",
    "swing_reference",
    "transition",
    "zmp",
    "zmp_reference",
]
