"""Safe dual-control planning with gatekept exploration."""

from .dynamics import (
    GRAVITY,
    ParameterBox,
    RegressorRecord,
    SimState,
    SystemModel,
    eval_dynamics,
    measure,
    regressor,
    scalar_drag_model,
    step,
    vector_drag_model,
)
from .estimation import FeasiblePolytope, InconsistentDataError, box_width, smid_update
from .widthlp import (
    LpProblem,
    LpResult,
    SolverError,
    StackedRegressor,
    WidthPrediction,
    avg_width_reduction,
    consistency_witness,
    in_error_set,
    predicted_width,
    solve_lp,
    stack,
    support_h,
)
from .tubes import AncillaryGains, MissionSpec, Region, TubeTrajectory, tighten, validate_tube
from .planners import CandidateConfig, PlannerError, PlanningContext, gramian, plan_backup, plan_informative
from .gatekeeper import BudgetLedger, CandidatePair, GatekeeperConfig, cycle
from .harness import RunConfig, RunReport, case_study_1, case_study_2, run_baseline, run_dual, run_monte_carlo

__version__ = "0.1.0"
