"""Commit engine: candidate pairs, scoring, budget filtering and selection."""

from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .dynamics import ParameterBox
from .planners import (
    CandidateConfig,
    PlannerError,
    PlanningContext,
    accept_backup,
    plan_backup,
    plan_informative,
)
from .trajectory import NominalTrajectory, sample_regressors, trajectory_cost
from .tubes import InfeasibleTighteningError, TubeTrajectory, validate_tube
from .widthlp import SolverError, avg_width_reduction, stack

log = logging.getLogger(__name__)

HORIZON_TOL = 1e-9


@dataclass
class CandidatePair:
    index: int
    horizon: float
    conservative: TubeTrajectory
    informative: Optional[NominalTrajectory] = None
    informative_tube: Optional[TubeTrajectory] = None
    score: float = 0.0
    delta_w: float = 0.0
    delta_j: float = math.inf
    note: str = ""

    @property
    def valid(self) -> bool:
        return self.informative_tube is not None


@dataclass(frozen=True)
class BudgetLedger:
    j_exec: float
    j_back: float
    budget: float

    @property
    def slack(self) -> float:
        return self.budget - self.j_exec - self.j_back

    def admits(self, delta_j: float) -> bool:
        return self.j_exec + self.j_back + delta_j <= self.budget

    def executed(self, cost: float) -> "BudgetLedger":
        if cost < -1e-12:
            raise ValueError("executed cost cannot be negative")
        return replace(self, j_exec=self.j_exec + max(cost, 0.0))


@dataclass(frozen=True)
class GatekeeperConfig:
    score_decay: float = 0.5
    candidate: CandidateConfig = field(default_factory=CandidateConfig)
    sample_dt: float = 0.1

    def __post_init__(self):
        if not self.score_decay > 0:
            raise ValueError("score decay must be positive")
        if not self.sample_dt > 0:
            raise ValueError("sample period must be positive")


@dataclass
class Commit:
    t_k: float
    kind: str  # "informative" | "conservative"
    index: Optional[int]
    horizon: float
    tube: TubeTrajectory
    score: float = 0.0
    delta_w: float = 0.0
    delta_j: float = 0.0
    n_candidates: int = 0
    n_valid: int = 0
    n_feasible: int = 0


@dataclass
class CycleResult:
    commit: Commit
    backup: TubeTrajectory
    ledger: BudgetLedger
    pairs: List[CandidatePair]
    backup_accepted: bool


def horizons(t_k: float, t_f: float, t_c: float) -> list:
    """Commit horizons ``i * T_c`` that fit before ``t_f``."""
    if not t_c > 0:
        raise ValueError("commit period must be positive")
    n = int(math.floor((t_f - t_k) / t_c + HORIZON_TOL))
    return [i * t_c for i in range(1, max(n, 0) + 1)]


def score(horizon: float, delta_w: float, decay: float) -> float:
    if not decay > 0:
        raise ValueError("decay must be positive")
    if delta_w < 0:
        raise ValueError("width reduction must be non-negative")
    return math.exp(-decay * horizon) * delta_w


def budget_filter(pairs, ledger: BudgetLedger) -> list:
    return [p.index for p in pairs if p.valid and ledger.admits(p.delta_j)]


def select(pairs, feasible) -> Optional[CandidatePair]:
    """Highest score; ties go to the shorter horizon, then the lower index."""
    best = None
    for p in pairs:
        if p.index not in feasible:
            continue
        if best is None or (p.score, -p.horizon, -p.index) > (best.score, -best.horizon, -best.index):
            best = p
    return best


class TerminalPhase(Exception):
    """No commit horizon fits before the final time."""


def commit(pairs, ledger: BudgetLedger, backup: TubeTrajectory, t_k: float, t_c: float) -> Commit:
    """Pick the committed segment; the shortest conservative candidate is the fallback."""
    if backup is None:
        raise ValueError("a backup is required")
    feasible = budget_filter(pairs, ledger)
    best = select(pairs, feasible)
    counts = dict(n_candidates=len(pairs), n_valid=sum(p.valid for p in pairs), n_feasible=len(feasible))
    if best is not None:
        return Commit(t_k, "informative", best.index, best.horizon, best.informative_tube,
                      best.score, best.delta_w, best.delta_j, **counts)
    if backup.t_end < t_k + t_c - HORIZON_TOL:
        raise TerminalPhase(f"no horizon fits after t={t_k}")
    fallback = next((p for p in pairs if p.index == 1), None)
    tube = fallback.conservative if fallback is not None else backup.restrict(t_k, t_k + t_c)
    return Commit(t_k, "conservative", None, t_c, tube, **counts)


def sample_times(t_start: float, horizon: float, dt: float) -> np.ndarray:
    """Half-open sample grid ``t_start + j dt`` inside ``[t_start, t_start + horizon)``."""
    n = int(math.floor(horizon / dt + 1e-9))
    return t_start + dt * np.arange(n)


def predict_reduction(theta: ParameterBox, nominal: NominalTrajectory, t_start: float, horizon: float,
                      dt: float, wbar: float) -> float:
    times = sample_times(t_start, horizon, dt)
    A = stack(list(sample_regressors(nominal, times)), wbar, list(times))
    return avg_width_reduction(theta, A)


def build_pair(ctx: PlanningContext, cfg: GatekeeperConfig, theta: ParameterBox, backup: TubeTrajectory,
               x_k, t_k: float, index: int, horizon: float) -> CandidatePair:
    spec = ctx.spec
    cons = backup.restrict(t_k, t_k + horizon)
    pair = CandidatePair(index=index, horizon=horizon, conservative=cons)
    seed = int(round(t_k * 1000)) * 100 + index
    try:
        inf = plan_informative(ctx, theta, x_k, t_k, horizon, cons.nominal.end_state(), cfg.candidate,
                               guess=cons.nominal, seed=seed)
    except (PlannerError, InfeasibleTighteningError, np.linalg.LinAlgError) as exc:
        pair.note = f"planner: {exc}"
        log.info("candidate %d at t=%.2f dropped: %s", index, t_k, exc)
        return pair
    if inf is None:
        pair.note = "excitation floor unreachable"
        return pair
    pair.informative = inf
    ends_mission = abs(t_k + horizon - spec.t_f) <= HORIZON_TOL
    tube = validate_tube(inf, theta, spec, ctx.gains, require_goal=ends_mission)
    if not isinstance(tube, TubeTrajectory):
        pair.note = f"{tube.constraint}@{tube.time:.2f}"
        return pair
    pair.informative_tube = tube
    try:
        pair.delta_w = predict_reduction(theta, inf, t_k, horizon, cfg.sample_dt, ctx.model.noise_bound)
    except SolverError as exc:
        pair.informative_tube = None
        pair.note = f"width LP: {exc}"
        return pair
    pair.score = score(horizon, pair.delta_w, cfg.score_decay)
    goal, a, b = spec.goal_point, spec.cost_alpha, spec.cost_beta
    pair.delta_j = trajectory_cost(inf, goal, a, b) - trajectory_cost(cons.nominal, goal, a, b)
    return pair


def refresh_backup(ctx: PlanningContext, theta: ParameterBox, previous: Optional[TubeTrajectory], x_k, t_k: float):
    """Re-plan the backup and apply monotone acceptance; planner trouble keeps the old one."""
    warm = previous.nominal if previous is not None else None
    try:
        fresh = plan_backup(ctx, theta, x_k, t_k, warm=warm)
    except (PlannerError, InfeasibleTighteningError) as exc:
        if previous is None:
            raise
        log.info("backup re-plan at t=%.2f failed, keeping previous: %s", t_k, exc)
        fresh = None
    return accept_backup(fresh, previous, ctx.spec, t_k, theta, ctx.gains)


def cycle(ctx: PlanningContext, cfg: GatekeeperConfig, t_k: float, x_k, theta: ParameterBox, ledger: BudgetLedger,
          previous_backup: Optional[TubeTrajectory]) -> CycleResult:
    """One planning cycle: refresh backup, build and score pairs, filter by budget, commit."""
    spec = ctx.spec
    backup, accepted = refresh_backup(ctx, theta, previous_backup, x_k, t_k)
    goal, a, b = spec.goal_point, spec.cost_alpha, spec.cost_beta
    ledger = replace(ledger, j_back=trajectory_cost(backup.nominal, goal, a, b))
    pairs = [build_pair(ctx, cfg, theta, backup, x_k, t_k, i + 1, T)
             for i, T in enumerate(horizons(t_k, spec.t_f, spec.commit_period))]
    chosen = commit(pairs, ledger, backup, t_k, spec.commit_period)
    return CycleResult(commit=chosen, backup=backup, ledger=ledger, pairs=pairs, backup_accepted=accepted)
