"""Closed-loop mission runner, Monte Carlo drivers and report writers."""

from __future__ import annotations

import csv
import json
import logging
import math
import os
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional

import numpy as np

from .dynamics import MODELS, ParameterBox, RegressorRecord, SimState, SystemModel, measure, sample_disturbance, step
from .estimation import FeasiblePolytope, smid_update
from .gatekeeper import (
    BudgetLedger,
    Commit,
    GatekeeperConfig,
    TerminalPhase,
    cycle,
    sample_times,
)
from .planners import CandidateConfig, PlannerError, PlannerOptions, PlanningContext, plan_backup
from .trajectory import sample_regressors, trajectory_cost
from .tubes import AncillaryGains, MissionSpec, Region, TubeTrajectory, ancillary_control
from .widthlp import axis_directions, predicted_width, stack

log = logging.getLogger(__name__)


class InfeasibleMissionError(PlannerError):
    """No certified plan exists from the start state."""


# -- configuration -----------------------------------------------------------------------------


def _region(d) -> Region:
    return Region(d["lower"], d["upper"])


@dataclass(frozen=True)
class RunConfig:
    name: str
    model: str
    theta_true: tuple
    theta_lower: tuple
    theta_upper: tuple
    corridor: dict
    goal: dict
    inputs: dict
    start: tuple
    obstacles: tuple = ()
    t_f: float = 20.0
    commit_period: float = 2.0
    cost_alpha: float = 0.01
    cost_beta: float = 1.0
    add_disturbance: float = 0.02
    meas_noise: float = 0.03
    gains: dict = field(default_factory=lambda: {"surface_slope": 2.0, "switching_gain": 3.0, "boundary_layer": 0.1})
    candidate: dict = field(default_factory=dict)
    planner: dict = field(default_factory=dict)
    score_decay: float = 0.5
    dt: float = 0.01
    dt_sample: float = 0.1
    budget_fraction: float = 1.10
    smid_window: int = 500
    mc_runs: int = 20
    seed: int = 0

    def __post_init__(self):
        if self.model not in MODELS:
            raise ValueError(f"unknown model {self.model!r}; choose from {sorted(MODELS)}")
        box = self.theta_box()
        if not box.contains(np.asarray(self.theta_true, dtype=float)):
            raise ValueError("true parameter lies outside the initial box")
        if self.budget_fraction < 1.0:
            log.warning("budget fraction %.3f is below the baseline cost", self.budget_fraction)
        if self.budget_fraction <= 0:
            raise ValueError("budget fraction must be positive")
        ratio = self.dt_sample / self.dt
        if abs(ratio - round(ratio)) > 1e-9 or round(ratio) < 1:
            raise ValueError("dt_sample must be an integer multiple of dt")
        steps = self.commit_period / self.dt
        if abs(steps - round(steps)) > 1e-9:
            raise ValueError("commit period must be an integer multiple of dt")

    @classmethod
    def from_dict(cls, d: dict) -> "RunConfig":
        d = dict(d)
        for key in ("theta_true", "theta_lower", "theta_upper", "start"):
            if key in d:
                d[key] = tuple(float(v) for v in np.atleast_1d(d[key]))
        d["obstacles"] = tuple(dict(o) for o in d.get("obstacles", ()))
        known = set(cls.__dataclass_fields__)
        extra = set(d) - known
        if extra:
            raise ValueError(f"unknown config keys: {sorted(extra)}")
        return cls(**d)

    @classmethod
    def load(cls, path) -> "RunConfig":
        with open(path, "r", encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("theta_true", "theta_lower", "theta_upper", "start", "obstacles"):
            d[key] = list(d[key])
        return d

    def system(self) -> SystemModel:
        return MODELS[self.model](self.add_disturbance, self.meas_noise)

    def theta_box(self) -> ParameterBox:
        return ParameterBox(self.theta_lower, self.theta_upper)

    def mission(self, budget: float = math.inf) -> MissionSpec:
        return MissionSpec(
            corridor=_region(self.corridor),
            goal=_region(self.goal),
            inputs=_region(self.inputs),
            start=self.start,
            t_f=self.t_f,
            commit_period=self.commit_period,
            obstacles=tuple(_region(o) for o in self.obstacles),
            budget=budget,
            cost_alpha=self.cost_alpha,
            cost_beta=self.cost_beta,
        )

    def ancillary(self) -> AncillaryGains:
        return AncillaryGains(**self.gains)

    def context(self, budget: float = math.inf) -> PlanningContext:
        return PlanningContext(self.mission(budget), self.system(), self.ancillary(), PlannerOptions(**self.planner))

    def gatekeeper(self) -> GatekeeperConfig:
        return GatekeeperConfig(self.score_decay, CandidateConfig(**self.candidate), self.dt_sample)


def case_study_1(**overrides) -> RunConfig:
    """Scalar quadratic drag in a wide planar corridor."""
    base = dict(
        name="case1",
        model="scalar_drag",
        theta_true=(0.4,),
        theta_lower=(0.0,),
        theta_upper=(1.0,),
        corridor={"lower": [-1.0, -2.0, 0.0], "upper": [11.0, 2.0, 2.0]},
        goal={"lower": [7.7, -0.3, 0.7], "upper": [8.3, 0.3, 1.3]},
        inputs={"lower": [-10.0, -10.0, 0.0], "upper": [10.0, 10.0, 20.0]},
        start=(0.0, 0.0, 1.0),
    )
    base.update(overrides)
    return RunConfig.from_dict(base)


def case_study_2(**overrides) -> RunConfig:
    """Linear plus quadratic drag in a narrow corridor."""
    base = dict(
        name="case2",
        model="vector_drag",
        theta_true=(0.15, 0.3),
        theta_lower=(0.0, 0.0),
        theta_upper=(0.5, 0.8),
        candidate={"alpha": 0.01, "gamma": 1.0},
        score_decay=1.5,
        corridor={"lower": [-1.0, -0.5, 0.0], "upper": [11.0, 0.5, 2.0]},
        goal={"lower": [7.7, -0.3, 0.7], "upper": [8.3, 0.3, 1.3]},
        inputs={"lower": [-10.0, -10.0, 0.0], "upper": [10.0, 10.0, 20.0]},
        start=(0.0, 0.0, 1.0),
    )
    base.update(overrides)
    return RunConfig.from_dict(base)


CASES = {"case1": case_study_1, "case2": case_study_2}


# -- reports ------------------------------------------------------------------------------------


@dataclass
class SegmentLog:
    t_k: float
    kind: str
    index: Optional[int]
    horizon: float
    score: float
    delta_w: float
    delta_j: float
    j_exec: float
    j_back: float
    budget: float
    eps_pos: float
    eps_vel: float
    n_candidates: int
    n_valid: int
    n_feasible: int
    backup_accepted: bool
    predicted: list
    actual: list
    rejections: str = ""

    @property
    def width_slack(self) -> float:
        return float(min(p - a for p, a in zip(self.predicted, self.actual))) if self.predicted else math.inf


@dataclass
class RunReport:
    mode: str
    name: str
    seed: int
    total_cost: float
    baseline_cost: float
    budget: float
    realized_cost: float
    initial_lower: list
    initial_upper: list
    final_lower: list
    final_upper: list
    safety_violations: int = 0
    tube_exits: int = 0
    strict_replay: bool = False
    violation: str = ""
    wall_time: float = 0.0
    trajectory: list = field(default_factory=list, repr=False)
    bounds: list = field(default_factory=list, repr=False)
    segments: list = field(default_factory=list, repr=False)

    @property
    def cost_percent(self) -> float:
        return 100.0 * self.total_cost / self.baseline_cost

    @property
    def initial_widths(self) -> np.ndarray:
        return np.asarray(self.initial_upper) - np.asarray(self.initial_lower)

    @property
    def final_widths(self) -> np.ndarray:
        return np.asarray(self.final_upper) - np.asarray(self.final_lower)

    @property
    def width_reduction_percent(self) -> np.ndarray:
        w0 = self.initial_widths
        return np.where(w0 > 0, 100.0 * (w0 - self.final_widths) / np.where(w0 > 0, w0, 1.0), 0.0)

    @property
    def min_width_slack(self) -> float:
        vals = [s.width_slack for s in self.segments]
        return float(min(vals)) if vals else math.inf

    @property
    def n_informative(self) -> int:
        return sum(s.kind == "informative" for s in self.segments)

    @property
    def ok(self) -> bool:
        return self.safety_violations == 0

    def summary(self) -> dict:
        slack = self.min_width_slack
        return {
            "mode": self.mode,
            "name": self.name,
            "seed": self.seed,
            "total_cost": self.total_cost,
            "baseline_cost": self.baseline_cost,
            "cost_percent": self.cost_percent,
            "budget": self.budget,
            "budget_percent": 100.0 * self.budget / self.baseline_cost,
            "realized_cost": self.realized_cost,
            "initial_widths": self.initial_widths.tolist(),
            "final_widths": self.final_widths.tolist(),
            "final_lower": list(self.final_lower),
            "final_upper": list(self.final_upper),
            "width_reduction_percent": self.width_reduction_percent.tolist(),
            "n_commits": len(self.segments),
            "n_informative": self.n_informative,
            "safety_violations": self.safety_violations,
            "tube_exits": self.tube_exits,
            "strict_replay": self.strict_replay,
            "min_width_slack": None if math.isinf(slack) else slack,
            "violation": self.violation,
        }


# -- execution ---------------------------------------------------------------------------------


@dataclass
class _Executor:
    """Tracks committed tubes on the true plant and collects measurements."""

    cfg: RunConfig
    spec: MissionSpec
    model: SystemModel
    gains: AncillaryGains
    sim: SimState
    strict: bool = False
    realized_cost: float = 0.0
    safety_violations: int = 0
    tube_exits: int = 0
    first_violation: str = ""
    rows: list = field(default_factory=list)

    def _check(self, t, x, tube: TubeTrajectory):
        if not self.spec.in_safe_set(x[:3])[0]:
            self.safety_violations += 1
            if not self.first_violation:
                self.first_violation = f"left the safe set at t={t:.3f}, position {np.round(x[:3], 4).tolist()}"
        if not tube.in_tube(x, t):
            self.tube_exits += 1

    def run_segment(self, tube: TubeTrajectory, kind: str, record_every: Optional[float]):
        """Execute ``tube`` from its start to its end; returns the measurement records."""
        cfg = self.cfg
        nom = tube.nominal
        dt = cfg.dt
        n_steps = int(round((nom.t_end - nom.t0) / dt))
        every = int(round(cfg.dt_sample / dt)) if record_every else 0
        goal, a, b = self.spec.goal_point, self.spec.cost_alpha, self.spec.cost_beta
        records = []
        inputs = self.spec.inputs
        for j in range(n_steps):
            t = nom.t0 + j * dt
            if self.strict:
                x = nom.x(t)
                u = nom.input(t)
            else:
                x = self.sim.x
                u = nom.input(t) + ancillary_control(self.gains, x, tube, t, input_box=inputs)
            self.rows.append((t, *x, *u, kind))
            self.realized_cost += dt * float(a * u @ u + b * np.sum((x[:3] - goal) ** 2))
            d = sample_disturbance(self.model, self.sim.rng)
            if every and j % every == 0:
                if self.strict:
                    records.append(self._strict_record(x, t, d))
                else:
                    self.sim.disturbance = d
                    records.append(measure(self.model, self.sim, u))
            if not self.strict:
                self.sim = step(self.model, self.sim, u, dt, disturbance=d)
                self.sim.time = nom.t0 + (j + 1) * dt
                self._check(self.sim.time, self.sim.x, tube)
        if self.strict:
            self.sim.position, self.sim.velocity = nom.state(nom.t_end)
            self.sim.time = nom.t_end
        return records

    def _strict_record(self, x, t, d):
        """Measurement along the replayed plan: planned regressor, true parameter, bounded noise."""
        m = self.model
        b = m.meas_noise_bound
        noise = self.sim.rng.uniform(-b, b, size=3) if b > 0 else np.zeros(3)
        phi = m.regressor_v(x[3:])
        z = phi @ self.sim.true_params + d + noise
        return RegressorRecord(phi=phi, z=z, wbar=m.noise_bound, time=t)

    def finish(self):
        x = self.sim.x if not self.strict else None
        if x is not None:
            u = np.full(3, np.nan)
            self.rows.append((self.sim.time, *x, *u, "end"))


def _executor(cfg: RunConfig, ctx: PlanningContext, seed: int, strict: bool) -> _Executor:
    start = np.asarray(cfg.start, dtype=float)
    sim = SimState(time=0.0, position=start, velocity=np.zeros(3), true_params=np.asarray(cfg.theta_true),
                   rng_seed=seed, rng=np.random.default_rng(seed))
    return _Executor(cfg, ctx.spec, ctx.model, ctx.gains, sim, strict=strict)


def baseline_plan(cfg: RunConfig) -> TubeTrajectory:
    ctx = cfg.context()
    x0 = np.concatenate([np.asarray(cfg.start, dtype=float), np.zeros(3)])
    try:
        return plan_backup(ctx, cfg.theta_box(), x0, 0.0)
    except PlannerError as exc:
        raise InfeasibleMissionError(f"no certified plan from the start: {exc}", exc.diagnostics) from exc


def _cost(spec: MissionSpec, nominal) -> float:
    return trajectory_cost(nominal, spec.goal_point, spec.cost_alpha, spec.cost_beta)


def run_baseline(cfg: RunConfig, seed: Optional[int] = None, plan: Optional[TubeTrajectory] = None) -> RunReport:
    """Fly the initial robust plan without exploration or re-planning."""
    seed = cfg.seed if seed is None else seed
    t0 = time.perf_counter()
    ctx = cfg.context()
    tube = plan if plan is not None else baseline_plan(cfg)
    cost = _cost(ctx.spec, tube.nominal)
    ex = _executor(cfg, ctx, seed, strict=False)
    ex.run_segment(tube, "baseline", None)
    ex.finish()
    box = cfg.theta_box()
    return RunReport(
        mode="baseline",
        name=cfg.name,
        seed=seed,
        total_cost=cost,
        baseline_cost=cost,
        budget=cfg.budget_fraction * cost,
        realized_cost=ex.realized_cost,
        initial_lower=box.lower.tolist(),
        initial_upper=box.upper.tolist(),
        final_lower=box.lower.tolist(),
        final_upper=box.upper.tolist(),
        safety_violations=ex.safety_violations,
        tube_exits=ex.tube_exits,
        violation=ex.first_violation,
        wall_time=time.perf_counter() - t0,
        trajectory=ex.rows,
        bounds=[(0.0, *box.lower, *box.upper)],
    )


def _prediction(theta: ParameterBox, tube: TubeTrajectory, dt_sample: float, wbar: float):
    nom = tube.nominal
    times = sample_times(nom.t0, nom.t_end - nom.t0, dt_sample)
    A = stack(list(sample_regressors(nom, times)), wbar, list(times))
    return [predicted_width(theta, A, d).predicted_width for d in axis_directions(theta.dim)]


def _cycle(ctx, gk, t_k, x_k, theta, ledger, backup):
    try:
        return cycle(ctx, gk, t_k, x_k, theta, ledger, backup)
    except PlannerError as exc:
        if backup is None:
            raise InfeasibleMissionError(f"no certified plan from the start: {exc}", exc.diagnostics) from exc
        raise


def run_dual(cfg: RunConfig, seed: Optional[int] = None, strict: bool = False,
             baseline_cost: Optional[float] = None, abort_on_violation: bool = True) -> RunReport:
    """Full gatekeeper mission: commit, execute, identify, re-plan until ``t_f``."""
    seed = cfg.seed if seed is None else seed
    t_wall = time.perf_counter()
    if baseline_cost is None:
        baseline_cost = _cost(cfg.mission(), baseline_plan(cfg).nominal)
    budget = cfg.budget_fraction * baseline_cost
    ctx = cfg.context(budget)
    gk = cfg.gatekeeper()
    spec, model = ctx.spec, ctx.model
    poly = FeasiblePolytope.from_box(cfg.theta_box(), window=cfg.smid_window)
    box0 = poly.hull
    ex = _executor(cfg, ctx, seed, strict)
    ledger = BudgetLedger(0.0, 0.0, budget)
    backup: Optional[TubeTrajectory] = None
    t_k = spec.t0
    x_k = np.concatenate([np.asarray(cfg.start, dtype=float), np.zeros(3)])
    bounds = [(t_k, *poly.hull.lower, *poly.hull.upper)]
    segments = []
    while t_k < spec.t_f - 1e-9:
        theta = poly.hull
        try:
            res = _cycle(ctx, gk, t_k, x_k, theta, ledger, backup)
            chosen, backup, ledger = res.commit, res.backup, res.ledger
            rejections = ";".join(f"{p.index}:{p.note}" for p in res.pairs if p.note)
            accepted = res.backup_accepted
        except TerminalPhase:
            # remain on the backup until the final time
            tail = backup.restrict(t_k)
            chosen = Commit(t_k, "conservative", None, tail.t_end - t_k, tail)
            rejections, accepted = "terminal", False
        tube = chosen.tube
        predicted = _prediction(theta, tube, cfg.dt_sample, model.noise_bound)
        records = ex.run_segment(tube, chosen.kind, cfg.dt_sample)
        if ex.safety_violations and abort_on_violation:
            break
        poly = smid_update(poly, records)
        actual = poly.hull.widths.tolist()
        seg_cost = _cost(spec, tube.nominal)
        segments.append(SegmentLog(
            t_k=t_k, kind=chosen.kind, index=chosen.index, horizon=chosen.horizon, score=chosen.score,
            delta_w=chosen.delta_w, delta_j=chosen.delta_j, j_exec=ledger.j_exec + seg_cost, j_back=ledger.j_back,
            budget=budget, eps_pos=tube.eps_pos, eps_vel=tube.eps_vel, n_candidates=chosen.n_candidates,
            n_valid=chosen.n_valid, n_feasible=chosen.n_feasible, backup_accepted=accepted,
            predicted=predicted, actual=actual, rejections=rejections,
        ))
        ledger = ledger.executed(seg_cost)
        t_k = tube.t_end
        x_k = tube.nominal.end_state()
        bounds.append((t_k, *poly.hull.lower, *poly.hull.upper))
    ex.finish()
    return RunReport(
        mode="dual",
        name=cfg.name,
        seed=seed,
        total_cost=ledger.j_exec,
        baseline_cost=baseline_cost,
        budget=budget,
        realized_cost=ex.realized_cost,
        initial_lower=box0.lower.tolist(),
        initial_upper=box0.upper.tolist(),
        final_lower=poly.hull.lower.tolist(),
        final_upper=poly.hull.upper.tolist(),
        safety_violations=ex.safety_violations,
        tube_exits=ex.tube_exits,
        strict_replay=strict,
        violation=ex.first_violation,
        wall_time=time.perf_counter() - t_wall,
        trajectory=ex.rows,
        bounds=bounds,
        segments=segments,
    )


def run_monte_carlo(cfg: RunConfig, seed: int, n_runs: Optional[int] = None, strict: bool = False):
    """Dual missions over consecutive seeds sharing one baseline."""
    n_runs = cfg.mc_runs if n_runs is None else n_runs
    base = baseline_plan(cfg)
    cost = _cost(cfg.mission(), base.nominal)
    return [run_dual(cfg, seed + k, strict=strict, baseline_cost=cost) for k in range(n_runs)]


# -- tube certification by batch simulation -------------------------------------------------


@dataclass
class TubeMCResult:
    n_runs: int
    exits: int
    max_pos_ratio: float
    max_vel_ratio: float


def tube_monte_carlo(cfg: RunConfig, n_runs: int, seed: int = 0, tube: Optional[TubeTrajectory] = None,
                     horizon: Optional[float] = None) -> TubeMCResult:
    """Track a certified plan with worst-case parameters and bound-level disturbances.

    True parameters cycle through the corners of the initial box; disturbances
    take values ``+-n_add`` per axis, half of the runs with random signs and
    half pushing the sliding variable outward. Initial errors are drawn from
    the invariant core ``|s| <= phi``, ``|e_p| <= phi / Lam``.
    """
    ctx = cfg.context()
    model, gains, spec = ctx.model, ctx.gains, ctx.spec
    tube = tube if tube is not None else baseline_plan(cfg)
    nom = tube.nominal
    t_end = nom.t_end if horizon is None else min(nom.t_end, nom.t0 + horizon)
    rng = np.random.default_rng(seed)
    box = cfg.theta_box()
    corners = box.corners()
    thetas = corners[np.arange(n_runs) % len(corners)]
    lam, phi = gains.surface_slope, gains.boundary_layer
    e_p = rng.uniform(-phi / lam, phi / lam, size=(n_runs, 3))
    s0 = rng.uniform(-phi, phi, size=(n_runs, 3))
    e_v = s0 - lam * e_p
    x = nom.x(nom.t0) + np.hstack([e_p, e_v])
    adversarial = (np.arange(n_runs) % 2).astype(bool)
    n_add = model.add_disturbance_bound
    dt = cfg.dt
    n_steps = int(round((t_end - nom.t0) / dt))
    exits = np.zeros(n_runs, dtype=bool)
    worst_p = worst_v = 0.0
    g = model.gravity

    def f(xx, u, d):
        phi_v = model.regressor_v(xx[:, 3:])
        acc = g + u + np.einsum("nij,nj->ni", phi_v, thetas) + d
        return np.hstack([xx[:, 3:], acc])

    for j in range(n_steps):
        t = nom.t0 + j * dt
        u = nom.input(t) + ancillary_control(gains, x, tube, t, input_box=spec.inputs)
        p_n, v_n = nom.state(t)
        s = (x[:, 3:] - v_n) + lam * (x[:, :3] - p_n)
        signs = np.where(rng.random((n_runs, 3)) < 0.5, -1.0, 1.0)
        push = np.where(s >= 0, 1.0, -1.0)
        d = n_add * np.where(adversarial[:, None], push, signs)
        x = x + dt / 6.0 * _rk4_increments(f, x, u, d, dt)
        err = np.abs(x - nom.x(t + dt))
        worst_p = max(worst_p, float(err[:, :3].max() / tube.eps_pos))
        worst_v = max(worst_v, float(err[:, 3:].max() / tube.eps_vel))
        exits |= ~tube.in_tube(x, t + dt)
    return TubeMCResult(n_runs, int(exits.sum()), worst_p, worst_v)


def _rk4_increments(f, x, u, d, dt):
    k1 = f(x, u, d)
    k2 = f(x + 0.5 * dt * k1, u, d)
    k3 = f(x + 0.5 * dt * k2, u, d)
    k4 = f(x + dt * k3, u, d)
    return k1 + 2.0 * k2 + 2.0 * k3 + k4


# -- output -----------------------------------------------------------------------------------

TRAJECTORY_COLUMNS = ["t", "px", "py", "pz", "vx", "vy", "vz", "ux", "uy", "uz", "kind"]
COMMIT_COLUMNS = [
    "t_k", "kind", "i_star", "T_i", "score", "delta_w", "delta_J", "J_exec", "J_back", "B",
    "eps_pos", "eps_vel", "n_candidates", "n_valid", "n_feasible", "backup_accepted",
    "width_slack", "rejections",
]


def _fmt(v):
    if isinstance(v, (float, np.floating)):
        return repr(float(v))
    if v is None:
        return ""
    return str(v)


def _write_csv(path, header, rows):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(header)
            for r in rows:
                w.writerow([_fmt(v) for v in r])
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


def bounds_columns(p: int) -> list:
    return ["t_k"] + [f"lower_{i}" for i in range(p)] + [f"upper_{i}" for i in range(p)]


def emit_reports(report: RunReport, out_dir, figures: bool = True) -> dict:
    """Write trajectory, bounds, commits and summary files (plus figures)."""
    try:
        os.makedirs(out_dir, exist_ok=True)
    except OSError as exc:
        raise OSError(f"cannot create output directory {out_dir}: {exc}") from exc
    paths = {k: os.path.join(out_dir, f) for k, f in (
        ("trajectory", "trajectory.csv"), ("bounds", "bounds.csv"),
        ("commits", "commits.csv"), ("summary", "summary.json"), ("timing", "timing.json"))}
    _write_csv(paths["trajectory"], TRAJECTORY_COLUMNS, report.trajectory)
    _write_csv(paths["bounds"], bounds_columns(len(report.initial_lower)), report.bounds)
    rows = [
        (s.t_k, s.kind, s.index, s.horizon, s.score, s.delta_w, s.delta_j, s.j_exec, s.j_back, s.budget,
         s.eps_pos, s.eps_vel, s.n_candidates, s.n_valid, s.n_feasible, int(s.backup_accepted),
         s.width_slack, s.rejections)
        for s in report.segments
    ]
    _write_csv(paths["commits"], COMMIT_COLUMNS, rows)
    _write_json(paths["summary"], report.summary())
    _write_json(paths["timing"], {"wall_time_s": report.wall_time})
    if figures:
        from .plotting import plot_bounds, plot_trajectory

        paths["trajectory_png"] = plot_trajectory(report, os.path.join(out_dir, "trajectory.png"))
        paths["bounds_png"] = plot_bounds(report, os.path.join(out_dir, "bounds.png"))
    return paths


def _write_json(path, obj):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(obj, fh, indent=2, sort_keys=True)
            fh.write("\n")
    except OSError as exc:
        raise OSError(f"cannot write {path}: {exc}") from exc


MC_COLUMNS = ["seed", "total_cost", "cost_percent", "realized_cost", "safety_violations", "tube_exits",
              "n_informative", "min_width_slack"]


def emit_mc(reports, out_dir, figures: bool = True) -> dict:
    os.makedirs(out_dir, exist_ok=True)
    p = len(reports[0].initial_lower)
    header = MC_COLUMNS + [f"reduction_{i}" for i in range(p)]
    rows = [
        (r.seed, r.total_cost, r.cost_percent, r.realized_cost, r.safety_violations, r.tube_exits,
         r.n_informative, r.min_width_slack, *r.width_reduction_percent.tolist())
        for r in reports
    ]
    paths = {"mc": os.path.join(out_dir, "mc.csv"), "summary": os.path.join(out_dir, "summary.json")}
    _write_csv(paths["mc"], header, rows)
    costs = np.array([r.cost_percent for r in reports])
    red = np.array([r.width_reduction_percent for r in reports])
    summary = {
        "mode": "mc",
        "name": reports[0].name,
        "n_runs": len(reports),
        "seeds": [r.seed for r in reports],
        "baseline_cost": reports[0].baseline_cost,
        "budget_percent": 100.0 * reports[0].budget / reports[0].baseline_cost,
        "cost_percent_mean": float(costs.mean()),
        "cost_percent_max": float(costs.max()),
        "runs_below_baseline": int(np.sum(costs < 100.0)),
        "runs_within_budget": int(sum(r.total_cost <= r.budget for r in reports)),
        "width_reduction_percent_mean": red.mean(axis=0).tolist(),
        "width_reduction_percent_min": red.min(axis=0).tolist(),
        "safety_violations": int(sum(r.safety_violations for r in reports)),
        "tube_exits": int(sum(r.tube_exits for r in reports)),
    }
    _write_json(paths["summary"], summary)
    for r in reports:
        emit_reports(r, os.path.join(out_dir, "runs", f"seed_{r.seed}"), figures=False)
    if figures:
        from .plotting import plot_mc

        paths["mc_png"] = plot_mc(reports, os.path.join(out_dir, "mc.png"))
    return paths
