"""Boundary-layer sliding-mode tubes and constraint tightening.

The ancillary law cancels the nominal drag difference and drives the sliding
variable ``s = e_v + Lam * e_p`` into the boundary layer ``|s_i| <= phi``.
Whenever the switching gain dominates the parametric mismatch plus the
disturbance bound, the set ``{|s_i| <= phi, |e_p,i| <= phi / Lam}`` is forward
invariant, giving per-axis radii ``eps_pos = phi / Lam`` and
``eps_vel = 2 phi``. Uncertainty enters through the gain-dominance check,
which caps the admissible speed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace
from typing import Optional, Sequence, Union

import numpy as np

from .dynamics import ParameterBox, SystemModel
from .trajectory import NominalTrajectory

SQRT3 = math.sqrt(3.0)


class InvalidGainsError(ValueError):
    """Switching gain does not dominate mismatch plus disturbance."""


class InfeasibleTighteningError(ValueError):
    """Erosion leaves an empty corridor, goal or input set."""


@dataclass(frozen=True)
class Region:
    """Axis-aligned box in R^n."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        object.__setattr__(self, "lower", np.asarray(self.lower, dtype=float).copy())
        object.__setattr__(self, "upper", np.asarray(self.upper, dtype=float).copy())
        if self.lower.shape != self.upper.shape:
            raise ValueError("region bounds disagree in shape")

    @property
    def empty(self) -> bool:
        return bool(np.any(self.lower > self.upper))

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    @property
    def half_widths(self) -> np.ndarray:
        return 0.5 * (self.upper - self.lower)

    def eroded(self, r) -> "Region":
        return Region(self.lower + r, self.upper - r)

    def inflated(self, r) -> "Region":
        return Region(self.lower - r, self.upper + r)

    def contains(self, pts, tol: float = 0.0) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts >= self.lower - tol) & (pts <= self.upper + tol), axis=-1)

    def interior_contains(self, pts) -> np.ndarray:
        pts = np.asarray(pts, dtype=float)
        return np.all((pts > self.lower) & (pts < self.upper), axis=-1)

    def to_dict(self):
        return {"lower": self.lower.tolist(), "upper": self.upper.tolist()}


@dataclass(frozen=True)
class MissionSpec:
    """Safe corridor minus obstacles, input box, goal, budget and timing."""

    corridor: Region
    goal: Region
    inputs: Region
    start: np.ndarray
    t_f: float
    commit_period: float = 2.0
    obstacles: tuple = ()
    budget: float = math.inf
    t0: float = 0.0
    cost_alpha: float = 0.01
    cost_beta: float = 1.0

    def __post_init__(self):
        object.__setattr__(self, "start", np.asarray(self.start, dtype=float).reshape(3))
        object.__setattr__(self, "obstacles", tuple(self.obstacles))
        if not np.all(self.corridor.contains(np.array([self.goal.lower, self.goal.upper]))):
            raise ValueError("goal set must lie inside the corridor")
        if not self.commit_period > 0:
            raise ValueError("commit period must be positive")
        if not self.budget > 0:
            raise ValueError("budget must be positive")
        if not self.t_f > self.t0:
            raise ValueError("final time must exceed the start time")

    @property
    def goal_point(self) -> np.ndarray:
        return self.goal.center

    def with_budget(self, budget: float) -> "MissionSpec":
        return replace(self, budget=float(budget))

    def in_safe_set(self, pts) -> np.ndarray:
        pts = np.atleast_2d(np.asarray(pts, dtype=float))
        ok = self.corridor.contains(pts)
        for obs in self.obstacles:
            ok &= ~obs.interior_contains(pts)
        return ok


@dataclass(frozen=True)
class AncillaryGains:
    surface_slope: float = 2.0
    switching_gain: float = 3.0
    boundary_layer: float = 0.1

    def __post_init__(self):
        if not (self.surface_slope > 0 and self.switching_gain > 0 and self.boundary_layer > 0):
            raise ValueError("ancillary gains must be positive")


@dataclass(frozen=True)
class TightenedSets:
    corridor: Region
    obstacles: tuple
    goal: Region
    inputs: Region

    def state_ok(self, pts) -> np.ndarray:
        pts = np.atleast_2d(pts)
        ok = self.corridor.contains(pts, tol=1e-12)
        for obs in self.obstacles:
            ok &= ~obs.interior_contains(pts)
        return ok


def parameter_deviation(theta: ParameterBox, theta_hat=None) -> np.ndarray:
    """Per-axis bound on ``|th - th_hat|`` over ``th`` in the box.

    With no estimate (or one inside the box) this is the box width. An
    estimate left behind by an earlier, larger box may sit outside the
    current one; the distance to the far face then takes over.
    """
    dev = theta.widths
    if theta_hat is not None:
        th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
        dev = np.maximum(dev, np.maximum(theta.upper - th, th - theta.lower))
    return dev


def mismatch_bound(model: SystemModel, theta: ParameterBox, speed_cap: float, theta_hat=None) -> float:
    """Worst per-axis drag mismatch ``|Phi(v)(th - th_hat)|_inf`` over the box and speed ball."""
    if speed_cap < 0:
        raise ValueError("speed cap must be non-negative")
    return float(parameter_deviation(theta, theta_hat) @ model.column_bound(float(speed_cap)))


def tube_radius(gains: AncillaryGains, delta: float, n_add: float):
    """Per-axis ``(eps_pos, eps_vel)`` of the boundary-layer tube."""
    if not gains.switching_gain > delta + n_add:
        raise InvalidGainsError(
            f"switching gain {gains.switching_gain} does not dominate mismatch {delta:.4g} + disturbance {n_add:.4g}"
        )
    phi = gains.boundary_layer
    return phi / gains.surface_slope, 2.0 * phi


def velocity_error_norm(eps_vel: float) -> float:
    """Euclidean bound on the 3-D velocity error inside the tube."""
    return SQRT3 * eps_vel


def input_margin(model: SystemModel, gains: AncillaryGains, theta_hat, speed_cap: float, eps_vel: float) -> float:
    """Per-axis bound on the ancillary correction (the input reserve)."""
    lip = np.abs(np.atleast_1d(theta_hat)) @ model.column_lipschitz(float(speed_cap))
    return gains.switching_gain + gains.surface_slope * eps_vel + float(lip) * velocity_error_norm(eps_vel)


def speed_limit(model: SystemModel, theta: ParameterBox, gains: AncillaryGains, gain_margin: float = 0.05,
                cap_max: float = 100.0) -> float:
    """Largest nominal speed whose tube passes gain dominance with a relative margin."""
    eps_vel = 2.0 * gains.boundary_layer
    budget = (1.0 - gain_margin) * gains.switching_gain - model.add_disturbance_bound
    if budget <= 0:
        return -math.inf
    if mismatch_bound(model, theta, cap_max) <= budget:
        cap = cap_max
    else:
        lo, hi = 0.0, cap_max
        if mismatch_bound(model, theta, 0.0) > budget:
            return -math.inf
        for _ in range(80):
            mid = 0.5 * (lo + hi)
            if mismatch_bound(model, theta, mid) <= budget:
                lo = mid
            else:
                hi = mid
        cap = lo
    return cap - velocity_error_norm(eps_vel)


def _separating_axis(obs: Region, corridor: Region, a, b) -> Optional[int]:
    """Axis along which ``obs`` spans the whole corridor cross-section between ``a`` and ``b``."""
    covers = (obs.lower <= corridor.lower) & (obs.upper >= corridor.upper)
    for i in range(obs.lower.size):
        if np.all(np.delete(covers, i)):
            lo, hi = sorted((a[i], b[i]))
            if lo <= obs.lower[i] and obs.upper[i] <= hi:
                return i
    return None


def tighten(spec: MissionSpec, eps_pos: float, eps_vel: float, margin: float) -> TightenedSets:
    """Erode corridor and goal by ``eps_pos``, inflate obstacles, shrink inputs by ``margin``."""
    corridor = spec.corridor.eroded(eps_pos)
    goal = spec.goal.eroded(eps_pos)
    inputs = spec.inputs.eroded(margin)
    if corridor.empty:
        raise InfeasibleTighteningError(f"corridor is empty after erosion by {eps_pos}")
    if goal.empty:
        raise InfeasibleTighteningError(f"goal set is empty after erosion by {eps_pos}")
    if inputs.empty:
        raise InfeasibleTighteningError(f"input set is empty after removing reserve {margin}")
    obstacles = tuple(o.inflated(eps_pos) for o in spec.obstacles)
    for obs in obstacles:
        axis = _separating_axis(obs, corridor, spec.start, spec.goal.center)
        if axis is not None:
            raise InfeasibleTighteningError(f"inflated obstacle {obs.to_dict()} cuts the corridor along axis {axis}")
    return TightenedSets(corridor=corridor, obstacles=obstacles, goal=goal, inputs=inputs)


@dataclass(frozen=True)
class TubeTrajectory:
    """Certified nominal plan with constant per-axis cross-section radii."""

    nominal: NominalTrajectory
    eps_pos: float
    eps_vel: float
    speed_cap: float
    input_margin: float
    theta_box: ParameterBox
    tightened: Optional[TightenedSets] = None

    @property
    def t_start(self) -> float:
        return self.nominal.t0

    @property
    def t_end(self) -> float:
        return self.nominal.t_end

    @property
    def theta_hat(self) -> np.ndarray:
        return self.nominal.theta_hat

    def radii(self) -> np.ndarray:
        return np.array([self.eps_pos] * 3 + [self.eps_vel] * 3)

    def in_tube(self, x, t, rel_tol: float = 1e-6) -> np.ndarray:
        err = np.abs(np.asarray(x, dtype=float) - self.nominal.x(t))
        return np.all(err <= self.radii() * (1.0 + rel_tol), axis=-1)

    def restrict(self, t_a: float, t_b: Optional[float] = None) -> "TubeTrajectory":
        return replace(self, nominal=self.nominal.restrict(t_a, t_b))


@dataclass(frozen=True)
class ViolationReport:
    time: float
    constraint: str
    detail: str = ""

    def __bool__(self):
        return False


def ancillary_control(gains: AncillaryGains, x, ref: TubeTrajectory, t: float, input_box: Optional[Region] = None):
    """Sliding-mode correction added to the feedforward ``p_u(t)``; broadcasts over states."""
    x = np.asarray(x, dtype=float)
    nom = ref.nominal
    p_n, v_n = nom.state(t)
    e_p = x[..., :3] - p_n
    e_v = x[..., 3:] - v_n
    lam, k, phi = gains.surface_slope, gains.switching_gain, gains.boundary_layer
    s = e_v + lam * e_p
    th = nom.theta_hat
    model = nom.model
    drag_gap = np.einsum("...ij,j->...i", model.regressor_v(x[..., 3:]) - model.regressor_v(v_n), th)
    corr = -drag_gap - lam * e_v - k * np.clip(s / phi, -1.0, 1.0)
    if input_box is not None:
        u_n = nom.input(t)
        corr = np.clip(u_n + corr, input_box.lower, input_box.upper) - u_n
    return corr


def _dense_check_times(nom: NominalTrajectory, resolution: float = 0.005) -> np.ndarray:
    vmax = max(nom.speed_max(), 1e-6)
    per_seg = int(min(max(8, math.ceil(nom.h * vmax / resolution)), 4096))
    # knots and midpoints are always included because per_seg >= 8 is even
    per_seg += per_seg % 2
    return nom.dense_times(per_seg), per_seg


def validate_tube(nominal: NominalTrajectory, theta: ParameterBox, spec: MissionSpec, gains: AncillaryGains,
                  require_goal: Optional[bool] = None) -> Union[TubeTrajectory, ViolationReport]:
    """Certify a tube around ``nominal`` or report the first violated constraint."""
    model = nominal.model
    n_add = model.add_disturbance_bound
    v_nom = nominal.speed_max()
    cap = v_nom
    eps_pos = eps_vel = 0.0
    th_hat = nominal.theta_hat
    for _ in range(5):
        delta = mismatch_bound(model, theta, cap, th_hat)
        try:
            eps_pos, eps_vel = tube_radius(gains, delta, n_add)
        except InvalidGainsError as exc:
            return ViolationReport(nominal.t0, "gain_dominance", str(exc))
        new_cap = v_nom + velocity_error_norm(eps_vel)
        if abs(new_cap - cap) <= 1e-12:
            break
        cap = new_cap
    delta = mismatch_bound(model, theta, cap, th_hat)
    if not gains.switching_gain > delta + n_add:
        return ViolationReport(nominal.t0, "gain_dominance", f"mismatch {delta:.4g} at speed cap {cap:.4g}")
    margin = input_margin(model, gains, nominal.theta_hat, cap, eps_vel)
    try:
        sets = tighten(spec, eps_pos, eps_vel, margin)
    except InfeasibleTighteningError as exc:
        return ViolationReport(nominal.t0, "tightening", str(exc))

    times, per_seg = _dense_check_times(nominal)
    p, v = nominal.state(times)
    # Obstacle checks between dense samples: inflate by the worst inter-sample travel.
    step = nominal.h / per_seg
    slack = 0.5 * step * max(nominal.speed_max(), 0.0)
    bad = ~sets.corridor.contains(p, tol=1e-9)
    for obs in sets.obstacles:
        bad |= obs.inflated(slack).interior_contains(p)
    if np.any(bad):
        i = int(np.argmax(bad))
        return ViolationReport(float(times[i]), "state", f"nominal position {p[i]} leaves the tightened safe set")

    # Inputs: both one-sided limits at every knot.
    N = nominal.n_segments
    tau = np.linspace(0.0, nominal.h, 9)
    idx = np.repeat(np.arange(N)[:, None], tau.size, axis=1)
    _, vs, a = nominal.eval_segments(idx, np.broadcast_to(tau, idx.shape))
    u = nominal.input_from(vs, a)
    ubad = ~sets.inputs.contains(u, tol=1e-9)
    if np.any(ubad):
        j, q = np.argwhere(ubad)[0]
        return ViolationReport(float(nominal.t0 + j * nominal.h + tau[q]), "input",
                               f"nominal input {u[j, q]} outside the tightened input set")

    if require_goal is None:
        require_goal = abs(nominal.t_end - spec.t_f) <= 1e-9
    if require_goal and not sets.goal.contains(nominal.knot_positions[-1], tol=1e-9):
        return ViolationReport(nominal.t_end, "goal", "terminal position outside the tightened goal")

    return TubeTrajectory(
        nominal=nominal,
        eps_pos=eps_pos,
        eps_vel=eps_vel,
        speed_cap=cap,
        input_margin=margin,
        theta_box=theta,
        tightened=sets,
    )
