"""Direct-transcription planners for the backup plan and informative candidates.

Both problems optimize the planar net acceleration on a uniform grid
(altitude is held at hover). Positions and velocities are affine in the
decision vector, so corridor, goal and endpoint constraints are linear;
drag enters through the feedforward input and the Gramian. SLSQP from
scipy is the NLP backend, fed with analytic gradients.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np
from scipy.optimize import minimize

from .dynamics import ParameterBox, SystemModel
from .trajectory import NominalTrajectory, segment_costs, simpson_weights, trajectory_cost
from .tubes import (
    AncillaryGains,
    InfeasibleTighteningError,
    MissionSpec,
    TubeTrajectory,
    ViolationReport,
    input_margin,
    speed_limit,
    tighten,
    validate_tube,
    velocity_error_norm,
)

log = logging.getLogger(__name__)

PLANAR = (0, 1)
TOL_DYN = 1e-6
# working-set thresholds: rows with more slack than this start outside the QP
SCREEN_INPUT = 3.0
SCREEN_SPEED = 0.5
SCREEN_STATE = 1.5


class PlannerError(RuntimeError):
    """The NLP did not converge to a feasible point."""

    def __init__(self, message, diagnostics=None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass(frozen=True)
class TranscriptionGrid:
    """Uniform grid with affine maps from planar accelerations to node states.

    Nodes are the ``q + 1`` Simpson points of every segment. For each axis,
    ``v = v0 + Mv @ a`` and ``p = p0 + v0 * t_rel + Mp @ a`` on the nodes,
    with the knot-only versions in ``Kv`` and ``Kp``.
    """

    t0: float
    h: float
    n: int
    q: int = 4

    def __post_init__(self):
        if self.n < 1:
            raise ValueError("grid needs at least one segment")
        h, n, q = self.h, self.n, self.q
        tau = np.linspace(0.0, h, q + 1)
        seg = np.repeat(np.arange(n), q + 1)
        taus = np.tile(tau, n)
        # velocity: h * sum_{m<k} a_m + tau * a_k
        Mv = np.zeros((n * (q + 1), n))
        Mp = np.zeros((n * (q + 1), n))
        for r, (k, t) in enumerate(zip(seg, taus)):
            Mv[r, :k] = h
            Mv[r, k] = t
            m = np.arange(k)
            Mp[r, :k] = h * h * (k - m - 0.5) + h * t
            Mp[r, k] = 0.5 * t * t
        Kv = np.zeros((n + 1, n))
        Kp = np.zeros((n + 1, n))
        for k in range(n + 1):
            m = np.arange(k)
            Kv[k, :k] = h
            Kp[k, :k] = h * h * (k - m - 0.5)
        object.__setattr__(self, "seg", seg)
        # constraint nodes: inputs at both ends and the middle of each segment,
        # positions at knots and midpoints (the back-off covers the gaps)
        qi = np.tile(np.arange(q + 1), n)
        u_mask = (qi == 0) | (qi == q // 2) | (qi == q)
        p_mask = (qi == 0) | (qi == q // 2)
        p_mask[-1] = True
        object.__setattr__(self, "u_nodes", np.flatnonzero(u_mask))
        object.__setattr__(self, "p_nodes", np.flatnonzero(p_mask))
        object.__setattr__(self, "t_rel", seg * h + taus)
        object.__setattr__(self, "Mv", Mv)
        object.__setattr__(self, "Mp", Mp)
        object.__setattr__(self, "Kv", Kv)
        object.__setattr__(self, "Kp", Kp)
        object.__setattr__(self, "w", np.tile(simpson_weights(h, q), n))
        tw = np.full(n + 1, h)
        tw[[0, -1]] = 0.5 * h
        object.__setattr__(self, "trap", tw)

    @property
    def t_end(self) -> float:
        return self.t0 + self.n * self.h

    @property
    def n_nodes(self) -> int:
        return self.n * (self.q + 1)

    def node_states(self, a2, p0, v0):
        """3-D node positions/velocities for planar accelerations ``a2`` of shape (n, 2)."""
        P = np.tile(p0, (self.n_nodes, 1)) + np.outer(self.t_rel, v0)
        V = np.tile(v0, (self.n_nodes, 1))
        P[:, :2] += self.Mp @ a2
        V[:, :2] += self.Mv @ a2
        return P, V

    def knot_states(self, a2, p0, v0):
        t = self.h * np.arange(self.n + 1)
        P = np.tile(p0, (self.n + 1, 1)) + np.outer(t, v0)
        V = np.tile(v0, (self.n + 1, 1))
        P[:, :2] += self.Kp @ a2
        V[:, :2] += self.Kv @ a2
        return P, V

    def trajectory(self, a2, p0, v0, theta_hat, model) -> NominalTrajectory:
        acc = np.zeros((self.n, 3))
        acc[:, :2] = np.asarray(a2).reshape(self.n, 2)
        return NominalTrajectory(self.t0, self.h, p0, v0, acc, theta_hat, model)


@dataclass(frozen=True)
class CandidateConfig:
    rho: float = 1.0
    gamma: float = 5.0
    alpha: float = 0.5
    eta: float = 1e-9
    segments: int = 20

    def __post_init__(self):
        if self.rho <= 0 or self.gamma < 0 or self.alpha < 0 or self.eta < 0:
            raise ValueError("candidate weights must be non-negative (rho positive)")
        if self.segments < 4:
            raise ValueError("candidate grid needs at least 4 segments")


@dataclass(frozen=True)
class PlannerOptions:
    """Solver settings and the small back-offs that keep SLSQP iterates certifiable."""

    quad_nodes: int = 4
    backup_segment: Optional[float] = None  # defaults to commit_period / 4
    state_backoff: float = 0.03
    input_backoff: float = 0.05
    speed_backoff: float = 0.02
    gain_margin: float = 0.05
    speed_ceiling: float = 4.0
    accel_bound: float = 25.0
    maxiter: int = 300
    candidate_maxiter: int = 100
    ftol: float = 1e-9
    feas_tol: float = 1e-6
    enforce_limits_in_candidates: bool = True


@dataclass
class GramianAccumulator:
    G: np.ndarray
    T: float

    def __post_init__(self):
        self.G = np.atleast_2d(np.asarray(self.G, dtype=float))
        self.G = 0.5 * (self.G + self.G.T)

    @property
    def lambda_min(self) -> float:
        return float(np.linalg.eigvalsh(self.G)[0])

    def logdet(self, eta: float = 1e-9) -> float:
        sign, val = np.linalg.slogdet(self.G + eta * np.eye(self.G.shape[0]))
        return val if sign > 0 else -math.inf


def gramian(traj: NominalTrajectory, model: Optional[SystemModel] = None) -> GramianAccumulator:
    """Trapezoidal ``int Phi^T Phi dt`` over the transcription knots."""
    model = traj.model if model is None else model
    phi = model.regressor_v(traj.knot_velocities)
    w = np.full(traj.n_segments + 1, traj.h)
    w[[0, -1]] = 0.5 * traj.h
    G = np.einsum("k,kij,kil->jl", w, phi, phi)
    return GramianAccumulator(G, traj.n_segments * traj.h)


# -- shared pieces -------------------------------------------------------------------------


def _feedforward(model: SystemModel, theta_hat, V, A3):
    """Inputs at nodes and their planar Jacobian w.r.t. node velocity."""
    phi = model.regressor_v(V)
    U = A3 - model.gravity - np.einsum("nij,j->ni", phi, theta_hat)
    dphi = model.regressor_dv(V)  # (n, 3, p, 3)
    D = -np.einsum("nijm,j->nim", dphi, theta_hat)
    return U, D[:, :2, :2]


def _node_acc(grid: TranscriptionGrid, a2):
    A3 = np.zeros((grid.n_nodes, 3))
    A3[:, :2] = a2[grid.seg]
    return A3


def _scatter_seg(grid: TranscriptionGrid, vals):
    """Sum node rows into their segments: (n_nodes, k) -> (n, k)."""
    out = np.zeros((grid.n, vals.shape[1]))
    np.add.at(out, grid.seg, vals)
    return out


def _input_rows(grid: TranscriptionGrid, D):
    """Jacobian ``du_planar/da`` for every node: shape (n_nodes, 2, n*2)."""
    nn, n = grid.n_nodes, grid.n
    J = np.zeros((nn, 2, n, 2))
    # direct: du/da_seg = I
    J[np.arange(nn), 0, grid.seg, 0] = 1.0
    J[np.arange(nn), 1, grid.seg, 1] = 1.0
    # through velocity: D (2x2) times dV/da (Mv per axis)
    J += np.einsum("nim,nk->nikm", D, grid.Mv)
    return J.reshape(nn, 2, n * 2)


class _Problem:
    """Cost and constraint callbacks for one transcription, cached per iterate."""

    def __init__(self, grid, model, theta_hat, p0, v0):
        self.grid = grid
        self.model = model
        self.th = np.atleast_1d(np.asarray(theta_hat, dtype=float))
        self.p0 = np.asarray(p0, dtype=float)
        self.v0 = np.asarray(v0, dtype=float)
        self._key = None

    def eval(self, x):
        if self._key is not None and np.array_equal(x, self._key):
            return
        g = self.grid
        a2 = x.reshape(g.n, 2)
        P, V = g.node_states(a2, self.p0, self.v0)
        U, D = _feedforward(self.model, self.th, V, _node_acc(g, a2))
        self._key = x.copy()
        self.a2, self.P, self.V, self.U, self.D = a2, P, V, U, D
        self._Ju = None

    @property
    def Ju(self):
        if self._Ju is None:
            self._Ju = _input_rows(self.grid, self.D)[self.grid.u_nodes]
        return self._Ju

    def knot_speed_sq(self, x):
        g = self.grid
        _, Vk = g.knot_states(x.reshape(g.n, 2), self.p0, self.v0)
        return np.sum(Vk * Vk, axis=1), Vk

    def speed_jac(self, Vk):
        g = self.grid
        J = 2.0 * Vk[:, None, :2] * g.Kv[:, :, None]  # (n+1, n, 2)
        return J.reshape(g.n + 1, g.n * 2)


def _position_constraints(grid: TranscriptionGrid, p0, v0, lo, hi, nodes=True):
    """Affine ``G x + g >= 0`` rows keeping planar positions inside ``[lo, hi]``."""
    n = grid.n
    if nodes:
        M, t = grid.Mp[grid.p_nodes], grid.t_rel[grid.p_nodes]
    else:
        M, t = grid.Kp[-1:], np.array([grid.n * grid.h])
    rows, offs = [], []
    for ax in PLANAR:
        base = p0[ax] + v0[ax] * t
        R = np.zeros((M.shape[0], n, 2))
        R[:, :, ax] = M
        R = R.reshape(M.shape[0], 2 * n)
        rows += [R, -R]
        offs += [base - lo[ax], hi[ax] - base]
    return np.vstack(rows), np.concatenate(offs)


def _obstacle_constraint(grid, prob: _Problem, obstacles, sharp: float = 40.0):
    """Smooth conservative "outside the box" test per node and obstacle.

    ``softmax_k(f) - log(4)/k <= max(f)``, so a non-negative value certifies that
    some face distance is non-negative.
    """
    if not obstacles:
        return None

    def fun(x):
        prob.eval(x)
        P = prob.P[:, :2]
        out = []
        for ob in obstacles:
            f = np.concatenate([ob.lower[:2] - P, P - ob.upper[:2]], axis=1)
            m = f.max(axis=1, keepdims=True)
            lse = m[:, 0] + np.log(np.exp(sharp * (f - m)).sum(axis=1)) / sharp
            out.append(lse - math.log(4.0) / sharp)
        return np.concatenate(out)

    def jac(x):
        prob.eval(x)
        g = grid
        P = prob.P[:, :2]
        out = []
        for ob in obstacles:
            f = np.concatenate([ob.lower[:2] - P, P - ob.upper[:2]], axis=1)
            e = np.exp(sharp * (f - f.max(axis=1, keepdims=True)))
            s = e / e.sum(axis=1, keepdims=True)
            dP = s[:, 2:] - s[:, :2]  # d lse / d P_planar
            J = dP[:, None, :] * g.Mp[:, :, None]
            out.append(J.reshape(g.n_nodes, 2 * g.n))
        return np.vstack(out)

    return {"type": "ineq", "fun": fun, "jac": jac}


def _input_constraint(prob: _Problem, u_lo, u_hi):
    """Planar input box at the constraint nodes."""

    def fun(x):
        prob.eval(x)
        U = prob.U[prob.grid.u_nodes, :2]
        return np.concatenate([(U - u_lo[:2]).ravel(), (u_hi[:2] - U).ravel()])

    def jac(x):
        prob.eval(x)
        Ju = prob.Ju.reshape(-1, x.size)
        return np.vstack([Ju, -Ju])

    return {"type": "ineq", "fun": fun, "jac": jac, "screen": SCREEN_INPUT}


def _speed_rows(grid: TranscriptionGrid, v0, vmax: float, sides: int = 12):
    """Inscribed polygon of the planar speed disk at every knot, as ``G x + g >= 0``.

    A polygon vertex points along each coordinate axis, so straight flight
    along x can use the full radius. Knot speeds bound the segment speeds
    because velocity is linear in between.
    """
    ang = (2.0 * np.arange(sides) + 1.0) * math.pi / sides
    nrm = np.stack([np.cos(ang), np.sin(ang)], axis=1)  # (s, 2)
    apothem = vmax * math.cos(math.pi / sides)
    K = grid.Kv  # (n+1, n)
    G = -(nrm[:, None, None, :] * K[None, :, :, None]).reshape(sides * (grid.n + 1), 2 * grid.n)
    g = (apothem - nrm @ v0[:2])[:, None].repeat(grid.n + 1, axis=1).ravel()
    return G, g


def _limit_constraints(prob: _Problem, u_lo, u_hi, vmax):
    """Input box and knot speed limit (the latter linear)."""
    G, g = _speed_rows(prob.grid, prob.v0, vmax)
    return [
        _input_constraint(prob, u_lo, u_hi),
        {"type": "ineq", "fun": lambda x: G @ x + g, "jac": lambda x: G, "screen": SCREEN_SPEED * vmax},
    ]


def _violation(constraints, x) -> float:
    viol = 0.0
    for c in constraints:
        val = np.asarray(c["fun"](x))
        if val.size:
            viol = max(viol, float(np.max(-val)) if c["type"] == "ineq" else float(np.max(np.abs(val))))
    return viol


def _screened(c, rows):
    f, j = c["fun"], c["jac"]
    return {"type": c["type"], "fun": lambda x: np.asarray(f(x))[rows], "jac": lambda x: np.atleast_2d(j(x))[rows]}


def _solve(fun, x0, constraints, bounds, opts: PlannerOptions, rounds: int = 4):
    """SLSQP over a working set of inequality rows.

    Rows tagged with a ``screen`` slack threshold enter only once their slack
    drops below it; after each solve the full set is checked and the working
    set grows until no omitted row is violated.
    """
    active = [None] * len(constraints)
    x_start = np.asarray(x0, dtype=float)
    for c_i, c in enumerate(constraints):
        if "screen" in c:
            active[c_i] = np.asarray(c["fun"](x_start)) < c["screen"]
    for _ in range(rounds):
        work = []
        for c, rows in zip(constraints, active):
            if rows is None:
                work.append({k: c[k] for k in ("type", "fun", "jac")})
            elif rows.any():
                work.append(_screened(c, np.flatnonzero(rows)))
        with warnings.catch_warnings():
            # SLSQP clips line-search steps back into the bounds and says so; harmless here
            warnings.filterwarnings("ignore", "Values in x were outside bounds", RuntimeWarning)
            res = minimize(fun, x_start, jac=True, method="SLSQP", bounds=bounds, constraints=work,
                           options={"maxiter": opts.maxiter, "ftol": opts.ftol})
        grown = False
        for c_i, c in enumerate(constraints):
            if active[c_i] is None:
                continue
            val = np.asarray(c["fun"](res.x))
            new = (val < c["screen"]) & ~active[c_i]
            if np.any(new & (val < 0.0)):
                grown = True
            active[c_i] |= new
        if not grown:
            break
        x_start = res.x
    return res, _violation(constraints, res.x)


# -- backup plan -----------------------------------------------------------------------------


@dataclass(frozen=True)
class PlanningContext:
    """Everything fixed across planner calls within one mission."""

    spec: MissionSpec
    model: SystemModel
    gains: AncillaryGains
    options: PlannerOptions = field(default_factory=PlannerOptions)

    @property
    def backup_step(self) -> float:
        return self.options.backup_segment or self.spec.commit_period / 4.0

    def envelope(self, theta: ParameterBox, theta_hat):
        """Speed limit and tightened sets consistent with the tube built for ``theta``."""
        g = self.gains
        vmax = min(speed_limit(self.model, theta, g, self.options.gain_margin), self.options.speed_ceiling)
        if not vmax > 0:
            raise InfeasibleTighteningError("no admissible speed: gain cannot dominate the parametric mismatch")
        eps_pos = g.boundary_layer / g.surface_slope
        eps_vel = 2.0 * g.boundary_layer
        cap = vmax + velocity_error_norm(eps_vel)
        margin = input_margin(self.model, g, theta_hat, cap, eps_vel)
        sets = tighten(self.spec, eps_pos, eps_vel, margin)
        return vmax, sets


def backup_grid(ctx: PlanningContext, t_k: float) -> TranscriptionGrid:
    h = ctx.backup_step
    n = int(round((ctx.spec.t_f - t_k) / h))
    if n < 1 or abs(t_k + n * h - ctx.spec.t_f) > 1e-9:
        raise ValueError(f"start time {t_k} is not on the backup grid")
    return TranscriptionGrid(t_k, h, n, ctx.options.quad_nodes)


def _initial_guess(grid: TranscriptionGrid, p0, target, vmax, accel: float = 1.0):
    """Accelerate, cruise and brake along the straight line to ``target``."""
    d = np.asarray(target[:2] - p0[:2], dtype=float)
    dist = float(np.linalg.norm(d))
    a2 = np.zeros((grid.n, 2))
    if dist < 1e-9:
        return a2.ravel()
    u = d / dist
    v = min(0.7 * vmax, 2.0 * dist / (grid.n * grid.h))
    k = int(min(max(1, round(v / accel / grid.h)), max(1, grid.n // 4)))
    a = v / (k * grid.h)
    k_c = max(0, int(round((dist - v * k * grid.h) / v / grid.h)))
    a2[:k] = a * u
    stop = min(k + k_c, grid.n - k)
    a2[stop:stop + k] = -a * u
    return a2.ravel()


def plan_backup(ctx: PlanningContext, theta: ParameterBox, x0, t_k: float,
                warm: Optional[NominalTrajectory] = None) -> TubeTrajectory:
    """Cost-optimal robust plan from ``x0`` at ``t_k`` to the goal at ``t_f``."""
    spec, model, opts = ctx.spec, ctx.model, ctx.options
    th = theta.center
    vmax, sets = ctx.envelope(theta, th)
    grid = backup_grid(ctx, t_k)
    x0 = np.asarray(x0, dtype=float)
    p0, v0 = x0[:3], x0[3:]
    prob = _Problem(grid, model, th, p0, v0)
    goal = spec.goal_point
    alpha, beta = spec.cost_alpha, spec.cost_beta
    w = grid.w

    def cost(x):
        prob.eval(x)
        dp = prob.P - goal
        U = prob.U
        J = float(w @ (alpha * np.sum(U * U, axis=1) + beta * np.sum(dp * dp, axis=1)))
        gu = 2.0 * alpha * w[:, None] * U[:, :2]
        gp = 2.0 * beta * w[:, None] * dp[:, :2]
        grad = _scatter_seg(grid, gu)
        grad += grid.Mv.T @ np.einsum("ni,nim->nm", gu, prob.D)
        grad += grid.Mp.T @ gp
        return J, grad.ravel()

    sb, ub = opts.state_backoff, opts.input_backoff
    Gc, gc = _position_constraints(grid, p0, v0, sets.corridor.lower + sb, sets.corridor.upper - sb)
    Gg, gg = _position_constraints(grid, p0, v0, sets.goal.lower + sb, sets.goal.upper - sb, nodes=False)
    cons = [
        {"type": "ineq", "fun": lambda x, G=Gc, o=gc: G @ x + o, "jac": lambda x, G=Gc: G, "screen": SCREEN_STATE},
        {"type": "ineq", "fun": lambda x, G=Gg, o=gg: G @ x + o, "jac": lambda x, G=Gg: G},
    ]
    cons += _limit_constraints(prob, sets.inputs.lower + ub, sets.inputs.upper - ub, vmax * (1.0 - opts.speed_backoff))
    obs = _obstacle_constraint(grid, prob, [o.inflated(sb) for o in sets.obstacles])
    if obs is not None:
        cons.append(obs)
    bounds = [(-opts.accel_bound, opts.accel_bound)] * (2 * grid.n)

    starts = []
    if warm is not None and abs(warm.h - grid.h) < 1e-12 and warm.n_segments >= grid.n:
        try:
            starts.append(warm.restrict(t_k).acc[: grid.n, :2].ravel())
        except ValueError:
            pass
    starts.append(_initial_guess(grid, p0, goal, vmax))
    starts.append(np.zeros(2 * grid.n))

    best = None
    for x_init in starts:
        res, viol = _solve(cost, x_init, cons, bounds, opts)
        log.debug("backup t=%.2f status=%s nit=%s cost=%.6g viol=%.2e", t_k, res.status, res.nit, res.fun, viol)
        if viol <= opts.feas_tol and np.all(np.isfinite(res.x)):
            traj = grid.trajectory(res.x, p0, v0, th, model)
            tube = validate_tube(traj, theta, spec, ctx.gains, require_goal=True)
            if isinstance(tube, TubeTrajectory):
                if best is None or res.fun < best[0]:
                    best = (res.fun, tube)
                if res.status == 0:
                    break
            else:
                log.debug("backup iterate failed certification: %s", tube)
    if best is None:
        raise PlannerError(
            f"backup planner found no certified plan from t={t_k:.3f}",
            {"status": int(res.status), "message": res.message, "violation": viol, "nit": int(res.nit)},
        )
    return best[1]


def accept_backup(new: Optional[TubeTrajectory], previous: Optional[TubeTrajectory], spec: MissionSpec,
                  t_k: float, theta: ParameterBox, gains: AncillaryGains, tol: float = 1e-9):
    """Monotone acceptance: keep whichever of the fresh plan and the old remainder is cheaper.

    Returns ``(tube, accepted_new)``. The old remainder is re-certified under
    ``theta``; that never fails when ``theta`` only shrank.
    """
    if previous is None:
        if new is None:
            raise PlannerError("no backup available")
        return new, True
    old = validate_tube(previous.nominal.restrict(t_k), theta, spec, gains, require_goal=True)
    if not isinstance(old, TubeTrajectory):
        if new is None:
            raise PlannerError(f"previous backup lost its certificate: {old}")
        return new, True
    if new is None:
        return old, False
    c_new = trajectory_cost(new.nominal, spec.goal_point, spec.cost_alpha, spec.cost_beta)
    c_old = trajectory_cost(old.nominal, spec.goal_point, spec.cost_alpha, spec.cost_beta)
    if c_new <= c_old + tol:
        return new, True
    return old, False


# -- informative candidate --------------------------------------------------------------------


def candidate_grid(ctx: PlanningContext, t_k: float, horizon: float, min_segments: int) -> TranscriptionGrid:
    """Candidate grid that refines the backup grid, so the conservative plan is representable."""
    hb = ctx.backup_step
    nb = int(round(horizon / hb))
    if nb >= 1 and abs(nb * hb - horizon) <= 1e-9:
        n = nb * max(1, math.ceil(min_segments / nb))
    else:
        n = min_segments
    return TranscriptionGrid(t_k, horizon / n, n, ctx.options.quad_nodes)


def _excitation_seed(grid: TranscriptionGrid, scale: float, seed: int):
    rng = np.random.default_rng(seed)
    a = rng.standard_normal((grid.n, 2))
    a -= a.mean(axis=0)
    return scale * a


def _endpoint_rows(grid: TranscriptionGrid, p0, v0, target):
    """Linear equalities ``E x = e`` pinning the planar end position and velocity."""
    n = grid.n
    T = n * grid.h
    rows, rhs = [], []
    for K, base, tgt in ((grid.Kp[-1], p0 + v0 * T, target[:3]), (grid.Kv[-1], v0, target[3:])):
        for ax in PLANAR:
            r = np.zeros((n, 2))
            r[:, ax] = K
            rows.append(r.ravel())
            rhs.append(tgt[ax] - base[ax])
    return np.array(rows), np.array(rhs)


def _project_affine(x, E, e):
    """Least-change correction so ``E x = e`` holds to rounding."""
    r = e - E @ x
    return x + E.T @ np.linalg.solve(E @ E.T, r)


def plan_informative(ctx: PlanningContext, theta: ParameterBox, x0, t_k: float, horizon: float,
                     rejoin_state, cfg: CandidateConfig, guess: Optional[NominalTrajectory] = None,
                     seed: int = 0) -> Optional[NominalTrajectory]:
    """Excitation-seeking plan that rejoins ``rejoin_state`` at ``t_k + horizon``.

    Returns ``None`` when the excitation floor cannot be met.
    """
    spec, model, opts = ctx.spec, ctx.model, ctx.options
    if horizon <= 0 or t_k + horizon > spec.t_f + 1e-9:
        raise ValueError("horizon must fit inside the mission")
    th = theta.center
    grid = candidate_grid(ctx, t_k, horizon, cfg.segments)
    x0 = np.asarray(x0, dtype=float)
    rejoin = np.asarray(rejoin_state, dtype=float)
    p0, v0 = x0[:3], x0[3:]
    if abs(rejoin[2] - p0[2]) > 1e-9 or abs(rejoin[5] - v0[2]) > 1e-9:
        raise ValueError("rejoin state leaves the hover altitude")
    prob = _Problem(grid, model, th, p0, v0)
    pdim = theta.dim
    w = grid.w
    trap = grid.trap
    g_planar = model.gravity
    rho, gam, eta = cfg.rho, cfg.gamma, cfg.eta

    cache = {}

    def knot_gram(x):
        key = x.tobytes()
        if key not in cache:
            _, Vk = grid.knot_states(x.reshape(grid.n, 2), p0, v0)
            phi = model.regressor_v(Vk)
            G = np.einsum("k,kij,kil->jl", trap, phi, phi)
            cache.clear()
            cache[key] = (G, phi, model.regressor_dv(Vk))
        return cache[key]

    def cost(x):
        prob.eval(x)
        E = prob.U + g_planar  # planar effort (altitude channel is pure hover thrust)
        J = rho * float(w @ np.sum(E * E, axis=1))
        ge = 2.0 * rho * w[:, None] * E[:, :2]
        grad = _scatter_seg(grid, ge) + grid.Mv.T @ np.einsum("ni,nim->nm", ge, prob.D)
        if gam > 0:
            G, phi, dphi = knot_gram(x)
            Gi = np.linalg.inv(G + eta * np.eye(pdim))
            sign, ld = np.linalg.slogdet(G + eta * np.eye(pdim))
            J -= gam * ld
            # d logdet / d v_k = 2 trap_k * sum_ijl Gi_jl Phi_ij dPhi_il/dv
            gv = 2.0 * trap[:, None] * np.einsum("kij,jl,kilm->km", phi, Gi, dphi)
            grad -= gam * (grid.Kv.T @ gv[:, :2])
        return J, grad.ravel()

    def lam_fun(x):
        G, _, _ = knot_gram(x)
        return np.array([np.linalg.eigvalsh(G)[0] - cfg.alpha])

    def lam_jac(x):
        G, phi, dphi = knot_gram(x)
        vals, vecs = np.linalg.eigh(G)
        u = vecs[:, 0]
        pu = phi @ u  # (k, 3)
        dpu = np.einsum("kilm,l->kim", dphi, u)
        gv = 2.0 * trap[:, None] * np.einsum("ki,kim->km", pu, dpu)
        return (grid.Kv.T @ gv[:, :2]).ravel()[None, :]

    Eq, eq = _endpoint_rows(grid, p0, v0, rejoin)
    cons = [{"type": "eq", "fun": lambda x: Eq @ x - eq, "jac": lambda x: Eq}]
    if cfg.alpha > 0:
        cons.append({"type": "ineq", "fun": lam_fun, "jac": lam_jac})
    if opts.enforce_limits_in_candidates:
        vmax, sets = ctx.envelope(theta, th)
        ub = opts.input_backoff
        cons.extend(_limit_constraints(prob, sets.inputs.lower + ub, sets.inputs.upper - ub,
                                       vmax * (1.0 - opts.speed_backoff)))
    bounds = [(-opts.accel_bound, opts.accel_bound)] * (2 * grid.n)

    if guess is not None:
        t_mid = grid.t0 + (np.arange(grid.n) + 0.5) * grid.h
        base = guess.acc[guess.segment_of(t_mid), :2]
    else:
        base = np.zeros((grid.n, 2))
    starts = [base]
    if gam > 0 or cfg.alpha > 0:
        starts = [base, base + _excitation_seed(grid, 0.5, seed)]
    cand_opts = replace(opts, maxiter=opts.candidate_maxiter)

    out = None
    for x_init in starts:
        x_init = _project_affine(x_init.ravel(), Eq, eq)
        res, viol = _solve(cost, x_init, cons, bounds, cand_opts)
        log.debug("informative t=%.2f T=%.2f status=%s nit=%s viol=%.2e", t_k, horizon, res.status, res.nit, viol)
        if not np.all(np.isfinite(res.x)):
            raise PlannerError("informative planner diverged", {"status": int(res.status), "message": res.message})
        if viol <= opts.feas_tol:
            out = res.x
            break
    if out is None:
        return None
    x = _project_affine(out, Eq, eq)
    traj = grid.trajectory(x, p0, v0, th, model)
    if cfg.alpha > 0 and gramian(traj).lambda_min < cfg.alpha - 1e-9:
        return None
    return traj


__all__ = [
    "CandidateConfig",
    "GramianAccumulator",
    "PlannerError",
    "PlannerOptions",
    "PlanningContext",
    "TOL_DYN",
    "TranscriptionGrid",
    "accept_backup",
    "backup_grid",
    "candidate_grid",
    "gramian",
    "plan_backup",
    "plan_informative",
]
