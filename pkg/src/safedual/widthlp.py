"""Pre-execution width prediction from planned regressors.

Planned regressors are stacked into ``A`` (one row per output channel per
sample). Parameters indistinguishable from the truth under the noise bound
form the error set ``E = {e : |A e|_inf <= 2 wbar}``; its support function is
evaluated through the dual LP ``2 wbar * min |lam|_1  s.t.  A^T lam = d``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np
from scipy.optimize import linprog

from .dynamics import ParameterBox, box_width

LP_TOL = 1e-10


class SolverError(RuntimeError):
    """The LP backend stopped without a trustworthy status."""


@dataclass
class LpProblem:
    """``min/max c^T x`` subject to ``A_ub x <= b_ub``, ``A_eq x = b_eq`` and bounds."""

    c: np.ndarray
    A_ub: Optional[np.ndarray] = None
    b_ub: Optional[np.ndarray] = None
    A_eq: Optional[np.ndarray] = None
    b_eq: Optional[np.ndarray] = None
    bounds: Optional[Sequence] = None
    maximize: bool = False

    def __post_init__(self):
        self.c = np.atleast_1d(np.asarray(self.c, dtype=float))
        n = self.c.size
        for a_name, b_name in (("A_ub", "b_ub"), ("A_eq", "b_eq")):
            A, b = getattr(self, a_name), getattr(self, b_name)
            if (A is None) != (b is None):
                raise ValueError(f"{a_name} and {b_name} must be given together")
            if A is None:
                continue
            A = np.atleast_2d(np.asarray(A, dtype=float))
            b = np.atleast_1d(np.asarray(b, dtype=float))
            if A.shape != (b.size, n):
                raise ValueError(f"{a_name} has shape {A.shape}, expected ({b.size}, {n})")
            setattr(self, a_name, A)
            setattr(self, b_name, b)

    @property
    def n(self) -> int:
        return self.c.size


@dataclass
class LpResult:
    status: str  # "optimal" | "infeasible" | "unbounded"
    value: float = math.nan
    x: Optional[np.ndarray] = None

    @property
    def optimal(self) -> bool:
        return self.status == "optimal"


def _linprog(prob: LpProblem, c):
    bounds = prob.bounds if prob.bounds is not None else [(None, None)] * prob.n
    return linprog(
        c,
        A_ub=prob.A_ub,
        b_ub=prob.b_ub,
        A_eq=prob.A_eq,
        b_eq=prob.b_eq,
        bounds=bounds,
        method="highs",
        options={
            "primal_feasibility_tolerance": LP_TOL,
            "dual_feasibility_tolerance": LP_TOL,
            "presolve": True,
        },
    )


def solve_lp(prob: LpProblem) -> LpResult:
    """Solve a dense LP with HiGHS and classify the outcome exactly."""
    sign = -1.0 if prob.maximize else 1.0
    res = _linprog(prob, sign * prob.c)
    if res.status == 0:
        return LpResult("optimal", float(sign * res.fun), np.asarray(res.x, dtype=float))
    if res.status in (2, 3):
        # HiGHS may only know "infeasible or unbounded"; a zero-objective solve settles it.
        feas = _linprog(prob, np.zeros(prob.n))
        if feas.status == 0:
            return LpResult("unbounded", -sign * math.inf)
        if feas.status == 2:
            return LpResult("infeasible")
        raise SolverError(f"LP feasibility check failed: {feas.message}")
    raise SolverError(f"LP solver stopped with status {res.status}: {res.message}")


@dataclass
class StackedRegressor:
    A: np.ndarray
    wbar: float
    sample_times: list = field(default_factory=list)

    def __post_init__(self):
        self.A = np.atleast_2d(np.asarray(self.A, dtype=float))
        if self.A.shape[0] < 1:
            raise ValueError("stacked regressor needs at least one row")
        if self.wbar < 0:
            raise ValueError("noise bound must be non-negative")

    @property
    def M(self) -> int:
        return self.A.shape[0]

    @property
    def p(self) -> int:
        return self.A.shape[1]


def stack(regressors, wbar: float, sample_times=None) -> StackedRegressor:
    """Stack planned regressors ``Phi_j`` (each ``c x p``) in sample order."""
    regressors = [np.atleast_2d(np.asarray(r, dtype=float)) for r in regressors]
    if not regressors:
        raise ValueError("cannot stack an empty list of regressors")
    p = regressors[0].shape[1]
    if any(r.shape[1] != p for r in regressors):
        raise ValueError("regressors disagree on the parameter dimension")
    return StackedRegressor(np.vstack(regressors), float(wbar), list(sample_times or []))


def _unit(d) -> np.ndarray:
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if not np.linalg.norm(d) > 0:
        raise ValueError("direction must be non-zero")
    return d


def support_h(A: StackedRegressor, d) -> float:
    """Support function of the error set in direction ``d`` (``inf`` if unexcited)."""
    d = _unit(d)
    if d.size != A.p:
        raise ValueError(f"direction has {d.size} entries, expected {A.p}")
    M = A.M
    At = A.A.T
    prob = LpProblem(
        c=np.ones(2 * M),
        A_eq=np.hstack([At, -At]),
        b_eq=d,
        bounds=[(0.0, None)] * (2 * M),
    )
    res = solve_lp(prob)
    if res.status == "infeasible":
        return math.inf
    if res.status != "optimal":
        raise SolverError(f"min-norm LP returned {res.status}")
    return 2.0 * A.wbar * res.value


@dataclass
class WidthPrediction:
    direction: np.ndarray
    support: float
    box_width: float
    predicted_width: float


def in_error_set(A, e, wbar: float) -> bool:
    """``|A e|_inf <= 2 wbar``: offset ``e`` cannot be told apart from zero by the data."""
    r = np.atleast_2d(np.asarray(A, dtype=float)) @ np.atleast_1d(np.asarray(e, dtype=float))
    return bool(np.max(np.abs(r), initial=0.0) <= 2.0 * wbar)


def consistency_witness(phi, theta, theta_star, wbar: float) -> Optional[np.ndarray]:
    """Noise ``w`` with ``|w| <= wbar`` and ``|phi (theta_star - theta) + w| <= wbar``, or None.

    Clipping ``w = -clip(r, -wbar, wbar)`` with ``r = phi (theta_star - theta)``
    leaves a residual ``max(|r| - wbar, 0)`` per channel, so a witness exists
    exactly when ``|r|_inf <= 2 wbar``.
    """
    phi = np.atleast_2d(np.asarray(phi, dtype=float))
    r = phi @ (np.atleast_1d(np.asarray(theta_star, dtype=float)) - np.atleast_1d(np.asarray(theta, dtype=float)))
    w = -np.clip(r, -wbar, wbar)
    if np.all(np.abs(r + w) <= wbar):
        return w
    return None


def predicted_width(theta: ParameterBox, A: StackedRegressor, d) -> WidthPrediction:
    """Upper bound ``min(w_d(Theta), 2 h(d))`` on the post-execution width."""
    d = _unit(d)
    bw = box_width(theta, d)
    h = support_h(A, d)
    pw = bw if math.isinf(h) else min(bw, 2.0 * h)
    return WidthPrediction(direction=d, support=h, box_width=bw, predicted_width=pw)


def axis_directions(p: int) -> list:
    return [row for row in np.eye(p)]


def avg_width_reduction(theta: ParameterBox, A: StackedRegressor, directions=None) -> float:
    """Average predicted drop in directional width over ``directions`` (default: axes)."""
    directions = axis_directions(theta.dim) if directions is None else list(directions)
    if not directions:
        raise ValueError("direction set must be non-empty")
    total = 0.0
    for d in directions:
        pred = predicted_width(theta, A, d)
        total += pred.box_width - pred.predicted_width
    return max(total / len(directions), 0.0)
