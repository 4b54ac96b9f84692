"""Set-membership identification over a polytopic feasible parameter set."""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .dynamics import ParameterBox, RegressorRecord, box_width
from .widthlp import LpProblem, SolverError, solve_lp

__all__ = ["FeasiblePolytope", "InconsistentDataError", "box_width", "smid_update", "record_inequalities"]

# Slack on every data inequality so floating point never ejects a parameter on the boundary.
INEQ_SLACK = 1e-11


class InconsistentDataError(ValueError):
    """The data admit no parameter: the noise bound was violated."""

    def __init__(self, message, record_indices=()):
        super().__init__(message)
        self.record_indices = tuple(record_indices)


def record_inequalities(rec: RegressorRecord):
    """Rows of ``G theta <= h`` encoding ``|z - Phi theta|_inf <= wbar``."""
    phi, z, w = rec.phi, rec.z, rec.wbar
    G = np.vstack([phi, -phi])
    h = np.concatenate([z + w, w - z]) + INEQ_SLACK
    return G, h


@dataclass
class FeasiblePolytope:
    """Inequality list ``G theta <= h`` together with its axis-aligned hull.

    Only the most recent ``window`` records are kept as explicit
    inequalities; older information survives through ``hull``, which bounds
    every LP.
    """

    hull: ParameterBox
    G: np.ndarray = None
    h: np.ndarray = None
    records: list = field(default_factory=list)
    window: int = 500
    n_updates: int = 0

    def __post_init__(self):
        p = self.hull.dim
        if self.G is None:
            self.G = np.zeros((0, p))
            self.h = np.zeros(0)

    @classmethod
    def from_box(cls, box: ParameterBox, window: int = 500) -> "FeasiblePolytope":
        return cls(hull=box, window=window)

    @property
    def dim(self) -> int:
        return self.hull.dim

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.atleast_1d(np.asarray(theta, dtype=float))
        if not self.hull.contains(theta, tol):
            return False
        return bool(np.all(self.G @ theta <= self.h + tol))


def _axis_bound(G, h, box: ParameterBox, axis: int, maximize: bool) -> float:
    c = np.zeros(box.dim)
    c[axis] = 1.0
    prob = LpProblem(
        c=c,
        A_ub=G if G.shape[0] else None,
        b_ub=h if G.shape[0] else None,
        bounds=list(zip(box.lower, box.upper)),
        maximize=maximize,
    )
    res = solve_lp(prob)
    if res.status == "infeasible":
        raise InconsistentDataError("feasible parameter set is empty")
    if res.status != "optimal":
        raise SolverError(f"hull LP returned {res.status}")
    return res.value


def smid_update(poly: FeasiblePolytope, records) -> FeasiblePolytope:
    """Intersect the feasible set with the slabs of ``records`` and recompute the hull."""
    records = list(records)
    p = poly.dim
    rows, rhs = [poly.G], [poly.h]
    for idx, rec in enumerate(records):
        if rec.phi.shape[1] != p:
            raise ValueError(f"record {idx} has {rec.phi.shape[1]} parameters, expected {p}")
        G, h = record_inequalities(rec)
        zero = ~np.any(G != 0.0, axis=1)
        if np.any(h[zero] < 0.0):
            raise InconsistentDataError(f"record {idx} violates the noise bound at zero regressor", [idx])
        rows.append(G[~zero])
        rhs.append(h[~zero])
    all_records = poly.records + records
    G_all = np.vstack(rows)
    h_all = np.concatenate(rhs)

    box = poly.hull
    try:
        lo = np.array([_axis_bound(G_all, h_all, box, i, False) for i in range(p)])
        hi = np.array([_axis_bound(G_all, h_all, box, i, True) for i in range(p)])
    except InconsistentDataError as exc:
        raise InconsistentDataError(
            f"{exc}; offending batch covers records {poly.n_updates}..{poly.n_updates + len(records) - 1}",
            range(len(records)),
        ) from None
    # Clip to the previous hull so nesting is exact despite LP tolerances.
    lo = np.clip(lo, box.lower, box.upper)
    hi = np.clip(hi, box.lower, box.upper)
    hi = np.maximum(hi, lo)
    hull = ParameterBox(lo, hi)

    if len(all_records) > poly.window:
        all_records = all_records[-poly.window:]
        kept = [record_inequalities(r) for r in all_records]
        G_all = np.vstack([g for g, _ in kept])
        h_all = np.concatenate([h for _, h in kept])
    return FeasiblePolytope(
        hull=hull,
        G=G_all,
        h=h_all,
        records=all_records,
        window=poly.window,
        n_updates=poly.n_updates + len(records),
    )
