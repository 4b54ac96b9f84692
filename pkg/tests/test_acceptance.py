"""Acceptance gate: one timed check per criterion, each reporting a PASS/FAIL line.

Run with ``pytest tests/test_acceptance.py -v``; the lines are repeated in the
terminal summary under "acceptance criteria".
"""

import filecmp
import time
from contextlib import contextmanager

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES
from oracles import error_set_width
from safedual.dynamics import ParameterBox, SimState, measure, step
from safedual.estimation import FeasiblePolytope, smid_update
from safedual.harness import (
    baseline_plan,
    case_study_1,
    case_study_2,
    emit_reports,
    run_dual,
    run_monte_carlo,
    tube_monte_carlo,
)
from safedual.planners import gramian
from safedual.trajectory import NominalTrajectory, trajectory_cost
from safedual.widthlp import StackedRegressor, consistency_witness, in_error_set, support_h

CASES = {"case1": case_study_1, "case2": case_study_2}


@contextmanager
def criterion(number, title, limit_s):
    """Time the body; the body fills ``info`` with ``ok`` and a detail string."""
    info = {"ok": False, "detail": ""}
    t0 = time.perf_counter()
    try:
        yield info
    finally:
        elapsed = time.perf_counter() - t0
        in_time = elapsed < limit_s
        ok = info["ok"] and in_time
        status = "PASS" if ok else "FAIL"
        timing = f"{elapsed:.1f}s < {limit_s:g}s" if in_time else f"{elapsed:.1f}s exceeds {limit_s:g}s"
        line = f"{status} [{number}] {title}: {info['detail']} ({timing})"
        ACCEPTANCE_LINES.append(line)
        print(line)
    assert info["ok"], line
    assert in_time, line


def _baseline_cost(cfg):
    plan = baseline_plan(cfg)
    spec = cfg.mission()
    return trajectory_cost(plan.nominal, spec.goal_point, spec.cost_alpha, spec.cost_beta)


# 1 ---------------------------------------------------------------------------------------------


def _interval_route(r, w):
    """Per-channel noise interval ``[-w, w] cap [-w - r, w - r]`` is non-empty on every channel."""
    lo = np.maximum(-w, -w - r)
    hi = np.minimum(w, w - r)
    return bool(np.all(lo <= hi))


def test_noise_consistency_clipping():
    rng = np.random.default_rng(20240611)
    with criterion(1, "noise-consistency equivalence on 10^4 instances", 5.0) as info:
        bad = boundary = 0
        for k in range(10_000):
            c, p = int(rng.integers(1, 4)), int(rng.integers(1, 4))
            if k % 2:
                # dyadic data: every product and comparison is exact in binary floating point
                phi = rng.integers(-4, 5, (c, p)).astype(float)
                theta = rng.integers(-8, 9, p) / 8.0
                theta_star = rng.integers(-8, 9, p) / 8.0
                r = phi @ (theta_star - theta)
                m = np.max(np.abs(r))
                w = m / 2.0 if k % 4 == 1 else rng.integers(0, 17) / 16.0
            else:
                phi = rng.normal(size=(c, p)) * rng.uniform(0.1, 3.0)
                theta = rng.uniform(-1, 1, p)
                theta_star = rng.uniform(-1, 1, p)
                w = rng.uniform(0.0, 1.5)
            r = phi @ (theta_star - theta)
            boundary += bool(np.max(np.abs(r)) == 2.0 * w)
            lhs = _interval_route(r, w)
            rhs = in_error_set(phi, theta - theta_star, w)
            wit = consistency_witness(phi, theta, theta_star, w)
            witness_ok = wit is None or (np.all(np.abs(wit) <= w) and np.all(np.abs(r + wit) <= w))
            bad += (lhs != rhs) or ((wit is not None) != lhs) or not witness_ok
        info["ok"] = bad == 0
        info["detail"] = f"{bad} counterexamples, {boundary} instances exactly on the boundary"


# 2 ---------------------------------------------------------------------------------------------


def test_support_duality():
    rng = np.random.default_rng(7)
    with criterion(2, "2h from the dual LP vs vertex enumeration, 500 random A", 30.0) as info:
        worst = 0.0
        done = 0
        while done < 500:
            p = int(rng.integers(1, 4))
            M = int(rng.integers(p, 7))
            A = rng.normal(size=(M, p))
            if np.linalg.matrix_rank(A) < p:
                continue
            w = rng.uniform(0.01, 1.0)
            d = rng.normal(size=p)
            lp = 2.0 * support_h(StackedRegressor(A, w), d)
            worst = max(worst, abs(lp - error_set_width(A, w, d)))
            done += 1
        info["ok"] = worst <= 1e-8
        info["detail"] = f"max abs error {worst:.2e} (tol 1e-8)"


# 3 ---------------------------------------------------------------------------------------------


def test_width_prediction_strict_mode():
    with criterion(3, "actual SMID width <= predicted width under plan replay", 120.0) as info:
        n_seg, worst, runs = 0, np.inf, 0
        for name, seeds in (("case1", (0, 1, 2)), ("case2", (0, 1, 2))):
            cfg = CASES[name]()
            base = _baseline_cost(cfg)
            for seed in seeds:
                rep = run_dual(cfg, seed=seed, strict=True, baseline_cost=base)
                runs += 1
                for s in rep.segments:
                    n_seg += 1
                    worst = min(worst, s.width_slack)
        info["ok"] = n_seg >= 50 and worst >= -1e-9
        info["detail"] = f"{n_seg} segments over {runs} runs, min slack {worst:.3e}"


# 4 ---------------------------------------------------------------------------------------------


def _random_identification_run(rng):
    cfg = case_study_1() if rng.random() < 0.5 else case_study_2()
    model = cfg.system()
    box = cfg.theta_box()
    theta_star = rng.uniform(box.lower, box.upper)
    if rng.random() < 0.2:
        theta_star = box.corners()[rng.integers(len(box.corners()))]
    sim = SimState(0.0, [0, 0, 1], rng.uniform(-1, 1, 3), theta_star, rng=rng)
    poly = FeasiblePolytope.from_box(box, window=int(rng.integers(5, 60)))
    failures = 0
    for _ in range(4):
        u = np.array([0.0, 0.0, 9.81]) + rng.uniform(-3, 3, 3)
        records = []
        for j in range(100):
            sim = step(model, sim, u, 0.01)
            if j % 10 == 0:
                records.append(measure(model, sim, u))
        new = smid_update(poly, records)
        nested = np.all(new.hull.lower >= poly.hull.lower) and np.all(new.hull.upper <= poly.hull.upper)
        failures += (not nested) + (not new.hull.contains(theta_star, tol=1e-9))
        poly = new
    return failures


def test_smid_soundness():
    rng = np.random.default_rng(99)
    with criterion(4, "set-membership nesting and containment, 100 randomized runs", 60.0) as info:
        fails = sum(_random_identification_run(rng) for _ in range(100))
        info["ok"] = fails == 0
        info["detail"] = f"{fails} failures"


# 5 ---------------------------------------------------------------------------------------------


def test_tube_invariance():
    with criterion(5, "tube invariance, 500 tracking runs per case at corner parameters", 180.0) as info:
        parts, exits = [], 0
        for name, factory in CASES.items():
            res = tube_monte_carlo(factory(), n_runs=500, seed=17)
            exits += res.exits
            parts.append(f"{name}: {res.exits} exits, max pos ratio {res.max_pos_ratio:.3f}")
        info["ok"] = exits == 0
        info["detail"] = "; ".join(parts)


# 6 ---------------------------------------------------------------------------------------------


def test_end_to_end_monte_carlo():
    with criterion(6, "20-seed missions per case: safety, budget, savings, identification", 600.0) as info:
        ok, parts = True, []
        for name, factory in CASES.items():
            reports = run_monte_carlo(factory(), seed=0, n_runs=20)
            viol = sum(r.safety_violations for r in reports)
            over = sum(r.total_cost > r.budget or r.realized_cost > r.budget for r in reports)
            cheaper = sum(r.cost_percent < 100.0 for r in reports)
            red = np.array([r.width_reduction_percent for r in reports])
            mean_red = red.mean(axis=0)
            ok &= viol == 0 and over == 0 and cheaper >= 15
            if name == "case1":
                ok &= bool(np.all(red[:, 0] >= 50.0))
            else:
                ok &= bool(np.all(red[:, 1] >= 50.0) and np.all(red[:, 1] > red[:, 0]))
            costs = [r.cost_percent for r in reports]
            parts.append(
                f"{name}: {viol} violations, {over} over budget, {cheaper}/20 below 100% "
                f"(cost {min(costs):.1f}-{max(costs):.1f}%), mean reduction "
                + "/".join(f"{v:.1f}%" for v in mean_red)
            )
        info["ok"] = bool(ok)
        info["detail"] = "; ".join(parts)


# 7 ---------------------------------------------------------------------------------------------


def test_gramian_analytic_cases():
    with criterion(7, "Gramian quadrature on constant-speed plans", 1.0) as info:
        m1, m2 = case_study_1().system(), case_study_2().system()
        t1 = NominalTrajectory(0.0, 0.1, [0, 0, 1], [0.6, 0.8, 0.0], np.zeros((20, 3)), [0.0], m1)
        t2 = NominalTrajectory(0.0, 0.1, [0, 0, 1], [1.0, 0.0, 0.0], np.zeros((10, 3)), [0.0, 0.0], m2)
        e1 = abs(gramian(t1).G[0, 0] - 2.0) / 2.0
        e2 = np.max(np.abs(gramian(t2).G - np.ones((2, 2))))
        info["ok"] = e1 <= 1e-4 and e2 <= 1e-4
        info["detail"] = f"relative errors {e1:.1e}, {e2:.1e}"


# 8 ---------------------------------------------------------------------------------------------


def test_determinism(tmp_path):
    with criterion(8, "repeated seeded runs give byte-identical files", 60.0) as info:
        cfg = case_study_2()
        base = _baseline_cost(cfg)
        for sub in ("a", "b"):
            emit_reports(run_dual(cfg, seed=42, baseline_cost=base), tmp_path / sub, figures=True)
        names = ["trajectory.csv", "bounds.csv", "commits.csv", "summary.json", "trajectory.png", "bounds.png"]
        diff = [n for n in names if not filecmp.cmp(tmp_path / "a" / n, tmp_path / "b" / n, shallow=False)]
        info["ok"] = not diff
        info["detail"] = f"{len(names) - len(diff)}/{len(names)} files identical" + (f", differ: {diff}" if diff else "")


if __name__ == "__main__":
    raise SystemExit(pytest.main([__file__, "-q"]))
