import dataclasses

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from safedual.dynamics import ParameterBox, scalar_drag_model, vector_drag_model
from safedual.harness import case_study_1
from safedual.planners import (
    TOL_DYN,
    CandidateConfig,
    TranscriptionGrid,
    accept_backup,
    candidate_grid,
    gramian,
    plan_backup,
    plan_informative,
)
from safedual.trajectory import NominalTrajectory, trajectory_cost

M1, M2 = scalar_drag_model(), vector_drag_model()


def _straight(model, v, T, h=0.1, theta_hat=None):
    theta_hat = np.zeros(model.param_dim) if theta_hat is None else theta_hat
    n = int(round(T / h))
    return NominalTrajectory(0.0, h, [0, 0, 1], v, np.zeros((n, 3)), theta_hat, model)


def fine_gramian(traj, dt=1e-4):
    t = np.arange(traj.t0, traj.t_end + dt / 2, dt)
    _, v = traj.state(t)
    phi = traj.model.regressor_v(v)
    w = np.full(t.size, dt)
    w[[0, -1]] = dt / 2
    return np.einsum("k,kij,kil->jl", w, phi, phi)


def test_gramian_hover_is_zero():
    assert np.all(gramian(_straight(M2, [0, 0, 0], 2.0)).G == 0)


def test_gramian_constant_speed_cases():
    g1 = gramian(_straight(M1, [0.6, 0.8, 0.0], 2.0))
    assert g1.G[0, 0] == pytest.approx(2.0, rel=1e-12)
    assert g1.T == pytest.approx(2.0)
    traj = _straight(M2, [1.0, 0.0, 0.0], 1.0)
    g2 = gramian(traj)
    np.testing.assert_allclose(g2.G, [[1, 1], [1, 1]], rtol=1e-12)
    np.testing.assert_allclose(fine_gramian(traj), g2.G, rtol=1e-4)
    assert g2.lambda_min == pytest.approx(0.0, abs=1e-12)


def test_gramian_matches_fine_grid_on_smooth_plan():
    t = np.arange(200) * 0.01
    acc = np.stack([np.cos(t), 0.5 * np.sin(2 * t), np.zeros_like(t)], axis=1)
    traj = NominalTrajectory(0.0, 0.01, [0, 0, 1], [0.5, 0.2, 0], acc, [0.1, 0.2], M2)
    ref = fine_gramian(traj)
    np.testing.assert_allclose(gramian(traj).G, ref, rtol=1e-4)
    assert np.all(np.linalg.eigvalsh(gramian(traj).G) >= -1e-10)


@settings(max_examples=30, deadline=None)
@given(arrays(float, (6, 2), elements=st.floats(-3, 3)), arrays(float, 2, elements=st.floats(-2, 2)))
def test_transcription_maps_match_integration(a2, v0):
    grid = TranscriptionGrid(1.0, 0.25, 6, 4)
    p0 = np.array([1.0, -1.0, 1.0])
    v0 = np.array([v0[0], v0[1], 0.0])
    traj = grid.trajectory(a2.ravel(), p0, v0, [0.3], M1)
    Pk, Vk = grid.knot_states(a2, p0, v0)
    np.testing.assert_allclose(Pk, traj.knot_positions, atol=1e-12)
    np.testing.assert_allclose(Vk, traj.knot_velocities, atol=1e-12)
    assert traj.dynamics_defect() <= TOL_DYN


@pytest.fixture(scope="module")
def case1():
    cfg = case_study_1()
    return cfg, cfg.context(), cfg.theta_box()


@pytest.fixture(scope="module")
def backup(case1):
    cfg, ctx, theta = case1
    return plan_backup(ctx, theta, np.concatenate([cfg.mission().start, np.zeros(3)]), 0.0)


def test_backup_is_certified_and_reaches_goal(case1, backup):
    cfg, ctx, theta = case1
    spec = ctx.spec
    assert backup.t_end == pytest.approx(spec.t_f)
    assert backup.tightened.goal.contains(backup.nominal.knot_positions[-1], tol=1e-9)
    assert backup.nominal.dynamics_defect() <= TOL_DYN
    assert np.all(spec.in_safe_set(backup.nominal.knot_positions))


def test_backup_from_goal_center_hovers(case1):
    cfg, ctx, theta = case1
    x0 = np.concatenate([ctx.spec.goal_point, np.zeros(3)])
    tube = plan_backup(ctx, theta, x0, 0.0)
    assert np.max(np.abs(tube.nominal.knot_positions - ctx.spec.goal_point)) <= 1e-3
    dp = tube.nominal.knot_positions - ctx.spec.goal_point
    assert ctx.spec.cost_beta * tube.nominal.h * np.sum(dp * dp) <= 1e-5


def test_backup_monotone_acceptance(case1, backup):
    cfg, ctx, theta = case1
    spec = ctx.spec
    t_k = 4.0
    x_k = backup.nominal.x(t_k)
    shrunk = ParameterBox([0.35], [0.45])
    fresh = plan_backup(ctx, shrunk, x_k, t_k, warm=backup.nominal)
    tube, _ = accept_backup(fresh, backup, spec, t_k, shrunk, ctx.gains)
    cost = lambda n: trajectory_cost(n, spec.goal_point, spec.cost_alpha, spec.cost_beta)
    assert cost(tube.nominal) <= cost(backup.nominal.restrict(t_k)) + 1e-6
    kept, accepted = accept_backup(None, backup, spec, t_k, shrunk, ctx.gains)
    assert not accepted and kept.t_start == pytest.approx(t_k)


def test_candidate_grid_refines_backup_grid(case1):
    _, ctx, _ = case1
    grid = candidate_grid(ctx, 0.0, 6.0, 20)
    assert grid.n % 12 == 0 and grid.n >= 20
    assert grid.h * grid.n == pytest.approx(6.0)


def test_informative_without_exploration_hovers(case1):
    cfg, ctx, theta = case1
    x0 = np.concatenate([ctx.spec.start, np.zeros(3)])
    traj = plan_informative(ctx, theta, x0, 0.0, 2.0, x0, CandidateConfig(gamma=0.0, alpha=0.0))
    assert traj is not None
    assert np.max(np.abs(traj.acc)) <= 1e-6
    assert np.max(np.abs(traj.knot_positions - ctx.spec.start)) <= 1e-6


def test_informative_unreachable_floor_is_infeasible(case1):
    cfg, ctx, theta = case1
    x0 = np.concatenate([ctx.spec.start, np.zeros(3)])
    # |v| <= 20 m/s over 2 s bounds int |v|^4 well below 1e6
    assert plan_informative(ctx, theta, x0, 0.0, 2.0, x0, CandidateConfig(alpha=1e6)) is None


def test_informative_beats_conservative_gramian(case1, backup):
    # candidate generation without the tube speed and input limits, as in the bare excitation OCP
    cfg, ctx, theta = case1
    free = dataclasses.replace(ctx, options=dataclasses.replace(ctx.options, enforce_limits_in_candidates=False))
    x0 = backup.nominal.start_state()
    cons = backup.restrict(0.0, 2.0).nominal
    cand = CandidateConfig()
    traj = plan_informative(free, theta, x0, 0.0, 2.0, cons.end_state(), cand, guess=cons)
    assert traj is not None
    assert gramian(traj).lambda_min >= cand.alpha - 1e-6
    g_inf, g_cons = fine_gramian(traj), fine_gramian(cons)
    assert np.all(np.linalg.eigvalsh(g_inf - g_cons) > 0)
    np.testing.assert_allclose(traj.end_state(), cons.end_state(), atol=1e-4)
    assert traj.dynamics_defect() <= TOL_DYN


def test_limited_candidate_rejoins_and_meets_floor(case1, backup):
    cfg, ctx, theta = case1
    cons = backup.restrict(0.0, 4.0).nominal
    cand = CandidateConfig()
    traj = plan_informative(ctx, theta, cons.start_state(), 0.0, 4.0, cons.end_state(), cand, guess=cons)
    assert traj is not None
    assert gramian(traj).lambda_min >= cand.alpha - 1e-6
    np.testing.assert_allclose(traj.end_state(), cons.end_state(), atol=1e-4)
    vmax, _ = ctx.envelope(theta, theta.center)
    assert traj.speed_max() <= vmax + 1e-6


def test_gamma_sweep_does_not_reduce_excitation(case1, backup):
    cfg, ctx, theta = case1
    free = dataclasses.replace(ctx, options=dataclasses.replace(ctx.options, enforce_limits_in_candidates=False))
    cons = backup.restrict(0.0, 2.0).nominal
    lams = []
    for gamma in (1.0, 2.0, 5.0, 10.0, 20.0):
        traj = plan_informative(free, theta, cons.start_state(), 0.0, 2.0, cons.end_state(),
                                CandidateConfig(gamma=gamma, alpha=0.0), guess=cons)
        lams.append(gramian(traj).lambda_min)
    assert np.all(np.diff(lams) >= -1e-6 * max(lams))


def test_candidate_config_validation():
    with pytest.raises(ValueError):
        CandidateConfig(rho=0.0)
    with pytest.raises(ValueError):
        CandidateConfig(segments=3)
