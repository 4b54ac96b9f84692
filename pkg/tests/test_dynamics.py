import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from conftest import no_gravity, state
from safedual.dynamics import (
    GRAVITY,
    IntegrationError,
    ParameterBox,
    RegressorRecord,
    SimState,
    box_width,
    eval_dynamics,
    measure,
    regressor,
    scalar_drag_model,
    step,
    vector_drag_model,
)
from safedual.estimation import record_inequalities

finite = st.floats(-5, 5, allow_nan=False)


def test_hover_has_zero_acceleration(m1):
    xdot = eval_dynamics(m1, state(), [0, 0, 9.81], [0.5])
    assert np.allclose(xdot, 0.0, atol=1e-15)


def test_scalar_drag_acceleration(m1):
    acc = eval_dynamics(no_gravity(m1), state(v=(1, 0, 0)), np.zeros(3), [0.5])[3:]
    np.testing.assert_allclose(acc, [-0.5, 0, 0])


def test_vector_drag_acceleration(m2):
    acc = eval_dynamics(no_gravity(m2), state(v=(0, 2, 0)), np.zeros(3), [0.2, 0.1])[3:]
    np.testing.assert_allclose(acc, [0, -0.8, 0])


def test_dimension_mismatch_raises(m1, m2):
    with pytest.raises(ValueError):
        eval_dynamics(m1, np.zeros(5), np.zeros(3), [0.1])
    with pytest.raises(ValueError):
        eval_dynamics(m2, state(), np.zeros(3), [0.1])
    with pytest.raises(ValueError):
        eval_dynamics(m1, state(), np.zeros(3), [np.nan])


def test_regressor_examples(m1, m2):
    phi, phi0 = regressor(m1, state(), np.zeros(3))
    assert phi.shape == (3, 1) and np.all(phi == 0)
    np.testing.assert_allclose(phi0, GRAVITY)
    phi, _ = regressor(m1, state(v=(1, 0, 0)), np.zeros(3))
    np.testing.assert_allclose(phi[:, 0], [-1, 0, 0])
    phi, _ = regressor(m2, state(v=(0, 0, 2)), np.zeros(3))
    np.testing.assert_allclose(phi, [[0, 0], [0, 0], [-2, -4]])


@settings(max_examples=200, deadline=None)
@given(arrays(float, 6, elements=finite), arrays(float, 3, elements=finite),
       arrays(float, 2, elements=st.floats(0, 2)), st.booleans())
def test_dynamics_match_lip_form(x, u, theta, vector):
    model = vector_drag_model() if vector else scalar_drag_model()
    theta = theta[: model.param_dim]
    phi, phi0 = regressor(model, x, u)
    acc = eval_dynamics(model, x, u, theta)[3:]
    np.testing.assert_allclose(acc, phi0 + phi @ theta, rtol=0, atol=1e-12)


def test_lip_form_on_many_random_tuples():
    rng = np.random.default_rng(0)
    for model in (scalar_drag_model(), vector_drag_model()):
        x = rng.uniform(-5, 5, (10_000, 6))
        u = rng.uniform(-10, 10, (10_000, 3))
        theta = rng.uniform(0, 1, model.param_dim)
        acc = eval_dynamics(model, x, u, theta)[:, 3:]
        phi, phi0 = regressor(model, x, u)
        assert np.max(np.abs(acc - phi0 - phi @ theta)) <= 1e-12


def test_regressor_jacobian_matches_finite_differences(m1, m2):
    rng = np.random.default_rng(3)
    for model in (m1, m2):
        v = rng.normal(size=3)
        J = model.regressor_dv(v)
        h = 1e-6
        for k in range(3):
            e = np.zeros(3)
            e[k] = h
            fd = (model.regressor_v(v + e) - model.regressor_v(v - e)) / (2 * h)
            np.testing.assert_allclose(J[..., k], fd, atol=1e-7)


def _sim(theta, v=(0, 0, 0), seed=0):
    return SimState(0.0, [0, 0, 1], v, theta, rng_seed=seed)


def test_step_equilibrium(m1):
    sim = _sim([0.5])
    for _ in range(100):
        sim = step(m1, sim, [0, 0, 9.81], 0.01, disturbance=np.zeros(3))
    np.testing.assert_allclose(sim.position, [0, 0, 1], atol=1e-13)
    assert sim.time == pytest.approx(1.0)


def test_step_double_integrator_closed_form(m1):
    # zero drag makes the plant a double integrator: p(t) = p0 + v0 t + a t^2 / 2
    u = np.array([1.5, -0.7, 11.0])
    a = u + GRAVITY
    v0 = np.array([0.3, 0.2, -0.1])
    sim = _sim([0.0], v=v0)
    for _ in range(100):
        sim = step(m1, sim, u, 0.01, disturbance=np.zeros(3))
    np.testing.assert_allclose(sim.position, [0, 0, 1] + v0 + 0.5 * a, atol=1e-8)
    np.testing.assert_allclose(sim.velocity, v0 + a, atol=1e-8)


def test_step_disturbance_deviation_is_bounded(m1):
    dt = 0.01
    sim = _sim([0.4], v=(1.0, 0.5, 0.0))
    d = np.full(3, m1.add_disturbance_bound)
    free = step(m1, sim, [0, 0, 9.81], dt, disturbance=np.zeros(3))
    pushed = step(m1, sim, [0, 0, 9.81], dt, disturbance=d)
    dev = np.abs(pushed.velocity - free.velocity)
    assert np.all(dev <= m1.add_disturbance_bound * dt * (1 + 1e-2))


def test_step_rejects_bad_input(m1):
    with pytest.raises(ValueError):
        step(m1, _sim([0.1]), np.zeros(3), 0.0)
    with pytest.raises(IntegrationError), np.errstate(invalid="ignore"):
        step(m1, _sim([0.1]), [np.inf, 0, 0], 0.01)


def test_rk4_fourth_order_convergence(m2):
    theta = np.array([0.3, 0.4])
    u = np.array([2.0, -1.0, 10.5])

    def run(dt, T=1.0):
        sim = _sim(theta, v=(2.0, 1.0, 0.0))
        for _ in range(int(round(T / dt))):
            sim = step(m2, sim, u, dt, disturbance=np.zeros(3))
        return sim.x

    ref = run(1e-4)
    e1 = np.max(np.abs(run(0.04) - ref))
    e2 = np.max(np.abs(run(0.02) - ref))
    assert e1 / e2 >= 8.0


def test_measure_noise_free(m1):
    sim = _sim([0.3], v=(1, 0, 0))
    rec = measure(m1, sim, np.zeros(3), noise=np.zeros(3))
    np.testing.assert_allclose(rec.z, [-0.3, 0, 0], atol=1e-15)
    w = m1.noise_bound
    rec = measure(m1, sim, np.zeros(3), noise=[w, 0, 0])
    assert rec.z[0] == pytest.approx(-0.3 + w)


def test_measure_respects_noise_bound(m2):
    theta = np.array([0.15, 0.3])
    sim = SimState(0.0, [0, 0, 1], [1.0, 0.5, 0.0], theta, rng_seed=7)
    u = np.array([0.5, -0.2, 9.9])
    worst = 0.0
    for _ in range(1000):
        sim = step(m2, sim, u, 0.01)
        rec = measure(m2, sim, u)
        worst = max(worst, np.max(np.abs(rec.z - rec.phi @ theta)))
        G, h = record_inequalities(rec)
        assert np.all(G @ theta <= h)
    assert worst <= m2.noise_bound


def test_parameter_box_and_width():
    box = ParameterBox([0, 0], [1, 1])
    assert box_width(box, [1, 0]) == 1.0
    assert box_width(box, np.array([1, 1]) / np.sqrt(2)) == pytest.approx(np.sqrt(2))
    # support-function oracle over the four vertices
    d = np.array([0.6, -0.8])
    vals = box.corners() @ d
    assert box_width(box, d) == pytest.approx(vals.max() - vals.min())
    with pytest.raises(ValueError):
        ParameterBox([1.0], [0.0])
    with pytest.raises(ValueError):
        box_width(box, [0, 0])


def test_box_width_case_two_final_axis():
    box = ParameterBox([0.0, 0.25], [0.5, 0.34])
    assert box_width(box, [0, 1]) == pytest.approx(0.09)


@given(arrays(float, 3, elements=st.floats(-1, 1)), arrays(float, 3, elements=st.floats(-10, 10)),
       arrays(float, 3, elements=st.floats(0, 2)))
def test_box_width_translation_invariant(d, shift, widths):
    if np.linalg.norm(d) == 0:
        return
    box = ParameterBox(np.zeros(3), widths)
    assert box_width(box.shifted(shift), d) == pytest.approx(box_width(box, d), abs=1e-9)


def test_record_validation():
    with pytest.raises(ValueError):
        RegressorRecord(np.zeros((3, 1)), np.zeros(2), 0.1)
    with pytest.raises(ValueError):
        RegressorRecord(np.zeros((3, 1)), np.zeros(3), -0.1)
