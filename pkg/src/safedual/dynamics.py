"""Uncertain control-affine quadrotor models in linear-in-parameter form.

Both built-in models are point-mass quadrotors with aerodynamic drag,

    r'' = g + u + Phi(r') theta + d,

so the state is ``x = (r, r')`` in R^6, the input is the commanded
acceleration ``u`` in R^3 and the measured output is the position. The
regressor depends on velocity only and the parameter enters linearly, hence
the higher-order remainder of the LIP expansion vanishes identically.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from typing import Callable, Optional

import numpy as np

GRAVITY = np.array([0.0, 0.0, -9.81])


class IntegrationError(RuntimeError):
    """Raised when a simulation step produces a non-finite state."""


@dataclass(frozen=True)
class ParameterBox:
    """Axis-aligned parameter interval set."""

    lower: np.ndarray
    upper: np.ndarray

    def __post_init__(self):
        lo = np.atleast_1d(np.asarray(self.lower, dtype=float)).copy()
        hi = np.atleast_1d(np.asarray(self.upper, dtype=float)).copy()
        if lo.shape != hi.shape or lo.ndim != 1:
            raise ValueError("lower/upper must be 1-D vectors of equal length")
        if not (np.all(np.isfinite(lo)) and np.all(np.isfinite(hi))):
            raise ValueError("box bounds must be finite")
        if np.any(lo > hi):
            raise ValueError(f"empty box: lower {lo} exceeds upper {hi}")
        lo.flags.writeable = False
        hi.flags.writeable = False
        object.__setattr__(self, "lower", lo)
        object.__setattr__(self, "upper", hi)

    @property
    def dim(self) -> int:
        return self.lower.size

    @property
    def widths(self) -> np.ndarray:
        return self.upper - self.lower

    @property
    def center(self) -> np.ndarray:
        return 0.5 * (self.lower + self.upper)

    def contains(self, theta, tol: float = 0.0) -> bool:
        theta = np.asarray(theta, dtype=float)
        return bool(np.all(theta >= self.lower - tol) and np.all(theta <= self.upper + tol))

    def corners(self) -> np.ndarray:
        grids = np.meshgrid(*[(lo, hi) for lo, hi in zip(self.lower, self.upper)], indexing="ij")
        return np.stack([g.ravel() for g in grids], axis=1)

    def shifted(self, offset) -> "ParameterBox":
        offset = np.asarray(offset, dtype=float)
        return ParameterBox(self.lower + offset, self.upper + offset)

    def __eq__(self, other):
        if not isinstance(other, ParameterBox):
            return NotImplemented
        return np.array_equal(self.lower, other.lower) and np.array_equal(self.upper, other.upper)

    def __hash__(self):
        return hash((self.lower.tobytes(), self.upper.tobytes()))


def box_width(box: ParameterBox, d) -> float:
    """Extent of the box along ``d``: ``sum_i |d_i| (upper_i - lower_i)``."""
    d = np.atleast_1d(np.asarray(d, dtype=float))
    if d.shape != box.lower.shape:
        raise ValueError("direction dimension does not match the box")
    if not np.linalg.norm(d) > 0:
        raise ValueError("direction must be non-zero")
    return float(np.abs(d) @ box.widths)


@dataclass(frozen=True)
class RegressorRecord:
    """One LIP sample ``z = Phi theta + w`` with ``|w|_inf <= wbar``."""

    phi: np.ndarray
    z: np.ndarray
    wbar: float
    time: float = float("nan")

    def __post_init__(self):
        phi = np.atleast_2d(np.asarray(self.phi, dtype=float))
        z = np.atleast_1d(np.asarray(self.z, dtype=float))
        if phi.shape[0] != z.shape[0]:
            raise ValueError(f"regressor has {phi.shape[0]} rows but z has {z.shape[0]}")
        if not (np.all(np.isfinite(phi)) and np.all(np.isfinite(z))):
            raise ValueError("regressor record contains non-finite entries")
        if not self.wbar >= 0.0:
            raise ValueError("noise bound must be non-negative")
        object.__setattr__(self, "phi", phi)
        object.__setattr__(self, "z", z)


def _norms(v: np.ndarray) -> np.ndarray:
    return np.sqrt(np.sum(v * v, axis=-1))


def _quad_drag(v: np.ndarray) -> np.ndarray:
    """-|v| v, the quadratic drag direction."""
    return -_norms(v)[..., None] * v


def _quad_drag_jac(v: np.ndarray) -> np.ndarray:
    """Jacobian of -|v| v with respect to v; zero at rest."""
    s = _norms(v)
    safe = np.where(s > 0.0, s, 1.0)
    outer = v[..., :, None] * v[..., None, :] / safe[..., None, None]
    eye = np.broadcast_to(np.eye(3), v.shape[:-1] + (3, 3))
    jac = -(s[..., None, None] * eye + outer)
    return np.where((s > 0.0)[..., None, None], jac, 0.0)


def _scalar_regressor(v):
    return _quad_drag(v)[..., None]


def _scalar_regressor_dv(v):
    return _quad_drag_jac(v)[..., :, None, :]


def _vector_regressor(v):
    return np.stack([-v, _quad_drag(v)], axis=-1)


def _vector_regressor_dv(v):
    lin = -np.broadcast_to(np.eye(3), v.shape[:-1] + (3, 3))
    return np.stack([lin, _quad_drag_jac(v)], axis=-2)


@dataclass(frozen=True)
class SystemModel:
    """Velocity-dependent drag model ``r'' = g + u + Phi(r') theta``.

    ``regressor_v`` maps velocities ``(..., 3)`` to ``(..., 3, p)`` and
    ``regressor_dv`` to its velocity Jacobian ``(..., 3, p, 3)``.
    ``column_bound(s)`` gives, per parameter, ``max |Phi_ij(v)|`` over
    ``|v| <= s`` and ``column_lipschitz(s)`` a Lipschitz constant of each
    column on the same ball (Euclidean norms).
    """

    name: str
    param_dim: int
    regressor_v: Callable[[np.ndarray], np.ndarray]
    regressor_dv: Callable[[np.ndarray], np.ndarray]
    column_bound: Callable[[float], np.ndarray]
    column_lipschitz: Callable[[float], np.ndarray]
    param_names: tuple = ()
    gravity: np.ndarray = field(default_factory=lambda: GRAVITY.copy())
    add_disturbance_bound: float = 0.02
    meas_noise_bound: float = 0.03

    state_dim: int = 6
    input_dim: int = 3
    output_dim: int = 3
    relative_degree: int = 2

    @property
    def noise_bound(self) -> float:
        """Aggregate LIP noise bound: disturbance plus measurement channel."""
        return self.add_disturbance_bound + self.meas_noise_bound

    def with_noise(self, add: float, meas: float) -> "SystemModel":
        if add < 0 or meas < 0:
            raise ValueError("noise bounds must be non-negative")
        return replace(self, add_disturbance_bound=float(add), meas_noise_bound=float(meas))

    # Structured maps of the general control-affine form.
    def nominal_drift(self, x):
        x = np.asarray(x, dtype=float)
        return np.concatenate([x[3:6], self.gravity])

    def drift_regressor(self, x):
        x = np.asarray(x, dtype=float)
        return np.vstack([np.zeros((3, self.param_dim)), self.regressor_v(x[3:6])])

    def nominal_input_map(self, x):
        return np.vstack([np.zeros((3, 3)), np.eye(3)])

    def input_regressor(self, x):
        return np.zeros((6, 0))

    def output_map(self, x):
        return np.asarray(x, dtype=float)[:3].copy()

    def known_phi0(self, x, u):
        return self.gravity + np.asarray(u, dtype=float)

    def phi(self, x, u=None):
        return self.regressor_v(np.asarray(x, dtype=float)[..., 3:6])


def scalar_drag_model(add: float = 0.02, meas: float = 0.03) -> SystemModel:
    """Quadrotor with quadratic drag, ``r'' = -C_d |v| v + g + u + d``."""
    return SystemModel(
        name="scalar_drag",
        param_dim=1,
        regressor_v=_scalar_regressor,
        regressor_dv=_scalar_regressor_dv,
        column_bound=lambda s: np.array([s * s]),
        column_lipschitz=lambda s: np.array([2.0 * s]),
        param_names=("C_d",),
        add_disturbance_bound=add,
        meas_noise_bound=meas,
    )


def vector_drag_model(add: float = 0.02, meas: float = 0.03) -> SystemModel:
    """Quadrotor with linear plus quadratic drag, ``r'' = -C_d1 v - C_d2 |v| v + g + u + d``."""
    return SystemModel(
        name="vector_drag",
        param_dim=2,
        regressor_v=_vector_regressor,
        regressor_dv=_vector_regressor_dv,
        column_bound=lambda s: np.array([s, s * s]),
        column_lipschitz=lambda s: np.array([1.0, 2.0 * s]),
        param_names=("C_d1", "C_d2"),
        add_disturbance_bound=add,
        meas_noise_bound=meas,
    )


MODELS = {"scalar_drag": scalar_drag_model, "vector_drag": vector_drag_model}


def _check_dims(model: SystemModel, x, u, theta):
    if x.shape[-1] != model.state_dim:
        raise ValueError(f"state has dimension {x.shape[-1]}, expected {model.state_dim}")
    if u.shape[-1] != model.input_dim:
        raise ValueError(f"input has dimension {u.shape[-1]}, expected {model.input_dim}")
    if theta.shape[-1] != model.param_dim:
        raise ValueError(f"parameter has dimension {theta.shape[-1]}, expected {model.param_dim}")
    if not np.all(np.isfinite(theta)):
        raise ValueError("parameter vector must be finite")


def eval_dynamics(model: SystemModel, x, u, theta, disturbance=None) -> np.ndarray:
    """State derivative of the uncertain system; broadcasts over leading axes."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    theta = np.atleast_1d(np.asarray(theta, dtype=float))
    _check_dims(model, x, u, theta)
    v = x[..., 3:6]
    acc = model.gravity + u + np.einsum("...ij,...j->...i", model.regressor_v(v), theta)
    if disturbance is not None:
        acc = acc + disturbance
    return np.concatenate([v, acc], axis=-1)


def regressor(model: SystemModel, x, u):
    """Return ``(Phi, phi0)`` with ``y'' = phi0 + Phi theta`` for the noise-free model."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape[-1] != model.state_dim or u.shape[-1] != model.input_dim:
        raise ValueError("state/input dimension mismatch")
    return model.phi(x, u), model.known_phi0(x, u)


@dataclass
class SimState:
    """Single-owner simulation state of the true plant."""

    time: float
    position: np.ndarray
    velocity: np.ndarray
    true_params: np.ndarray
    rng_seed: int = 0
    rng: Optional[np.random.Generator] = None
    disturbance: np.ndarray = field(default_factory=lambda: np.zeros(3))

    def __post_init__(self):
        self.position = np.asarray(self.position, dtype=float).copy()
        self.velocity = np.asarray(self.velocity, dtype=float).copy()
        self.true_params = np.atleast_1d(np.asarray(self.true_params, dtype=float)).copy()
        if self.rng is None:
            self.rng = np.random.default_rng(self.rng_seed)

    @property
    def x(self) -> np.ndarray:
        return np.concatenate([self.position, self.velocity])


def sample_disturbance(model: SystemModel, rng: np.random.Generator) -> np.ndarray:
    b = model.add_disturbance_bound
    return rng.uniform(-b, b, size=3) if b > 0 else np.zeros(3)


def rk4(fun, x, dt):
    k1 = fun(x)
    k2 = fun(x + 0.5 * dt * k1)
    k3 = fun(x + 0.5 * dt * k2)
    k4 = fun(x + dt * k3)
    return x + dt / 6.0 * (k1 + 2.0 * k2 + 2.0 * k3 + k4)


def step(model: SystemModel, sim: SimState, u, dt: float, disturbance=None) -> SimState:
    """Advance the true plant by one RK4 step with the input and disturbance held."""
    if not dt > 0:
        raise ValueError("dt must be positive")
    u = np.asarray(u, dtype=float)
    d = sample_disturbance(model, sim.rng) if disturbance is None else np.asarray(disturbance, dtype=float)
    theta = sim.true_params
    x_next = rk4(lambda x: eval_dynamics(model, x, u, theta, d), sim.x, dt)
    if not np.all(np.isfinite(x_next)):
        raise IntegrationError(f"non-finite state after step at t={sim.time:.3f}")
    return SimState(
        time=sim.time + dt,
        position=x_next[:3],
        velocity=x_next[3:],
        true_params=theta,
        rng_seed=sim.rng_seed,
        rng=sim.rng,
        disturbance=d,
    )


def measure(model: SystemModel, sim: SimState, u, noise=None) -> RegressorRecord:
    """Acceleration measurement ``z = y'' - phi0`` at the current state.

    The residual against the true parameter is the held disturbance plus the
    measurement noise, so it never exceeds ``model.noise_bound``.
    """
    x = sim.x
    u = np.asarray(u, dtype=float)
    if noise is None:
        b = model.meas_noise_bound
        noise = sim.rng.uniform(-b, b, size=3) if b > 0 else np.zeros(3)
    acc = eval_dynamics(model, x, u, sim.true_params, sim.disturbance)[3:]
    phi, phi0 = regressor(model, x, u)
    z = acc - phi0 + np.asarray(noise, dtype=float)
    return RegressorRecord(phi=phi, z=z, wbar=model.noise_bound, time=sim.time)
