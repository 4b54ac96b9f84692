"""Nominal trajectories with piecewise-constant acceleration.

Plans are parameterized by the net acceleration on each segment, so the
position is piecewise quadratic and the velocity continuous and piecewise
linear. The feedforward input is recovered from the estimated model,
``u = a - g - Phi(v) theta_hat``, which makes every plan an exact solution of
the nominal ODE.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Optional

import numpy as np

from .dynamics import SystemModel, rk4

KNOT_TOL = 1e-9
SIMPSON_POINTS = 4  # sub-intervals per segment (even)


@dataclass(frozen=True)
class NominalTrajectory:
    t0: float
    h: float
    p0: np.ndarray
    v0: np.ndarray
    acc: np.ndarray  # (N, 3)
    theta_hat: np.ndarray
    model: SystemModel

    def __post_init__(self):
        acc = np.atleast_2d(np.asarray(self.acc, dtype=float))
        if acc.shape[1] != 3 or acc.shape[0] < 1:
            raise ValueError("acc must have shape (N, 3)")
        if not self.h > 0:
            raise ValueError("segment length must be positive")
        object.__setattr__(self, "acc", acc)
        object.__setattr__(self, "p0", np.asarray(self.p0, dtype=float).reshape(3))
        object.__setattr__(self, "v0", np.asarray(self.v0, dtype=float).reshape(3))
        object.__setattr__(self, "theta_hat", np.atleast_1d(np.asarray(self.theta_hat, dtype=float)))
        h = self.h
        v_knots = self.v0 + h * np.vstack([np.zeros(3), np.cumsum(acc, axis=0)])
        dp = h * v_knots[:-1] + 0.5 * h * h * acc
        p_knots = self.p0 + np.vstack([np.zeros(3), np.cumsum(dp, axis=0)])
        object.__setattr__(self, "_v_knots", v_knots)
        object.__setattr__(self, "_p_knots", p_knots)

    @property
    def n_segments(self) -> int:
        return self.acc.shape[0]

    @property
    def t_end(self) -> float:
        return self.t0 + self.h * self.n_segments

    @property
    def knot_times(self) -> np.ndarray:
        return self.t0 + self.h * np.arange(self.n_segments + 1)

    @property
    def knot_positions(self) -> np.ndarray:
        return self._p_knots

    @property
    def knot_velocities(self) -> np.ndarray:
        return self._v_knots

    def end_state(self) -> np.ndarray:
        return np.concatenate([self._p_knots[-1], self._v_knots[-1]])

    def start_state(self) -> np.ndarray:
        return np.concatenate([self.p0, self.v0])

    def segment_of(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        idx = np.floor((t - self.t0) / self.h + KNOT_TOL).astype(int)
        return np.clip(idx, 0, self.n_segments - 1)

    def eval_segments(self, idx, tau):
        """Position, velocity and acceleration at offset ``tau`` inside segment ``idx``."""
        idx = np.asarray(idx)
        tau = np.asarray(tau, dtype=float)[..., None]
        a = self.acc[idx]
        v_k = self._v_knots[idx]
        p = self._p_knots[idx] + v_k * tau + 0.5 * a * tau * tau
        v = v_k + a * tau
        return p, v, a

    def state(self, t):
        """``(position, velocity)`` at time(s) ``t``; right-continuous at knots."""
        idx = self.segment_of(t)
        tau = np.asarray(t, dtype=float) - (self.t0 + idx * self.h)
        p, v, _ = self.eval_segments(idx, tau)
        return p, v

    def x(self, t) -> np.ndarray:
        p, v = self.state(t)
        return np.concatenate([p, v], axis=-1)

    def input_from(self, v, a) -> np.ndarray:
        phi = self.model.regressor_v(v)
        return a - self.model.gravity - np.einsum("...ij,j->...i", phi, self.theta_hat)

    def input(self, t) -> np.ndarray:
        idx = self.segment_of(t)
        tau = np.asarray(t, dtype=float) - (self.t0 + idx * self.h)
        _, v, a = self.eval_segments(idx, tau)
        return self.input_from(v, a)

    def speed_max(self) -> float:
        # |v| is convex along each linear velocity segment, so knots attain the max.
        return float(np.max(np.linalg.norm(self._v_knots, axis=1)))

    def knot_index(self, t) -> int:
        k = (t - self.t0) / self.h
        kr = int(round(k))
        if abs(k - kr) > 1e-6 or kr < 0 or kr > self.n_segments:
            raise ValueError(f"time {t} is not a knot of this trajectory")
        return kr

    def restrict(self, t_a: float, t_b: Optional[float] = None) -> "NominalTrajectory":
        """Sub-trajectory on ``[t_a, t_b]``; both ends must be knots."""
        i = self.knot_index(t_a)
        j = self.n_segments if t_b is None else self.knot_index(t_b)
        if j <= i:
            raise ValueError("empty restriction")
        return NominalTrajectory(
            t0=self.t0 + i * self.h,
            h=self.h,
            p0=self._p_knots[i],
            v0=self._v_knots[i],
            acc=self.acc[i:j],
            theta_hat=self.theta_hat,
            model=self.model,
        )

    def dense_times(self, per_segment: int = 8) -> np.ndarray:
        tau = np.linspace(0.0, self.h, per_segment + 1)[:-1]
        t = (self.t0 + self.h * np.arange(self.n_segments))[:, None] + tau[None, :]
        return np.append(t.ravel(), self.t_end)

    def dynamics_defect(self, substeps: int = 16) -> float:
        """Max knot mismatch when integrating the estimated model under ``input(t)``."""
        worst = 0.0
        model = self.model
        dt = self.h / substeps
        for k in range(self.n_segments):
            x = np.concatenate([self._p_knots[k], self._v_knots[k]])
            tk = self.t0 + k * self.h
            a_k = self.acc[k]

            def f(state, t):
                p_, v_ = self.eval_segments(k, t - tk)[:2]
                u = self.input_from(v_, a_k)
                phi = model.regressor_v(state[3:])
                acc = model.gravity + u + phi @ self.theta_hat
                return np.concatenate([state[3:], acc])

            t = tk
            for _ in range(substeps):
                k1 = f(x, t)
                k2 = f(x + 0.5 * dt * k1, t + 0.5 * dt)
                k3 = f(x + 0.5 * dt * k2, t + 0.5 * dt)
                k4 = f(x + dt * k3, t + dt)
                x = x + dt / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)
                t += dt
            ref = np.concatenate([self._p_knots[k + 1], self._v_knots[k + 1]])
            worst = max(worst, float(np.max(np.abs(x - ref))))
        return worst


def simpson_weights(h: float, q: int = SIMPSON_POINTS) -> np.ndarray:
    if q % 2:
        raise ValueError("Simpson rule needs an even number of sub-intervals")
    w = np.ones(q + 1)
    w[1:-1:2] = 4.0
    w[2:-1:2] = 2.0
    return w * (h / q) / 3.0


def segment_samples(traj: NominalTrajectory, q: int = SIMPSON_POINTS):
    """Per-segment Simpson nodes: ``(times, p, v, u, weights)`` with shape ``(N, q+1, ...)``."""
    N = traj.n_segments
    tau = np.linspace(0.0, traj.h, q + 1)
    idx = np.repeat(np.arange(N)[:, None], q + 1, axis=1)
    taus = np.broadcast_to(tau, (N, q + 1))
    p, v, a = traj.eval_segments(idx, taus)
    u = traj.input_from(v, a)
    times = traj.t0 + traj.h * idx + taus
    return times, p, v, u, simpson_weights(traj.h, q)


def running_cost(p, u, goal, alpha: float, beta: float):
    d = p - goal
    return alpha * np.sum(u * u, axis=-1) + beta * np.sum(d * d, axis=-1)


def trajectory_cost(traj: NominalTrajectory, goal, alpha: float, beta: float, q: int = SIMPSON_POINTS) -> float:
    """Mission cost ``int alpha |u|^2 + beta |p - r_goal|^2 dt`` by per-segment Simpson.

    Per-segment quadrature keeps the cost exactly additive over knot-aligned
    restrictions.
    """
    _, p, _, u, w = segment_samples(traj, q)
    return float(np.sum(running_cost(p, u, np.asarray(goal, dtype=float), alpha, beta) @ w))


def segment_costs(traj: NominalTrajectory, goal, alpha: float, beta: float, q: int = SIMPSON_POINTS) -> np.ndarray:
    _, p, _, u, w = segment_samples(traj, q)
    return running_cost(p, u, np.asarray(goal, dtype=float), alpha, beta) @ w


def sample_regressors(traj: NominalTrajectory, times) -> np.ndarray:
    """Planned regressors ``Phi(p_v(t))`` at ``times``; shape ``(len(times), 3, p)``."""
    _, v = traj.state(np.asarray(times, dtype=float))
    return traj.model.regressor_v(v)
