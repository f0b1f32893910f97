"""Continuous-time system models with explicit-Euler stepping, plus bounded disturbances.

Every system advances as ``x_next = x + F(x, clamp(u)) * dt``.  The clamp to the
per-system actuation limits is applied inside :meth:`SystemModel.step` so that
feedback corrections and exploration noise can never command more authority
than the plant has.  Model functions are written to broadcast over leading
batch axes: states of shape ``(..., n_x)`` and controls of shape ``(..., n_u)``.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable

import numpy as np

Array = np.ndarray

# Relative step used by the finite-difference fallback for jacobians.
_FD_EPS = 1e-6


@dataclass(frozen=True)
class SystemModel:
    """A controlled dynamical system ``x_dot = F(x, u)`` integrated with explicit Euler.

    Parameters
    ----------
    name:
        Registry key, used in configs and logs.
    n_x, n_u:
        State and control dimensions.
    dt:
        Integration step in seconds.
    deriv:
        ``F(x, u) -> x_dot``; must broadcast over leading batch axes.
    jac:
        Optional analytic jacobians of ``F`` at a single point,
        ``(x, u) -> (dF/dx, dF/du)``.  When absent, central finite
        differences on ``deriv`` are used.
    control_low, control_high:
        Per-channel actuation limits; ``None`` disables clamping.
    """

    name: str
    n_x: int
    n_u: int
    dt: float
    deriv: Callable[[Array, Array], Array]
    jac: Callable[[Array, Array], tuple[Array, Array]] | None = None
    control_low: Array | None = None
    control_high: Array | None = None

    def __post_init__(self) -> None:
        if self.dt <= 0.0:
            raise ValueError(f"dt must be positive, got {self.dt}")
        if self.n_x < 1 or self.n_u < 1:
            raise ValueError("state and control dimensions must be at least 1")

    def clamp(self, u: Array) -> Array:
        """Clip a control (batch) to the actuation limits."""
        if self.control_low is None and self.control_high is None:
            return u
        return np.clip(u, self.control_low, self.control_high)

    def step(self, x: Array, u: Array) -> Array:
        """One explicit-Euler step; broadcasts over leading batch axes."""
        return x + self.deriv(x, self.clamp(u)) * self.dt

    def jacobians(self, x: Array, u: Array) -> tuple[Array, Array]:
        """Jacobians ``(dF/dx, dF/du)`` of the continuous dynamics at one point."""
        x = np.asarray(x, dtype=float)
        u = np.asarray(u, dtype=float)
        if x.shape != (self.n_x,) or u.shape != (self.n_u,):
            raise ValueError(
                f"jacobians expect a single point of shapes ({self.n_x},)/({self.n_u},), "
                f"got {x.shape}/{u.shape}"
            )
        if self.jac is not None:
            a, b = self.jac(x, u)
            return np.asarray(a, dtype=float), np.asarray(b, dtype=float)
        return self._fd_jacobians(x, u)

    def _fd_jacobians(self, x: Array, u: Array) -> tuple[Array, Array]:
        a = np.empty((self.n_x, self.n_x))
        b = np.empty((self.n_x, self.n_u))
        for i in range(self.n_x):
            h = _FD_EPS * max(1.0, abs(x[i]))
            xp, xm = x.copy(), x.copy()
            xp[i] += h
            xm[i] -= h
            a[:, i] = (self.deriv(xp, u) - self.deriv(xm, u)) / (2.0 * h)
        for j in range(self.n_u):
            h = _FD_EPS * max(1.0, abs(u[j]))
            up, um = u.copy(), u.copy()
            up[j] += h
            um[j] -= h
            b[:, j] = (self.deriv(x, up) - self.deriv(x, um)) / (2.0 * h)
        return a, b

    def discrete_jacobians(self, x: Array, u: Array) -> tuple[Array, Array]:
        """Jacobians of :meth:`step`, ``(I + dt*dF/dx, dt*dF/du)``."""
        a, b = self.jacobians(x, u)
        return np.eye(self.n_x) + self.dt * a, self.dt * b


def nominal_trajectory(model: SystemModel, x0: Array, controls: Array) -> Array:
    """Roll a control sequence forward without noise; returns ``(T+1, n_x)`` states."""
    controls = np.atleast_2d(np.asarray(controls, dtype=float))
    states = np.empty((controls.shape[0] + 1, model.n_x))
    states[0] = x0
    for t in range(controls.shape[0]):
        states[t + 1] = model.step(states[t], controls[t])
    return states


def double_integrator(dt: float = 0.02, control_limit: float = 10.0) -> SystemModel:
    """Point mass on a line: state (position, velocity), control is acceleration."""

    def deriv(x: Array, u: Array) -> Array:
        return np.stack([x[..., 1], u[..., 0]], axis=-1)

    def jac(x: Array, u: Array) -> tuple[Array, Array]:
        return np.array([[0.0, 1.0], [0.0, 0.0]]), np.array([[0.0], [1.0]])

    lim = None if control_limit is None else np.array([float(control_limit)])
    return SystemModel(
        name="double_integrator",
        n_x=2,
        n_u=1,
        dt=dt,
        deriv=deriv,
        jac=jac,
        control_low=None if lim is None else -lim,
        control_high=lim,
    )


def nonlinear_benchmark(
    dt: float = 0.02, control_limit: float = 8.0, damping: float = 0.5
) -> SystemModel:
    """Control-affine benchmark with a sinusoidal restoring force.

    ``theta_dot = omega``, ``omega_dot = -sin(theta) - damping*omega + u``.
    The state jacobian is affine in ``cos(theta)``, which lies in [-1, 1]
    everywhere, so a constant contraction metric certified at the two extreme
    values of that entry is valid globally.  This is a generic pendulum-like
    system chosen for that property, not a reproduction of any published
    benchmark.
    """
    c = float(damping)

    def deriv(x: Array, u: Array) -> Array:
        return np.stack(
            [x[..., 1], -np.sin(x[..., 0]) - c * x[..., 1] + u[..., 0]], axis=-1
        )

    def jac(x: Array, u: Array) -> tuple[Array, Array]:
        return (
            np.array([[0.0, 1.0], [-np.cos(x[0]), -c]]),
            np.array([[0.0], [1.0]]),
        )

    lim = None if control_limit is None else np.array([float(control_limit)])
    return SystemModel(
        name="nonlinear_benchmark",
        n_x=2,
        n_u=1,
        dt=dt,
        deriv=deriv,
        jac=jac,
        control_low=None if lim is None else -lim,
        control_high=lim,
    )


_SYSTEM_FACTORIES: dict[str, Callable[..., SystemModel]] = {
    "double_integrator": double_integrator,
    "nonlinear_benchmark": nonlinear_benchmark,
}


def register_system(name: str, factory: Callable[..., SystemModel]) -> None:
    _SYSTEM_FACTORIES[name] = factory


def make_system(name: str, **kwargs) -> SystemModel:
    """Instantiate a registered system by name."""
    try:
        factory = _SYSTEM_FACTORIES[name]
    except KeyError:
        known = ", ".join(sorted(_SYSTEM_FACTORIES))
        raise ValueError(f"unknown system {name!r}; known systems: {known}") from None
    return factory(**kwargs)


@dataclass(frozen=True)
class DisturbanceModel:
    """What the true plant adds on top of the model the controller plans with.

    ``noise_multiplier`` scales the *variance* of the control-channel noise the
    plant actually experiences relative to the covariance the controller
    samples with; it applies to the real system only.  ``w_bound`` is the norm
    bound of the additive state disturbance, drawn uniformly from the ball of
    that radius each step.
    """

    noise_multiplier: float = 1.0
    w_bound: float = 0.0

    def __post_init__(self) -> None:
        if self.noise_multiplier < 0.0:
            raise ValueError("noise_multiplier must be nonnegative")
        if self.w_bound < 0.0:
            raise ValueError("w_bound must be nonnegative")

    def control_noise(self, rng: np.random.Generator, sigma_chol: Array) -> Array:
        """One control-channel noise draw with covariance ``multiplier * Sigma``."""
        z = rng.standard_normal(sigma_chol.shape[0])
        return np.sqrt(self.noise_multiplier) * (sigma_chol @ z)

    def state_disturbance(self, rng: np.random.Generator, n_x: int) -> Array:
        """One draw uniform in the ball of radius ``w_bound`` (zero when the bound is)."""
        z = rng.standard_normal(n_x)
        radius = rng.random() ** (1.0 / n_x)
        norm = np.linalg.norm(z)
        if norm == 0.0:
            return np.zeros(n_x)
        return self.w_bound * radius * z / norm


def propagate_real(
    model: SystemModel,
    disturbance: DisturbanceModel,
    x: Array,
    u: Array,
    eps: Array,
    k_fb: Array,
    rng: np.random.Generator,
) -> Array:
    """Advance the true plant one step: Euler step of ``u + k_fb + eps`` plus a ball draw."""
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    eps = np.asarray(eps, dtype=float)
    k_fb = np.asarray(k_fb, dtype=float)
    if x.shape != (model.n_x,):
        raise ValueError(f"state shape {x.shape} does not match n_x={model.n_x}")
    for name, arr in (("u", u), ("eps", eps), ("k_fb", k_fb)):
        if arr.shape != (model.n_u,):
            raise ValueError(f"{name} shape {arr.shape} does not match n_u={model.n_u}")
    return model.step(x, u + k_fb + eps) + disturbance.state_disturbance(rng, model.n_x)
