"""Cost functions: running/terminal state costs, control penalties, Lipschitz bounds.

The control penalty that makes importance-sampled rollouts comparable under a
shifted sampling distribution is ``coef * u^T Sigma^{-1} (u + 2*eps)`` per step,
where ``coef`` is ``lam/2`` for the plain estimator and ``lam*(1-beta)/2`` when
the smoothing discount applies.  Both variants are produced by the same code
path so that costs assembled by different controllers agree bit for bit.
"""
from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, NamedTuple

import numpy as np

Array = np.ndarray


@dataclass(frozen=True)
class CostFunction:
    """Running cost ``q``, terminal cost ``phi`` and the sampling covariance.

    ``state_cost`` and ``terminal_cost`` must broadcast over leading batch
    axes, mapping ``(..., n_x)`` to ``(...)``.  ``sigma`` is the control
    exploration covariance; its Cholesky factor and inverse are computed once
    and cached on the instance.  ``lipschitz_q``/``lipschitz_phi`` are bounds
    over the admissible task domain, used by the growth-bound monitor.
    ``crash_cost`` is the finite cost assigned to rollouts whose state stops
    being finite.
    """

    state_cost: Callable[[Array], Array]
    terminal_cost: Callable[[Array], Array]
    sigma: Array
    lam: float
    beta: float = 0.5
    lipschitz_q: float | None = None
    lipschitz_phi: float | None = None
    crash_cost: float = 1.0e4

    def __post_init__(self) -> None:
        sigma = np.atleast_2d(np.asarray(self.sigma, dtype=float))
        if sigma.shape[0] != sigma.shape[1]:
            raise ValueError(f"sigma must be square, got shape {sigma.shape}")
        if not np.allclose(sigma, sigma.T):
            raise ValueError("sigma must be symmetric")
        try:
            chol = np.linalg.cholesky(sigma)
        except np.linalg.LinAlgError:
            raise ValueError("sigma must be positive definite") from None
        if self.lam <= 0.0:
            raise ValueError(f"lam must be positive, got {self.lam}")
        if not 0.0 <= self.beta < 1.0:
            raise ValueError(f"beta must lie in [0, 1), got {self.beta}")
        if not np.isfinite(self.crash_cost):
            raise ValueError("crash_cost must be finite")
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "sigma_chol", chol)
        object.__setattr__(self, "sigma_inv", np.linalg.inv(sigma))

    # set in __post_init__; declared for type checkers
    sigma_chol: Array = None  # type: ignore[assignment]
    sigma_inv: Array = None  # type: ignore[assignment]

    @property
    def n_u(self) -> int:
        return self.sigma.shape[0]


def path_cost(cost: CostFunction, trajectory: Array) -> float:
    """Terminal cost of the last state plus running cost of all states before it.

    ``trajectory`` has shape ``(T+1, n_x)``; a single-state trajectory is pure
    terminal cost.
    """
    trajectory = np.atleast_2d(np.asarray(trajectory, dtype=float))
    total = float(cost.terminal_cost(trajectory[-1]))
    if trajectory.shape[0] > 1:
        total += float(np.sum(cost.state_cost(trajectory[:-1])))
    return total


def control_penalty_coef(lam: float, beta: float, beta_weighted: bool) -> float:
    """The per-step penalty coefficient; ``beta_weighted`` applies the (1-beta) discount."""
    return 0.5 * lam * ((1.0 - beta) if beta_weighted else 1.0)


def control_cost_term(
    cost: CostFunction, u: Array, eps: Array, beta_weighted: bool = False
) -> float:
    """Single-step penalty ``coef * u^T Sigma^{-1} (u + 2*eps)``."""
    u = np.asarray(u, dtype=float)
    eps = np.asarray(eps, dtype=float)
    coef = control_penalty_coef(cost.lam, cost.beta, beta_weighted)
    return float(coef * (u @ cost.sigma_inv @ (u + 2.0 * eps)))


def penalty_step_terms(u_eff: Array, eps_t: Array, sigma_inv: Array) -> Array:
    """Per-sample quadratic form ``u_eff^T Sigma^{-1} (u_eff + 2*eps_t)`` for one step.

    ``u_eff`` and ``eps_t`` have shape ``(N, n_u)``.  All penalty paths route
    through this function so that costs assembled by different controllers
    from the same numbers agree bit for bit.
    """
    si = np.einsum("vu,nu->nv", sigma_inv, u_eff)
    return np.einsum("nv,nv->n", si, u_eff + 2.0 * eps_t)


def control_penalty_batch(
    controls: Array, draws: Array, sigma_inv: Array, coef: float
) -> Array:
    """Summed penalty per sample for a shared control sequence and per-sample noise.

    ``controls`` is ``(T, n_u)``, ``draws`` is ``(N, T, n_u)``; returns ``(N,)``.
    The reduction order is fixed (per step, then a single sum over the
    horizon) so results do not depend on how the sample batch was chunked.
    """
    n = draws.shape[0]
    horizon, n_u = controls.shape
    terms = np.empty((n, horizon))
    for t in range(horizon):
        u_eff = np.broadcast_to(controls[t], (n, n_u))
        terms[:, t] = penalty_step_terms(u_eff, draws[:, t], sigma_inv)
    return coef * terms.sum(axis=1)


class TaskCost(NamedTuple):
    """Bundle returned by :func:`quadratic_wall_cost`."""

    state_cost: Callable[[Array], Array]
    terminal_cost: Callable[[Array], Array]
    lipschitz_q: float
    lipschitz_phi: float


def quadratic_wall_cost(
    weights: Array,
    target: Array,
    wall_offsets: Array | None = None,
    wall_slope: float = 0.0,
    wall_cap: float = np.inf,
    terminal_scale: float = 1.0,
    domain_half_width: Array | None = None,
) -> TaskCost:
    """Quadratic pull toward a target plus a high-slope soft wall per coordinate.

    The wall on coordinate ``i`` activates once ``|x_i - target_i|`` exceeds
    ``wall_offsets[i]`` (``inf`` disables it) and grows linearly with slope
    ``wall_slope``, clipped at ``wall_cap`` so the cost stays Lipschitz with a
    known constant.  ``domain_half_width`` bounds the admissible box around the
    target and yields analytic Lipschitz constants over that box.
    """
    w = np.asarray(weights, dtype=float)
    t = np.asarray(target, dtype=float)
    if np.any(w < 0.0):
        raise ValueError("weights must be nonnegative")
    offsets = None if wall_offsets is None else np.asarray(wall_offsets, dtype=float)

    def q(x: Array) -> Array:
        d = np.asarray(x, dtype=float) - t
        val = np.sum(d * d * w, axis=-1)
        if offsets is not None and wall_slope > 0.0:
            # |d| - inf clips to zero, so an infinite offset disables that wall
            over = np.abs(d) - offsets
            val = val + wall_slope * np.sum(np.clip(over, 0.0, wall_cap), axis=-1)
        return val

    def phi(x: Array) -> Array:
        return terminal_scale * q(x)

    if domain_half_width is not None:
        half = np.asarray(domain_half_width, dtype=float)
        slope_active = np.zeros_like(w)
        if offsets is not None and wall_slope > 0.0:
            slope_active = np.where(np.isfinite(offsets), wall_slope, 0.0)
        grad_max = 2.0 * w * half + slope_active
        l_q = float(np.linalg.norm(grad_max))
    else:
        l_q = float("nan")
    return TaskCost(q, phi, l_q, terminal_scale * l_q)


class LipschitzEstimate(NamedTuple):
    lipschitz_q: float
    lipschitz_phi: float
    n_pairs: int


def lipschitz_estimate(
    cost: CostFunction,
    domain_sampler: Callable[[np.random.Generator, int], Array],
    n_pairs: int = 10000,
    seed: int = 0,
) -> LipschitzEstimate:
    """Empirical Lipschitz bounds for q and phi from sampled point pairs.

    ``domain_sampler(rng, n)`` must return ``(n, n_x)`` points from the task
    domain.  Pairs closer than a tiny threshold are discarded; if none remain
    the domain is degenerate and a ValueError is raised.
    """
    if n_pairs < 1:
        raise ValueError("n_pairs must be at least 1")
    rng = np.random.default_rng(seed)
    a = np.asarray(domain_sampler(rng, n_pairs), dtype=float)
    b = np.asarray(domain_sampler(rng, n_pairs), dtype=float)
    dist = np.linalg.norm(a - b, axis=-1)
    ok = dist > 1e-12
    if not np.any(ok):
        raise ValueError("degenerate domain: all sampled pairs coincide")
    dq = np.abs(cost.state_cost(a) - cost.state_cost(b))[ok]
    dphi = np.abs(cost.terminal_cost(a) - cost.terminal_cost(b))[ok]
    d = dist[ok]
    return LipschitzEstimate(float(np.max(dq / d)), float(np.max(dphi / d)), int(ok.sum()))
