"""Noise plans, Monte-Carlo free energy, importance weights and batched rollouts.

Determinism contract: every random stream is derived from the experiment seed
plus a (step, stream) path through :func:`derive_seed`, so a run is a pure
function of its config.  All cross-sample reductions (softmax sums, weighted
noise averages, free-energy log-sum-exp) operate on full per-sample arrays in
index order, and per-sample evaluation is elementwise, so splitting a batch
across workers cannot change any result bit.
"""
from __future__ import annotations

import csv
from dataclasses import dataclass

import numpy as np

from .costs import CostFunction, control_penalty_batch, control_penalty_coef

Array = np.ndarray

# Stream tags for seed derivation; one per independent noise consumer.
STREAM_ROLLOUT = 1
STREAM_NSP = 2
STREAM_EMV = 3
STREAM_PLANT = 4


class DegenerateSamplingError(RuntimeError):
    """Raised when a sample batch carries no usable information (all crashed)."""


def derive_seed(master: int, *path: int) -> int:
    """Stable child seed for a named stream below the master seed."""
    seq = np.random.SeedSequence([int(master), *[int(p) for p in path]])
    return int(seq.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class NoisePlan:
    """A frozen batch of control perturbations, reproducible from its seed."""

    seed: int
    draws: Array  # (n_samples, horizon, n_u)

    @classmethod
    def sample(cls, seed: int, n_samples: int, horizon: int, sigma_chol: Array) -> "NoisePlan":
        if n_samples < 1 or horizon < 1:
            raise ValueError("n_samples and horizon must be at least 1")
        sigma_chol = np.atleast_2d(np.asarray(sigma_chol, dtype=float))
        rng = np.random.default_rng(seed)
        z = rng.standard_normal((n_samples, horizon, sigma_chol.shape[0]))
        return cls(seed=seed, draws=z @ sigma_chol.T)

    @property
    def n_samples(self) -> int:
        return self.draws.shape[0]

    @property
    def horizon(self) -> int:
        return self.draws.shape[1]


@dataclass(frozen=True)
class FreeEnergyEstimate:
    """Monte-Carlo free energy of a cost batch."""

    value: float
    n_samples: int
    min_cost: float
    spread: float | None = None


def free_energy_mc(costs: Array, lam: float, spread: float | None = None) -> FreeEnergyEstimate:
    """-lam * log mean(exp(-costs/lam)), evaluated stably against the batch minimum.

    The estimate always lies in ``[min_cost, min_cost + lam*log(N)]``.
    """
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("free energy of an empty batch is undefined")
    if not np.all(np.isfinite(costs)):
        raise ValueError("free energy requires finite costs")
    if lam <= 0.0:
        raise ValueError(f"lam must be positive, got {lam}")
    m = float(np.min(costs))
    value = m - lam * float(np.log(np.mean(np.exp(-(costs - m) / lam))))
    return FreeEnergyEstimate(value=value, n_samples=costs.size, min_cost=m, spread=spread)


def softmax_weights(costs: Array, lam: float) -> Array:
    """Normalized exp(-costs/lam), stabilized against the minimum cost."""
    costs = np.asarray(costs, dtype=float)
    if costs.size == 0:
        raise ValueError("cannot weight an empty batch")
    if not np.all(np.isfinite(costs)):
        raise DegenerateSamplingError("non-finite costs in the sample batch")
    w = np.exp(-(costs - np.min(costs)) / lam)
    return w / np.sum(w)


def is_weight(costs: Array, controls: Array, draws: Array, sigma_inv: Array, lam: float) -> Array:
    """Normalized importance weights for rollouts sampled around a control plan.

    ``costs`` are the per-sample state path costs (no control penalty); the
    correction for sampling around ``controls`` instead of the zero-mean
    distribution is folded in analytically.  Equals the normalized density
    ratio ``exp(-S/lam) * p(V) / q(V)`` over the batch.
    """
    costs = np.asarray(costs, dtype=float)
    draws = np.asarray(draws, dtype=float)
    si_u = controls @ sigma_inv.T  # (T, n_u)
    # log p(V) - log q(V) = -sum_t (0.5*u_t + eps_t)^T Sigma^{-1} u_t
    correction = np.einsum("ntu,tu->n", 0.5 * controls[None, :, :] + draws, si_u)
    log_w = -costs / lam - correction
    log_w -= np.max(log_w)
    w = np.exp(log_w)
    return w / np.sum(w)


def weighted_noise(weights: Array, draws: Array) -> Array:
    """Weight-averaged noise sequence, shape ``(T, n_u)``."""
    return np.einsum("n,ntu->tu", weights, draws)


def shift_control_sequence(controls: Array) -> Array:
    """Receding-horizon shift: drop the first control, zero-pad the tail."""
    shifted = np.empty_like(controls)
    shifted[:-1] = controls[1:]
    shifted[-1] = 0.0
    return shifted


def mppi_update(
    controls: Array,
    weights: Array,
    draws: Array,
    smoothing_window: int = 0,
    smoothing_order: int = 3,
) -> Array:
    """Move the control plan toward the weighted noise average.

    ``smoothing_window > 0`` applies a Savitzky-Golay filter along the horizon
    after the update; it is off by default.
    """
    weights = np.asarray(weights, dtype=float)
    if np.any(weights < 0.0) or not np.all(np.isfinite(weights)) or np.sum(weights) <= 0.0:
        raise DegenerateSamplingError("sample weights degenerate (all zero or non-finite)")
    updated = controls + weighted_noise(weights, draws)
    if smoothing_window > 0:
        from scipy.signal import savgol_filter

        window = min(smoothing_window, updated.shape[0])
        if window > smoothing_order:
            updated = savgol_filter(updated, window, smoothing_order, axis=0)
    return updated


@dataclass(frozen=True)
class RolloutResult:
    """Per-sample rollout costs plus crash flags."""

    costs: Array
    state_costs: Array
    crashed: Array


def _worker_slices(n: int, workers: int) -> list[slice]:
    workers = max(1, min(int(workers), n))
    bounds = np.linspace(0, n, workers + 1, dtype=int)
    return [slice(a, b) for a, b in zip(bounds[:-1], bounds[1:]) if b > a]


def _state_rollout_chunk(
    model, cost: CostFunction, x0: Array, controls: Array, draws: Array
) -> tuple[Array, Array]:
    """Accumulate running + terminal state cost for one chunk of samples."""
    n = draws.shape[0]
    x = np.broadcast_to(x0, (n, model.n_x)).astype(float).copy() if x0.ndim == 1 else x0.astype(float).copy()
    s = np.zeros(n)
    alive = np.ones(n, dtype=bool)
    for t in range(controls.shape[0]):
        x = model.step(x, controls[t] + draws[:, t, :])
        bad = ~np.all(np.isfinite(x), axis=-1)
        if np.any(bad):
            alive &= ~bad
            x[bad] = 0.0  # park crashed samples; their cost is overwritten later
        s += np.where(alive, cost.state_cost(x), 0.0)
    s += np.where(alive, cost.terminal_cost(x), 0.0)
    return s, ~alive


def rollout_batch(
    model,
    cost: CostFunction,
    x0: Array,
    controls: Array,
    draws: Array,
    control_term: str = "plain",
    workers: int = 1,
) -> RolloutResult:
    """Propagate every sample under ``controls + draws`` and price the paths.

    ``x0`` may be a single state or one start per sample.  ``control_term``
    selects the penalty variant: "plain" (lam/2), "beta" (lam*(1-beta)/2) or
    "none".  Samples whose state stops being finite get ``cost.crash_cost``
    and are flagged.  Splitting across workers never changes the result.
    """
    x0 = np.asarray(x0, dtype=float)
    controls = np.asarray(controls, dtype=float)
    draws = np.asarray(draws, dtype=float)
    if draws.ndim != 3 or draws.shape[1] != controls.shape[0]:
        raise ValueError("draws must have shape (n_samples, horizon, n_u) matching controls")
    if x0.ndim == 2 and x0.shape[0] != draws.shape[0]:
        raise ValueError("per-sample starts must match the number of samples")
    n = draws.shape[0]

    parts = []
    for sl in _worker_slices(n, workers):
        x0_part = x0 if x0.ndim == 1 else x0[sl]
        parts.append(_state_rollout_chunk(model, cost, x0_part, controls, draws[sl]))
    state_costs = np.concatenate([p[0] for p in parts])
    crashed = np.concatenate([p[1] for p in parts])

    if control_term == "none":
        total = state_costs.copy()
    elif control_term in ("plain", "beta"):
        coef = control_penalty_coef(cost.lam, cost.beta, control_term == "beta")
        total = state_costs + control_penalty_batch(controls, draws, cost.sigma_inv, coef)
    else:
        raise ValueError(f"unknown control_term {control_term!r}")
    total = np.where(crashed, cost.crash_cost, total)
    return RolloutResult(costs=total, state_costs=state_costs, crashed=crashed)


def export_batch_csv(path, costs: Array, weights: Array) -> None:
    """Write (sample index, cost, weight) rows."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["sample", "cost", "weight"])
        for i, (c, w) in enumerate(zip(costs, weights)):
            writer.writerow([i, repr(float(c)), repr(float(w))])


class MppiController:
    """Vanilla MPPI: sample around the plan, reweight, apply the first control.

    The per-step rollout noise comes from the (seed, step, rollout) stream, so
    two controllers with the same seed see identical draws at the same step.
    """

    name = "mppi"

    def __init__(
        self,
        model,
        cost: CostFunction,
        n_samples: int,
        horizon: int,
        seed: int,
        smoothing_window: int = 0,
        workers: int = 1,
    ):
        self.model = model
        self.cost = cost
        self.n_samples = n_samples
        self.horizon = horizon
        self.seed = seed
        self.smoothing_window = smoothing_window
        self.workers = workers
        self.controls = np.zeros((horizon, model.n_u))
        self.step_index = 0
        self._prev_fe = None

    def step(self, x: Array) -> tuple[Array, dict]:
        x = np.asarray(x, dtype=float)
        plan = NoisePlan.sample(
            derive_seed(self.seed, self.step_index, STREAM_ROLLOUT),
            self.n_samples,
            self.horizon,
            self.cost.sigma_chol,
        )
        res = rollout_batch(
            self.model, self.cost, x, self.controls, plan.draws,
            control_term="plain", workers=self.workers,
        )
        degenerate = bool(res.crashed.all())
        if degenerate:
            action = self.model.clamp(self.controls[0])
            updated = self.controls
            fe = float(self.cost.crash_cost)
        else:
            weights = softmax_weights(res.costs, self.cost.lam)
            updated = mppi_update(self.controls, weights, plan.draws, self.smoothing_window)
            action = self.model.clamp(updated[0])
            fe = free_energy_mc(res.costs, self.cost.lam).value
        self.controls = shift_control_sequence(updated)
        dfe = 0.0 if self._prev_fe is None else fe - self._prev_fe
        self._prev_fe = fe
        info = {
            "fe_real": fe,
            "fe_nom": fe,
            "bound": np.inf,
            "dfe": dfe,
            "cand_idx": -1,
            "gamma_hat": np.nan,
            "emv": np.nan,
            "bound_no_d": np.inf,
            "degen": int(degenerate),
            "x_star": x.copy(),
        }
        self.step_index += 1
        return action, info
