"""Robust sampling controllers built around an augmented importance sampler.

Two controllers live here.  ``TubeMppiController`` runs a single optimization
from both the real and a nominal state and resets the nominal whenever the
free-energy gap stays below a threshold.  ``RmppiController`` propagates the
real and nominal systems jointly inside every rollout, applies a tracking
feedback law to the real copy, and scores each sample with a mixed cost that
caps the nominal contribution.  It also emits a per-step upper bound on the
growth of the real system's free energy, which the simulation harness checks
against the realized increments.
"""

from __future__ import annotations

from collections import deque
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .costs import (
    CostFunction,
    control_penalty_batch,
    control_penalty_coef,
    penalty_step_terms,
)
from .dynamics import SystemModel
from .feedback import FeedbackPolicy, fit_gamma_window
from .sampling import (
    STREAM_EMV,
    STREAM_NSP,
    STREAM_ROLLOUT,
    DegenerateSamplingError,
    NoisePlan,
    derive_seed,
    free_energy_mc,
    mppi_update,
    rollout_batch,
    shift_control_sequence,
    softmax_weights,
    weighted_noise,
    _worker_slices,
)

Array = np.ndarray


def mixed_cost(s_star: Array | float, s_hat: Array | float, alpha: float) -> Array | float:
    """Blend nominal and feedback-penalized costs, capping the penalized part.

    Returns ``0.5 * s_star + 0.5 * max(min(s_hat, alpha), s_star)``.  The cap
    keeps samples whose penalized cost exceeds ``alpha`` from dominating the
    blend, while the outer max keeps the result at least as large as the
    nominal cost.  The blend stays below ``alpha`` exactly when the nominal
    cost does, a property the threshold tests rely on.
    """
    return 0.5 * s_star + 0.5 * np.maximum(np.minimum(s_hat, alpha), s_star)


def feedback_penalized_cost(
    state_cost: Array | float,
    feedback_controls: Array,
    lam: float,
    beta: float,
    sigma_inv: Array,
) -> Array | float:
    """Add the quadratic feedback-effort penalty to a state cost.

    ``feedback_controls`` holds the corrections applied along one trajectory,
    shape ``(T, n_u)``.  The penalty is ``(lam * (1 - beta) / 2) * sum_t
    k_t^T Sigma^{-1} k_t``.
    """
    ks = np.atleast_2d(np.asarray(feedback_controls, dtype=float))
    pen = np.einsum("tu,uv,tv->", ks, sigma_inv, ks)
    return state_cost + control_penalty_coef(lam, beta, beta_weighted=True) * pen


@dataclass(frozen=True)
class AugmentedRollout:
    """Per-sample cost channels from one augmented batch.

    ``nominal`` is the pure state cost of the nominal copy, ``penalized`` adds
    the feedback-effort penalty to the real copy's state cost, ``real`` is the
    full importance-corrected cost of the real copy, and ``mixed`` is the
    capped blend plus the plain control penalty, used to update the plan.
    ``nominal_eval`` scores the nominal copy the same way candidate states are
    scored during nominal propagation, so free energies computed from it are
    comparable across the two code paths.
    """

    nominal: Array
    penalized: Array
    real: Array
    mixed: Array
    nominal_eval: Array
    draws: Array
    crashed: Array


def _augmented_chunk(
    model: SystemModel,
    cost: CostFunction,
    x0: Array,
    x0_star: Array,
    controls: Array,
    policy: FeedbackPolicy,
    draws: Array,
) -> tuple[Array, Array, Array, Array, Array]:
    """Co-propagate real and nominal copies for one chunk of samples."""
    n = draws.shape[0]
    horizon = controls.shape[0]
    x = np.broadcast_to(x0, (n, x0.shape[0])).copy()
    xs = np.broadcast_to(x0_star, (n, x0_star.shape[0])).copy()
    state_real = np.zeros(n)
    state_nom = np.zeros(n)
    fb_terms = np.zeros((n, horizon))
    ctrl_real_terms = np.zeros((n, horizon))
    alive = np.ones(n, dtype=bool)
    zeros = np.zeros(n)
    for t in range(horizon):
        k_fb = policy.apply_batch(x, xs, t)
        u_eff = controls[t] + k_fb
        x = model.step(x, u_eff + draws[:, t])
        xs = model.step(xs, controls[t] + draws[:, t])
        bad = ~(np.isfinite(x).all(axis=1) & np.isfinite(xs).all(axis=1))
        if bad.any():
            alive &= ~bad
            x[bad] = 0.0
            xs[bad] = 0.0
        state_real = state_real + np.where(alive, cost.state_cost(x), zeros)
        state_nom = state_nom + np.where(alive, cost.state_cost(xs), zeros)
        fb_terms[:, t] = penalty_step_terms(k_fb, np.zeros_like(k_fb), cost.sigma_inv)
        ctrl_real_terms[:, t] = penalty_step_terms(u_eff, draws[:, t], cost.sigma_inv)
    state_real = state_real + np.where(alive, cost.terminal_cost(x), zeros)
    state_nom = state_nom + np.where(alive, cost.terminal_cost(xs), zeros)
    return state_real, state_nom, fb_terms, ctrl_real_terms, ~alive


def augmented_rollouts(
    model: SystemModel,
    cost: CostFunction,
    x0: Array,
    x0_star: Array,
    controls: Array,
    policy: FeedbackPolicy,
    draws: Array,
    alpha: float,
    workers: int = 1,
) -> AugmentedRollout:
    """Evaluate every cost channel over a batch of shared noise draws.

    Each sample propagates two copies of the system from the same draws: the
    nominal copy applies ``u + eps`` and the real copy additionally applies
    the tracking correction ``k = policy(x, x_star, t)``.  State costs
    accumulate after each step, terminal cost at the end.  The channels are
    then assembled as

    - ``penalized = state_real + (lam(1-beta)/2) sum k^T Sigma^{-1} k``
    - ``real = state_real + (lam(1-beta)/2) sum (u+k)^T Sigma^{-1} (u+k+2 eps)``
    - ``mixed = mixed_cost(state_nom, penalized, alpha)
      + (lam/2) sum u^T Sigma^{-1} (u+2 eps)``

    Samples where either copy leaves the finite range are marked crashed and
    priced at ``cost.crash_cost`` in every channel.  Worker chunking affects
    scheduling only; results are identical for any worker count.
    """
    x0 = np.asarray(x0, dtype=float)
    x0_star = np.asarray(x0_star, dtype=float)
    parts = [
        _augmented_chunk(model, cost, x0, x0_star, controls, policy, draws[sl])
        for sl in _worker_slices(draws.shape[0], workers)
    ]
    state_real = np.concatenate([p[0] for p in parts])
    state_nom = np.concatenate([p[1] for p in parts])
    fb_terms = np.concatenate([p[2] for p in parts])
    ctrl_real_terms = np.concatenate([p[3] for p in parts])
    crashed = np.concatenate([p[4] for p in parts])

    coef_beta = control_penalty_coef(cost.lam, cost.beta, beta_weighted=True)
    coef_plain = control_penalty_coef(cost.lam, cost.beta, beta_weighted=False)
    penalized = state_real + coef_beta * fb_terms.sum(axis=1)
    real = state_real + coef_beta * ctrl_real_terms.sum(axis=1)
    ctrl_plain = control_penalty_batch(controls, draws, cost.sigma_inv, coef_plain)
    ctrl_beta = control_penalty_batch(controls, draws, cost.sigma_inv, coef_beta)
    mixed = mixed_cost(state_nom, penalized, alpha) + ctrl_plain
    nominal_eval = state_nom + ctrl_beta

    if crashed.any():
        for channel in (state_nom, penalized, real, mixed, nominal_eval):
            channel[crashed] = cost.crash_cost
    return AugmentedRollout(
        nominal=state_nom,
        penalized=penalized,
        real=real,
        mixed=mixed,
        nominal_eval=nominal_eval,
        draws=draws,
        crashed=crashed,
    )


def augmented_density_ratio(
    u_seq: Array, k_seq: Array, eps_seq: Array, sigma_inv: Array
) -> float:
    """Importance weight of one noise sequence under the shifted proposal.

    The proposal draws controls around ``u + k`` while the target density is
    zero-mean, so the ratio for a realized noise ``eps`` is
    ``exp(-0.5 * sum_t (u_t+k_t)^T Sigma^{-1} (u_t+k_t+2 eps_t))``.
    """
    u_seq = np.atleast_2d(np.asarray(u_seq, dtype=float))
    k_seq = np.atleast_2d(np.asarray(k_seq, dtype=float))
    eps_seq = np.atleast_2d(np.asarray(eps_seq, dtype=float))
    shifted = u_seq + k_seq
    quad = np.einsum("tu,uv,tv->", shifted, sigma_inv, shifted + 2.0 * eps_seq)
    return float(np.exp(-0.5 * quad))


@dataclass(frozen=True)
class NominalDecision:
    """Outcome of one nominal-state propagation."""

    index: int
    candidates: Array
    free_energies: Array
    feasible: Array
    control_sequence: Array
    fallback: bool


def nominal_state_propagation(
    model: SystemModel,
    cost: CostFunction,
    x: Array,
    x_star_prev: Array,
    x_star_prop: Array,
    controls: Array,
    alpha: float,
    n_candidates: int,
    draws: Array,
    workers: int = 1,
) -> NominalDecision:
    """Choose the next nominal state from a line of interpolated candidates.

    Candidates 0..R sit on the two-segment polyline from the previous nominal
    state through the propagated nominal state (at index ``R // 2``) to the
    measured real state (at index ``R``).  Candidate 0 keeps the current plan;
    every other candidate is evaluated under the plan shifted by one step.
    All candidates share the same noise draws, so their free-energy estimates
    differ only through the start state.  Among candidates whose estimate is
    at most ``alpha``, the one closest to the real state wins, ties going to
    the lowest index.  If none qualifies the previous nominal state is kept,
    the plan is left unshifted, and ``fallback`` is set.
    """
    r = int(n_candidates)
    if r < 2:
        raise ValueError("n_candidates must be at least 2")
    x = np.asarray(x, dtype=float)
    x_star_prev = np.asarray(x_star_prev, dtype=float)
    x_star_prop = np.asarray(x_star_prop, dtype=float)

    mid = r // 2
    candidates = np.empty((r + 1, x.shape[0]))
    for i in range(mid + 1):
        s = i / mid
        candidates[i] = (1.0 - s) * x_star_prev + s * x_star_prop
    for i in range(mid + 1, r + 1):
        s = (i - mid) / (r - mid)
        candidates[i] = (1.0 - s) * x_star_prop + s * x
    candidates[r] = x

    shifted = shift_control_sequence(controls)
    n = draws.shape[0]
    free_energies = np.empty(r + 1)
    res0 = rollout_batch(
        model, cost, candidates[0], controls, draws, control_term="beta", workers=workers
    )
    free_energies[0] = free_energy_mc(res0.costs, cost.lam).value
    starts = np.repeat(candidates[1:], n, axis=0)
    tiled = np.tile(draws, (r, 1, 1))
    res = rollout_batch(
        model, cost, starts, shifted, tiled, control_term="beta", workers=workers
    )
    grouped = res.costs.reshape(r, n)
    for i in range(r):
        free_energies[i + 1] = free_energy_mc(grouped[i], cost.lam).value

    feasible = free_energies <= alpha
    distances = np.linalg.norm(candidates - x, axis=1)
    fallback = not feasible.any()
    if fallback:
        index = 0
    else:
        index = int(np.argmin(np.where(feasible, distances, np.inf)))
    control_sequence = np.array(controls) if index == 0 else shifted
    return NominalDecision(
        index=index,
        candidates=candidates,
        free_energies=free_energies,
        feasible=feasible,
        control_sequence=control_sequence,
        fallback=fallback,
    )


@dataclass(frozen=True)
class BoundParams:
    """Constants entering the free-energy growth bound."""

    alpha: float
    gamma: float
    horizon: int
    lipschitz_q: float
    lipschitz_phi: float
    emv: float
    w_bound: float

    def __post_init__(self) -> None:
        if not 0.0 < self.gamma < 1.0:
            raise ValueError(f"gamma must lie in (0, 1), got {self.gamma}")
        if self.horizon < 1:
            raise ValueError("horizon must be positive")
        for name in ("lipschitz_q", "lipschitz_phi", "emv", "w_bound"):
            v = getattr(self, name)
            if not np.isfinite(v) or v < 0.0:
                raise ValueError(f"{name} must be finite and nonnegative, got {v}")


def free_energy_growth_bound(
    params: BoundParams,
    model: SystemModel,
    x: Array,
    x_star: Array,
    u: Array,
    fe_nominal: float,
    include_w_bound: bool = True,
) -> float:
    """Upper bound on the next increment of the real system's free energy.

    The bound combines the slack left under the threshold, twice the
    Monte-Carlo estimation noise, and a tracking term: the worst-case state
    deviation over one step, contracted at rate ``gamma`` and propagated
    through the stage and terminal cost Lipschitz constants,

    ``(alpha - fe_nominal) + 2*emv
    + (L_phi * gamma^T + L_q * (1 - gamma^T) / (1 - gamma)) * D``

    where ``D`` sums the one-step nominal motion, the current tracking
    offset, and (unless disabled) the additive disturbance radius.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    step_motion = float(np.linalg.norm(model.step(x, u) - x))
    offset = float(np.linalg.norm(x_star - x))
    deviation = step_motion + offset
    if include_w_bound:
        deviation += params.w_bound
    g_t = params.gamma ** params.horizon
    factor = params.lipschitz_phi * g_t + params.lipschitz_q * (1.0 - g_t) / (
        1.0 - params.gamma
    )
    return (params.alpha - fe_nominal) + 2.0 * params.emv + factor * deviation


@dataclass(frozen=True)
class TubeStepResult:
    action: Array
    controls: Array
    x_star: Array
    reset: bool
    fe_real: float
    fe_nom: float
    degenerate: bool


def tube_mppi_step(
    model: SystemModel,
    cost: CostFunction,
    x: Array,
    x_star: Array,
    controls: Array,
    policy: FeedbackPolicy,
    draws: Array,
    alpha: float,
    smoothing_window: int = 0,
    workers: int = 1,
) -> TubeStepResult:
    """One tube controller update from the measured and nominal states.

    Both optimizations share the same draws.  The nominal state resets to the
    measured state, and the plan follows the real-state optimization, exactly
    when ``fe_real - fe_nom < alpha``; otherwise the nominal plan is kept and
    the nominal state continues open loop.  The executed action adds the
    tracking correction toward the (possibly reset) nominal state.
    """
    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    res_nom = rollout_batch(
        model, cost, x_star, controls, draws, control_term="plain", workers=workers
    )
    res_real = rollout_batch(
        model, cost, x, controls, draws, control_term="plain", workers=workers
    )
    if res_nom.crashed.all() or res_real.crashed.all():
        action = model.clamp(controls[0] + policy.apply(x, x_star, 0))
        return TubeStepResult(
            action=action,
            controls=shift_control_sequence(controls),
            x_star=model.step(x_star, controls[0]),
            reset=False,
            fe_real=cost.crash_cost,
            fe_nom=cost.crash_cost,
            degenerate=True,
        )
    fe_nom = free_energy_mc(res_nom.costs, cost.lam).value
    fe_real = free_energy_mc(res_real.costs, cost.lam).value
    u_nom = mppi_update(
        controls, softmax_weights(res_nom.costs, cost.lam), draws, smoothing_window
    )
    u_real = mppi_update(
        controls, softmax_weights(res_real.costs, cost.lam), draws, smoothing_window
    )
    reset = fe_real - fe_nom < alpha
    if reset:
        x_star_next = x.copy()
        chosen = u_real
    else:
        x_star_next = x_star
        chosen = u_nom
    action = model.clamp(chosen[0] + policy.apply(x, x_star_next, 0))
    return TubeStepResult(
        action=action,
        controls=shift_control_sequence(chosen),
        x_star=model.step(x_star_next, chosen[0]),
        reset=reset,
        fe_real=fe_real,
        fe_nom=fe_nom,
        degenerate=False,
    )


class TubeMppiController:
    """Receding-horizon tube controller with a nominal-state reset rule."""

    def __init__(
        self,
        model: SystemModel,
        cost: CostFunction,
        n_samples: int,
        horizon: int,
        seed: int,
        policy_factory: Callable[[Array, Array], FeedbackPolicy],
        alpha: float,
        x_star0: Array | None = None,
        smoothing_window: int = 0,
        workers: int = 1,
    ) -> None:
        self.model = model
        self.cost = cost
        self.n_samples = int(n_samples)
        self.horizon = int(horizon)
        self.seed = int(seed)
        self.policy_factory = policy_factory
        self.alpha = float(alpha)
        self.smoothing_window = smoothing_window
        self.workers = workers
        self.controls = np.zeros((self.horizon, model.n_u))
        self.x_star = None if x_star0 is None else np.asarray(x_star0, dtype=float).copy()
        self.step_index = 0
        self.reset_count = 0
        self._prev_fe = None

    def step(self, x: Array) -> tuple[Array, dict]:
        x = np.asarray(x, dtype=float)
        if self.x_star is None:
            self.x_star = x.copy()
        policy = self.policy_factory(self.x_star, self.controls)
        plan = NoisePlan.sample(
            derive_seed(self.seed, self.step_index, STREAM_ROLLOUT),
            self.n_samples,
            self.horizon,
            self.cost.sigma_chol,
        )
        result = tube_mppi_step(
            self.model,
            self.cost,
            x,
            self.x_star,
            self.controls,
            policy,
            plan.draws,
            self.alpha,
            self.smoothing_window,
            self.workers,
        )
        self.controls = result.controls
        x_star_logged = self.x_star if result.degenerate else (
            x.copy() if result.reset else self.x_star
        )
        self.x_star = result.x_star
        if result.reset:
            self.reset_count += 1
        dfe = 0.0 if self._prev_fe is None else result.fe_real - self._prev_fe
        self._prev_fe = result.fe_real
        info = {
            "fe_real": result.fe_real,
            "fe_nom": result.fe_nom,
            "bound": np.inf,
            "bound_no_d": np.inf,
            "dfe": dfe,
            "cand_idx": -1,
            "gamma_hat": np.nan,
            "emv": np.nan,
            "degen": int(result.degenerate),
            "reset": result.reset,
            "x_star": x_star_logged.copy(),
        }
        self.step_index += 1
        return result.action, info


def estimate_value_noise(
    model: SystemModel,
    cost: CostFunction,
    x_star: Array,
    controls: Array,
    seed: int,
    repeats: int,
    n_samples: int,
    workers: int = 1,
) -> tuple[float, Array]:
    """Spread of repeated reduced-sample free-energy estimates at one state.

    Draws ``repeats`` independent batches of ``n_samples`` rollouts from the
    nominal state and returns three sample standard deviations of the
    resulting estimates together with the estimates themselves.
    """
    plan = NoisePlan.sample(seed, repeats * n_samples, controls.shape[0], cost.sigma_chol)
    res = rollout_batch(
        model, cost, x_star, controls, plan.draws, control_term="beta", workers=workers
    )
    grouped = res.costs.reshape(repeats, n_samples)
    estimates = np.array(
        [free_energy_mc(grouped[k], cost.lam).value for k in range(repeats)]
    )
    return 3.0 * float(np.std(estimates, ddof=1)), estimates


@dataclass
class RmppiSettings:
    """Knobs for the robust controller beyond model and cost."""

    n_samples: int
    horizon: int
    alpha: float
    n_candidates: int = 8
    nsp_samples: int = 64
    emv_repeats: int = 8
    smoothing_window: int = 0
    workers: int = 1
    gamma: float | None = None
    gamma_window: int = 20
    gamma_clip: float = 1e-3
    w_bound: float = 0.0


class RmppiController:
    """Robust controller: augmented sampling, tracking feedback, bound output.

    Each call to :meth:`step` first resolves the nominal-state update deferred
    from the previous call (it needs the newly measured state), then rebuilds
    the tracking policy about the nominal plan, evaluates the augmented batch,
    and produces the action ``U_0 + K(x - x_star) + weighted noise`` where the
    noise weights come from the real-cost channel and the plan update weights
    from the mixed channel.  The info dict carries the forward-looking growth
    bound for the next free-energy increment.
    """

    def __init__(
        self,
        model: SystemModel,
        cost: CostFunction,
        settings: RmppiSettings,
        seed: int,
        policy_factory: Callable[[Array, Array], FeedbackPolicy],
        x_star0: Array | None = None,
    ) -> None:
        if cost.lipschitz_q is None or cost.lipschitz_phi is None:
            raise ValueError("growth bound needs lipschitz_q and lipschitz_phi on the cost")
        self.model = model
        self.cost = cost
        self.s = settings
        self.seed = int(seed)
        self.policy_factory = policy_factory
        self.controls = np.zeros((settings.horizon, model.n_u))
        self.x_star = None if x_star0 is None else np.asarray(x_star0, dtype=float).copy()
        self.step_index = 0
        self._nsp_pending = False
        self._last_cand_idx = -1
        self._nsp_fallbacks = 0
        self._residuals: deque[float] = deque(maxlen=settings.gamma_window)
        self.contraction_violations = 0
        self._prev_fe = None

    def _resolve_nominal(self, x: Array) -> None:
        """Run the deferred nominal-state update against the new measurement."""
        if not self._nsp_pending:
            return
        self._nsp_pending = False
        x_star_prop = self.model.step(self.x_star, self.controls[0])
        plan = NoisePlan.sample(
            derive_seed(self.seed, self.step_index, STREAM_NSP),
            self.s.nsp_samples,
            self.s.horizon,
            self.cost.sigma_chol,
        )
        decision = nominal_state_propagation(
            self.model,
            self.cost,
            x,
            self.x_star,
            x_star_prop,
            self.controls,
            self.s.alpha,
            self.s.n_candidates,
            plan.draws,
            self.s.workers,
        )
        self.x_star = decision.candidates[decision.index].copy()
        self.controls = decision.control_sequence
        self._last_cand_idx = decision.index
        if decision.fallback:
            self._nsp_fallbacks += 1

    def _tracking_gamma(self) -> float:
        if self.s.gamma is not None:
            return self.s.gamma
        return fit_gamma_window(np.array(self._residuals), self.s.gamma_clip)

    def step(self, x: Array) -> tuple[Array, dict]:
        x = np.asarray(x, dtype=float)
        if self.x_star is None:
            self.x_star = x.copy()
        self._resolve_nominal(x)
        self._residuals.append(float(np.linalg.norm(x - self.x_star)))
        cand_idx = self._last_cand_idx
        self._last_cand_idx = -1

        policy = self.policy_factory(self.x_star, self.controls)
        if hasattr(policy, "contraction_step_ok"):
            if not policy.contraction_step_ok(self.model, x, self.x_star, self.controls[0]):
                self.contraction_violations += 1
        plan = NoisePlan.sample(
            derive_seed(self.seed, self.step_index, STREAM_ROLLOUT),
            self.s.n_samples,
            self.s.horizon,
            self.cost.sigma_chol,
        )
        roll = augmented_rollouts(
            self.model,
            self.cost,
            x,
            self.x_star,
            self.controls,
            policy,
            plan.draws,
            self.s.alpha,
            self.s.workers,
        )
        feedback0 = policy.apply(x, self.x_star, 0)
        degenerate = bool(roll.crashed.all())
        if degenerate:
            action = self.model.clamp(self.controls[0] + feedback0)
            fe_real = self.cost.crash_cost
            fe_nom = self.cost.crash_cost
            self.x_star = self.model.step(self.x_star, self.controls[0])
            self.controls = shift_control_sequence(self.controls)
        else:
            w_real = softmax_weights(roll.real, self.cost.lam)
            w_nom = softmax_weights(roll.mixed, self.cost.lam)
            action = self.model.clamp(
                (self.controls[0] + feedback0) + weighted_noise(w_real, plan.draws)[0]
            )
            fe_real = free_energy_mc(roll.real, self.cost.lam).value
            fe_nom = free_energy_mc(roll.nominal_eval, self.cost.lam).value
            self.controls = mppi_update(
                self.controls, w_nom, plan.draws, self.s.smoothing_window
            )
            self._nsp_pending = True

        emv, _ = estimate_value_noise(
            self.model,
            self.cost,
            self.x_star,
            self.controls,
            derive_seed(self.seed, self.step_index, STREAM_EMV),
            self.s.emv_repeats,
            max(self.s.n_samples // self.s.emv_repeats, 2),
            self.s.workers,
        )
        gamma_hat = self._tracking_gamma()
        params = BoundParams(
            alpha=self.s.alpha,
            gamma=gamma_hat,
            horizon=self.s.horizon,
            lipschitz_q=self.cost.lipschitz_q,
            lipschitz_phi=self.cost.lipschitz_phi,
            emv=emv,
            w_bound=self.s.w_bound,
        )
        bound = free_energy_growth_bound(
            params, self.model, x, self.x_star, action, fe_nom, include_w_bound=True
        )
        bound_no_d = free_energy_growth_bound(
            params, self.model, x, self.x_star, action, fe_nom, include_w_bound=False
        )
        dfe = 0.0 if self._prev_fe is None else fe_real - self._prev_fe
        self._prev_fe = fe_real
        info = {
            "fe_real": fe_real,
            "fe_nom": fe_nom,
            "bound": bound,
            "bound_no_d": bound_no_d,
            "dfe": dfe,
            "cand_idx": cand_idx,
            "gamma_hat": gamma_hat,
            "emv": emv,
            "degen": int(degenerate),
            "x_star": self.x_star.copy(),
        }
        self.step_index += 1
        return action, info
