"""Closed-loop simulation harness: build, run, log, and check the bound.

The harness owns everything outside the controller: constructing the model,
cost, disturbance, and feedback policy from an :class:`ExperimentConfig`,
driving the plant with the controller in the loop, writing a fixed-schema
run log, and verifying the free-energy growth bound against the realized
increments.  The plant noise stream is derived per step from the experiment
seed, so two controllers run under the same seed face identical disturbance
realizations regardless of what actions they take.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass, field

import numpy as np

from .config import ExperimentConfig, render_config
from .costs import CostFunction, quadratic_wall_cost
from .dynamics import DisturbanceModel, SystemModel, make_system, nominal_trajectory
from .feedback import (
    LinearGainsPolicy,
    ZeroFeedback,
    contraction_feedback,
    ilqg_gains,
)
from .rmppi import RmppiController, RmppiSettings, TubeMppiController
from .sampling import STREAM_PLANT, MppiController, derive_seed

Array = np.ndarray

_INFO_COLUMNS = [
    "fe_real",
    "fe_nom",
    "bound",
    "dfe",
    "cand_idx",
    "gamma_hat",
    "emv",
    "bound_no_d",
    "degen",
]


def log_columns(n_x: int, n_u: int) -> list[str]:
    """Fixed column schema for a run log with the given state/control sizes."""
    cols = ["step", "t"] + list(_INFO_COLUMNS) + ["crash"]
    cols += [f"x{i}" for i in range(n_x)]
    cols += [f"xs{i}" for i in range(n_x)]
    cols += [f"u{i}" for i in range(n_u)]
    return cols


@dataclass
class RunLog:
    """One run: column schema, numeric rows, config echo, and summary stats."""

    columns: list[str]
    rows: list[list[float]] = field(default_factory=list)
    config_text: str = ""
    summary: dict = field(default_factory=dict)

    def column(self, name: str) -> Array:
        idx = self.columns.index(name)
        return np.array([row[idx] for row in self.rows])

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(self.columns)
            for row in self.rows:
                writer.writerow([repr(float(v)) for v in row])

    @classmethod
    def from_csv(cls, path) -> "RunLog":
        with open(path, newline="") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            rows = [[float(v) for v in row] for row in reader if row]
        return cls(columns=header, rows=rows)


def build_model(cfg: ExperimentConfig) -> SystemModel:
    kwargs = {"dt": cfg.dt, "control_limit": cfg.control_limit}
    if cfg.system == "nonlinear_benchmark":
        kwargs["damping"] = cfg.damping
    return make_system(cfg.system, **kwargs)


def build_cost(cfg: ExperimentConfig, model: SystemModel) -> CostFunction:
    if len(cfg.sigma) != model.n_u:
        raise ValueError(
            f"cost.sigma has {len(cfg.sigma)} entries but the system has {model.n_u} controls"
        )
    if len(cfg.q_weights) != model.n_x or len(cfg.target) != model.n_x:
        raise ValueError("cost.q_weights and cost.target must match the state dimension")
    if len(cfg.crash_box) != model.n_x:
        raise ValueError("harness.crash_box must match the state dimension")
    task = quadratic_wall_cost(
        weights=np.array(cfg.q_weights),
        target=np.array(cfg.target),
        wall_offsets=None if cfg.wall_offsets is None else np.array(cfg.wall_offsets),
        wall_slope=cfg.wall_slope,
        wall_cap=cfg.wall_cap,
        terminal_scale=cfg.terminal_scale,
        domain_half_width=np.array(cfg.crash_box),
    )
    sigma = np.diag(np.square(np.array(cfg.sigma)))
    return CostFunction(
        state_cost=task.state_cost,
        terminal_cost=task.terminal_cost,
        sigma=sigma,
        lam=cfg.lam,
        beta=cfg.beta,
        lipschitz_q=task.lipschitz_q,
        lipschitz_phi=task.lipschitz_phi,
        crash_cost=cfg.crash_cost,
    )


def build_policy_factory(cfg: ExperimentConfig, model: SystemModel):
    """Return (factory, analytic_gamma).

    The factory maps (nominal state, control plan) to a feedback policy.  For
    the contraction law the policy is state-independent and the tracking rate
    has the closed form ``exp(-lambda_c * dt)``; gain-scheduled feedback is
    rebuilt around the current plan on every call and has no analytic rate.
    """
    if cfg.feedback_kind == "none":
        policy = ZeroFeedback(model.n_u)
        return (lambda x_star, controls: policy), None
    if cfg.feedback_kind == "contraction":
        n = model.n_x
        metric = np.array(cfg.metric, dtype=float).reshape(n, n)
        policy = contraction_feedback(
            model, metric, cfg.lambda_c, effort_weight=cfg.effort_weight
        )
        return (lambda x_star, controls: policy), float(np.exp(-cfg.lambda_c * model.dt))
    if cfg.feedback_kind == "ilqg":
        q_track = np.diag(np.array(cfg.q_track, dtype=float))
        r_track = np.diag(np.array(cfg.r_track, dtype=float))

        def factory(x_star: Array, controls: Array) -> LinearGainsPolicy:
            states = nominal_trajectory(model, x_star, controls)
            return ilqg_gains(model, states, controls, q_track, r_track)

        return factory, None
    raise ValueError(f"unknown feedback kind {cfg.feedback_kind!r}")


def build_controller(cfg: ExperimentConfig, model: SystemModel, cost: CostFunction):
    factory, analytic_gamma = build_policy_factory(cfg, model)
    x0 = np.array(cfg.x0, dtype=float)
    if cfg.controller == "mppi":
        return MppiController(
            model,
            cost,
            cfg.n_samples,
            cfg.horizon,
            cfg.seed,
            smoothing_window=cfg.smoothing_window,
            workers=cfg.workers,
        )
    if cfg.controller == "tube":
        return TubeMppiController(
            model,
            cost,
            cfg.n_samples,
            cfg.horizon,
            cfg.seed,
            factory,
            cfg.alpha,
            x_star0=x0,
            smoothing_window=cfg.smoothing_window,
            workers=cfg.workers,
        )
    if cfg.controller == "rmppi":
        settings = RmppiSettings(
            n_samples=cfg.n_samples,
            horizon=cfg.horizon,
            alpha=cfg.alpha,
            n_candidates=cfg.n_candidates,
            nsp_samples=cfg.nsp_samples,
            emv_repeats=cfg.emv_repeats,
            smoothing_window=cfg.smoothing_window,
            workers=cfg.workers,
            gamma=analytic_gamma,
            gamma_window=cfg.gamma_window,
            gamma_clip=cfg.gamma_clip,
            w_bound=cfg.w_bound,
        )
        return RmppiController(model, cost, settings, cfg.seed, factory, x_star0=x0)
    raise ValueError(f"unknown controller {cfg.controller!r}")


def run_closed_loop(cfg: ExperimentConfig) -> RunLog:
    """Simulate one controller against the disturbed plant and log every step.

    The plant applies the commanded action plus model-scale control noise
    inflated by ``disturbance.noise_multiplier``, then adds a uniform-ball
    state disturbance of radius ``disturbance.w_bound``.  The run stops early
    if the state leaves the crash box around the target.
    """
    model = build_model(cfg)
    cost = build_cost(cfg, model)
    controller = build_controller(cfg, model, cost)
    disturbance = DisturbanceModel(
        noise_multiplier=cfg.noise_multiplier, w_bound=cfg.w_bound
    )
    target = np.array(cfg.target, dtype=float)
    box = np.array(cfg.crash_box, dtype=float)

    log = RunLog(columns=log_columns(model.n_x, model.n_u))
    log.config_text = render_config(cfg)
    x = np.array(cfg.x0, dtype=float)
    crashed = False
    state_costs = []
    for t in range(cfg.steps):
        action, info = controller.step(x)
        state_costs.append(float(cost.state_cost(x)))
        rng = np.random.default_rng(derive_seed(cfg.seed, t, STREAM_PLANT))
        eps = disturbance.control_noise(rng, cost.sigma_chol)
        w = disturbance.state_disturbance(rng, model.n_x)
        x_next = model.step(x, action + eps) + w
        crashed = bool(
            np.any(np.abs(x_next - target) > box) or not np.all(np.isfinite(x_next))
        )
        row = [float(t), float(t * model.dt)]
        row += [float(info[k]) for k in _INFO_COLUMNS]
        row.append(float(crashed))
        row += [float(v) for v in x]
        row += [float(v) for v in info["x_star"]]
        row += [float(v) for v in action]
        log.rows.append(row)
        if crashed:
            break
        x = x_next

    check = verify_bound(log)
    log.summary = {
        "name": cfg.name,
        "controller": cfg.controller,
        "steps_run": len(log.rows),
        "completed": len(log.rows) == cfg.steps and not crashed,
        "crashed": crashed,
        "mean_state_cost": float(np.mean(state_costs)) if state_costs else float("nan"),
        "final_state": [float(v) for v in x],
        "fe_real_mean": float(np.mean(log.column("fe_real"))) if log.rows else float("nan"),
        "fe_real_max": float(np.max(log.column("fe_real"))) if log.rows else float("nan"),
        "bound_checked_steps": int(check.checked),
        "bound_violation_rate": float(check.rate),
        "bound_mean_margin": float(check.mean_margin),
        "tube_resets": int(getattr(controller, "reset_count", 0)),
        "nsp_fallbacks": int(getattr(controller, "_nsp_fallbacks", 0)),
        "contraction_violations": int(getattr(controller, "contraction_violations", 0)),
        "degen_steps": int(np.sum(log.column("degen"))) if log.rows else 0,
    }
    return log


@dataclass(frozen=True)
class BoundCheck:
    """Result of checking realized free-energy increments against the bound.

    Row ``k`` of a run log carries the bound for the increment realized
    between rows ``k`` and ``k+1``, so ``dfe[k+1]`` is compared with
    ``bound[k]``.  Rows whose bound is infinite (controllers that do not
    emit one) are skipped.
    """

    checked: int
    violations: Array
    rate: float
    mean_margin: float


def verify_bound(log: RunLog) -> BoundCheck:
    if len(log.rows) < 2:
        return BoundCheck(0, np.zeros(0, dtype=bool), 0.0, float("nan"))
    bound = log.column("bound")[:-1]
    dfe = log.column("dfe")[1:]
    valid = np.isfinite(bound)
    if not valid.any():
        return BoundCheck(0, np.zeros(0, dtype=bool), 0.0, float("nan"))
    violations = dfe[valid] > bound[valid]
    margin = bound[valid] - dfe[valid]
    return BoundCheck(
        checked=int(valid.sum()),
        violations=violations,
        rate=float(np.mean(violations)),
        mean_margin=float(np.mean(margin)),
    )


def compare_controllers(
    cfg: ExperimentConfig, controllers: tuple[str, ...] = ("mppi", "tube", "rmppi")
) -> dict[str, RunLog]:
    """Run several controllers under identical plant noise realizations.

    Everything except the controller (and run name) is held fixed; the
    per-step plant stream depends only on the experiment seed, so each
    controller faces the same disturbance sequence.
    """
    results = {}
    for name in controllers:
        sub = cfg.with_values(
            **{"experiment.controller": name, "experiment.name": f"{cfg.name}-{name}"}
        )
        results[name] = run_closed_loop(sub)
    return results


def summary_table(results: dict[str, RunLog]) -> str:
    """Plain-text comparison table, one controller per row."""
    headers = ["controller", "steps", "crashed", "mean_cost", "fe_mean", "viol_rate"]
    lines = ["  ".join(f"{h:>10}" for h in headers)]
    for name, log in results.items():
        s = log.summary
        cells = [
            name,
            str(s["steps_run"]),
            str(s["crashed"]),
            f"{s['mean_state_cost']:.4g}",
            f"{s['fe_real_mean']:.4g}",
            f"{s['bound_violation_rate']:.3f}",
        ]
        lines.append("  ".join(f"{c:>10}" for c in cells))
    return "\n".join(lines)
