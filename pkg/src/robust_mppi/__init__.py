"""Sampling-based stochastic MPC with tube and robust variants.

The package provides three receding-horizon controllers built on the same
rollout machinery: plain path-integral control (``MppiController``), a tube
variant that tracks a nominal system and resets it by a free-energy gap rule
(``TubeMppiController``), and a robust variant that co-propagates nominal and
real systems inside every sample, applies tracking feedback, and reports a
per-step bound on free-energy growth (``RmppiController``).  A simulation
harness runs any of them against a disturbed plant and checks the bound.
"""

from .config import ExperimentConfig, load_config, render_config
from .costs import (
    CostFunction,
    control_cost_term,
    control_penalty_coef,
    lipschitz_estimate,
    path_cost,
    quadratic_wall_cost,
)
from .dynamics import (
    DisturbanceModel,
    SystemModel,
    double_integrator,
    make_system,
    nominal_trajectory,
    nonlinear_benchmark,
    propagate_real,
    register_system,
)
from .feedback import (
    ContractionPolicy,
    LinearGainsPolicy,
    RiccatiDivergenceError,
    ZeroFeedback,
    contraction_feedback,
    fit_gamma,
    fit_gamma_window,
    ilqg_gains,
)
from .harness import (
    BoundCheck,
    RunLog,
    compare_controllers,
    run_closed_loop,
    summary_table,
    verify_bound,
)
from .rmppi import (
    AugmentedRollout,
    BoundParams,
    NominalDecision,
    RmppiController,
    RmppiSettings,
    TubeMppiController,
    augmented_density_ratio,
    augmented_rollouts,
    feedback_penalized_cost,
    free_energy_growth_bound,
    mixed_cost,
    nominal_state_propagation,
    tube_mppi_step,
)
from .sampling import (
    DegenerateSamplingError,
    FreeEnergyEstimate,
    MppiController,
    NoisePlan,
    derive_seed,
    free_energy_mc,
    is_weight,
    mppi_update,
    rollout_batch,
    shift_control_sequence,
    softmax_weights,
    weighted_noise,
)

__version__ = "0.1.0"
