"""Parameter-free locally private stochastic optimisation (BANCO)."""

from .banco import BancoOptimizer, RunConfig, banco_run, banco_step, regret_decomposition_check
from .baselines import SgdConfig, grid_tune, sgd_run, sgd_step
from .direction import DirectionState, direction_regret, direction_update
from .ledger import BudgetExceededError, PrivacyLedger
from .magnitude import (
    BettingState,
    betting_fraction_range,
    magnitude_closed_form,
    magnitude_quadrature_oracle,
    magnitude_update,
)
from .noise import MechanismKind, NoiseModel, derive_params
from .problems import Problem, ProblemKind, SanitizedGradient, make_problem, risk, sanitized_oracle

__version__ = "0.1.0"
