"""Auto-tuning of the abstention penalty alpha.

During the ``warmup_epochs`` abstention-free epochs every mini-batch feeds a
moving average ``beta_tilde`` of the per-batch alpha threshold
``beta = (1 - mean p_abstain) * mean normalized CE``. At the start of epoch
``warmup_epochs`` alpha is initialized to ``beta_tilde / rho`` and then ramped
linearly, once per epoch, by ``(alpha_final - alpha) / (total_epochs - warmup_epochs)``.

Epochs are 0-based, so epochs ``0..L-1`` are the warm-up. The ramp reaches
``alpha_final`` at the closing boundary ``epoch == total_epochs``; the last
training epoch (``total_epochs - 1``) therefore runs at ``alpha_final - delta``.
"""

from dataclasses import dataclass, replace
from typing import Optional

from .errors import ConfigurationError, SchedulerPhaseError, SequencingError


@dataclass(frozen=True)
class SchedulerConfig:
    total_epochs: int = 200
    warmup_epochs: int = 20
    rho: float = 64.0
    mu: float = 0.05
    alpha_final: float = 1.0

    def validate(self):
        if self.total_epochs < 1:
            raise ConfigurationError("total_epochs must be positive")
        if not 0 <= self.warmup_epochs < self.total_epochs:
            raise ConfigurationError("need 0 <= warmup_epochs < total_epochs")
        if not self.rho > 0:
            raise ConfigurationError("rho must be positive")
        if not 0 < self.mu <= 1:
            raise ConfigurationError("mu must lie in (0, 1]")
        if not self.alpha_final >= 0:
            raise ConfigurationError("alpha_final must be non-negative")
        return self


@dataclass(frozen=True)
class AlphaSchedulerState:
    beta_tilde: float = 0.0
    alpha: Optional[float] = None
    delta_alpha: float = 0.0
    alpha_set: bool = False
    update_epoch: int = -1
    last_epoch: int = -1


def scheduler_new(config: SchedulerConfig) -> AlphaSchedulerState:
    config.validate()
    return AlphaSchedulerState()


def observe_batch(config, state, batch_abst_mass, batch_true_ce, iteration, epoch):
    """Fold one warm-up mini-batch into the moving average."""
    if epoch >= config.warmup_epochs:
        raise SchedulerPhaseError(f"observe_batch called at epoch {epoch} >= warmup {config.warmup_epochs}")
    if not 0.0 <= batch_abst_mass <= 1.0 or batch_true_ce < 0.0:
        raise ValueError("abstention mass must lie in [0, 1] and cross-entropy must be >= 0")
    beta = (1.0 - batch_abst_mass) * batch_true_ce
    if iteration == 0:
        bt = beta
    else:
        bt = (1.0 - config.mu) * state.beta_tilde + config.mu * beta
    return replace(state, beta_tilde=bt)


def epoch_boundary(config, state, epoch):
    """Advance to ``epoch``; returns ``(state, alpha)`` with alpha None during warm-up."""
    if epoch < state.last_epoch:
        raise SequencingError(f"epoch {epoch} presented after epoch {state.last_epoch}")
    state = replace(state, last_epoch=epoch)
    L = config.warmup_epochs
    if epoch < L:
        return state, None
    if not state.alpha_set:
        if epoch != L:
            raise SequencingError(f"alpha must be initialized at epoch {L}, first boundary seen was {epoch}")
        alpha = state.beta_tilde / config.rho
        delta = (config.alpha_final - alpha) / (config.total_epochs - L)
        state = replace(state, alpha=alpha, delta_alpha=delta, update_epoch=L, alpha_set=True)
    if epoch > state.update_epoch:
        state = replace(state, alpha=max(state.alpha + state.delta_alpha, 0.0), update_epoch=epoch)
    return state, state.alpha


class AlphaScheduler:
    """Mutable convenience wrapper used by the training loop."""

    def __init__(self, config: SchedulerConfig):
        self.config = config
        self.state = scheduler_new(config)

    def observe_batch(self, batch_abst_mass, batch_true_ce, iteration, epoch):
        self.state = observe_batch(self.config, self.state, batch_abst_mass, batch_true_ce, iteration, epoch)

    def epoch_boundary(self, epoch):
        self.state, alpha = epoch_boundary(self.config, self.state, epoch)
        return alpha

    @property
    def alpha(self):
        return self.state.alpha
