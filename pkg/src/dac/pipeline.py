"""Training, noise identification and data cleaning with an abstaining classifier.

A DAC run trains a (k+1)-output MLP: the first ``warmup`` epochs use plain
(k+1)-way cross-entropy (the abstention unit is an ordinary class that never
appears as a target), after which the abstaining loss takes over with alpha
from the auto-tuner, or ``fixed_alpha`` when given. The model snapshot kept is
the abstention-phase epoch with the best renormalized validation accuracy.

Cleaning removes the training samples the best snapshot abstains on and
retrains a plain k-class network on what is left, stretching the epoch budget
so the number of optimizer steps stays roughly constant.
"""

import csv
import logging
import math
from dataclasses import dataclass, field, replace
from typing import List, Optional

import numpy as np

from .errors import (
    AbstentionSaturationError,
    ConfigurationError,
    EmptyTrainingSetError,
    HaltedRunError,
    NumericFailureError,
)
from .loss import abstention_stats_batch, cross_entropy_batch, dac_loss_batch, log_softmax
from .metrics import abstains, abstention_pr_from_masks, accuracy, residual_noise
from .nn import LrSchedule, Mlp, OptimizerState, backward, forward, lr_at, mlp_new, sgd_step
from .schedule import AlphaScheduler, SchedulerConfig
from .seeding import derive_rng

log = logging.getLogger(__name__)

ELIMINATION_RULES = ("abstain", "misclassified")


@dataclass(frozen=True)
class TrainConfig:
    epochs: int = 200
    warmup: int = 20
    rho: float = 64.0
    mu: float = 0.05
    alpha_final: float = 1.0
    fixed_alpha: Optional[float] = None
    lr: float = 0.1
    anneal_epochs: tuple = (60, 120, 160)
    anneal_factor: float = 0.5
    momentum: float = 0.9
    weight_decay: float = 5e-4
    nesterov: bool = True
    batch_size: int = 64
    hidden: tuple = (64, 64)
    seed: int = 0
    elimination: str = "abstain"
    standardize: bool = True

    def validate(self):
        self.scheduler_config().validate()
        self.lr_schedule()
        if self.fixed_alpha is not None and not self.fixed_alpha >= 0:
            raise ConfigurationError("fixed_alpha must be non-negative")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be positive")
        if any(h < 1 for h in self.hidden):
            raise ConfigurationError("hidden layer sizes must be positive")
        if self.elimination not in ELIMINATION_RULES:
            raise ConfigurationError(f"elimination must be one of {ELIMINATION_RULES}")
        if not 0 <= self.momentum < 1 or self.weight_decay < 0:
            raise ConfigurationError("need 0 <= momentum < 1 and weight_decay >= 0")
        return self

    def scheduler_config(self):
        return SchedulerConfig(self.epochs, self.warmup, self.rho, self.mu, self.alpha_final)

    def lr_schedule(self):
        return LrSchedule(self.lr, tuple(self.anneal_epochs), self.anneal_factor)

    def stretched(self, factor):
        """Epochs and anneal points scaled by ``factor`` (epochs rounded up)."""
        epochs = int(math.ceil(self.epochs * factor - 1e-9))
        anneal = tuple(int(round(e * factor)) for e in self.anneal_epochs)
        return replace(self, epochs=epochs, anneal_epochs=anneal, warmup=min(self.warmup, epochs - 1))


@dataclass
class EpochStats:
    epoch: int
    loss: float
    gamma: float
    val_acc: Optional[float]
    alpha: Optional[float]
    lr: float
    val_loss: Optional[float] = None  # renormalized k-class CE; not part of the CSV schema


STATS_COLUMNS = ("epoch", "loss", "gamma", "val_acc", "alpha", "lr")


def _fmt(v):
    return "null" if v is None else repr(v)


def write_stats_csv(path, stats, append=False):
    with open(path, "a" if append else "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        if not append:
            w.writerow(STATS_COLUMNS)
        for s in stats:
            w.writerow([s.epoch] + [_fmt(getattr(s, c)) for c in STATS_COLUMNS[1:]])


def read_stats_csv(path):
    out = []
    with open(path, newline="") as f:
        for row in csv.DictReader(f):
            conv = {c: (None if row[c] == "null" else float(row[c])) for c in STATS_COLUMNS[1:]}
            out.append(EpochStats(int(row["epoch"]), **conv))
    return out


@dataclass
class TrainResult:
    model: Mlp  # best snapshot (DAC) or final / best model (plain)
    stats: List[EpochStats]
    best_epoch: Optional[int]
    final_model: Mlp
    opt_state: OptimizerState


def renormalized_val_loss(model, val):
    """Mean cross-entropy of the renormalized k-class predictor against the original labels."""
    logits = forward(model, val.features)[:, : val.k]
    return float(-log_softmax(logits)[np.arange(val.n), val.original_labels].mean())


def _better(st, best_acc, best_loss):
    if st.val_acc != best_acc:
        return st.val_acc > best_acc
    return st.val_loss < best_loss


def _batches(n, batch_size, rng):
    perm = rng.permutation(n)
    for start in range(0, n, batch_size):
        yield perm[start : start + batch_size]


def _run(train, val, cfg, model, batch_loss, epoch_alpha, select_from, on_epoch=None, on_step=None):
    """Shared SGD loop. ``batch_loss(epoch, alpha, logits, labels, iteration)`` -> (loss, dlogits)."""
    if train.n == 0:
        raise EmptyTrainingSetError("training set is empty")
    opt = OptimizerState.for_model(model, cfg.momentum, cfg.weight_decay, cfg.nesterov)
    schedule = cfg.lr_schedule()
    rng = derive_rng(cfg.seed, "shuffle")
    x, y = train.features, train.labels
    stats, best, best_acc, best_loss, best_epoch = [], None, -1.0, math.inf, None
    it = 0
    for epoch in range(cfg.epochs):
        alpha = epoch_alpha(epoch)
        lr = lr_at(schedule, epoch)
        total = 0.0
        try:
            for idx in _batches(train.n, cfg.batch_size, rng):
                xb, yb = x[idx], y[idx]
                loss, g = batch_loss(epoch, alpha, forward(model, xb), yb, it)
                sgd_step(model, opt, backward(model, xb, g), lr)
                if on_step is not None:
                    on_step(it, model)
                total += loss * idx.size
                it += 1
            if not math.isfinite(total):
                raise NumericFailureError(f"non-finite training loss at epoch {epoch}")
        except (NumericFailureError, AbstentionSaturationError) as exc:
            raise HaltedRunError(f"epoch {epoch}: {exc}", stats, model) from exc
        has_val = val is not None and val.n > 0
        st = EpochStats(
            epoch=epoch,
            loss=total / train.n,
            gamma=float(abstains(model, train).mean()),
            val_acc=accuracy(model, val, "renormalized", labels=val.original_labels) if has_val else None,
            alpha=alpha,
            lr=lr,
            val_loss=renormalized_val_loss(model, val) if has_val else None,
        )
        stats.append(st)
        if on_epoch is not None:
            on_epoch(st, model)
        # best = highest renormalized val accuracy; ties go to the lower val loss, then the earlier epoch
        if epoch >= select_from and st.val_acc is not None and _better(st, best_acc, best_loss):
            best, best_acc, best_loss, best_epoch = model.copy(), st.val_acc, st.val_loss, epoch
    return stats, best, best_epoch, opt


def new_model(train, cfg: TrainConfig, n_outputs):
    """Fresh MLP for ``train``; inputs standardized with training-set statistics when ``cfg.standardize``."""
    model = mlp_new([train.d, *cfg.hidden, n_outputs], cfg.seed)
    if cfg.standardize:
        model.fit_input_scaling(train.features)
    return model


def train_dac(train, val, cfg: TrainConfig, init_model: Mlp = None, on_epoch=None, on_step=None) -> TrainResult:
    """Train an abstaining classifier; see module docstring for the phases."""
    cfg.validate()
    k = train.k
    model = init_model.copy() if init_model is not None else new_model(train, cfg, k + 1)
    if model.n_outputs != k + 1:
        raise ConfigurationError(f"DAC model needs {k + 1} outputs, has {model.n_outputs}")
    L = cfg.warmup
    sched = AlphaScheduler(cfg.scheduler_config()) if cfg.fixed_alpha is None else None

    def epoch_alpha(epoch):
        if sched is not None:
            return sched.epoch_boundary(epoch)
        return float(cfg.fixed_alpha) if epoch >= L else None

    def batch_loss(epoch, alpha, logits, labels, it):
        if epoch < L:
            if sched is not None:
                mass, ce = abstention_stats_batch(logits, labels)
                sched.observe_batch(mass, ce, it, epoch)
            return cross_entropy_batch(logits, labels)
        return dac_loss_batch(logits, labels, alpha)

    stats, best, best_epoch, opt = _run(train, val, cfg, model, batch_loss, epoch_alpha, L, on_epoch, on_step)
    if best is None:
        best, best_epoch = model.copy(), cfg.epochs - 1
    return TrainResult(best, stats, best_epoch, model, opt)


def train_plain(train, val, cfg: TrainConfig, init_model: Mlp = None, select_best=False, on_epoch=None, on_step=None) -> TrainResult:
    """Ordinary k-class cross-entropy training with the same optimizer and shuffling."""
    cfg.validate()
    k = train.k
    model = init_model.copy() if init_model is not None else new_model(train, cfg, k)
    if model.n_outputs != k:
        raise ConfigurationError(f"plain model needs {k} outputs, has {model.n_outputs}")

    def batch_loss(epoch, alpha, logits, labels, it):
        return cross_entropy_batch(logits, labels)

    stats, best, best_epoch, opt = _run(train, val, cfg, model, batch_loss, lambda e: None, 0, on_epoch, on_step)
    if not select_best or best is None:
        best, best_epoch = model.copy(), cfg.epochs - 1
    return TrainResult(best, stats, best_epoch, model, opt)


def drop_abstention(model: Mlp) -> Mlp:
    """The k-output network sharing every parameter of a (k+1)-output one."""
    m = model.copy()
    m.weights[-1] = m.weights[-1][:, :-1].copy()
    m.biases[-1] = m.biases[-1][:-1].copy()
    return m


def abstention_rate(model, ds) -> float:
    return float(abstains(model, ds).mean()) if ds.n else 0.0


def identify_noisy(model, train, rule="abstain"):
    """Indices of training samples flagged as noisy by the DAC snapshot.

    abstain: argmax over k+1 outputs is the abstention class.
    misclassified: the renormalized k-class prediction disagrees with the label.
    """
    if rule == "abstain":
        return np.flatnonzero(abstains(model, train))
    if rule == "misclassified":
        if train.n == 0:
            return np.zeros(0, np.int64)
        pred = np.argmax(forward(model, train.features)[:, : train.k], axis=1)
        return np.flatnonzero(pred != train.labels)
    raise ConfigurationError(f"unknown elimination rule {rule!r}")


@dataclass
class CleanReport:
    eliminated: List[int]
    eliminated_fraction: float
    residual_noise_fraction: Optional[float]
    injected_noise_fraction: Optional[float]
    precision: Optional[float]  # against the randomized flags
    recall: Optional[float]
    precision_corrupted: Optional[float]  # against label != original
    recall_corrupted: Optional[float]
    downstream_epochs: int = 0
    best_dac_epoch: Optional[int] = None

    def summary(self):
        """Table-style "(removed/residual)" string."""
        res = "n/a" if self.residual_noise_fraction is None else f"{self.residual_noise_fraction:.2f}"
        return f"({self.eliminated_fraction:.2f}/{res})"


def clean_report(train, eliminated, downstream_epochs=0, best_epoch=None) -> CleanReport:
    eliminated = np.unique(np.asarray(eliminated, dtype=np.int64))
    mask = np.zeros(train.n, bool)
    mask[eliminated] = True
    keep = ~mask
    pr_flag = abstention_pr_from_masks(mask, train.randomized)
    pr_corr = abstention_pr_from_masks(mask, train.corrupted)
    return CleanReport(
        eliminated=eliminated.tolist(),
        eliminated_fraction=float(mask.mean()) if train.n else 0.0,
        residual_noise_fraction=residual_noise(train.labels[keep], train.original_labels[keep]),
        injected_noise_fraction=float(train.corrupted.mean()) if train.n else None,
        precision=pr_flag.precision,
        recall=pr_flag.recall,
        precision_corrupted=pr_corr.precision,
        recall_corrupted=pr_corr.recall,
        downstream_epochs=downstream_epochs,
        best_dac_epoch=best_epoch,
    )


@dataclass
class CleanResult:
    report: CleanReport
    model: Mlp
    accuracy: Optional[float]
    dac: Optional[TrainResult] = None
    downstream: Optional[TrainResult] = None


def retrain_without(train, val, eliminated, downstream_cfg: TrainConfig, test=None):
    """Train a plain classifier on ``train`` minus ``eliminated``; epochs scaled by 1/retained."""
    keep = np.ones(train.n, bool)
    keep[np.asarray(eliminated, dtype=np.int64)] = False
    if not keep.any():
        raise EmptyTrainingSetError("every training sample was eliminated")
    retained = keep.mean()
    cfg = downstream_cfg.stretched(1.0 / retained)
    res = train_plain(train.subset(np.flatnonzero(keep)), val, cfg)
    eval_set = test if test is not None else val
    acc = accuracy(res.model, eval_set, "overall", labels=eval_set.original_labels) if eval_set is not None else None
    return res, cfg, acc


def clean_and_retrain(train, val, dac_cfg: TrainConfig, downstream_cfg: TrainConfig, test=None, dac_result=None) -> CleanResult:
    dac = dac_result if dac_result is not None else train_dac(train, val, dac_cfg)
    eliminated = identify_noisy(dac.model, train, dac_cfg.elimination)
    res, cfg, acc = retrain_without(train, val, eliminated, downstream_cfg, test)
    report = clean_report(train, eliminated, cfg.epochs, dac.best_epoch)
    log.info("cleaning removed %s, downstream accuracy %s", report.summary(), acc)
    return CleanResult(report, res.model, acc, dac, res)


def oracle_clean_and_retrain(train, val, downstream_cfg: TrainConfig, test=None) -> CleanResult:
    """Reference cleaner that removes exactly the samples whose label was changed."""
    eliminated = np.flatnonzero(train.corrupted)
    res, cfg, acc = retrain_without(train, val, eliminated, downstream_cfg, test)
    return CleanResult(clean_report(train, eliminated, cfg.epochs), res.model, acc, None, res)


def baseline_accuracy(train, val, cfg: TrainConfig, test=None):
    """Plain classifier on the noisy data, trained identically to the downstream model."""
    res = train_plain(train, val, cfg)
    eval_set = test if test is not None else val
    return res, accuracy(res.model, eval_set, "overall", labels=eval_set.original_labels)


SATURATED_LOW = "saturated-low"
SATURATED_HIGH = "saturated-high"
UNRESOLVED = "unresolved"


def classify_gamma(gamma, low=0.01, high=0.99):
    if gamma < low:
        return SATURATED_LOW
    if gamma > high:
        return SATURATED_HIGH
    return UNRESOLVED


@dataclass
class SweepRun:
    alpha: float
    gammas: List[float]
    val_accs: List[Optional[float]]
    terminal: str
    stats: List[EpochStats] = field(default_factory=list)
    halted: Optional[str] = None
    terminal_gamma: Optional[float] = None


def fixed_alpha_sweep(train, val, cfg: TrainConfig, alphas) -> List[SweepRun]:
    alphas = [float(a) for a in alphas]
    if not alphas:
        raise ConfigurationError("need at least one alpha")
    runs = []
    for a in alphas:
        if not a >= 0:
            raise ConfigurationError(f"alpha {a} is negative")
        halted, end = None, None
        try:
            stats = train_dac(train, val, replace(cfg, fixed_alpha=a)).stats
            end = stats[-1].gamma if stats else None
        except HaltedRunError as exc:
            stats, halted = exc.stats, str(exc)
            # a saturation halt ends the run; score the parameters it stopped at
            if isinstance(exc.__cause__, AbstentionSaturationError) and exc.model is not None:
                end = abstention_rate(exc.model, train)
        terminal = classify_gamma(end) if end is not None else UNRESOLVED
        gammas = [s.gamma for s in stats]
        runs.append(SweepRun(a, gammas, [s.val_acc for s in stats], terminal, stats, halted, end))
    return runs
