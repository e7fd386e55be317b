"""Scaled experiment protocols shared by the acceptance tests and ``scripts/``.

Every protocol is described by an :class:`~dac.config.ExperimentConfig`, so
the same run can be reproduced from the command line with ``dac generate``
followed by ``dac train`` / ``dac clean`` / ``dac sweep`` on the dumped
config. Data splits come from :func:`make_splits`, which the CLI also uses.
"""

import math
from dataclasses import dataclass, field, replace
from typing import Dict, List, Optional

import numpy as np

from . import config as C
from .data import NoiseSpec, apply_noise, gen_blobs
from .metrics import abstains, abstention_pr, accuracy
from .pipeline import (
    baseline_accuracy,
    clean_and_retrain,
    drop_abstention,
    fixed_alpha_sweep,
    new_model,
    oracle_clean_and_retrain,
    train_dac,
    train_plain,
)
from .seeding import derive_seed


@dataclass
class Splits:
    train: object
    val: object
    test: object
    clean_train: object
    seeds: Dict[str, int]


def noise_spec(cfg: C.ExperimentConfig, role: str) -> NoiseSpec:
    n = cfg.noise
    return NoiseSpec(n.kind, n.fraction, derive_seed(cfg.seed, role), n.magnitude, n.width, n.offset, n.blend_lambda, n.target_class)


def make_splits(cfg: C.ExperimentConfig) -> Splits:
    """Noisy train, clean validation, and a test split with feature transforms only."""
    d = cfg.data
    seeds = {
        "train": derive_seed(cfg.seed, "data/train"),
        "val": derive_seed(cfg.seed, "data/val"),
        "test": derive_seed(cfg.seed, "data/test"),
        "noise": derive_seed(cfg.seed, "noise/train"),
        "noise_test": derive_seed(cfg.seed, "noise/test"),
    }
    clean = gen_blobs(d.k, d.d, d.n_per_class, d.separation, seeds["train"])
    train = apply_noise(clean, noise_spec(cfg, "noise/train"))
    val = gen_blobs(d.k, d.d, d.val_per_class, d.separation, seeds["val"])
    test = gen_blobs(d.k, d.d, d.test_per_class, d.separation, seeds["test"])
    test = apply_noise(test, noise_spec(cfg, "noise/test"), features_only=True)
    return Splits(train, val, test, clean, seeds)


# ---------------------------------------------------------------- configs

SMUDGE = {
    "data.k": 4,
    "data.d": 2,
    "data.n_per_class": 1000,
    "data.separation": 10.0,
    "noise.kind": "smudge",
    "noise.fraction": 0.1,
    "noise.magnitude": 20.0,
    "noise.width": 1,
    "train.epochs": 100,
    "train.warmup": 10,
    "train.anneal_epochs": (30, 60, 80),
    "train.hidden": (32, 32),
    "train.lr": 0.1,
}

CLASS_RANDOMIZATION = {
    "data.k": 4,
    "data.d": 2,
    "data.n_per_class": 500,
    "data.separation": 8.0,
    "noise.kind": "class_randomization",
    "noise.target_class": 0,
    "train.epochs": 100,
    "train.warmup": 10,
    "train.anneal_epochs": (30, 60, 80),
    "train.hidden": (32, 32),
    "train.lr": 0.1,
}

DEGRADATION = {
    "data.k": 4,
    "data.d": 2,
    "data.n_per_class": 1000,
    "data.separation": 6.0,
    "noise.kind": "degradation",
    "noise.fraction": 0.2,
    "noise.blend_lambda": 0.8,
    "train.epochs": 100,
    "train.warmup": 10,
    "train.anneal_epochs": (30, 60, 80),
    "train.hidden": (32, 32),
    "train.lr": 0.1,
}

# uniform and class-dependent cleaning; the noise kind and level are filled in per run
CLEANING = {
    "data.k": 5,
    "data.d": 16,
    "data.n_per_class": 300,
    "data.separation": 6.0,
    "data.val_per_class": 100,
    "data.test_per_class": 200,
    "train.epochs": 60,
    "train.warmup": 5,
    "train.anneal_epochs": (18, 36, 48),
    "train.hidden": (128,),
    "train.lr": 0.05,
}

# fixed-alpha runs start abstaining from the first epoch
SWEEP_EPOCHS = 200
SWEEP_ANNEAL = (60, 120, 160)
SWEEP_ALPHAS = (1e-3, 1e6)
SWEEP_INTERMEDIATE = math.sqrt(1e-3 * 1e6)  # log-scale midpoint of the two anchors


def experiment(base, seed, **overrides) -> C.ExperimentConfig:
    values = dict(base)
    values.update({k.replace("__", "."): v for k, v in overrides.items()})
    values["seed"] = seed
    return C.build(values)


# ---------------------------------------------------------------- protocols


@dataclass
class AbstentionOutcome:
    seed: int
    best_epoch: int
    train_gamma_at_best: float
    precision: Optional[float]
    recall: Optional[float]
    extra: Dict[str, float] = field(default_factory=dict)


def smudge_protocol(seed, base=SMUDGE) -> AbstentionOutcome:
    """DAC on smudge-correlated noise; abstention PR on a held-out smudged split."""
    cfg = experiment(base, seed)
    s = make_splits(cfg)
    res = train_dac(s.train, s.val, cfg.train_config())
    pr = abstention_pr(res.model, s.test, positive=s.test.structured)
    return AbstentionOutcome(seed, res.best_epoch, res.stats[res.best_epoch].gamma, pr.precision, pr.recall)


def class_randomization_protocol(seed, base=CLASS_RANDOMIZATION) -> AbstentionOutcome:
    """DAC with one class fully randomized; abstention measured per class on held-out data."""
    cfg = experiment(base, seed)
    s = make_splits(cfg)
    res = train_dac(s.train, s.val, cfg.train_config())
    target = s.test.original_labels == cfg.noise.target_class
    abst = abstains(res.model, s.test)
    pr = abstention_pr(res.model, s.test, positive=target)
    return AbstentionOutcome(
        seed,
        res.best_epoch,
        res.stats[res.best_epoch].gamma,
        pr.precision,
        float(abst[target].mean()),
        {"other_class_rate": float(abst[~target].mean())},
    )


def degradation_protocol(seed, base=DEGRADATION) -> AbstentionOutcome:
    """DAC on degraded-and-randomized samples, compared against a plain model trained on clean data."""
    cfg = experiment(base, seed)
    s = make_splits(cfg)
    res = train_dac(s.train, s.val, cfg.train_config())
    pr = abstention_pr(res.model, s.test, positive=s.test.structured)
    val_acc = accuracy(res.model, s.val, "renormalized", labels=s.val.original_labels)
    clean = train_plain(s.clean_train, s.val, cfg.downstream_config())
    clean_acc = accuracy(clean.model, s.val, "overall")
    return AbstentionOutcome(
        seed,
        res.best_epoch,
        res.stats[res.best_epoch].gamma,
        pr.precision,
        pr.recall,
        {"val_accuracy": val_acc, "clean_baseline_val_accuracy": clean_acc},
    )


@dataclass
class CleaningOutcome:
    kind: str
    level: float
    seed: int
    injected: float
    eliminated: float
    residual: Optional[float]
    dac_accuracy: Optional[float]
    baseline_accuracy: Optional[float]
    oracle_accuracy: Optional[float]
    best_epoch: Optional[int]
    downstream_epochs: int


def cleaning_protocol(kind, level, seed, base=CLEANING) -> CleaningOutcome:
    """Noisy baseline, DAC cleaning, and ground-truth cleaning, all scored on the same test split."""
    cfg = experiment(base, seed, noise__kind=kind, noise__fraction=level)
    s = make_splits(cfg)
    down = cfg.downstream_config()
    _, base_acc = baseline_accuracy(s.train, s.val, down, s.test)
    oracle = oracle_clean_and_retrain(s.train, s.val, down, s.test)
    dac = clean_and_retrain(s.train, s.val, cfg.train_config(), down, s.test)
    r = dac.report
    return CleaningOutcome(
        kind,
        level,
        seed,
        r.injected_noise_fraction,
        r.eliminated_fraction,
        r.residual_noise_fraction,
        dac.accuracy,
        base_acc,
        oracle.accuracy,
        r.best_dac_epoch,
        r.downstream_epochs,
    )


@dataclass
class SweepOutcome:
    alpha: float
    terminal: str
    terminal_gamma: Optional[float]
    halted: Optional[str]


def saturation_sweep(seed, alphas=SWEEP_ALPHAS + (SWEEP_INTERMEDIATE,), base=SMUDGE, epochs=SWEEP_EPOCHS) -> List[SweepOutcome]:
    """Fixed-alpha runs on the smudge data with a lengthened schedule."""
    cfg = experiment(base, seed, train__epochs=epochs, train__anneal_epochs=SWEEP_ANNEAL, train__warmup=0)
    s = make_splits(cfg)
    runs = fixed_alpha_sweep(s.train, s.val, cfg.train_config(), alphas)
    return [SweepOutcome(r.alpha, r.terminal, r.terminal_gamma, r.halted) for r in runs]


# ---------------------------------------------------------------- CE recovery

CE_RECOVERY = {
    "data.k": 3,
    "data.d": 2,
    "data.n_per_class": 100,
    "data.separation": 4.0,
    "train.epochs": 5,
    "train.warmup": 2,
    "train.anneal_epochs": (3,),
    "train.hidden": (16, 16),
    "train.lr": 0.1,
}


def suppressed_abstention_model(train, tcfg, bias):
    """Standard initialization with the abstention output's bias set to ``bias``."""
    m = new_model(train, tcfg, train.k + 1)
    m.biases[-1][-1] = bias
    return m


def _max_param_gap(a, b):
    gap = 0.0
    for wa, wb in zip(a.weights, b.weights):
        gap = max(gap, float(np.max(np.abs(wa[..., : wb.shape[-1]] - wb))))
    for ba, bb in zip(a.biases, b.biases):
        gap = max(gap, float(np.max(np.abs(ba[: bb.shape[0]] - bb))))
    return gap


def ce_recovery(seed=0, mode="zero_mass", base=CE_RECOVERY):
    """Largest per-step parameter gap between DAC training and plain cross-entropy training.

    ``zero_mass``: the abstention bias starts at -1e4, so its probability is
    exactly zero in float64, and the auto-tuned schedule (warm-up included) runs.
    ``large_alpha``: alpha fixed at 1e6 from the first epoch, abstention bias at
    -30 so the abstention probability is tiny but non-zero.
    ``large_alpha_standard_init``: alpha fixed at 1e6 from a standard initialization.
    Only the real-class parameters are compared.
    """
    cfg = experiment(base, seed)
    s = make_splits(cfg)
    tcfg = cfg.train_config()
    if mode == "zero_mass":
        init = suppressed_abstention_model(s.train, tcfg, -1e4)
    elif mode == "large_alpha":
        init = suppressed_abstention_model(s.train, tcfg, -30.0)
        tcfg = replace(tcfg, fixed_alpha=1e6, warmup=0)
    elif mode == "large_alpha_standard_init":
        init = new_model(s.train, tcfg, s.train.k + 1)
        tcfg = replace(tcfg, fixed_alpha=1e6, warmup=0)
    else:
        raise ValueError(f"unknown mode {mode!r}")
    snaps = []
    train_dac(s.train, s.val, tcfg, init_model=init, on_step=lambda it, m: snaps.append(m.copy()))
    gaps = []
    train_plain(s.train, s.val, tcfg, init_model=drop_abstention(init), on_step=lambda it, m: gaps.append(_max_param_gap(snaps[it], m)))
    return max(gaps) if gaps else math.nan, gaps
