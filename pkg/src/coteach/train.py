"""Training procedures at desk scale.

Stage one trains two domain-specific teachers: a supervised source teacher
and a target teacher aligned with an RBF-kernel MMD penalty on penultimate
features. Stage two distills the frozen pair into a fresh student through
one of four schemes:

* ``kdde_distill``  - each domain's batches learn only from that domain's
  teacher (the gamma = 1 special case of the weighted loss below);
* ``multit_distill`` - every batch learns from the unweighted average of
  the two teachers' predictions;
* ``ct_distill``    - per step, a weight gamma ~ Beta(alpha, beta) blends a
  leading teacher (the batch's host-domain teacher) with the assisting one,
  and optionally a mixup term blends cross-domain inputs and the matching
  convex combination of teacher predictions (lambda ~ Beta(1, 1) per batch).

All schemes share the optimizer recipe: SGD with momentum 0.9, lr 0.005,
weight decay 5e-4, lr x0.1 once at ceil(2/3 * epochs). The model from the
last epoch is returned. Every run is a pure function of its config seed:
initialization, shuffling, and the gamma / lambda draws come from separate
tagged streams, so schemes that skip a draw stay aligned with those that
do not.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field, replace
from typing import Callable

import numpy as np

from .data import (
    DOMAIN_SOURCE,
    DOMAIN_TARGET,
    DomainPairDataset,
    Sample,
    features_matrix,
    labels_vector,
)
from .models import MlpClassifier, forward, freeze, init_mlp, predict, teacher_probs
from .rng import BetaParams, SeededRng, sample_beta
from .tensor import (
    Tape,
    Tensor,
    add,
    backward,
    constant,
    gather_rows,
    kl_div,
    log_softmax,
    mmd2_rbf,
    reduce_mean,
    scale,
    sgd_step,
    zero_velocity,
)

__all__ = [
    "TrainConfig",
    "TeacherPair",
    "TrainLog",
    "EpochRecord",
    "cross_entropy",
    "train_source",
    "train_uda_mmd",
    "mmd2_rbf",
    "kdct_batch_loss",
    "mict_batch_loss",
    "kdde_distill",
    "multit_distill",
    "ct_distill",
    "make_teacher_pair",
]

MMD_BANDWIDTH_SCALES = (0.5, 1.0, 2.0, 4.0)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 0.005
    momentum: float = 0.9
    weight_decay: float = 0.0005
    epochs: int = 40
    batch_size: int = 32
    lr_decay_every: int | None = None  # default: one x0.1 decay at ceil(2/3 * epochs)
    mmd_weight: float = 1.0
    gamma_params: BetaParams | float = BetaParams(10.0, 1.0)  # a float fixes gamma
    lambda_params: BetaParams = BetaParams(1.0, 1.0)
    lambda_per_sample: bool = False
    temperature: float = 1.0
    kdct_weight: float = 1.0
    mict_weight: float = 1.0
    hidden_sizes: tuple[int, ...] = (64, 64)
    seed: int = 0

    def __post_init__(self):
        if not self.lr > 0.0:
            raise ValueError(f"lr must be positive, got {self.lr}")
        if not 0.0 <= self.momentum < 1.0:
            raise ValueError(f"momentum must be in [0,1), got {self.momentum}")
        if self.weight_decay < 0.0:
            raise ValueError("weight_decay must be non-negative")
        if self.epochs < 1:
            raise ValueError(f"epochs must be >= 1, got {self.epochs}")
        if self.batch_size < 2:
            raise ValueError(f"batch_size must be >= 2, got {self.batch_size}")
        if self.lr_decay_every is not None and self.lr_decay_every < 1:
            raise ValueError("lr_decay_every must be >= 1 when given")
        if self.mmd_weight < 0.0:
            raise ValueError("mmd_weight must be non-negative")
        if not self.temperature > 0.0:
            raise ValueError("temperature must be positive")
        if self.kdct_weight < 0.0 or self.mict_weight < 0.0:
            raise ValueError("loss weights must be non-negative")
        if isinstance(self.gamma_params, (int, float)) and not isinstance(
            self.gamma_params, bool
        ):
            g = float(self.gamma_params)
            if not 0.0 < g <= 1.0:
                raise ValueError(f"fixed gamma must lie in (0, 1], got {g}")
            object.__setattr__(self, "gamma_params", g)
        elif not isinstance(self.gamma_params, BetaParams):
            raise ValueError("gamma_params must be BetaParams or a fixed float")
        object.__setattr__(self, "hidden_sizes", tuple(int(h) for h in self.hidden_sizes))
        if not self.hidden_sizes:
            raise ValueError("need at least one hidden layer")

    @property
    def decay_every(self) -> int:
        if self.lr_decay_every is not None:
            return self.lr_decay_every
        return max(1, math.ceil(2.0 * self.epochs / 3.0))

    def lr_at(self, epoch: int) -> float:
        return self.lr * 0.1 ** (epoch // self.decay_every)


@dataclass(frozen=True)
class TeacherPair:
    """Two frozen domain-specific teachers; immutable during distillation."""

    source_teacher: MlpClassifier
    target_teacher: MlpClassifier


def make_teacher_pair(source_model: MlpClassifier, target_model: MlpClassifier) -> TeacherPair:
    if source_model.layer_sizes != target_model.layer_sizes:
        raise ValueError(
            f"teacher architectures differ: {source_model.layer_sizes} vs "
            f"{target_model.layer_sizes}"
        )
    return TeacherPair(freeze(source_model), freeze(target_model))


def _check_teachers(teachers: TeacherPair) -> None:
    for name, model in (
        ("source", teachers.source_teacher),
        ("target", teachers.target_teacher),
    ):
        if any(p.requires_grad for p in model.params()):
            raise ValueError(f"{name} teacher is not frozen; use make_teacher_pair")


@dataclass
class EpochRecord:
    epoch: int
    components: dict[str, float]
    gammas: list[float]
    lambdas: list[float]
    train_acc_source: float


@dataclass
class TrainLog:
    trainer: str
    records: list[EpochRecord] = field(default_factory=list)

    CSV_COLUMNS = (
        "epoch", "ce", "mmd", "kdct_source", "kdct_target", "mict",
        "gamma_mean", "lambda_mean", "train_acc_source",
    )

    def to_csv(self, path) -> None:
        lines = [",".join(self.CSV_COLUMNS)]
        for r in self.records:
            cells = [str(r.epoch)]
            for comp in ("ce", "mmd", "kdct_source", "kdct_target", "mict"):
                cells.append(repr(r.components[comp]) if comp in r.components else "")
            cells.append(repr(float(np.mean(r.gammas))) if r.gammas else "")
            cells.append(repr(float(np.mean(r.lambdas))) if r.lambdas else "")
            cells.append(repr(r.train_acc_source))
            lines.append(",".join(cells))
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write("\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# Losses
# ---------------------------------------------------------------------------


def cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean negative log-likelihood of integer labels under the logits."""
    logp = log_softmax(logits)
    return scale(reduce_mean(gather_rows(logp, labels)), -1.0)


def kdct_batch_loss(
    batch: list[Sample],
    domain_tag: str,
    teachers: TeacherPair,
    student: MlpClassifier,
    gamma: float,
    temperature: float = 1.0,
) -> Tensor:
    """gamma-weighted two-teacher distillation loss for one single-domain batch.

    The batch's host-domain teacher leads with weight ``gamma``; the other
    domain's teacher assists with weight ``1 - gamma``. ``gamma = 1`` is
    permitted and reduces the loss to the single-teacher term.
    """
    gamma = float(gamma)
    if not 0.0 < gamma <= 1.0:
        raise ValueError(f"gamma must lie in (0, 1], got {gamma}")
    if domain_tag not in (DOMAIN_SOURCE, DOMAIN_TARGET):
        raise ValueError(f"unknown domain tag {domain_tag!r}")
    if not batch:
        raise ValueError("empty batch")
    for i, s in enumerate(batch):
        if s.domain != domain_tag:
            raise ValueError(
                f"mixed-domain batch: sample {i} is {s.domain!r}, expected {domain_tag!r}"
            )
    _check_teachers(teachers)
    x = features_matrix(batch)
    if domain_tag == DOMAIN_SOURCE:
        lead, assist = teachers.source_teacher, teachers.target_teacher
    else:
        lead, assist = teachers.target_teacher, teachers.source_teacher
    p_lead = constant(teacher_probs(lead, x, temperature))
    p_assist = constant(teacher_probs(assist, x, temperature))
    logits, _ = forward(student, x)
    logq = log_softmax(logits, temperature)
    return add(
        scale(kl_div(p_lead, logq), gamma),
        scale(kl_div(p_assist, logq), 1.0 - gamma),
    )


def mict_batch_loss(
    batch_s: list[Sample],
    batch_t: list[Sample],
    teachers: TeacherPair,
    student: MlpClassifier,
    lam,
    temperature: float = 1.0,
) -> Tensor:
    """Mixup distillation loss over paired source / target batches.

    Inputs mix as lam*x_s + (1-lam)*x_t; the distillation target is the same
    convex combination of the teachers' softmax outputs on the *unmixed*
    inputs, which keeps every target row a probability vector. ``lam`` is a
    scalar in [0, 1] or a per-sample vector of such values.
    """
    if len(batch_s) != len(batch_t):
        raise ValueError(f"batch size mismatch: {len(batch_s)} vs {len(batch_t)}")
    if not batch_s:
        raise ValueError("empty batch")
    for i, s in enumerate(batch_s):
        if s.domain != DOMAIN_SOURCE:
            raise ValueError(f"batch_s sample {i} is {s.domain!r}")
    for i, s in enumerate(batch_t):
        if s.domain != DOMAIN_TARGET:
            raise ValueError(f"batch_t sample {i} is {s.domain!r}")
    _check_teachers(teachers)
    lam_arr = np.asarray(lam, dtype=np.float64)
    if lam_arr.ndim == 0:
        weight = float(lam_arr)
        if not 0.0 <= weight <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {weight}")
        w_x = w_p = weight
    elif lam_arr.shape == (len(batch_s),):
        if ((lam_arr < 0.0) | (lam_arr > 1.0)).any():
            raise ValueError("per-sample lambda entries must lie in [0, 1]")
        w_x = w_p = lam_arr[:, None]
    else:
        raise ValueError(f"lambda must be scalar or shape ({len(batch_s)},)")
    xs = features_matrix(batch_s)
    xt = features_matrix(batch_t)
    x_mixed = w_x * xs + (1.0 - w_x) * xt
    p_s = teacher_probs(teachers.source_teacher, xs, temperature)
    p_t = teacher_probs(teachers.target_teacher, xt, temperature)
    y_mixed = w_p * p_s + (1.0 - w_p) * p_t
    logits, _ = forward(student, x_mixed)
    return kl_div(constant(y_mixed), log_softmax(logits, temperature))


# ---------------------------------------------------------------------------
# Teacher training
# ---------------------------------------------------------------------------


def _infer_num_classes(data: DomainPairDataset, labels: np.ndarray) -> int:
    if data.generator_metadata is not None:
        return data.generator_metadata.num_classes
    return int(labels.max()) + 1


def train_source(data: DomainPairDataset, config: TrainConfig) -> tuple[MlpClassifier, TrainLog]:
    """Supervised cross-entropy training on the labeled source subset."""
    if not data.source_train:
        raise ValueError("source_train is empty")
    x = features_matrix(data.source_train)
    y = labels_vector(data.source_train)
    k = _infer_num_classes(data, y)
    root = SeededRng(config.seed).split("source-teacher")
    model = init_mlp([x.shape[1], *config.hidden_sizes, k], root.split("init"))
    shuffle = root.split("shuffle")
    params = model.params()
    velocity = zero_velocity(params)
    n = len(y)
    steps = n // config.batch_size
    if steps == 0:
        raise ValueError(f"batch_size {config.batch_size} exceeds source_train size {n}")
    log = TrainLog("source")
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm = shuffle.permutation(n)
        ce_sum = 0.0
        for step in range(steps):
            idx = perm[step * config.batch_size : (step + 1) * config.batch_size]
            with Tape():
                logits, _ = forward(model, x[idx])
                loss = cross_entropy(logits, y[idx])
            backward(loss)
            sgd_step(params, lr, config.momentum, config.weight_decay, velocity)
            ce_sum += loss.item()
        acc = float((predict(model, x) == y).mean())
        log.records.append(EpochRecord(epoch, {"ce": ce_sum / steps}, [], [], acc))
    return model, log


def _median_heuristic_bandwidths(feat_s: np.ndarray, feat_t: np.ndarray) -> list[float]:
    stacked = np.vstack([feat_s, feat_t])
    n = stacked.shape[0]
    diffs = stacked[:, None, :] - stacked[None, :, :]
    dists = np.sqrt((diffs**2).sum(axis=2))[np.triu_indices(n, k=1)]
    med = float(np.median(dists))
    if not med > 0.0:
        med = 1.0
    return [s * med for s in MMD_BANDWIDTH_SCALES]


def train_uda_mmd(data: DomainPairDataset, config: TrainConfig) -> tuple[MlpClassifier, TrainLog]:
    """Target-teacher training: source cross-entropy plus a feature MMD penalty.

    Bandwidths follow the median heuristic on the first step's pooled
    features and stay frozen for the rest of the run.
    """
    if not data.target_train:
        raise ValueError("target_train is empty")
    if config.mmd_weight == 0.0:
        warnings.warn("mmd_weight is 0; train_uda_mmd degenerates to source-only training")
    xs = features_matrix(data.source_train)
    ys = labels_vector(data.source_train)
    xt = features_matrix(data.target_train)
    k = _infer_num_classes(data, ys)
    root = SeededRng(config.seed).split("target-teacher")
    model = init_mlp([xs.shape[1], *config.hidden_sizes, k], root.split("init"))
    shuffle = root.split("shuffle")
    params = model.params()
    velocity = zero_velocity(params)
    ns, nt = len(ys), xt.shape[0]
    steps = min(ns, nt) // config.batch_size
    if steps == 0:
        raise ValueError(f"batch_size {config.batch_size} exceeds a training subset")
    bandwidths: list[float] | None = None
    log = TrainLog("uda_mmd")
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm_s = shuffle.permutation(ns)
        perm_t = shuffle.permutation(nt)
        ce_sum = 0.0
        mmd_sum = 0.0
        for step in range(steps):
            idx_s = perm_s[step * config.batch_size : (step + 1) * config.batch_size]
            idx_t = perm_t[step * config.batch_size : (step + 1) * config.batch_size]
            if bandwidths is None:
                _, f_s = forward(model, xs[idx_s])
                _, f_t = forward(model, xt[idx_t])
                bandwidths = _median_heuristic_bandwidths(f_s.values, f_t.values)
            with Tape():
                logits_s, feat_s = forward(model, xs[idx_s])
                _, feat_t = forward(model, xt[idx_t])
                ce = cross_entropy(logits_s, ys[idx_s])
                mmd = mmd2_rbf(feat_s, feat_t, bandwidths)
                loss = add(ce, scale(mmd, config.mmd_weight))
            backward(loss)
            sgd_step(params, lr, config.momentum, config.weight_decay, velocity)
            ce_sum += ce.item()
            mmd_sum += mmd.item()
        acc = float((predict(model, xs) == ys).mean())
        log.records.append(
            EpochRecord(epoch, {"ce": ce_sum / steps, "mmd": mmd_sum / steps}, [], [], acc)
        )
    return model, log


# ---------------------------------------------------------------------------
# Distillation
# ---------------------------------------------------------------------------

# A step function builds the scalar step loss for paired batches and reports
# (loss, component values, gamma or None, lambda or None).
_StepFn = Callable[..., tuple[Tensor, dict[str, float], float | None, float | None]]


def _run_distillation(
    trainer: str,
    teachers: TeacherPair,
    data: DomainPairDataset,
    config: TrainConfig,
    step_fn: _StepFn,
) -> tuple[MlpClassifier, TrainLog]:
    _check_teachers(teachers)
    if not data.source_train or not data.target_train:
        raise ValueError("distillation needs non-empty source and target train subsets")
    src, tgt = data.source_train, data.target_train
    ns, nt = len(src), len(tgt)
    steps = min(ns, nt) // config.batch_size
    if steps == 0:
        raise ValueError(f"batch_size {config.batch_size} exceeds a training subset")
    d = teachers.source_teacher.input_dim
    k = teachers.source_teacher.num_classes
    root = SeededRng(config.seed).split("student")
    student = init_mlp([d, *config.hidden_sizes, k], root.split("init"))
    shuffle = root.split("shuffle")
    gamma_rng = root.split("gamma")
    lambda_rng = root.split("lambda")
    params = student.params()
    velocity = zero_velocity(params)
    xs_full = features_matrix(src)
    ys_full = labels_vector(src)
    log = TrainLog(trainer)
    for epoch in range(config.epochs):
        lr = config.lr_at(epoch)
        perm_s = shuffle.permutation(ns)
        perm_t = shuffle.permutation(nt)
        sums: dict[str, float] = {}
        gammas: list[float] = []
        lambdas: list[float] = []
        for step in range(steps):
            lo, hi = step * config.batch_size, (step + 1) * config.batch_size
            batch_s = [src[i] for i in perm_s[lo:hi]]
            batch_t = [tgt[i] for i in perm_t[lo:hi]]
            with Tape():
                loss, comps, gamma, lam = step_fn(
                    student, batch_s, batch_t, gamma_rng, lambda_rng
                )
            backward(loss)
            sgd_step(params, lr, config.momentum, config.weight_decay, velocity)
            for name, value in comps.items():
                sums[name] = sums.get(name, 0.0) + value
            if gamma is not None:
                gammas.append(float(gamma))
            if lam is not None:
                lambdas.append(float(np.mean(lam)))
        acc = float((predict(student, xs_full) == ys_full).mean())
        means = {name: total / steps for name, total in sums.items()}
        log.records.append(EpochRecord(epoch, means, gammas, lambdas, acc))
    return student, log


def kdde_distill(
    teachers: TeacherPair, data: DomainPairDataset, config: TrainConfig
) -> tuple[MlpClassifier, TrainLog]:
    """Per step: source-teacher KL on a source batch plus target-teacher KL
    on a target batch. No label term, no teacher weighting."""
    temp = config.temperature

    def step_fn(student, batch_s, batch_t, gamma_rng, lambda_rng):
        xs = features_matrix(batch_s)
        xt = features_matrix(batch_t)
        p_s = constant(teacher_probs(teachers.source_teacher, xs, temp))
        p_t = constant(teacher_probs(teachers.target_teacher, xt, temp))
        logits_s, _ = forward(student, xs)
        logits_t, _ = forward(student, xt)
        kl_s = kl_div(p_s, log_softmax(logits_s, temp))
        kl_t = kl_div(p_t, log_softmax(logits_t, temp))
        loss = add(kl_s, kl_t)
        return loss, {"kdct_source": kl_s.item(), "kdct_target": kl_t.item()}, None, None

    return _run_distillation("kdde", teachers, data, config, step_fn)


def multit_distill(
    teachers: TeacherPair, data: DomainPairDataset, config: TrainConfig
) -> tuple[MlpClassifier, TrainLog]:
    """Per step, on both batches regardless of domain: KL from the unweighted
    average of the two teachers' predictions."""
    temp = config.temperature

    def step_fn(student, batch_s, batch_t, gamma_rng, lambda_rng):
        comps = {}
        terms = []
        for tag, batch in (("kdct_source", batch_s), ("kdct_target", batch_t)):
            x = features_matrix(batch)
            avg = 0.5 * (
                teacher_probs(teachers.source_teacher, x, temp)
                + teacher_probs(teachers.target_teacher, x, temp)
            )
            logits, _ = forward(student, x)
            term = kl_div(constant(avg), log_softmax(logits, temp))
            comps[tag] = term.item()
            terms.append(term)
        return add(terms[0], terms[1]), comps, None, None

    return _run_distillation("multit", teachers, data, config, step_fn)


def ct_distill(
    teachers: TeacherPair, data: DomainPairDataset, config: TrainConfig
) -> tuple[MlpClassifier, TrainLog]:
    """Co-teaching distillation: weighted two-teacher KL terms on a source
    and a target batch (one gamma per step, shared by both terms), plus an
    optional mixup term, summed with their configured weights.

    A float ``config.gamma_params`` fixes gamma and bypasses sampling; a
    zero ``kdct_weight`` or ``mict_weight`` disables that term and its
    draws entirely.
    """
    if config.kdct_weight == 0.0 and config.mict_weight == 0.0:
        raise ValueError("kdct_weight and mict_weight are both zero; nothing to train")
    temp = config.temperature
    fixed_gamma = config.gamma_params if isinstance(config.gamma_params, float) else None

    def step_fn(student, batch_s, batch_t, gamma_rng, lambda_rng):
        comps: dict[str, float] = {}
        total: Tensor | None = None
        gamma = None
        lam = None
        if config.kdct_weight != 0.0:
            if fixed_gamma is not None:
                gamma = fixed_gamma
            else:
                gamma = sample_beta(config.gamma_params, gamma_rng)
            loss_s = kdct_batch_loss(batch_s, DOMAIN_SOURCE, teachers, student, gamma, temp)
            loss_t = kdct_batch_loss(batch_t, DOMAIN_TARGET, teachers, student, gamma, temp)
            comps["kdct_source"] = loss_s.item()
            comps["kdct_target"] = loss_t.item()
            total = scale(add(loss_s, loss_t), config.kdct_weight)
        if config.mict_weight != 0.0:
            if config.lambda_per_sample:
                lam = np.array(
                    [sample_beta(config.lambda_params, lambda_rng) for _ in batch_s]
                )
            else:
                lam = sample_beta(config.lambda_params, lambda_rng)
            mict = mict_batch_loss(batch_s, batch_t, teachers, student, lam, temp)
            comps["mict"] = mict.item()
            term = scale(mict, config.mict_weight)
            total = term if total is None else add(total, term)
        return total, comps, gamma, lam

    return _run_distillation("ct", teachers, data, config, step_fn)
