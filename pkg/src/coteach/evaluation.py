"""Measurement protocols over trained models.

Three views, all pure reads of the models:

* per-domain accuracy and the expanded-domain figure (the arithmetic mean of
  the two per-domain accuracies; a micro accuracy over the pooled test sets
  is reported alongside for transparency);
* the consistency split: test samples partitioned by whether the two
  teachers predict the same class, with accuracy per group;
* the cross-domain ambiguity rate: the percentage of a domain's test samples
  that its own model gets wrong while the other domain's model gets right.

Plus the gamma sweep: re-running the weighted distillation across a list of
Beta laws and fixed values, one row per (setting, seed) and a seed-averaged
row per setting.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from typing import Sequence

import numpy as np

from .data import DomainPairDataset, Sample, labels_vector
from .models import MlpClassifier, predict
from .rng import BetaParams
from .train import TeacherPair, TrainConfig, ct_distill

__all__ = [
    "EvalReport",
    "ConsistencySplit",
    "AmbiguityMatrix",
    "GammaAblationRow",
    "accuracy",
    "evaluate_ude",
    "consistency_split",
    "group_accuracy",
    "ambiguity_rate",
    "ambiguity_matrix",
    "gamma_ablation",
    "gamma_setting_label",
]


@dataclass(frozen=True)
class EvalReport:
    acc_source: float
    acc_target: float
    acc_expanded: float
    acc_expanded_micro: float
    per_class_accuracy: dict[str, tuple[float, ...]]
    n_source_test: int
    n_target_test: int

    def __post_init__(self):
        expected = (self.acc_source + self.acc_target) / 2.0
        if abs(self.acc_expanded - expected) > 1e-12:
            raise ValueError(
                f"acc_expanded {self.acc_expanded} is not the domain mean {expected}"
            )

    def to_dict(self) -> dict:
        return {
            "acc_source": self.acc_source,
            "acc_target": self.acc_target,
            "acc_expanded": self.acc_expanded,
            "acc_expanded_micro": self.acc_expanded_micro,
            "per_class_accuracy": {k: list(v) for k, v in self.per_class_accuracy.items()},
            "n_source_test": self.n_source_test,
            "n_target_test": self.n_target_test,
        }


@dataclass(frozen=True)
class ConsistencySplit:
    consistent_ids: tuple[int, ...]
    inconsistent_ids: tuple[int, ...]


@dataclass(frozen=True)
class AmbiguityMatrix:
    """Off-diagonal entries of the ordered-domain-pair ambiguity table, in %."""

    rates: dict[tuple[str, str], float]


def accuracy(model: MlpClassifier, testset: Sequence[Sample]) -> float:
    """Fraction of labeled test samples whose predicted class matches."""
    if not testset:
        raise ValueError("empty test set")
    labels = labels_vector(testset)
    return float((predict(model, list(testset)) == labels).mean())


def _per_class(model: MlpClassifier, testset: Sequence[Sample], k: int) -> tuple[float, ...]:
    labels = labels_vector(testset)
    preds = predict(model, list(testset))
    out = []
    for cls in range(k):
        mask = labels == cls
        out.append(float((preds[mask] == cls).mean()) if mask.any() else float("nan"))
    return tuple(out)


def evaluate_ude(model: MlpClassifier, dataset: DomainPairDataset) -> EvalReport:
    """Accuracy on the source, target, and expanded domains."""
    acc_s = accuracy(model, dataset.source_test)
    acc_t = accuracy(model, dataset.target_test)
    n_s, n_t = len(dataset.source_test), len(dataset.target_test)
    micro = (acc_s * n_s + acc_t * n_t) / (n_s + n_t)
    k = model.num_classes
    return EvalReport(
        acc_source=acc_s,
        acc_target=acc_t,
        acc_expanded=(acc_s + acc_t) / 2.0,
        acc_expanded_micro=micro,
        per_class_accuracy={
            "source": _per_class(model, dataset.source_test, k),
            "target": _per_class(model, dataset.target_test, k),
        },
        n_source_test=n_s,
        n_target_test=n_t,
    )


def consistency_split(
    source_model: MlpClassifier,
    target_model: MlpClassifier,
    testset: Sequence[Sample],
) -> ConsistencySplit:
    """Partition test indices by teacher agreement on the predicted class."""
    if not testset:
        raise ValueError("empty test set")
    pred_s = predict(source_model, list(testset))
    pred_t = predict(target_model, list(testset))
    agree = pred_s == pred_t
    ids = np.arange(len(testset))
    return ConsistencySplit(
        consistent_ids=tuple(int(i) for i in ids[agree]),
        inconsistent_ids=tuple(int(i) for i in ids[~agree]),
    )


def group_accuracy(
    model: MlpClassifier,
    split: ConsistencySplit,
    testset: Sequence[Sample],
) -> tuple[float | None, float | None]:
    """Accuracy restricted to each group; an empty group reports None."""
    ids = sorted(split.consistent_ids + split.inconsistent_ids)
    if ids != list(range(len(testset))):
        raise ValueError("split ids do not partition this test set")
    labels = labels_vector(testset)
    preds = predict(model, list(testset))

    def group(acc_ids: tuple[int, ...]) -> float | None:
        if not acc_ids:
            return None
        sel = np.asarray(acc_ids)
        return float((preds[sel] == labels[sel]).mean())

    return group(split.consistent_ids), group(split.inconsistent_ids)


def ambiguity_rate(
    model_a: MlpClassifier,
    model_b: MlpClassifier,
    testset_a: Sequence[Sample],
) -> float:
    """Percentage of testset_a wrong under model_a but right under model_b."""
    if not testset_a:
        raise ValueError("empty test set")
    labels = labels_vector(testset_a)
    pred_a = predict(model_a, list(testset_a))
    pred_b = predict(model_b, list(testset_a))
    hit = (pred_a != labels) & (pred_b == labels)
    return 100.0 * float(hit.mean())


def ambiguity_matrix(
    models: dict[str, MlpClassifier],
    testsets: dict[str, Sequence[Sample]],
) -> AmbiguityMatrix:
    """All ordered-pair rates: entry (A, B) uses domain A's test set."""
    rates = {}
    for dom_a, model_a in models.items():
        for dom_b, model_b in models.items():
            if dom_a == dom_b:
                continue
            rates[(dom_a, dom_b)] = ambiguity_rate(model_a, model_b, testsets[dom_a])
    return AmbiguityMatrix(rates)


# ---------------------------------------------------------------------------
# Gamma sweep
# ---------------------------------------------------------------------------


def gamma_setting_label(setting: BetaParams | float) -> str:
    if isinstance(setting, BetaParams):
        return str(setting)
    return f"fixed-{float(setting):g}"


@dataclass(frozen=True)
class GammaAblationRow:
    setting: str
    seed: int | None  # None for the seed-averaged row
    report: EvalReport


def _mean_report(reports: list[EvalReport]) -> EvalReport:
    acc_s = float(np.mean([r.acc_source for r in reports]))
    acc_t = float(np.mean([r.acc_target for r in reports]))
    per_class = {
        dom: tuple(
            float(np.mean([r.per_class_accuracy[dom][c] for r in reports]))
            for c in range(len(reports[0].per_class_accuracy[dom]))
        )
        for dom in reports[0].per_class_accuracy
    }
    return EvalReport(
        acc_source=acc_s,
        acc_target=acc_t,
        acc_expanded=(acc_s + acc_t) / 2.0,
        acc_expanded_micro=float(np.mean([r.acc_expanded_micro for r in reports])),
        per_class_accuracy=per_class,
        n_source_test=reports[0].n_source_test,
        n_target_test=reports[0].n_target_test,
    )


def gamma_ablation(
    teachers: TeacherPair,
    data: DomainPairDataset,
    gamma_settings: Sequence[BetaParams | float],
    config: TrainConfig,
    seeds: Sequence[int],
) -> list[GammaAblationRow]:
    """Weighted-distillation sweep over gamma settings.

    Requires a kdCT-only config (mict_weight == 0). Fixed-value settings
    bypass gamma sampling entirely. Rows are deterministic per
    (setting, seed); each setting additionally gets a seed-averaged row.
    """
    if config.mict_weight != 0.0:
        raise ValueError("gamma_ablation requires mict_weight == 0 (kdCT-only protocol)")
    if not gamma_settings:
        raise ValueError("empty gamma_settings list")
    rows: list[GammaAblationRow] = []
    for setting in gamma_settings:
        label = gamma_setting_label(setting)
        reports = []
        for seed in seeds:
            cfg = replace(config, gamma_params=setting, seed=int(seed))
            student, _ = ct_distill(teachers, data, cfg)
            report = evaluate_ude(student, data)
            rows.append(GammaAblationRow(label, int(seed), report))
            reports.append(report)
        rows.append(GammaAblationRow(label, None, _mean_report(reports)))
    return rows
