"""Synthetic labeled-source / unlabeled-target domain pairs.

Each class is an isotropic Gaussian cluster; class means sit on a circle in
the first two feature dimensions. The target domain is the source law with
its means rotated and translated. A configurable minority of samples in
each domain is drawn from the *other* domain's law while keeping the host
domain tag: these are the cross-domain-ambiguous samples, and because they
are injected generatively the exact Bayes posterior stays computable.

Datasets persist as UTF-8 text: one header line of ``key=value`` tokens
(at least ``d=<dim> K=<classes>``; generator output includes the full
configuration so files round-trip exactly), then one CSV record per sample:
``f1,...,fd,label,domain,split`` with an empty label field for unlabeled
records. Target-domain training records never carry a label.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Iterable

import numpy as np

from .rng import SeededRng

DOMAIN_SOURCE = "source"
DOMAIN_TARGET = "target"
SPLIT_TRAIN = "train"
SPLIT_TEST = "test"


@dataclass(frozen=True)
class Sample:
    features: tuple[float, ...]
    label: int | None
    domain: str
    split: str


@dataclass(frozen=True)
class DomainShiftConfig:
    num_classes: int = 4
    dim: int = 2
    cluster_separation: float = 2.0
    rotation_angle: float = math.radians(50.0)
    translation: tuple[float, ...] | None = None
    noise_sigma: float = 0.5
    ambiguity_rate: float = 0.05
    n_s: int = 2000
    n_t: int = 2000
    n_test: int = 1000
    seed: int = 0

    def __post_init__(self):
        if self.num_classes < 2:
            raise ValueError(f"num_classes must be >= 2, got {self.num_classes}")
        if self.dim < 2:
            raise ValueError(f"dim must be >= 2, got {self.dim}")
        if not self.cluster_separation > 0.0:
            raise ValueError("cluster_separation must be positive")
        if not self.noise_sigma > 0.0:
            raise ValueError("noise_sigma must be positive")
        if not 0.0 <= self.ambiguity_rate < 0.5:
            raise ValueError(
                f"ambiguity_rate must lie in [0, 0.5), got {self.ambiguity_rate}"
            )
        if self.translation is None:
            object.__setattr__(self, "translation", (0.0,) * self.dim)
        else:
            object.__setattr__(
                self, "translation", tuple(float(v) for v in self.translation)
            )
            if len(self.translation) != self.dim:
                raise ValueError(
                    f"translation has {len(self.translation)} entries for dim={self.dim}"
                )
        for name in ("n_s", "n_t", "n_test"):
            n = getattr(self, name)
            if self.num_classes > n / 2:
                raise ValueError(f"{name}={n} too small for {self.num_classes} classes")

    def translation_vector(self) -> np.ndarray:
        return np.asarray(self.translation, dtype=np.float64)


@dataclass
class DomainPairDataset:
    source_train: list[Sample]
    target_train: list[Sample]
    source_test: list[Sample]
    target_test: list[Sample]
    generator_metadata: DomainShiftConfig | None = None


def features_matrix(samples: Iterable[Sample]) -> np.ndarray:
    return np.asarray([s.features for s in samples], dtype=np.float64)


def labels_vector(samples: Iterable[Sample]) -> np.ndarray:
    labels = []
    for i, s in enumerate(samples):
        if s.label is None:
            raise ValueError(f"sample {i} is unlabeled")
        labels.append(s.label)
    return np.asarray(labels, dtype=np.int64)


def _class_means(config: DomainShiftConfig) -> tuple[np.ndarray, np.ndarray]:
    """Source and target class means, (K, d) each."""
    k = config.num_classes
    angles = 2.0 * np.pi * np.arange(k) / k
    means_s = np.zeros((k, config.dim))
    means_s[:, 0] = config.cluster_separation * np.cos(angles)
    means_s[:, 1] = config.cluster_separation * np.sin(angles)
    rot = np.eye(config.dim)
    c, s = math.cos(config.rotation_angle), math.sin(config.rotation_angle)
    rot[0, 0], rot[0, 1] = c, -s
    rot[1, 0], rot[1, 1] = s, c
    means_t = means_s @ rot.T + config.translation_vector()
    return means_s, means_t


def _class_counts(n: int, k: int) -> list[int]:
    # Balanced within +-1: the first n % k classes get one extra sample.
    base, extra = divmod(n, k)
    return [base + (1 if c < extra else 0) for c in range(k)]


def _draw_subset(
    config: DomainShiftConfig,
    means_host: np.ndarray,
    means_other: np.ndarray,
    n: int,
    domain: str,
    split: str,
    labeled: bool,
    rng: SeededRng,
) -> list[Sample]:
    samples = []
    for cls, count in enumerate(_class_counts(n, config.num_classes)):
        for _ in range(count):
            ambiguous = rng.uniform() < config.ambiguity_rate
            mean = means_other[cls] if ambiguous else means_host[cls]
            x = mean + config.noise_sigma * rng.normal_array(config.dim)
            samples.append(
                Sample(
                    features=tuple(float(v) for v in x),
                    label=cls if labeled else None,
                    domain=domain,
                    split=split,
                )
            )
    return samples


def generate_domain_pair(config: DomainShiftConfig) -> DomainPairDataset:
    """Deterministically generate the four sample subsets for ``config``."""
    means_s, means_t = _class_means(config)
    root = SeededRng(config.seed).split("synth-domains")
    return DomainPairDataset(
        source_train=_draw_subset(
            config, means_s, means_t, config.n_s, DOMAIN_SOURCE, SPLIT_TRAIN,
            labeled=True, rng=root.split("source-train"),
        ),
        target_train=_draw_subset(
            config, means_t, means_s, config.n_t, DOMAIN_TARGET, SPLIT_TRAIN,
            labeled=False, rng=root.split("target-train"),
        ),
        source_test=_draw_subset(
            config, means_s, means_t, config.n_test, DOMAIN_SOURCE, SPLIT_TEST,
            labeled=True, rng=root.split("source-test"),
        ),
        target_test=_draw_subset(
            config, means_t, means_s, config.n_test, DOMAIN_TARGET, SPLIT_TEST,
            labeled=True, rng=root.split("target-test"),
        ),
        generator_metadata=config,
    )


def bayes_oracle_accuracy(dataset: DomainPairDataset) -> tuple[float, float]:
    """Accuracy of the exact generative posterior on each test set.

    Each test sample is scored under its host domain's mixture law,
    (1 - rho) * N(m_k_host, sigma^2) + rho * N(m_k_other, sigma^2) per class,
    with equal class priors. Requires the generator metadata.
    """
    config = dataset.generator_metadata
    if config is None:
        raise ValueError("dataset has no generator metadata; not produced by generate_domain_pair")
    means_s, means_t = _class_means(config)
    rho = config.ambiguity_rate
    two_var = 2.0 * config.noise_sigma**2

    def acc(samples: list[Sample], means_host: np.ndarray, means_other: np.ndarray) -> float:
        x = features_matrix(samples)
        y = labels_vector(samples)
        d_host = ((x[:, None, :] - means_host[None, :, :]) ** 2).sum(axis=2)
        d_other = ((x[:, None, :] - means_other[None, :, :]) ** 2).sum(axis=2)
        score = (1.0 - rho) * np.exp(-d_host / two_var) + rho * np.exp(-d_other / two_var)
        return float((score.argmax(axis=1) == y).mean())

    return (
        acc(dataset.source_test, means_s, means_t),
        acc(dataset.target_test, means_t, means_s),
    )


# ---------------------------------------------------------------------------
# Persistence
# ---------------------------------------------------------------------------

_META_KEYS = ("sep", "rot", "trans", "noise", "rho", "n_s", "n_t", "n_test", "seed")


def _header_line(dataset: DomainPairDataset, dim: int, k: int) -> str:
    tokens = [f"d={dim}", f"K={k}"]
    config = dataset.generator_metadata
    if config is not None:
        trans = ";".join(repr(float(v)) for v in config.translation_vector())
        tokens += [
            f"sep={config.cluster_separation!r}",
            f"rot={config.rotation_angle!r}",
            f"trans={trans}",
            f"noise={config.noise_sigma!r}",
            f"rho={config.ambiguity_rate!r}",
            f"n_s={config.n_s}",
            f"n_t={config.n_t}",
            f"n_test={config.n_test}",
            f"seed={config.seed}",
        ]
    return " ".join(tokens)


def save_dataset(dataset: DomainPairDataset, path) -> None:
    subsets = (
        dataset.source_train,
        dataset.target_train,
        dataset.source_test,
        dataset.target_test,
    )
    dims = {len(s.features) for subset in subsets for s in subset}
    if len(dims) != 1:
        raise ValueError(f"inconsistent feature dimensions: {sorted(dims)}")
    dim = dims.pop()
    if dataset.generator_metadata is not None:
        k = dataset.generator_metadata.num_classes
    else:
        k = max(s.label for subset in subsets for s in subset if s.label is not None) + 1
    lines = [_header_line(dataset, dim, k)]
    for subset in subsets:
        for s in subset:
            feats = ",".join(repr(v) for v in s.features)
            label = "" if s.label is None else str(s.label)
            lines.append(f"{feats},{label},{s.domain},{s.split}")
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("\n".join(lines) + "\n")


def _parse_header(line: str) -> dict[str, str]:
    fields = {}
    for token in line.split():
        if "=" not in token:
            raise ValueError(f"malformed header token {token!r}")
        key, value = token.split("=", 1)
        fields[key] = value
    if "d" not in fields or "K" not in fields:
        raise ValueError("header must declare d=<dim> and K=<classes>")
    return fields


def _config_from_header(fields: dict[str, str]) -> DomainShiftConfig | None:
    if not all(key in fields for key in _META_KEYS):
        return None
    return DomainShiftConfig(
        num_classes=int(fields["K"]),
        dim=int(fields["d"]),
        cluster_separation=float(fields["sep"]),
        rotation_angle=float(fields["rot"]),
        translation=tuple(float(v) for v in fields["trans"].split(";")),
        noise_sigma=float(fields["noise"]),
        ambiguity_rate=float(fields["rho"]),
        n_s=int(fields["n_s"]),
        n_t=int(fields["n_t"]),
        n_test=int(fields["n_test"]),
        seed=int(fields["seed"]),
    )


def load_dataset(path) -> DomainPairDataset:
    """Load a dataset file, validating every record; inverse of save_dataset."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise ValueError(f"{path}: empty file")
    fields = _parse_header(lines[0])
    dim = int(fields["d"])
    k = int(fields["K"])
    config = _config_from_header(fields)

    subsets: dict[tuple[str, str], list[Sample]] = {
        (DOMAIN_SOURCE, SPLIT_TRAIN): [],
        (DOMAIN_TARGET, SPLIT_TRAIN): [],
        (DOMAIN_SOURCE, SPLIT_TEST): [],
        (DOMAIN_TARGET, SPLIT_TEST): [],
    }
    for i, line in enumerate(lines[1:]):
        parts = line.split(",")
        if len(parts) != dim + 3:
            raise ValueError(
                f"record {i}: expected {dim + 3} fields (d={dim}), got {len(parts)}"
            )
        try:
            feats = tuple(float(v) for v in parts[:dim])
        except ValueError as exc:
            raise ValueError(f"record {i}: bad feature value ({exc})") from None
        if not all(math.isfinite(v) for v in feats):
            raise ValueError(f"record {i}: non-finite feature")
        label_field, domain, split = parts[dim], parts[dim + 1], parts[dim + 2]
        if domain not in (DOMAIN_SOURCE, DOMAIN_TARGET):
            raise ValueError(f"record {i}: unknown domain {domain!r}")
        if split not in (SPLIT_TRAIN, SPLIT_TEST):
            raise ValueError(f"record {i}: unknown split {split!r}")
        unlabeled_slot = domain == DOMAIN_TARGET and split == SPLIT_TRAIN
        if label_field == "":
            if not unlabeled_slot:
                raise ValueError(f"record {i}: missing label on a {domain} {split} record")
            label = None
        else:
            if unlabeled_slot:
                raise ValueError(f"record {i}: label on a target train record")
            label = int(label_field)
            if not 0 <= label < k:
                raise ValueError(f"record {i}: label {label} outside [0, {k})")
        subsets[(domain, split)].append(Sample(feats, label, domain, split))

    if config is not None:
        expected = {
            (DOMAIN_SOURCE, SPLIT_TRAIN): config.n_s,
            (DOMAIN_TARGET, SPLIT_TRAIN): config.n_t,
            (DOMAIN_SOURCE, SPLIT_TEST): config.n_test,
            (DOMAIN_TARGET, SPLIT_TEST): config.n_test,
        }
        seen = sum(len(v) for v in subsets.values())
        want = sum(expected.values())
        if seen != want:
            raise ValueError(f"truncated file: found {seen} records, header declares {want}")
        for key, n in expected.items():
            if len(subsets[key]) != n:
                raise ValueError(
                    f"subset {key[0]}/{key[1]} has {len(subsets[key])} records, expected {n}"
                )

    return DomainPairDataset(
        source_train=subsets[(DOMAIN_SOURCE, SPLIT_TRAIN)],
        target_train=subsets[(DOMAIN_TARGET, SPLIT_TRAIN)],
        source_test=subsets[(DOMAIN_SOURCE, SPLIT_TEST)],
        target_test=subsets[(DOMAIN_TARGET, SPLIT_TEST)],
        generator_metadata=config,
    )
