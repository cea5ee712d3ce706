"""Small feed-forward classifiers with exposed penultimate features.

The same architecture plays the source teacher, the target teacher, and the
student. Features (the post-activation output of the last hidden layer) are
what the domain-alignment loss operates on; logits feed the distillation and
supervised losses. Checkpoints are JSON with full-precision decimal arrays,
so a round trip is bit-exact in float64.
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass

import numpy as np

from .data import Sample, features_matrix
from .rng import SeededRng
from .tensor import Tensor, affine, constant, parameter, relu


@dataclass
class MlpClassifier:
    layer_sizes: list[int]
    weights: list[Tensor]
    biases: list[Tensor]

    @property
    def input_dim(self) -> int:
        return self.layer_sizes[0]

    @property
    def num_classes(self) -> int:
        return self.layer_sizes[-1]

    def params(self) -> list[Tensor]:
        out = []
        for w, b in zip(self.weights, self.biases):
            out.extend((w, b))
        return out


def init_mlp(layer_sizes, rng: SeededRng) -> MlpClassifier:
    """Fan-in-scaled Gaussian weights (std sqrt(2/fan_in)), zero biases."""
    layer_sizes = [int(n) for n in layer_sizes]
    if len(layer_sizes) < 3:
        raise ValueError(f"need at least one hidden layer, got sizes {layer_sizes}")
    if any(n < 1 for n in layer_sizes):
        raise ValueError(f"layer sizes must be positive, got {layer_sizes}")
    weights, biases = [], []
    for fan_in, fan_out in zip(layer_sizes, layer_sizes[1:]):
        w = rng.normal_array((fan_in, fan_out)) * np.sqrt(2.0 / fan_in)
        weights.append(parameter(w))
        biases.append(parameter(np.zeros(fan_out)))
    return MlpClassifier(layer_sizes, weights, biases)


def forward(model: MlpClassifier, batch) -> tuple[Tensor, Tensor]:
    """Return (logits, features) for a (b, d) batch.

    ``batch`` may be a Tensor, a numpy array, or a list of Samples. The
    result is differentiable when called under an active Tape with trainable
    parameters; a frozen model contributes nothing to the tape.
    """
    if isinstance(batch, Tensor):
        x = batch
    else:
        if isinstance(batch, list) and batch and isinstance(batch[0], Sample):
            batch = features_matrix(batch)
        x = constant(np.asarray(batch, dtype=np.float64))
    if x.values.ndim != 2 or x.values.shape[1] != model.input_dim:
        raise ValueError(
            f"batch shape {x.values.shape} does not match input dim {model.input_dim}"
        )
    h = x
    for w, b in zip(model.weights[:-1], model.biases[:-1]):
        h = relu(affine(h, w, b))
    logits = affine(h, model.weights[-1], model.biases[-1])
    return logits, h


def predict(model: MlpClassifier, samples) -> np.ndarray:
    """Class ids by logit argmax; ties break toward the smaller class id."""
    logits, _ = forward(model, samples)
    return logits.values.argmax(axis=1)


def softmax_probs(logits: np.ndarray, temperature: float = 1.0) -> np.ndarray:
    """Row-wise softmax of a plain array, max-subtracted for stability."""
    z = np.asarray(logits, dtype=np.float64) / float(temperature)
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def teacher_probs(model: MlpClassifier, batch, temperature: float = 1.0) -> np.ndarray:
    """Softmax outputs of a (frozen) model as a constant numpy array."""
    logits, _ = forward(model, batch)
    return softmax_probs(logits.values, temperature)


def freeze(model: MlpClassifier) -> MlpClassifier:
    """Deep-copied model whose parameters cannot receive gradients."""
    frozen = MlpClassifier(
        list(model.layer_sizes),
        [Tensor(w.values.copy()) for w in model.weights],
        [Tensor(b.values.copy()) for b in model.biases],
    )
    return frozen


def clone(model: MlpClassifier) -> MlpClassifier:
    out = copy.deepcopy(model)
    return out


def param_digest(model: MlpClassifier) -> str:
    """SHA-256 over the exact parameter bytes; detects any mutation."""
    h = hashlib.sha256()
    for p in model.params():
        h.update(np.ascontiguousarray(p.values).tobytes())
    return h.hexdigest()


# ---------------------------------------------------------------------------
# Checkpoints
# ---------------------------------------------------------------------------


def _payload(model: MlpClassifier, metadata: dict) -> dict:
    return {
        "layer_sizes": list(model.layer_sizes),
        "params": [p.values.reshape(-1).tolist() for p in model.params()],
        "metadata": metadata,
    }


def _payload_digest(payload: dict) -> str:
    canon = json.dumps(payload, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def save_checkpoint(model: MlpClassifier, path, metadata: dict | None = None) -> None:
    payload = _payload(model, dict(metadata or {}))
    payload["digest"] = _payload_digest(
        {k: payload[k] for k in ("layer_sizes", "params", "metadata")}
    )
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(payload, fh, sort_keys=True, separators=(",", ":"))
        fh.write("\n")


def load_checkpoint(path) -> tuple[MlpClassifier, dict]:
    """Rebuild (model, metadata); rejects truncated or tampered files."""
    try:
        with open(path, "r", encoding="utf-8") as fh:
            payload = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ValueError(f"{path}: not a valid checkpoint ({exc})") from None
    for key in ("layer_sizes", "params", "metadata", "digest"):
        if key not in payload:
            raise ValueError(f"{path}: checkpoint missing field {key!r}")
    digest = _payload_digest(
        {k: payload[k] for k in ("layer_sizes", "params", "metadata")}
    )
    if digest != payload["digest"]:
        raise ValueError(f"{path}: checkpoint digest mismatch")
    sizes = [int(n) for n in payload["layer_sizes"]]
    flats = payload["params"]
    if len(flats) != 2 * (len(sizes) - 1):
        raise ValueError(f"{path}: expected {2 * (len(sizes) - 1)} arrays, got {len(flats)}")
    weights, biases = [], []
    for i, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        wf = np.asarray(flats[2 * i], dtype=np.float64)
        bf = np.asarray(flats[2 * i + 1], dtype=np.float64)
        if wf.size != fan_in * fan_out or bf.size != fan_out:
            raise ValueError(f"{path}: layer {i} parameter length inconsistent with sizes")
        weights.append(parameter(wf.reshape(fan_in, fan_out)))
        biases.append(parameter(bf))
    return MlpClassifier(sizes, weights, biases), payload["metadata"]
