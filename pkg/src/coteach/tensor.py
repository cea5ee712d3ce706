"""Reverse-mode automatic differentiation over dense float64 arrays.

A ``Tape`` is a Wengert list: operations executed while a tape is active are
recorded in execution order, which is by construction a topological order of
the computation graph. ``backward`` replays the list once in reverse,
accumulating vector-Jacobian products into the gradient buffers of leaf
tensors that were created with ``requires_grad=True``.

The op set is deliberately small: exactly what the classifier forward pass
and the distillation / alignment losses need. There is no broadcasting
beyond the batch-by-classes shapes those losses use, no higher-order
derivatives, and everything is float64 so that finite-difference checks
are tight.
"""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

# Teacher probabilities are clamped here before the log inside kl_div, so a
# hard 0/1 teacher prediction cannot produce -inf.
TEACHER_PROB_FLOOR = 1e-12
ROW_SUM_TOL = 1e-9


class Tensor:
    """Dense float64 array with an optional gradient buffer and tape link.

    ``grad`` is only ever populated on tensors with ``requires_grad=True``;
    gradients of intermediate results live in the backward sweep's local
    buffers and are discarded afterwards.
    """

    __slots__ = ("values", "requires_grad", "grad", "tape", "node_id")

    def __init__(self, values, requires_grad: bool = False):
        self.values = np.asarray(values, dtype=np.float64)
        self.requires_grad = bool(requires_grad)
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self.node_id: int | None = None

    @property
    def shape(self) -> tuple[int, ...]:
        return self.values.shape

    def item(self) -> float:
        if self.values.size != 1:
            raise ValueError(f"item() on tensor of shape {self.shape}")
        return float(self.values.reshape(()))

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        flags = []
        if self.requires_grad:
            flags.append("requires_grad")
        if self.node_id is not None:
            flags.append(f"node={self.node_id}")
        extra = (", " + ", ".join(flags)) if flags else ""
        return f"Tensor(shape={self.shape}{extra})"


def constant(values) -> Tensor:
    return Tensor(values, requires_grad=False)


def parameter(values) -> Tensor:
    return Tensor(values, requires_grad=True)


class _Node:
    __slots__ = ("parents", "vjp")

    def __init__(self, parents: tuple[Tensor, ...], vjp: Callable):
        self.parents = parents
        self.vjp = vjp


_ACTIVE_TAPE: "Tape | None" = None


class Tape:
    """Recorded operations, in execution (= topological) order.

    Use as a context manager around the forward computation:

        with Tape():
            loss = build_loss(params)
        backward(loss)

    A tape and its tensors belong to a single logical thread; run parallel
    trainings with separate tapes.
    """

    def __init__(self):
        self.nodes: list[_Node] = []

    def __enter__(self) -> "Tape":
        global _ACTIVE_TAPE
        if _ACTIVE_TAPE is not None:
            raise RuntimeError("a Tape is already active; tapes do not nest")
        _ACTIVE_TAPE = self
        return self

    def __exit__(self, exc_type, exc, tb):
        global _ACTIVE_TAPE
        _ACTIVE_TAPE = None
        return False

    def __len__(self) -> int:
        return len(self.nodes)


def _tracked(t: Tensor) -> bool:
    return t.requires_grad or t.node_id is not None


def _record(out: Tensor, parents: tuple[Tensor, ...], vjp: Callable) -> Tensor:
    """Attach ``out`` to the active tape if any parent participates in it."""
    tape = _ACTIVE_TAPE
    if tape is None or not any(_tracked(p) for p in parents):
        return out
    for p in parents:
        if p.node_id is not None and p.tape is not tape:
            raise RuntimeError("operands belong to different tapes")
    out.tape = tape
    out.node_id = len(tape.nodes)
    tape.nodes.append(_Node(parents, vjp))
    return out


def backward(loss: Tensor) -> None:
    """Populate ``grad`` on every requires_grad leaf reachable from ``loss``.

    ``loss`` must be a scalar recorded on a tape. Repeated calls without
    zeroing leaf grads accumulate, by design; ``Tensor.zero_grad`` resets.
    """
    if not isinstance(loss, Tensor):
        raise TypeError("backward expects a Tensor")
    if loss.values.shape != ():
        raise ValueError(f"backward expects a scalar loss, got shape {loss.shape}")
    if loss.tape is None or loss.node_id is None:
        raise ValueError("loss is detached from any tape; build it under `with Tape():`")
    tape = loss.tape
    local: dict[int, np.ndarray] = {loss.node_id: np.ones((), dtype=np.float64)}
    for nid in range(loss.node_id, -1, -1):
        g = local.pop(nid, None)
        if g is None:
            continue
        node = tape.nodes[nid]
        parent_grads = node.vjp(g)
        for p, pg in zip(node.parents, parent_grads):
            if pg is None:
                continue
            if p.node_id is not None:
                acc = local.get(p.node_id)
                local[p.node_id] = pg if acc is None else acc + pg
            elif p.requires_grad:
                if p.grad is None:
                    p.grad = np.zeros_like(p.values)
                p.grad += pg


# ---------------------------------------------------------------------------
# Ops. Each computes values eagerly and registers a VJP closure on the
# active tape. Shape contracts are strict; the loss code never broadcasts.
# ---------------------------------------------------------------------------


def affine(x: Tensor, w: Tensor, b: Tensor) -> Tensor:
    """x @ w + b for x:(m,p), w:(p,q), b:(q,)."""
    if x.values.ndim != 2 or w.values.ndim != 2 or b.values.ndim != 1:
        raise ValueError("affine expects x:(m,p), w:(p,q), b:(q,)")
    if x.values.shape[1] != w.values.shape[0] or w.values.shape[1] != b.values.shape[0]:
        raise ValueError(
            f"affine shape mismatch: x{x.shape} @ w{w.shape} + b{b.shape}"
        )
    xv, wv = x.values, w.values
    out = Tensor(xv @ wv + b.values)

    def vjp(g):
        return (g @ wv.T, xv.T @ g, g.sum(axis=0))

    return _record(out, (x, w, b), vjp)


def relu(x: Tensor) -> Tensor:
    mask = x.values > 0.0
    out = Tensor(np.where(mask, x.values, 0.0))

    def vjp(g):
        return (g * mask,)

    return _record(out, (x,), vjp)


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.values.shape != b.values.shape:
        raise ValueError(f"add shape mismatch: {a.shape} vs {b.shape}")
    out = Tensor(a.values + b.values)

    def vjp(g):
        return (g, g)

    return _record(out, (a, b), vjp)


def scale(t: Tensor, c: float) -> Tensor:
    c = float(c)
    out = Tensor(t.values * c)

    def vjp(g):
        return (g * c,)

    return _record(out, (t,), vjp)


def reduce_mean(t: Tensor) -> Tensor:
    """Arithmetic mean of all entries, as a scalar tensor."""
    if t.values.size == 0:
        raise ValueError("reduce_mean of an empty tensor")
    size = t.values.size
    shape = t.values.shape
    out = Tensor(t.values.mean())

    def vjp(g):
        return (np.full(shape, float(g) / size),)

    return _record(out, (t,), vjp)


def gather_rows(t: Tensor, idx) -> Tensor:
    """out[i] = t[i, idx[i]] for t:(b,c) and integer idx:(b,)."""
    idx = np.asarray(idx)
    if t.values.ndim != 2 or idx.shape != (t.values.shape[0],):
        raise ValueError("gather_rows expects t:(b,c) and idx:(b,)")
    rows = np.arange(t.values.shape[0])
    out = Tensor(t.values[rows, idx])
    shape = t.values.shape

    def vjp(g):
        full = np.zeros(shape)
        full[rows, idx] = g
        return (full,)

    return _record(out, (t,), vjp)


def log_softmax(logits: Tensor, temperature: float = 1.0) -> Tensor:
    """Row-wise log softmax of logits/temperature, max-subtracted.

    Rows exponentiate-and-sum to 1 and the result is shift invariant in the
    logits. Non-finite inputs are rejected with the offending batch row.
    """
    if logits.values.ndim != 2 or logits.values.shape[1] < 2:
        raise ValueError("log_softmax expects a (batch, classes>=2) tensor")
    if not temperature > 0.0:
        raise ValueError(f"temperature must be positive, got {temperature}")
    bad = ~np.isfinite(logits.values)
    if bad.any():
        row = int(np.nonzero(bad.any(axis=1))[0][0])
        raise ValueError(f"non-finite logits in batch row {row}")
    z = logits.values / temperature
    z = z - z.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    out_values = z - lse
    out = Tensor(out_values)
    inv_t = 1.0 / temperature

    def vjp(g):
        p = np.exp(out_values)
        return ((g - p * g.sum(axis=1, keepdims=True)) * inv_t,)

    return _record(out, (logits,), vjp)


def kl_div(p_teacher: Tensor, log_q_student: Tensor) -> Tensor:
    """Mean over the batch of sum_c p * (log p - log q), with 0*log 0 := 0.

    ``p_teacher`` is treated as a constant: each row must be a probability
    vector (entries >= 0, summing to 1 within 1e-9) and no gradient flows to
    it. The gradient flows only to ``log_q_student``. Teacher probabilities
    are floored at 1e-12 before their log.
    """
    p = p_teacher.values
    logq = log_q_student.values
    if p.ndim != 2 or p.shape != logq.shape:
        raise ValueError(f"kl_div shape mismatch: p{p.shape} vs log_q{logq.shape}")
    if (p < 0.0).any():
        row = int(np.nonzero((p < 0.0).any(axis=1))[0][0])
        raise ValueError(f"negative teacher probability in row {row}")
    sums = p.sum(axis=1)
    off = np.abs(sums - 1.0) > ROW_SUM_TOL
    if off.any():
        row = int(np.nonzero(off)[0][0])
        raise ValueError(
            f"teacher row {row} sums to {sums[row]!r}, not 1 within {ROW_SUM_TOL}"
        )
    batch = p.shape[0]
    logp = np.log(np.maximum(p, TEACHER_PROB_FLOOR))
    # p == 0 entries contribute exactly 0 * finite = 0.
    out = Tensor((p * (logp - logq)).sum() / batch)

    def vjp(g):
        return ((-p / batch) * float(g),)

    return _record(out, (log_q_student,), vjp)


def mmd2_rbf(features_a: Tensor, features_b: Tensor, bandwidths: Sequence[float]) -> Tensor:
    """Biased V-statistic of squared MMD, summed over an RBF kernel list.

    Kernel: k(u, v) = exp(-||u - v||^2 / (2 sigma^2)) for each sigma in
    ``bandwidths``. Symmetric in its two arguments and >= -1e-12.
    """
    a, b = features_a.values, features_b.values
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[1]:
        raise ValueError(f"mmd2_rbf expects (m,h) and (n,h) features, got {a.shape}, {b.shape}")
    if a.shape[0] < 1 or b.shape[0] < 1:
        raise ValueError("mmd2_rbf needs at least one row per side")
    bandwidths = [float(s) for s in bandwidths]
    if not bandwidths:
        raise ValueError("empty bandwidth list")
    if any(s <= 0.0 for s in bandwidths):
        raise ValueError(f"bandwidths must be positive, got {bandwidths}")
    m, n = a.shape[0], b.shape[0]
    daa = _sq_dists(a, a)
    dbb = _sq_dists(b, b)
    dab = _sq_dists(a, b)
    total = 0.0
    kernels = []
    for sigma in bandwidths:
        inv = 1.0 / (2.0 * sigma * sigma)
        kaa = np.exp(-daa * inv)
        kbb = np.exp(-dbb * inv)
        kab = np.exp(-dab * inv)
        kernels.append((sigma, kaa, kbb, kab))
        total += kaa.mean() + kbb.mean() - 2.0 * kab.mean()
    out = Tensor(np.float64(total))

    def vjp(g):
        ga = np.zeros_like(a)
        gb = np.zeros_like(b)
        for sigma, kaa, kbb, kab in kernels:
            inv_s2 = 1.0 / (sigma * sigma)
            # d/da_i of (1/m^2) sum kaa: -(2/(m^2 s^2)) sum_i' kaa[i,i'] (a_i - a_i')
            ga += (-2.0 / (m * m) * inv_s2) * (kaa.sum(axis=1, keepdims=True) * a - kaa @ a)
            # d/da_i of -(2/mn) sum kab: +(2/(mn s^2)) sum_j kab[i,j] (a_i - b_j)
            ga += (2.0 / (m * n) * inv_s2) * (kab.sum(axis=1, keepdims=True) * a - kab @ b)
            gb += (-2.0 / (n * n) * inv_s2) * (kbb.sum(axis=1, keepdims=True) * b - kbb @ b)
            gb += (2.0 / (m * n) * inv_s2) * (kab.sum(axis=0)[:, None] * b - kab.T @ a)
        gf = float(g)
        return (ga * gf, gb * gf)

    return _record(out, (features_a, features_b), vjp)


def _sq_dists(u: np.ndarray, v: np.ndarray) -> np.ndarray:
    uu = (u * u).sum(axis=1)[:, None]
    vv = (v * v).sum(axis=1)[None, :]
    return np.maximum(uu + vv - 2.0 * (u @ v.T), 0.0)


# ---------------------------------------------------------------------------
# Optimizer and gradient checking
# ---------------------------------------------------------------------------


def zero_velocity(params: Sequence[Tensor]) -> list[np.ndarray]:
    return [np.zeros_like(p.values) for p in params]


def sgd_step(
    params: Sequence[Tensor],
    lr: float,
    momentum: float,
    weight_decay: float,
    velocity: list[np.ndarray],
) -> Sequence[Tensor]:
    """v <- momentum*v + grad + weight_decay*param; param <- param - lr*v.

    Gradients are cleared afterwards. Every param must carry a grad.
    """
    if not lr > 0.0:
        raise ValueError(f"lr must be positive, got {lr}")
    if not 0.0 <= momentum < 1.0:
        raise ValueError(f"momentum must be in [0,1), got {momentum}")
    if weight_decay < 0.0:
        raise ValueError(f"weight_decay must be non-negative, got {weight_decay}")
    if len(velocity) != len(params):
        raise ValueError("velocity buffers do not match params")
    for i, p in enumerate(params):
        if p.grad is None:
            raise ValueError(f"param {i} has no gradient; run backward first")
    for p, v in zip(params, velocity):
        v *= momentum
        v += p.grad
        if weight_decay != 0.0:
            v += weight_decay * p.values
        p.values -= lr * v
        p.grad = None
    return params


def grad_check(
    loss_builder: Callable[[Sequence[Tensor]], Tensor],
    params: Sequence[Tensor],
    step: float = 1e-5,
) -> float:
    """Max relative error between tape gradients and central differences.

    ``loss_builder(params)`` must deterministically rebuild the scalar loss
    from the current parameter values. Relative error per coordinate is
    |analytic - fd| / max(1, |analytic|, |fd|).
    """
    if not step > 0.0:
        raise ValueError(f"step must be positive, got {step}")
    saved = [p.grad for p in params]
    for p in params:
        p.grad = None
    with Tape():
        loss = loss_builder(params)
    if loss.values.shape != ():
        raise ValueError("loss_builder must return a scalar tensor")
    if not np.isfinite(loss.values):
        raise ValueError("non-finite loss at the evaluation point")
    backward(loss)
    analytic = [
        p.grad.copy() if p.grad is not None else np.zeros_like(p.values) for p in params
    ]
    for p, g in zip(params, saved):
        p.grad = g

    max_err = 0.0
    for p, ga in zip(params, analytic):
        flat = p.values.reshape(-1)
        gflat = ga.reshape(-1)
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            lp = float(loss_builder(params).values)
            flat[j] = orig - step
            lm = float(loss_builder(params).values)
            flat[j] = orig
            if not (np.isfinite(lp) and np.isfinite(lm)):
                raise ValueError(f"non-finite loss at probe of coordinate {j}")
            fd = (lp - lm) / (2.0 * step)
            err = abs(gflat[j] - fd) / max(1.0, abs(gflat[j]), abs(fd))
            if err > max_err:
                max_err = err
    return max_err
