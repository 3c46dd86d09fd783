"""Tape-based reverse-mode automatic differentiation over float64 arrays.

Just enough machinery for small MLPs: matrix products, elementwise ops,
dropout, gradient reversal, and the two losses used in adversarial
training. Every op records a node on a Tape; backward() replays the tape
once in reverse. Tensors without a tape compute forward only, which is
how evaluation runs without building graphs.
"""

from __future__ import annotations

import numpy as np

from .errors import DimensionError, LabelError, ParameterError, UsageError

# Predictions are clipped into [EPS, 1-EPS] before any log so losses stay
# finite on saturated discriminators.
EPS = 1e-7


class Tensor:
    """Dense float64 array, optionally tracked on a Tape.

    `grad` is populated (as a plain ndarray) by backward() for every
    tracked tensor the loss reaches.
    """

    __slots__ = ("data", "tape", "node_id", "grad")

    def __init__(self, data, tape: "Tape | None" = None):
        self.data = np.asarray(data, dtype=np.float64)
        self.tape = None
        self.node_id = None
        self.grad = None
        if tape is not None:
            tape.watch(self)

    @property
    def shape(self):
        return self.data.shape

    def item(self) -> float:
        if self.data.size != 1:
            raise UsageError(f"item() needs a single-element tensor, got shape {self.shape}")
        return float(self.data.reshape(-1)[0])

    def detach(self):
        """Drop tape membership; data is kept, grad cleared."""
        self.tape = None
        self.node_id = None
        self.grad = None
        return self

    def __matmul__(self, other):
        return matmul(self, other)

    def __add__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        if isinstance(other, Tensor):
            return mul(self, other)
        return scale(self, float(other))

    __rmul__ = __mul__

    def __neg__(self):
        return scale(self, -1.0)

    def __repr__(self):
        return f"Tensor(shape={self.shape}, tracked={self.node_id is not None})"


class _Node:
    __slots__ = ("op", "inputs", "backward_fn", "tensor")

    def __init__(self, op, inputs, backward_fn, tensor):
        self.op = op
        self.inputs = inputs          # node ids of tracked inputs (None for constants)
        self.backward_fn = backward_fn
        self.tensor = tensor


class Tape:
    """Ordered record of operations; inputs always precede their users."""

    __slots__ = ("nodes",)

    def __init__(self):
        self.nodes: list[_Node] = []

    def __len__(self):
        return len(self.nodes)

    def watch(self, tensor: Tensor) -> int:
        """Register `tensor` as a leaf (e.g. a parameter). Re-binds if the
        tensor was watched on an earlier tape."""
        tensor.tape = self
        tensor.node_id = len(self.nodes)
        tensor.grad = None
        self.nodes.append(_Node("leaf", (), None, tensor))
        return tensor.node_id

    def _record(self, op, out: Tensor, inputs, backward_fn) -> Tensor:
        out.tape = self
        out.node_id = len(self.nodes)
        self.nodes.append(_Node(op, inputs, backward_fn, out))
        return out


def _tape_of(*tensors) -> Tape | None:
    tape = None
    for t in tensors:
        if t.tape is not None:
            if tape is not None and t.tape is not tape:
                raise UsageError("operands live on different tapes")
            tape = t.tape
    return tape


def _accumulate(grads, node_id, value):
    if node_id is None:
        return
    if grads[node_id] is None:
        grads[node_id] = np.array(value, dtype=np.float64)
    else:
        grads[node_id] += value


def matmul(a: Tensor, b: Tensor) -> Tensor:
    """Matrix product of two 2-D tensors."""
    if a.data.ndim != 2 or b.data.ndim != 2 or a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul shapes incompatible: {a.shape} x {b.shape}")
    out = Tensor(a.data @ b.data)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    a_id, b_id, a_data, b_data = a.node_id, b.node_id, a.data, b.data

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g @ b_data.T)
        _accumulate(grads, b_id, a_data.T @ g)

    return tape._record("matmul", out, (a_id, b_id), backward_fn)


def _bias_broadcast(a: Tensor, b: Tensor) -> bool:
    # The one allowed broadcast: matrix + row vector (bias pattern).
    return a.data.ndim == 2 and b.data.ndim == 1 and a.shape[1] == b.shape[0]


def add(a: Tensor, b: Tensor) -> Tensor:
    """Elementwise sum; also accepts matrix + row-vector for biases."""
    bias = _bias_broadcast(a, b)
    if not bias and a.shape != b.shape:
        raise DimensionError(f"add shapes incompatible: {a.shape} + {b.shape}")
    out = Tensor(a.data + b.data)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    a_id, b_id = a.node_id, b.node_id

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g)
        _accumulate(grads, b_id, g.sum(axis=0) if bias else g)

    return tape._record("add", out, (a_id, b_id), backward_fn)


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.shape != b.shape:
        raise DimensionError(f"sub shapes incompatible: {a.shape} - {b.shape}")
    out = Tensor(a.data - b.data)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    a_id, b_id = a.node_id, b.node_id

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g)
        _accumulate(grads, b_id, -g)

    return tape._record("sub", out, (a_id, b_id), backward_fn)


def mul(a: Tensor, b: Tensor) -> Tensor:
    """Hadamard product of equal-shaped tensors."""
    if a.shape != b.shape:
        raise DimensionError(f"mul shapes incompatible: {a.shape} * {b.shape}")
    out = Tensor(a.data * b.data)
    tape = _tape_of(a, b)
    if tape is None:
        return out
    a_id, b_id, a_data, b_data = a.node_id, b.node_id, a.data, b.data

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g * b_data)
        _accumulate(grads, b_id, g * a_data)

    return tape._record("mul", out, (a_id, b_id), backward_fn)


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor(a.data * c)
    tape = _tape_of(a)
    if tape is None:
        return out
    a_id = a.node_id

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g * c)

    return tape._record("scale", out, (a_id,), backward_fn)


def relu(a: Tensor) -> Tensor:
    out = Tensor(np.maximum(a.data, 0.0))
    tape = _tape_of(a)
    if tape is None:
        return out
    a_id = a.node_id
    active = a.data > 0  # gradient is 0 at exactly 0

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g * active)

    return tape._record("relu", out, (a_id,), backward_fn)


def sigmoid(a: Tensor) -> Tensor:
    s = 1.0 / (1.0 + np.exp(-a.data))
    out = Tensor(s)
    tape = _tape_of(a)
    if tape is None:
        return out
    a_id = a.node_id

    def backward_fn(g, grads):
        _accumulate(grads, a_id, g * s * (1.0 - s))

    return tape._record("sigmoid", out, (a_id,), backward_fn)


def sum_all(a: Tensor) -> Tensor:
    """Sum over all entries, producing a scalar."""
    out = Tensor(a.data.sum())
    tape = _tape_of(a)
    if tape is None:
        return out
    a_id, shape = a.node_id, a.data.shape

    def backward_fn(g, grads):
        _accumulate(grads, a_id, np.broadcast_to(g, shape))

    return tape._record("sum_all", out, (a_id,), backward_fn)


def grad_reverse(x: Tensor, lam: float) -> Tensor:
    """Identity in the forward pass; multiplies the upstream gradient by
    -lam in the backward pass. lam=0 detaches the subgraph."""
    if lam < 0:
        raise ParameterError(f"grad_reverse needs lam >= 0, got {lam}")
    out = Tensor(x.data)
    tape = _tape_of(x)
    if tape is None:
        return out
    x_id = x.node_id

    def backward_fn(g, grads):
        _accumulate(grads, x_id, g * (-lam))

    return tape._record("grad_reverse", out, (x_id,), backward_fn)


def dropout_apply(x: Tensor, mask: Tensor, keep_prob: float) -> Tensor:
    """Inverted dropout: x * mask / keep_prob, same routing backward.

    The division keeps the activation expectation equal to x, so ensemble
    size can grow without shifting activation scale.
    """
    if keep_prob <= 0:
        raise ParameterError(f"keep_prob must be positive, got {keep_prob}")
    if mask.shape != x.shape:
        raise DimensionError(f"dropout mask shape {mask.shape} != input shape {x.shape}")
    m = mask.data
    if not np.all((m == 0.0) | (m == 1.0)):
        raise ParameterError("dropout mask entries must be 0 or 1")
    out = Tensor(x.data * m / keep_prob)
    tape = _tape_of(x)
    if tape is None:
        return out
    x_id = x.node_id

    def backward_fn(g, grads):
        _accumulate(grads, x_id, g * m / keep_prob)

    return tape._record("dropout", out, (x_id,), backward_fn)


def softmax_cross_entropy(logits: Tensor, labels) -> Tensor:
    """Mean cross-entropy between softmax(logits) and integer class labels."""
    if logits.data.ndim != 2:
        raise DimensionError(f"logits must be 2-D, got shape {logits.shape}")
    y = np.asarray(labels, dtype=np.int64).reshape(-1)
    n, c = logits.shape
    if y.shape[0] != n:
        raise DimensionError(f"{n} logit rows but {y.shape[0]} labels")
    if y.size and (y.min() < 0 or y.max() >= c):
        raise LabelError(f"class labels must lie in [0, {c}), got {y.min()}..{y.max()}")
    z = logits.data - logits.data.max(axis=1, keepdims=True)
    log_probs = z - np.log(np.exp(z).sum(axis=1, keepdims=True))
    out = Tensor(-log_probs[np.arange(n), y].mean())
    tape = _tape_of(logits)
    if tape is None:
        return out
    l_id = logits.node_id
    softmax = np.exp(log_probs)

    def backward_fn(g, grads):
        delta = softmax.copy()
        delta[np.arange(n), y] -= 1.0
        _accumulate(grads, l_id, g * delta / n)

    return tape._record("softmax_ce", out, (l_id,), backward_fn)


def binary_cross_entropy(pred: Tensor, target: Tensor) -> Tensor:
    """Mean binary cross-entropy; predictions clipped to [EPS, 1-EPS]."""
    if pred.shape != target.shape:
        raise DimensionError(f"pred shape {pred.shape} != target shape {target.shape}")
    t = target.data
    if not np.all((t == 0.0) | (t == 1.0)):
        raise LabelError("binary targets must be exactly 0 or 1")
    p = np.clip(pred.data, EPS, 1.0 - EPS)
    n = p.size
    out = Tensor(-(t * np.log(p) + (1.0 - t) * np.log(1.0 - p)).sum() / n)
    tape = _tape_of(pred)
    if tape is None:
        return out
    p_id = pred.node_id
    inside = (pred.data >= EPS) & (pred.data <= 1.0 - EPS)  # no gradient through the clip

    def backward_fn(g, grads):
        _accumulate(grads, p_id, g * inside * (p - t) / (p * (1.0 - p)) / n)

    return tape._record("bce", out, (p_id,), backward_fn)


def backward(loss: Tensor, tape: Tape) -> dict[int, Tensor]:
    """Propagate d(loss)/d(node) through the tape, newest node first.

    Returns {node_id: gradient} for every node the loss reaches, and fills
    each reached tensor's .grad with the same array.
    """
    if loss.data.size != 1:
        raise UsageError(f"backward needs a scalar loss, got shape {loss.shape}")
    if loss.tape is not tape or loss.node_id is None:
        raise UsageError("loss is not recorded on the given tape")
    grads: list[np.ndarray | None] = [None] * len(tape.nodes)
    grads[loss.node_id] = np.ones_like(loss.data)
    for node_id in range(loss.node_id, -1, -1):
        g = grads[node_id]
        if g is None:
            continue
        node = tape.nodes[node_id]
        if node.backward_fn is not None:
            node.backward_fn(g, grads)
    result = {}
    for node_id, g in enumerate(grads):
        if g is not None:
            tape.nodes[node_id].tensor.grad = g
            result[node_id] = Tensor(g)
    return result
