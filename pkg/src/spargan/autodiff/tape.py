"""Reverse-mode differentiation over dense float64 arrays.

A :class:`Tape` records primitive operations in execution order.  Each node
keeps its output value and whatever the backward rule needs, so
:func:`backward` is a single reverse sweep and :meth:`Tape.replay` can
re-evaluate the whole record on new leaf values.

Usage::

    tape = Tape()
    w = tape.param("w", np.ones((3, 2)))
    x = tape.constant(np.eye(3))
    loss = mean_batch(sum_rows(mul(matmul(x, w), matmul(x, w))))
    grads = backward(tape, loss)      # {"w": ndarray of shape (3, 2)}
"""
from dataclasses import dataclass, field

import numpy as np

from .. import _kernels as K

BCE_EPS = 1e-7


class ShapeError(ValueError):
    """Raised when a primitive receives incompatible operand shapes."""

    def __init__(self, node, shape_a, shape_b, detail=""):
        self.node = node
        self.shapes = (tuple(shape_a), tuple(shape_b))
        msg = f"{node}: incompatible shapes {self.shapes[0]} and {self.shapes[1]}"
        if detail:
            msg += f" ({detail})"
        super().__init__(msg)


@dataclass
class Node:
    id: int
    op: str
    inputs: tuple
    value: np.ndarray
    attrs: dict = field(default_factory=dict)
    cache: object = None
    name: str | None = None
    needs_grad: bool = False


class Tensor:
    """Handle to a node on a tape."""

    __slots__ = ("tape", "id")

    def __init__(self, tape, node_id):
        self.tape = tape
        self.id = node_id

    @property
    def node(self):
        return self.tape.nodes[self.id]

    @property
    def value(self):
        return self.tape.nodes[self.id].value

    @property
    def shape(self):
        return self.value.shape

    def __repr__(self):
        n = self.node
        return f"Tensor(id={n.id}, op={n.op}, shape={n.value.shape})"


class Tape:
    """Ordered record of primitive nodes; ids are positions in ``nodes``."""

    def __init__(self):
        self.nodes = []
        self.params = {}

    def _push(self, op, inputs, value, attrs=None, cache=None, name=None, needs_grad=False):
        node = Node(len(self.nodes), op, tuple(inputs), value, attrs or {}, cache, name, needs_grad)
        self.nodes.append(node)
        return Tensor(self, node.id)

    def param(self, name, value):
        """Differentiable leaf.  ``value`` is used as-is (not copied)."""
        if name in self.params:
            raise KeyError(f"duplicate parameter {name!r}")
        t = self._push("param", (), np.asarray(value, dtype=np.float64), name=name, needs_grad=True)
        self.params[name] = t.id
        return t

    def constant(self, value, name=None):
        return self._push("const", (), np.asarray(value, dtype=np.float64), name=name)

    def replay(self, inputs):
        """Re-run every node with leaf values overridden by name.

        Returns ``{name: value}`` for every named node after the sweep.
        """
        for node in self.nodes:
            if node.op in ("param", "const"):
                if node.name is not None and node.name in inputs:
                    node.value = np.asarray(inputs[node.name], dtype=np.float64)
                continue
            args = [self.nodes[i].value for i in node.inputs]
            node.value, node.cache = _FORWARD[node.op](node, *args, **node.attrs)
        return {n.name: n.value for n in self.nodes if n.name is not None}


def _apply(op, inputs, **attrs):
    tape = inputs[0].tape
    for t in inputs[1:]:
        if t.tape is not tape:
            raise ValueError(f"{op}: operands recorded on different tapes")
    args = [t.value for t in inputs]
    probe = Node(len(tape.nodes), op, (), None)
    value, cache = _FORWARD[op](probe, *args, **attrs)
    needs = any(tape.nodes[t.id].needs_grad for t in inputs)
    return tape._push(op, [t.id for t in inputs], value, attrs, cache, needs_grad=needs)


def name(t, label):
    """Attach a name to a node so replay reports it."""
    t.node.name = label
    return t


# ---------------------------------------------------------------- forward rules

def _fw_matmul(node, a, b):
    if a.ndim != 2 or b.ndim != 2 or a.shape[1] != b.shape[0]:
        raise ShapeError(f"node {node.id} (matmul)", a.shape, b.shape)
    return a @ b, None


def _fw_add(node, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"node {node.id} (add)", a.shape, b.shape)
    return a + b, None


def _fw_add_bias(node, a, b):
    if b.ndim != 1 or a.shape[-1] != b.shape[0]:
        raise ShapeError(f"node {node.id} (add_bias)", a.shape, b.shape)
    return a + b, None


def _fw_concat(node, *xs, axis):
    ref = xs[0]
    for x in xs[1:]:
        other = [d for i, d in enumerate(x.shape) if i != axis % x.ndim]
        mine = [d for i, d in enumerate(ref.shape) if i != axis % ref.ndim]
        if x.ndim != ref.ndim or other != mine:
            raise ShapeError(f"node {node.id} (concat)", ref.shape, x.shape)
    return np.concatenate(xs, axis=axis), [x.shape[axis] for x in xs]


def _fw_take_rows(node, a, *, start, stop):
    if not 0 <= start < stop <= a.shape[0]:
        raise ShapeError(f"node {node.id} (take_rows)", a.shape, (start, stop))
    return a[start:stop], None


def _fw_tanh(node, a):
    return np.tanh(a), None


def _fw_leaky_relu(node, a, *, slope):
    a2 = np.ascontiguousarray(a.reshape(a.shape[0], -1) if a.ndim != 2 else a)
    return K.leaky_relu_fwd(a2, slope).reshape(a.shape), None


def _fw_sigmoid(node, a):
    with np.errstate(over="ignore"):
        return 1.0 / (1.0 + np.exp(-a)), None


def _fw_softmax(node, a):
    if a.ndim != 2:
        raise ShapeError(f"node {node.id} (softmax)", a.shape, ("batch", "C"))
    return K.softmax_rows(np.ascontiguousarray(a)), None


def _fw_log(node, a):
    return np.log(a), None


def _fw_mul(node, a, b):
    if a.shape != b.shape:
        raise ShapeError(f"node {node.id} (mul)", a.shape, b.shape)
    return a * b, None


def _fw_mean_batch(node, a):
    return a.mean(axis=0), None


def _fw_sum_rows(node, a):
    return a.reshape(a.shape[0], -1).sum(axis=1), None


def _fw_sum_all(node, a):
    return np.asarray(a.sum()), None


def _fw_softmax_xent(node, logits, *, labels):
    if logits.ndim != 2 or logits.shape[0] != labels.shape[0]:
        raise ShapeError(f"node {node.id} (softmax_cross_entropy)", logits.shape, labels.shape)
    loss, grad = K.softmax_xent(np.ascontiguousarray(logits), labels)
    return np.asarray(loss), grad


def _fw_bce(node, p, *, targets):
    if p.size != targets.size:
        raise ShapeError(f"node {node.id} (binary_cross_entropy)", p.shape, targets.shape)
    pf = p.reshape(-1)
    pc = np.clip(pf, BCE_EPS, 1.0 - BCE_EPS)
    loss = np.mean(-(targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc)))
    inside = (pf > BCE_EPS) & (pf < 1.0 - BCE_EPS)
    grad = np.where(inside, -targets / pc + (1.0 - targets) / (1.0 - pc), 0.0) / pf.size
    return np.asarray(loss), grad.reshape(p.shape)


def _fw_sigmoid_bce(node, logits, *, targets):
    if logits.size != targets.size:
        raise ShapeError(f"node {node.id} (sigmoid_bce)", logits.shape, targets.shape)
    loss, grad = K.sigmoid_bce(np.ascontiguousarray(logits.reshape(-1)), targets, BCE_EPS)
    return np.asarray(loss), grad.reshape(logits.shape)


_FORWARD = {
    "matmul": _fw_matmul,
    "add": _fw_add,
    "add_bias": _fw_add_bias,
    "concat": _fw_concat,
    "take_rows": _fw_take_rows,
    "tanh": _fw_tanh,
    "leaky_relu": _fw_leaky_relu,
    "sigmoid": _fw_sigmoid,
    "softmax": _fw_softmax,
    "log": _fw_log,
    "mul": _fw_mul,
    "mean_batch": _fw_mean_batch,
    "sum_rows": _fw_sum_rows,
    "sum_all": _fw_sum_all,
    "softmax_cross_entropy": _fw_softmax_xent,
    "binary_cross_entropy": _fw_bce,
    "sigmoid_bce": _fw_sigmoid_bce,
}


# ---------------------------------------------------------------- public ops

def matmul(a, b):
    return _apply("matmul", [a, b])


def add(a, b):
    return _apply("add", [a, b])


def add_bias(a, b):
    """``a + b`` with ``b`` a vector broadcast over the rows of ``a``."""
    return _apply("add_bias", [a, b])


def concat(xs, axis=-1):
    return _apply("concat", list(xs), axis=axis)


def take_rows(a, start, stop):
    return _apply("take_rows", [a], start=start, stop=stop)


def tanh(a):
    return _apply("tanh", [a])


def leaky_relu(a, slope=0.2):
    return _apply("leaky_relu", [a], slope=float(slope))


def sigmoid(a):
    return _apply("sigmoid", [a])


def softmax(a):
    return _apply("softmax", [a])


def log(a):
    return _apply("log", [a])


def mul(a, b):
    return _apply("mul", [a, b])


def mean_batch(a):
    return _apply("mean_batch", [a])


def sum_rows(a):
    return _apply("sum_rows", [a])


def sum_all(a):
    return _apply("sum_all", [a])


def softmax_cross_entropy(logits, labels):
    """Mean over the batch of ``-log softmax(logits)[label]``."""
    labels = np.ascontiguousarray(labels, dtype=np.int64)
    c = logits.shape[1] if len(logits.shape) == 2 else None
    if labels.ndim != 1 or labels.size == 0:
        raise ValueError("labels must be a non-empty 1-d integer array")
    if c is not None and (labels.min() < 0 or labels.max() >= c):
        raise ValueError(f"label out of range [0, {c}): {labels.min()}..{labels.max()}")
    return _apply("softmax_cross_entropy", [logits], labels=labels)


def binary_cross_entropy(prob, targets):
    """Mean BCE of probabilities clamped to ``[1e-7, 1 - 1e-7]``.

    The derivative is exact: zero wherever the clamp is active.
    """
    targets = np.ascontiguousarray(np.broadcast_to(targets, (prob.value.size,)), dtype=np.float64)
    return _apply("binary_cross_entropy", [prob], targets=targets)


def sigmoid_bce(logits, targets):
    """``binary_cross_entropy(sigmoid(logits), targets)`` fused.

    Same value as the composed form.  The gradient is ``sigmoid - target``
    everywhere, so a saturated discriminator still passes signal back.
    """
    targets = np.ascontiguousarray(np.broadcast_to(targets, (logits.value.size,)), dtype=np.float64)
    return _apply("sigmoid_bce", [logits], targets=targets)


# ---------------------------------------------------------------- backward rules

def _bw_matmul(node, g, a, b):
    # node.cache holds which operands need a gradient (set in backward)
    wa, wb = node.cache
    return (g @ b.T if wa else None), (a.T @ g if wb else None)


def _bw_add(node, g, a, b):
    return g, g


def _bw_add_bias(node, g, a, b):
    return g, g.reshape(-1, b.shape[0]).sum(axis=0)


def _bw_concat(node, g, *xs):
    axis = node.attrs["axis"]
    splits = np.cumsum(node.cache)[:-1]
    return tuple(np.split(g, splits, axis=axis))


def _bw_take_rows(node, g, a):
    out = np.zeros_like(a)
    out[node.attrs["start"]:node.attrs["stop"]] = g
    return (out,)


def _bw_tanh(node, g, a):
    y = node.value
    if y.ndim == 2:
        return (K.tanh_bwd(np.ascontiguousarray(y), np.ascontiguousarray(g)),)
    return (g * (1.0 - y * y),)


def _bw_leaky_relu(node, g, a):
    slope = node.attrs["slope"]
    if a.ndim == 2:
        return (K.leaky_relu_bwd(np.ascontiguousarray(a), np.ascontiguousarray(g), slope),)
    return (np.where(a > 0, g, slope * g),)


def _bw_sigmoid(node, g, a):
    y = node.value
    return (g * y * (1.0 - y),)


def _bw_softmax(node, g, a):
    y = node.value
    return (y * (g - (g * y).sum(axis=1, keepdims=True)),)


def _bw_log(node, g, a):
    return (g / a,)


def _bw_mul(node, g, a, b):
    return g * b, g * a


def _bw_mean_batch(node, g, a):
    return (np.broadcast_to(g / a.shape[0], a.shape).copy(),)


def _bw_sum_rows(node, g, a):
    return (np.broadcast_to(g.reshape((-1,) + (1,) * (a.ndim - 1)), a.shape).copy(),)


def _bw_sum_all(node, g, a):
    return (np.full(a.shape, float(g)),)


def _bw_cached_grad(node, g, a):
    return (float(g) * node.cache,)


_BACKWARD = {
    "matmul": _bw_matmul,
    "add": _bw_add,
    "add_bias": _bw_add_bias,
    "concat": _bw_concat,
    "take_rows": _bw_take_rows,
    "tanh": _bw_tanh,
    "leaky_relu": _bw_leaky_relu,
    "sigmoid": _bw_sigmoid,
    "softmax": _bw_softmax,
    "log": _bw_log,
    "mul": _bw_mul,
    "mean_batch": _bw_mean_batch,
    "sum_rows": _bw_sum_rows,
    "sum_all": _bw_sum_all,
    "softmax_cross_entropy": _bw_cached_grad,
    "binary_cross_entropy": _bw_cached_grad,
    "sigmoid_bce": _bw_cached_grad,
}


def backward(tape, loss):
    """Gradients of a scalar node w.r.t. every parameter leaf on ``tape``.

    Parameters that do not influence ``loss`` get an exact zero array.
    """
    if loss.tape is not tape:
        raise ValueError("loss was not recorded on this tape")
    if loss.value.size != 1:
        raise ValueError(f"backward needs a scalar loss, node {loss.id} has shape {loss.value.shape}")
    nodes = tape.nodes
    grads = [None] * (loss.id + 1)
    grads[loss.id] = np.ones_like(loss.value)
    for i in range(loss.id, -1, -1):
        g = grads[i]
        if g is None:
            continue
        node = nodes[i]
        if not node.inputs:
            continue
        if not node.needs_grad:
            continue
        parents = [nodes[j].value for j in node.inputs]
        if node.op == "matmul":
            node.cache = tuple(nodes[j].needs_grad for j in node.inputs)
        for j, gj in zip(node.inputs, _BACKWARD[node.op](node, g, *parents)):
            if gj is None or not nodes[j].needs_grad:
                continue
            if grads[j] is None:
                grads[j] = gj
            else:
                grads[j] = grads[j] + gj
    out = {}
    for pname, pid in tape.params.items():
        g = grads[pid] if pid < len(grads) else None
        out[pname] = np.zeros_like(nodes[pid].value) if g is None else g
    return out
