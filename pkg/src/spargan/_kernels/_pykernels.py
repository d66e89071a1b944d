"""Pure numpy implementations of the fused kernels.

Every function here has a compiled twin in ``_ckernels.pyx`` with the same
signature.  Arrays are float64; in-place updaters mutate their first
arguments.
"""
import numpy as np

BACKEND = "python"


def softmax_rows(x):
    shifted = x - x.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


def softmax_xent(logits, labels):
    """Mean cross-entropy and its gradient w.r.t. the logits."""
    b = logits.shape[0]
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    s = e.sum(axis=1, keepdims=True)
    rows = np.arange(b)
    loss = float(np.mean(np.log(s[:, 0]) - shifted[rows, labels]))
    grad = e / s
    grad[rows, labels] -= 1.0
    grad /= b
    return loss, grad


def sigmoid_bce(logits, targets, eps):
    """Mean clamped BCE of sigmoid(logits); gradient is sigmoid - target."""
    with np.errstate(over="ignore"):
        p = 1.0 / (1.0 + np.exp(-logits))
    pc = np.clip(p, eps, 1.0 - eps)
    loss = float(np.mean(-(targets * np.log(pc) + (1.0 - targets) * np.log(1.0 - pc))))
    grad = (p - targets) / logits.shape[0]
    return loss, grad


def leaky_relu_fwd(x, slope):
    return np.where(x > 0, x, slope * x)


def leaky_relu_bwd(x, g, slope):
    return np.where(x > 0, g, slope * g)


def tanh_bwd(y, g):
    return g * (1.0 - y * y)


def adam_update(p, g, m, v, lr, beta1, beta2, eps, t):
    m *= beta1
    m += (1.0 - beta1) * g
    v *= beta2
    v += (1.0 - beta2) * (g * g)
    mhat = m / (1.0 - beta1 ** t)
    vhat = v / (1.0 - beta2 ** t)
    p -= lr * mhat / (np.sqrt(vhat) + eps)


def sgd_momentum_update(p, g, v, lr, momentum):
    v *= momentum
    v += g
    p -= lr * v
