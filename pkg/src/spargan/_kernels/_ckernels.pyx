# cython: language_level=3, boundscheck=False, wraparound=False, cdivision=True
"""Compiled fused kernels; signatures mirror ``_pykernels``."""
import numpy as np
from libc.math cimport exp, log, sqrt, pow

BACKEND = "cython"


def softmax_rows(const double[:, ::1] x):
    cdef Py_ssize_t b = x.shape[0], c = x.shape[1], i, j
    cdef double mx, s
    out = np.empty((b, c))
    cdef double[:, ::1] o = out
    for i in range(b):
        mx = x[i, 0]
        for j in range(1, c):
            if x[i, j] > mx:
                mx = x[i, j]
        s = 0.0
        for j in range(c):
            o[i, j] = exp(x[i, j] - mx)
            s += o[i, j]
        for j in range(c):
            o[i, j] /= s
    return out


def softmax_xent(const double[:, ::1] logits, const long[::1] labels):
    cdef Py_ssize_t b = logits.shape[0], c = logits.shape[1], i, j
    cdef double mx, s, total = 0.0
    grad = np.empty((b, c))
    cdef double[:, ::1] gr = grad
    for i in range(b):
        mx = logits[i, 0]
        for j in range(1, c):
            if logits[i, j] > mx:
                mx = logits[i, j]
        s = 0.0
        for j in range(c):
            gr[i, j] = exp(logits[i, j] - mx)
            s += gr[i, j]
        total += log(s) - (logits[i, labels[i]] - mx)
        for j in range(c):
            gr[i, j] = gr[i, j] / s / b
        gr[i, labels[i]] -= 1.0 / b
    return total / b, grad


def sigmoid_bce(const double[::1] logits, const double[::1] targets, double eps):
    cdef Py_ssize_t b = logits.shape[0], i
    cdef double p, pc, t, total = 0.0
    grad = np.empty(b)
    cdef double[::1] gr = grad
    for i in range(b):
        p = 1.0 / (1.0 + exp(-logits[i]))
        pc = p
        if pc < eps:
            pc = eps
        elif pc > 1.0 - eps:
            pc = 1.0 - eps
        t = targets[i]
        total += -(t * log(pc) + (1.0 - t) * log(1.0 - pc))
        gr[i] = (p - t) / b
    return total / b, grad


def leaky_relu_fwd(const double[:, ::1] x, double slope):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            o[i, j] = x[i, j] if x[i, j] > 0 else slope * x[i, j]
    return out


def leaky_relu_bwd(const double[:, ::1] x, const double[:, ::1] g, double slope):
    cdef Py_ssize_t n = x.shape[0], m = x.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            o[i, j] = g[i, j] if x[i, j] > 0 else slope * g[i, j]
    return out


def tanh_bwd(const double[:, ::1] y, const double[:, ::1] g):
    cdef Py_ssize_t n = y.shape[0], m = y.shape[1], i, j
    out = np.empty((n, m))
    cdef double[:, ::1] o = out
    for i in range(n):
        for j in range(m):
            o[i, j] = g[i, j] * (1.0 - y[i, j] * y[i, j])
    return out


def adam_update(double[::1] p, const double[::1] g, double[::1] m, double[::1] v,
                double lr, double beta1, double beta2, double eps, long t):
    cdef Py_ssize_t n = p.shape[0], i
    cdef double c1 = 1.0 - pow(beta1, t), c2 = 1.0 - pow(beta2, t)
    for i in range(n):
        m[i] = beta1 * m[i] + (1.0 - beta1) * g[i]
        v[i] = beta2 * v[i] + (1.0 - beta2) * (g[i] * g[i])
        p[i] -= lr * (m[i] / c1) / (sqrt(v[i] / c2) + eps)


def sgd_momentum_update(double[::1] p, const double[::1] g, double[::1] v,
                        double lr, double momentum):
    cdef Py_ssize_t n = p.shape[0], i
    for i in range(n):
        v[i] = momentum * v[i] + g[i]
        p[i] -= lr * v[i]
