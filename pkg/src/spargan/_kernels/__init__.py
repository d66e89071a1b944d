"""Hot kernels, compiled when the extension is built.

The Cython module is preferred.  Set ``SPARGAN_PURE_PYTHON=1`` to force the
numpy fallback (used by the benchmark and the cross-backend tests).
"""
import os

from . import _pykernels as py

try:
    if os.environ.get("SPARGAN_PURE_PYTHON") == "1":
        raise ImportError("pure python requested")
    from . import _ckernels as compiled
except ImportError:
    compiled = None

active = compiled if compiled is not None else py
BACKEND = active.BACKEND

softmax_rows = active.softmax_rows
softmax_xent = active.softmax_xent
sigmoid_bce = active.sigmoid_bce
leaky_relu_fwd = active.leaky_relu_fwd
leaky_relu_bwd = active.leaky_relu_bwd
tanh_bwd = active.tanh_bwd
adam_update = active.adam_update
sgd_momentum_update = active.sgd_momentum_update

__all__ = [
    "BACKEND", "compiled", "py", "softmax_rows", "softmax_xent", "sigmoid_bce",
    "leaky_relu_fwd", "leaky_relu_bwd", "tanh_bwd", "adam_update",
    "sgd_momentum_update",
]
