"""Parameter containers and the two optimizers used in training."""
import numpy as np

from .. import _kernels as K


class ParamSet:
    """Named float64 parameters plus per-parameter optimizer slots.

    ``slots[name]`` maps slot names (``"momentum"`` for SGD, ``"m"``/``"v"``
    for Adam) to arrays shaped like the parameter.  ``step`` counts optimizer
    steps taken on this set.
    """

    def __init__(self, params=None):
        self.params = {k: np.ascontiguousarray(v, dtype=np.float64) for k, v in (params or {}).items()}
        self.slots = {k: {} for k in self.params}
        self.step = 0

    def __getitem__(self, key):
        return self.params[key]

    def __contains__(self, key):
        return key in self.params

    def __iter__(self):
        return iter(self.params)

    def names(self):
        return list(self.params)

    def copy(self):
        out = ParamSet()
        out.params = {k: v.copy() for k, v in self.params.items()}
        out.slots = {k: {s: a.copy() for s, a in sl.items()} for k, sl in self.slots.items()}
        out.step = self.step
        return out

    def reset_slots(self):
        self.slots = {k: {} for k in self.params}
        self.step = 0

    def _slot(self, name, slot):
        buf = self.slots[name].get(slot)
        if buf is None:
            buf = np.zeros_like(self.params[name])
            self.slots[name][slot] = buf
        return buf


def _check(params, grads):
    for k, g in grads.items():
        if k not in params.params:
            raise KeyError(f"gradient for unknown parameter {k!r}")
        if g.shape != params.params[k].shape:
            raise ValueError(f"{k}: gradient shape {g.shape} != parameter shape {params.params[k].shape}")


def sgd_momentum_step(params, grads, rate, momentum):
    """Heavy-ball SGD: ``v = momentum * v + g``; ``theta -= rate * v``.

    Parameters without an entry in ``grads`` are left alone.  Mutates and
    returns ``params``.
    """
    if rate <= 0 or not 0 <= momentum < 1:
        raise ValueError(f"need rate > 0 and 0 <= momentum < 1, got {rate}, {momentum}")
    _check(params, grads)
    for k in params.params:
        if k not in grads:
            continue
        p = params.params[k]
        v = params._slot(k, "momentum")
        K.sgd_momentum_update(p.reshape(-1), np.ascontiguousarray(grads[k], dtype=np.float64).reshape(-1),
                              v.reshape(-1), float(rate), float(momentum))
    params.step += 1
    return params


def adam_step(params, grads, rate, beta1=0.9, beta2=0.999, eps=1e-8):
    """Bias-corrected Adam.  Mutates and returns ``params``."""
    if rate <= 0:
        raise ValueError(f"rate must be positive, got {rate}")
    _check(params, grads)
    params.step += 1
    t = params.step
    for k in params.params:
        if k not in grads:
            continue
        p = params.params[k]
        m = params._slot(k, "m")
        v = params._slot(k, "v")
        K.adam_update(p.reshape(-1), np.ascontiguousarray(grads[k], dtype=np.float64).reshape(-1),
                      m.reshape(-1), v.reshape(-1), float(rate), float(beta1), float(beta2), float(eps), t)
    return params
