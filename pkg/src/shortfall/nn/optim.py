"""Parameter store, seeded initialization, and the Adam update."""

import math

import numpy as np

from ..errors import ShapeError, TrainingAbortError
from .tensor import Tensor

__all__ = ["ParameterStore", "adam_step", "global_norm"]


class ParameterStore:
    """Named parameters with their gradients and Adam moment buffers.

    Parameters are registered in a fixed order; initialization draws come
    from a single generator in that same order, so a (config, seed) pair
    always produces the same values.
    """

    def __init__(self, seed=0):
        self.rng = np.random.default_rng(seed)
        self.params = {}           # name -> Tensor (leaf)
        self._m = {}
        self._v = {}
        self.step_count = 0

    def add(self, name, value):
        if name in self.params:
            raise ValueError(f"duplicate parameter name {name!r}")
        tensor = Tensor(np.asarray(value, dtype=np.float64))
        self.params[name] = tensor
        self._m[name] = np.zeros_like(tensor.data)
        self._v[name] = np.zeros_like(tensor.data)
        return tensor

    def add_matrix(self, name, shape):
        """Uniform +-sqrt(1/fan_in); fan_in is the last dimension."""
        fan_in = shape[-1] if len(shape) > 1 else shape[0]
        bound = math.sqrt(1.0 / fan_in)
        return self.add(name, self.rng.uniform(-bound, bound, size=shape))

    def add_bias(self, name, shape):
        return self.add(name, np.zeros(shape))

    def add_embedding(self, name, shape):
        return self.add(name, self.rng.uniform(-0.05, 0.05, size=shape))

    def __getitem__(self, name):
        return self.params[name]

    def __contains__(self, name):
        return name in self.params

    def names(self):
        return list(self.params)

    def zero_grad(self):
        for p in self.params.values():
            p.grad = None

    def gradients(self):
        """Gradient array per parameter; missing gradients count as zero."""
        out = {}
        for name, p in self.params.items():
            out[name] = np.zeros_like(p.data) if p.grad is None else p.grad
        return out

    def state_dict(self):
        return {name: p.data.copy() for name, p in self.params.items()}

    def load_state_dict(self, state):
        for name, value in state.items():
            arr = np.asarray(value, dtype=np.float64)
            if name not in self.params:
                raise ShapeError(f"unknown parameter {name!r}")
            if self.params[name].data.shape != arr.shape:
                raise ShapeError(
                    f"parameter {name!r}: checkpoint shape {arr.shape} "
                    f"vs model shape {self.params[name].data.shape}")
            self.params[name].data = arr.copy()


def global_norm(source):
    """Euclidean norm of all gradients; accepts a store or a name->array map."""
    grads = source.gradients() if isinstance(source, ParameterStore) else source
    total = 0.0
    for g in grads.values():
        total += float(np.sum(g * g))
    return math.sqrt(total)


def adam_step(store, lr=1e-3, beta1=0.9, beta2=0.999, eps=1e-8, global_clip=5.0):
    """One Adam update with bias correction after global-norm clipping."""
    grads = store.gradients()
    for name, g in grads.items():
        if not np.isfinite(g).all():
            raise TrainingAbortError(f"non-finite gradient for parameter {name!r}")
    norm = global_norm(grads)
    if global_clip is not None and norm > global_clip and norm > 0.0:
        scale = global_clip / norm
        grads = {name: g * scale for name, g in grads.items()}
    store.step_count += 1
    t = store.step_count
    bc1 = 1.0 - beta1 ** t
    bc2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = store._m[name]
        v = store._v[name]
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        mhat = m / bc1
        vhat = v / bc2
        store.params[name].data = store.params[name].data - lr * mhat / (np.sqrt(vhat) + eps)
