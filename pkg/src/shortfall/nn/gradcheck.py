"""Finite-difference verification of analytic gradients."""

from dataclasses import dataclass, field

import numpy as np

from ..errors import ShapeError
from .tensor import backward

__all__ = ["grad_check", "GradCheckReport"]


@dataclass
class GradCheckReport:
    step: float
    tolerance: float
    max_rel_error: dict = field(default_factory=dict)   # parameter name -> error
    passed: bool = True

    def worst(self):
        if not self.max_rel_error:
            return 0.0
        return max(self.max_rel_error.values())


def _rel_error(a, n, scale):
    # Near-zero coordinates are measured against the parameter's gradient
    # scale; otherwise central-difference rounding noise (~1e-10 on an O(1)
    # loss) would dominate a vanishing denominator.
    denom = max(abs(a), abs(n), scale)
    if denom < 1e-12:
        return 0.0
    return abs(a - n) / denom


def grad_check(fn, store, step=1e-5, tolerance=1e-6, max_entries=None, rng=None):
    """Compare analytic gradients of fn(store) -> scalar Tensor with central
    differences.

    fn must be deterministic and must read parameter values from the store
    on every call. max_entries subsamples coordinates of large parameters
    (seeded via rng) to bound runtime; None checks every coordinate.
    """
    store.zero_grad()
    loss = fn(store)
    if loss.data.shape != ():
        raise ShapeError(f"grad_check requires a scalar function, got {loss.data.shape}")
    backward(loss)
    analytic = store.gradients()

    report = GradCheckReport(step=step, tolerance=tolerance)
    rng = rng or np.random.default_rng(0)
    for name, param in store.params.items():
        flat = param.data.reshape(-1)
        n = flat.size
        if max_entries is not None and n > max_entries:
            idx = rng.choice(n, size=max_entries, replace=False)
        else:
            idx = range(n)
        worst = 0.0
        a_flat = analytic[name].reshape(-1)
        scale = float(np.abs(a_flat).max()) if a_flat.size else 0.0
        for i in idx:
            orig = flat[i]
            flat[i] = orig + step
            up = float(fn(store).data)
            flat[i] = orig - step
            down = float(fn(store).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * step)
            worst = max(worst, _rel_error(float(a_flat[i]), numeric, scale))
        report.max_rel_error[name] = worst
        if worst > tolerance:
            report.passed = False
    return report
