"""Discrete-time survival algebra on the integer day grid 1..H.

Hazard, survival and mass functions are plain float64 arrays indexed
0..H-1 for days 1..H. Before any logarithm, hazards are clamped to
[HAZARD_FLOOR, 1 - HAZARD_FLOOR] so likelihoods stay finite even for
saturated model outputs.
"""

from dataclasses import dataclass

import numpy as np

from .errors import NonConvergenceError, ValidationError

HAZARD_FLOOR = 1e-7
THETA_BOUND = 15.0

__all__ = [
    "HAZARD_FLOOR", "THETA_BOUND", "ObservedOutcome", "LinearHazardFit",
    "clamp_hazard", "survival_from_hazard", "pmf_from_hazard",
    "negative_log_likelihood", "negative_log_likelihood_grad",
    "fit_linear_logistic_hazard", "median_survival_time",
    "restricted_mean_survival", "kaplan_meier",
]


@dataclass(frozen=True)
class ObservedOutcome:
    """Observed time (day in 1..H) and event indicator (1 = shortfall seen)."""
    t: int
    y: int

    def __post_init__(self):
        if self.t < 1:
            raise ValidationError(f"observed time must be >= 1, got {self.t}")
        if self.y not in (0, 1):
            raise ValidationError(f"event indicator must be 0 or 1, got {self.y}")


def _as_hazard(h):
    arr = np.asarray(h, dtype=np.float64)
    if arr.ndim != 1 or arr.size == 0:
        raise ValidationError(f"hazard curve must be a non-empty vector, got shape {arr.shape}")
    if arr.min() < 0.0 or arr.max() > 1.0:
        raise ValidationError("hazard values must lie in [0, 1]")
    return arr


def clamp_hazard(h):
    return np.clip(np.asarray(h, dtype=np.float64), HAZARD_FLOOR, 1.0 - HAZARD_FLOOR)


def survival_from_hazard(h):
    """S(tau_j) = prod_{i<=j} (1 - h(tau_i))."""
    return np.cumprod(1.0 - _as_hazard(h))


def pmf_from_hazard(h):
    """f(tau_j) = h(tau_j) * S(tau_{j-1}), with S(tau_0) = 1."""
    arr = _as_hazard(h)
    survival = np.cumprod(1.0 - arr)
    prev = np.concatenate(([1.0], survival[:-1]))
    return arr * prev


def _outcome_arrays(outcomes):
    t = np.array([o.t for o in outcomes], dtype=np.intp)
    y = np.array([o.y for o in outcomes], dtype=np.float64)
    return t, y


def negative_log_likelihood(hazards, outcomes):
    """Right-censored negative log-likelihood.

    For each sample: -[ y log h(t) + (1-y) log(1-h(t)) + sum_{j<t} log(1-h(j)) ].
    hazards is one curve per sample (sequence of vectors or an n x H array).
    """
    curves = [clamp_hazard(_as_hazard(h)) for h in hazards]
    if len(curves) != len(outcomes):
        raise ValidationError(f"{len(curves)} hazard curves vs {len(outcomes)} outcomes")
    total = 0.0
    for h, o in zip(curves, outcomes):
        if o.t > h.size:
            raise ValidationError(f"observed time {o.t} beyond horizon {h.size}")
        k = o.t - 1
        term = o.y * np.log(h[k]) + (1.0 - o.y) * np.log(1.0 - h[k])
        term += np.log(1.0 - h[:k]).sum()
        total -= term
    return float(total)


def negative_log_likelihood_grad(hazards, outcomes):
    """d NLL / d h for each curve (zero where the clamp is active)."""
    grads = []
    for h, o in zip(hazards, outcomes):
        raw = _as_hazard(h)
        clamped = clamp_hazard(raw)
        g = np.zeros_like(clamped)
        k = o.t - 1
        g[:k] = 1.0 / (1.0 - clamped[:k])
        if o.y:
            g[k] = -1.0 / clamped[k]
        else:
            g[k] = 1.0 / (1.0 - clamped[k])
        active = (raw > HAZARD_FLOOR) & (raw < 1.0 - HAZARD_FLOOR)
        grads.append(g * active)
    return grads


@dataclass
class LinearHazardFit:
    theta: np.ndarray          # (H, p+1), intercept first
    final_nll: float
    iterations: int

    def hazard(self, x):
        """Per-step hazard curve for covariates x (p,) or a batch (n, p)."""
        x = np.asarray(x, dtype=np.float64)
        single = x.ndim == 1
        if single:
            x = x[None, :]
        design = np.hstack([np.ones((x.shape[0], 1)), x])
        logits = design @ self.theta.T          # (n, H)
        h = 1.0 / (1.0 + np.exp(-logits))
        return h[0] if single else h


def fit_linear_logistic_hazard(X, outcomes, horizon, lr=1.0, max_iter=500,
                               tol=1e-10, theta_bound=THETA_BOUND):
    """Maximum-likelihood fit of h(tau_k | x) = sigmoid(theta_k . [1; x]).

    Gradient ascent on the log-likelihood; the per-step gradient is
    normalized by the at-risk count so a unit learning rate behaves well
    across steps. Any coordinate of theta leaving [-theta_bound, theta_bound]
    raises NonConvergenceError naming the offending time step.
    """
    X = np.asarray(X, dtype=np.float64)
    if X.ndim != 2 or X.shape[0] == 0:
        raise ValidationError(f"covariates must be a non-empty n x p matrix, got {X.shape}")
    if not np.isfinite(X).all():
        raise ValidationError("covariates must be finite")
    t, y = _outcome_arrays(outcomes)
    if t.size != X.shape[0]:
        raise ValidationError(f"{X.shape[0]} covariate rows vs {t.size} outcomes")
    if t.max() > horizon:
        raise ValidationError(f"observed time {int(t.max())} beyond horizon {horizon}")

    n, p = X.shape
    design = np.hstack([np.ones((n, 1)), X])                  # (n, p+1)
    # Discrete-time expansion: at step k, samples with t > k are at risk with
    # label 0; samples with t == k carry their event indicator.
    steps = np.arange(1, horizon + 1)
    at_risk = t[None, :] >= steps[:, None]                    # (H, n)
    label = np.where(t[None, :] == steps[:, None], y[None, :], 0.0) * at_risk

    theta = np.zeros((horizon, p + 1))
    nll = np.inf
    it = 0
    for it in range(1, max_iter + 1):
        logits = theta @ design.T                             # (H, n)
        prob = 1.0 / (1.0 + np.exp(-logits))
        resid = (label - prob) * at_risk                      # (H, n)
        counts = at_risk.sum(axis=1)
        grad = (resid @ design) / np.maximum(counts, 1.0)[:, None]
        theta = theta + lr * grad
        if np.abs(theta).max() > theta_bound:
            step = int(np.unravel_index(np.abs(theta).argmax(), theta.shape)[0]) + 1
            raise NonConvergenceError(
                f"theta exceeded bound {theta_bound} at time step {step}")
        prob_c = np.clip(prob, HAZARD_FLOOR, 1.0 - HAZARD_FLOOR)
        new_nll = -float(np.sum(at_risk * (label * np.log(prob_c)
                                           + (1.0 - label) * np.log(1.0 - prob_c))))
        if abs(nll - new_nll) < tol * max(1.0, abs(new_nll)):
            nll = new_nll
            break
        nll = new_nll
    return LinearHazardFit(theta=theta, final_nll=nll, iterations=it)


def median_survival_time(survival):
    """Smallest day k with S(tau_k) <= 0.5, or H + 1 if the curve never crosses."""
    s = np.asarray(survival, dtype=np.float64)
    below = np.nonzero(s <= 0.5)[0]
    if below.size == 0:
        return s.size + 1
    return int(below[0]) + 1


def restricted_mean_survival(survival):
    """1 + sum_{k=1}^{H-1} S(tau_k): expected days to event, censored at H."""
    s = np.asarray(survival, dtype=np.float64)
    return float(1.0 + s[:-1].sum())


def kaplan_meier(outcomes, horizon):
    """Product-limit estimate on the grid 1..horizon."""
    if not outcomes:
        raise ValidationError("kaplan_meier requires at least one outcome")
    t, y = _outcome_arrays(outcomes)
    hazard = np.zeros(horizon)
    for k in range(1, horizon + 1):
        risk = int((t >= k).sum())
        events = int(((t == k) & (y == 1.0)).sum())
        hazard[k - 1] = events / risk if risk > 0 else 0.0
    return survival_from_hazard(hazard)
