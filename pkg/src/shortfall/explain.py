"""Shapley-value attribution for single predictions.

Players are coordinate groups of the model input (by default the 588
(feature, day-lag) cells of the window, optionally plus the three group-id
slots). The sampling estimator walks random player permutations, flipping
players from the baseline to the actual value and averaging marginal
changes; exact enumeration over all coalitions serves as the small-instance
oracle. Both satisfy efficiency by construction: for every permutation the
marginal contributions telescope from the baseline prediction to the
actual one.
"""

import itertools
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ValidationError
from .pipeline import FEATURES

__all__ = [
    "AttributionReport", "Player", "window_players",
    "shapley_sampling", "exact_shapley", "waterfall_export", "waterfall_svg",
]


@dataclass(frozen=True)
class Player:
    """A named, mutable slice of the model input."""
    label: str
    indices: tuple       # flat coordinate indices this player controls


@dataclass
class AttributionReport:
    base_value: float
    prediction: float
    contributions: list                  # (label, value), model input order
    estimator: str = "sampling"
    n_permutations: int = 0
    seed: int = 0
    metadata: dict = field(default_factory=dict)

    def total(self):
        return sum(v for _l, v in self.contributions)


def window_players(window_len=28, include_ids=False):
    """One player per (feature, day-lag) cell, labeled 'name (N days ago)'."""
    players = []
    for day in range(window_len):
        lag = window_len - 1 - day
        for f, name in enumerate(FEATURES):
            label = f"{name} ({lag} days ago)" if lag else f"{name} (today)"
            players.append(Player(label=label, indices=(day * len(FEATURES) + f,)))
    if include_ids:
        n = window_len * len(FEATURES)
        for i, name in enumerate(("site_id", "plant_id", "part_id")):
            players.append(Player(label=name, indices=(n + i,)))
    return players


def _check_inputs(x, baseline, players):
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    baseline = np.asarray(baseline, dtype=np.float64).reshape(-1)
    if x.shape != baseline.shape:
        raise ValidationError(
            f"baseline shape {baseline.shape} does not match input shape {x.shape}")
    seen = set()
    for p in players:
        for i in p.indices:
            if i in seen:
                raise ValidationError(f"coordinate {i} owned by two players")
            seen.add(i)
    return x, baseline


def shapley_sampling(fn, x, baseline, players, n_permutations=200, seed=0):
    """Permutation-sampling Shapley estimate of fn's output attribution."""
    if n_permutations < 1:
        raise ValidationError("need at least one permutation")
    x, baseline = _check_inputs(x, baseline, players)
    rng = np.random.default_rng(seed)
    base_value = float(fn(baseline.copy()))
    prediction = float(fn(x.copy()))
    totals = np.zeros(len(players))
    order = np.arange(len(players))
    for _ in range(n_permutations):
        rng.shuffle(order)
        current = baseline.copy()
        prev = base_value
        for j in order:
            idx = list(players[j].indices)
            current[idx] = x[idx]
            value = float(fn(current))
            totals[j] += value - prev
            prev = value
    contributions = totals / n_permutations
    # The permutation estimator telescopes exactly; pin the tiny float
    # accumulation drift onto the largest contribution so efficiency is exact.
    drift = (prediction - base_value) - contributions.sum()
    if len(contributions):
        contributions[int(np.argmax(np.abs(contributions)))] += drift
    return AttributionReport(
        base_value=base_value, prediction=prediction,
        contributions=[(p.label, float(c)) for p, c in zip(players, contributions)],
        estimator="sampling", n_permutations=n_permutations, seed=seed)


def exact_shapley(fn, x, baseline, players):
    """Exact Shapley values by full-subset enumeration (at most 12 players)."""
    n = len(players)
    if n > 12:
        raise ValidationError(f"exact enumeration limited to 12 players, got {n}")
    x, baseline = _check_inputs(x, baseline, players)

    values = {}
    for mask in range(1 << n):
        current = baseline.copy()
        for j in range(n):
            if mask >> j & 1:
                idx = list(players[j].indices)
                current[idx] = x[idx]
        values[mask] = float(fn(current))

    contributions = np.zeros(n)
    fact = [math.factorial(k) for k in range(n + 1)]
    denom = fact[n]
    for mask in range(1 << n):
        size = bin(mask).count("1")
        weight = fact[size] * fact[n - size - 1] / denom
        for j in range(n):
            if not mask >> j & 1:
                contributions[j] += weight * (values[mask | (1 << j)] - values[mask])
    return AttributionReport(
        base_value=values[0], prediction=values[(1 << n) - 1],
        contributions=[(p.label, float(c)) for p, c in zip(players, contributions)],
        estimator="exact")


def model_scalar_fn(checkpoint, ids, scalar="mean_days", hazard_day=None):
    """Scalar model view for attribution over a flattened 28 x 21 window.

    "mean_days" explains the restricted mean survival time (expected days
    to shortfall, censored at the horizon); "hazard" explains the hazard at
    hazard_day. When the flat input carries 3 trailing id coordinates they
    override the given ids (rounded to integers).
    """
    from . import model as model_mod
    from . import survival

    base_ids = np.asarray(ids, dtype=np.intp)
    n_window = 28 * len(FEATURES)
    if scalar == "hazard" and hazard_day is None:
        raise ValidationError("hazard scalar needs hazard_day")

    def fn(flat):
        flat = np.asarray(flat, dtype=np.float64)
        if flat.size == n_window:
            window, eval_ids = flat, base_ids
        elif flat.size == n_window + 3:
            window = flat[:n_window]
            eval_ids = np.rint(flat[n_window:]).astype(np.intp)
        else:
            raise ValidationError(f"expected {n_window} or {n_window + 3} coordinates")
        h = model_mod.predict_hazard(window.reshape(28, len(FEATURES)),
                                     eval_ids, checkpoint)
        if scalar == "hazard":
            return float(h[hazard_day - 1])
        return survival.restricted_mean_survival(np.cumprod(1.0 - h))

    return fn


def waterfall_export(report, top_k):
    """Sorted contribution rows, the tail aggregated, as a text document."""
    if top_k < 1:
        raise ValidationError("top_k must be at least 1")
    ranked = sorted(report.contributions, key=lambda lv: abs(lv[1]), reverse=True)
    rows = ranked[:top_k]
    rest = ranked[top_k:]
    if rest:
        rows = rows + [("all other features", sum(v for _l, v in rest))]
    lines = [
        f"baseline prediction: {report.base_value:.6f}",
        f"actual prediction:   {report.prediction:.6f}",
        f"estimator: {report.estimator}"
        + (f" ({report.n_permutations} permutations, seed {report.seed})"
           if report.estimator == "sampling" else ""),
        "",
    ]
    for label, value in rows:
        lines.append(f"{value:+12.6f}  {label}")
    lines.append(f"{sum(v for _l, v in rows):+12.6f}  total (prediction - baseline)")
    return rows, "\n".join(lines) + "\n"


def waterfall_svg(report, top_k, path):
    """Static SVG waterfall with one labeled bar per kept contribution."""
    rows, _text = waterfall_export(report, top_k)
    width, row_h, label_w = 760, 24, 320
    height = row_h * (len(rows) + 2) + 20
    max_abs = max(abs(v) for _l, v in rows) or 1.0
    half = (width - label_w - 20) / 2.0
    cx = label_w + half
    parts = [
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" '
        f'font-family="monospace" font-size="12">',
        f'<text x="10" y="16">waterfall: baseline {report.base_value:.4f} '
        f'to prediction {report.prediction:.4f}</text>',
        f'<line x1="{cx}" y1="24" x2="{cx}" y2="{height - 10}" stroke="#999"/>',
    ]
    for i, (label, value) in enumerate(rows):
        y = 30 + i * row_h
        w = abs(value) / max_abs * half
        x = cx - w if value < 0 else cx
        color = "#c0392b" if value < 0 else "#2471a3"
        parts.append(f'<rect x="{x:.1f}" y="{y}" width="{max(w, 0.5):.1f}" '
                     f'height="{row_h - 8}" fill="{color}"/>')
        parts.append(f'<text x="10" y="{y + 12}">{label[:46]}</text>')
        parts.append(f'<text x="{cx + half - 70:.1f}" y="{y + 12}">{value:+.4f}</text>')
    parts.append("</svg>")
    with open(path, "w") as f:
        f.write("\n".join(parts))
