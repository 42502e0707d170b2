"""Synthetic heterogeneous lane corpus with ground-truth shortfall days.

Each lane runs a daily inventory recursion: releases follow a gamma demand
process, shipments are capacity-bounded, arrivals lag by the transit time,
and on-hand balances obey exact conservation (delta on-hand = supplier
receipts + warehouse transfers - production usage). A lane enters a stress
episode at a random onset: shipping capacity drops, backlog accumulates,
and warehouse transfers keep coverage at target until the buffer runs out;
the shortfall fires on the first day on-hand coverage drops below one
day while the backlog has persisted past the regime threshold.

Heterogeneity comes from the regime table, keyed by part id. A lane's
stress scale shifts both its visible backlog magnitude and its time to
shortfall, with the regime's fragility sign deciding the direction: in
fragile regimes a harder-hit lane fails sooner (warehouse protection is
fixed), while in buffered regimes protection is sized superlinearly in the
observed deficit, so harder-hit lanes survive longer. Two windows that look
alike can therefore carry very different labels depending on group ids.
"""

import json
from dataclasses import dataclass, field, replace
from typing import Optional

import numpy as np

from .errors import SchemaError, ValidationError
from .pipeline import (
    FEATURES, LaneKey, LaneSeries, NUM_FEATURES, WINDOW_LEN,
    DEFAULT_HORIZON, label_window, segment_windows,
)
from .survival import ObservedOutcome

MANIFEST_SCHEMA = "shortfall-manifest-v1"

__all__ = [
    "StressSpec", "RegimeSpec", "GeneratorConfig",
    "default_regimes", "default_config",
    "simulate_lane", "generate_corpus", "apply_censoring",
    "generate_parametric_survival",
    "write_manifest", "read_manifest",
]


@dataclass(frozen=True)
class StressSpec:
    onset_lo: int                    # earliest stress onset day
    onset_hi: int                    # latest onset; beyond the lane length => censored
    ship_ratio: float                # stressed shipping capacity / demand, < 1
    protected_days: float            # mean days from onset to shortfall at unit stress
    grace_days: int = 7              # days of backlog growth before releases rebalance
    threshold_days: int = 3          # minimum consecutive days behind for the trigger


@dataclass(frozen=True)
class RegimeSpec:
    regime_id: int
    demand_rate: float               # lambda, parts/day
    capacity_ratio: float            # healthy weekly capacity / weekly demand
    variability: float               # coefficient-of-variation class (0, 0.3, 0.8)
    utilization: float               # target utilization, informational
    transit_days: int                # Tp, supplier-to-plant transit
    buffer_days: float               # target projected coverage days
    fragility: int                   # +1 backlog predicts imminent failure, -1 absorbed
    stress: Optional[StressSpec] = None

    def __post_init__(self):
        if self.demand_rate <= 0 or self.capacity_ratio <= 0:
            raise ValidationError("demand rate and capacity ratio must be positive")
        if self.variability < 0:
            raise ValidationError("variability must be non-negative")
        if not 0 < self.utilization < 1.5:
            raise ValidationError(f"utilization {self.utilization} outside (0, 1.5)")
        if self.transit_days < 1:
            raise ValidationError("transit time must be at least one day")
        if self.fragility not in (-1, 1):
            raise ValidationError("fragility must be +1 or -1")


@dataclass(frozen=True)
class GeneratorConfig:
    n_sites: int = 3
    n_plants: int = 3
    n_parts: int = 60
    days: int = 730
    lanes_per_regime: Optional[int] = None   # cap; None keeps every combination
    censor_target: float = 0.25
    seed: int = 2024

    def __post_init__(self):
        if min(self.n_sites, self.n_plants, self.n_parts, self.days) < 1:
            raise ValidationError("counts and days must be positive")
        if not 0.0 <= self.censor_target < 1.0:
            raise ValidationError("censoring target must lie in [0, 1)")


def default_regimes():
    """Eight regimes: four fragile, four buffered, staggered event delays.

    Regimes share every *observable* parameter (demand rate, transit, buffer
    depth, variability class); lane-level draws provide the visible variation
    instead. They differ only in the hidden stress response — protection
    depth, fragility sign, stressed shipping ratio — so a regime cannot be
    read off the telemetry, only off the group identity.
    """
    regimes = []
    # Protection depths are spaced far apart (>= 24 days between fragile
    # levels, >= 30 between buffered ones) so that even with the stress
    # intensity read off the telemetry, the candidate failure days of the
    # different regimes stay separated by much more than the +/-7-day
    # accuracy margin — a model that cannot tell regimes apart cannot hedge
    # its way onto the right one.
    specs = [
        # (fragility, protected_days, ship_ratio)
        (+1, 10.0, 0.55),
        (-1, 16.0, 0.60),
        (+1, 34.0, 0.55),
        (-1, 46.0, 0.65),
        (+1, 58.0, 0.60),
        (-1, 76.0, 0.55),
        (+1, 82.0, 0.65),
        (+1, 106.0, 0.60),
    ]
    for rid, (fragility, protected, ship_ratio) in enumerate(specs):
        regimes.append(RegimeSpec(
            regime_id=rid,
            demand_rate=100.0,
            capacity_ratio=1.35,
            variability=0.5,
            utilization=0.91,
            transit_days=3,
            # Small on-hand buffer: once warehouse protection runs out the
            # lane fails within days, so the event time tracks the
            # (identity-keyed) protection rather than a visible drain.
            buffer_days=3.8,
            fragility=fragility,
            stress=StressSpec(
                onset_lo=60,
                onset_hi=520,
                ship_ratio=ship_ratio,
                protected_days=protected,
            ),
        ))
    return regimes


def default_config():
    return GeneratorConfig()


@dataclass
class LaneTruth:
    key: LaneKey
    regime_id: int
    true_event_day: Optional[int]
    emitted_event_day: Optional[int]
    last_observed_day: int
    stress_onset: Optional[int]
    stress_scale: float
    demand_rate: float = 0.0           # lane-level lambda actually simulated


def _uniform(rng, lo, hi, variability):
    return rng.uniform(lo, hi) if variability > 0 else (lo + hi) / 2.0


def simulate_lane(key, regime, days, seed):
    """Run the daily recursion for one lane; returns a LaneSeries whose
    event_day is the ground-truth shortfall day (None if none occurred)."""
    rng = np.random.default_rng(seed)
    v = regime.variability

    # Lane-level draws (fixed order so corpora are seed-stable). Observable
    # lane properties — demand rate, transit time, buffer depth — vary per
    # lane, not per regime, so nothing visible in the telemetry identifies
    # which regime a lane belongs to; only the group ids carry that.
    scale = _uniform(rng, 0.6, 1.6, v)                 # stress intensity multiplier
    coverage0 = regime.buffer_days * _uniform(rng, 0.85, 1.15, v)
    delay_jitter = _uniform(rng, 0.98, 1.02, v)
    lam = regime.demand_rate * _uniform(rng, 0.7, 1.3, v)
    tp = regime.transit_days + (int(rng.integers(-1, 2)) if v > 0 else 0)

    if regime.capacity_ratio < 1.0:
        onset = 1
        ship_ratio = regime.capacity_ratio
        stress = regime.stress
        grace = stress.grace_days if stress else 10 ** 9
        threshold = stress.threshold_days if stress else 1
        protected = stress.protected_days if stress else 0.0
    elif regime.stress is not None:
        stress = regime.stress
        onset = int(rng.integers(stress.onset_lo, stress.onset_hi + 1))
        ship_ratio = max(0.05, 1.0 - scale * (1.0 - stress.ship_ratio))
        grace = stress.grace_days
        threshold = stress.threshold_days
        protected = stress.protected_days
    else:
        onset = None
        ship_ratio = regime.capacity_ratio
        grace = 10 ** 9
        threshold = 1
        protected = 0.0

    deficit_rate = max((1.0 - ship_ratio) * lam, 1e-9)
    target_boh = coverage0 * lam
    if onset is not None and protected > 0.0:
        # Days the warehouse keeps on-hand pinned at target. Fragile regimes
        # carry fixed protection, so harder-hit lanes (larger scale) fail
        # sooner; buffered regimes size it superlinearly in the deficit, so
        # harder-hit lanes hold out longer.
        if regime.fragility > 0:
            extra = protected * delay_jitter / scale
        else:
            extra = protected * delay_jitter * scale * scale
        warehouse = extra * deficit_rate
    else:
        warehouse = 0.0
    # Network-aggregate display: a large demand-proportional constant that
    # moves only with warehouse transfers. Sized above the worst-case
    # drawdown (protection depth x deficit rate) so the column never clamps.
    warehouse_display0 = 140.0 * lam

    if v > 0:
        shape = 1.0 / (v * v)
        demand = rng.gamma(shape, lam * v * v / 1.0, size=days + 1)
        usage_noise = rng.normal(0.0, 0.05 * lam, size=days + 1)
        promise_noise = rng.normal(0.0, 0.05 * lam, size=days + 1)
    else:
        demand = np.full(days + 1, lam)
        usage_noise = np.zeros(days + 1)
        promise_noise = np.zeros(days + 1)

    healthy_cap = regime.capacity_ratio * lam if regime.capacity_ratio >= 1.0 else lam * 1.1
    appc_week = (regime.capacity_ratio if regime.capacity_ratio >= 1.0 else 1.1) * lam * 7.0

    cols = {name: np.zeros(days) for name in FEATURES}
    backlog = 0.0
    days_behind = 0
    days_below_cover = 0
    boh = target_boh
    wh = warehouse
    pipeline_hist = [ship_ratio * lam if onset == 1 else min(lam, healthy_cap)] * tp
    cum_release = 0.0
    cum_receipts = 0.0
    prior_year_transit = sum(pipeline_hist)
    event_day = None

    for day in range(1, days + 1):
        i = day - 1
        stressed = onset is not None and day >= onset
        # Releases track demand plus an inventory correction toward target,
        # keeping healthy-phase on-hand mean-reverting instead of a random walk.
        # Base-stock ordering: follow demand inside a sanity band (a run of
        # near-zero draws must not starve the lane) and correct the full
        # inventory position toward target-on-hand plus transit stock. The
        # position form stays stable under the transit lag, where a
        # correction against on-hand alone oscillates.
        ordered = min(max(demand[day], 0.6 * lam), 1.6 * lam)
        position = boh + sum(pipeline_hist)
        release = max(0.0, ordered + 0.8 * (target_boh + tp * lam - position))
        if stressed and day - onset >= grace and backlog > 1e-9:
            # Releases rebalance to the supplier's demonstrated capacity, so
            # the backlog accumulated during the grace window plateaus.
            release = ship_ratio * lam
        cap_today = ship_ratio * lam if stressed else healthy_cap
        shipped = min(backlog + release, cap_today)
        backlog = max(0.0, backlog + release - shipped)
        days_behind = days_behind + 1 if backlog > 1e-9 else 0

        arrivals = pipeline_hist.pop(0)
        pipeline_hist.append(shipped)
        prior_year_transit = max(0.0, prior_year_transit - arrivals)

        desired_usage = max(0.0, lam + usage_noise[day])
        # Warehouse tops the on-hand balance back to target while stock lasts.
        transfer = 0.0
        if stressed and wh > 0.0:
            shortfall_to_target = target_boh - (boh + arrivals - desired_usage)
            if shortfall_to_target > 0.0:
                transfer = min(wh, shortfall_to_target)
                wh -= transfer
        usage = min(desired_usage, boh + arrivals + transfer)
        boh = boh + arrivals + transfer - usage

        cum_release += release
        cum_receipts += arrivals
        in_transit = sum(pipeline_hist)
        proj = boh + in_transit
        loose = max(0.0, boh - arrivals)

        cols["APPC"][i] = appc_week
        cols["APW"][i] = lam * 7.0
        cols["MPPC"][i] = appc_week * 1.15
        cols["MPW"][i] = lam * 7.0 * 1.15
        cols["cum_release"][i] = cum_release
        cols["days_behind_release"][i] = days_behind
        cols["production_usage"][i] = usage
        cols["qt_behind_release"][i] = backlog
        cols["qt_boh_arrived"][i] = boh
        cols["qt_prt_boh_loose"][i] = loose
        cols["qt_boh_proj"][i] = proj
        cols["qt_boh_warehouses"][i] = warehouse_display0 - (warehouse - wh)
        cols["qt_boh_days_arriv"][i] = boh / lam
        cols["qt_boh_days_loose"][i] = loose / lam
        cols["qt_boh_days_proj"][i] = proj / lam
        cols["qt_p_y_in_transit"][i] = prior_year_transit
        cols["qt_promised"][i] = max(0.0, shipped + promise_noise[day])
        cols["qt_release"][i] = release
        cols["qt_supp_cum_rcpt"][i] = cum_receipts
        cols["qt_supp_in_transit"][i] = in_transit
        cols["qt_trans_days_used"][i] = tp
        # Transient sub-day dips from demand noise recover within a day or
        # two once the catch-up releases arrive; a genuine shortfall keeps
        # on-hand below a day of cover while the lane is persistently behind.
        days_below_cover = days_below_cover + 1 if boh / lam < 1.0 else 0
        if event_day is None and days_below_cover >= 3 and days_behind >= threshold:
            event_day = day
            break

    last = event_day if event_day is not None else days
    features = np.stack([cols[name][:last] for name in FEATURES], axis=1)
    series = LaneSeries(key=key, features=np.maximum(features, 0.0),
                        event_day=event_day, last_observed_day=last)
    truth = LaneTruth(key=key, regime_id=regime.regime_id,
                      true_event_day=event_day, emitted_event_day=event_day,
                      last_observed_day=last, stress_onset=onset,
                      stress_scale=scale, demand_rate=lam)
    return series, truth


def regime_for_part(part_index, regimes):
    return regimes[part_index % len(regimes)]


def generate_corpus(config=None, regimes=None):
    """All (site, plant, part) lanes under the regime table; the regime is
    keyed by part id so the group ids genuinely determine the dynamics."""
    config = config or default_config()
    regimes = regimes or default_regimes()
    root = np.random.default_rng(config.seed)
    lanes, truths = [], []
    per_regime = {}
    for p in range(config.n_parts):
        regime = regime_for_part(p, regimes)
        for s in range(config.n_sites):
            for pl in range(config.n_plants):
                count = per_regime.get(regime.regime_id, 0)
                if config.lanes_per_regime is not None and count >= config.lanes_per_regime:
                    continue
                per_regime[regime.regime_id] = count + 1
                key = LaneKey(site=f"S{s:02d}", plant=f"P{pl:02d}", part=f"Q{p:03d}")
                lane_seed = int(root.integers(0, 2 ** 63 - 1))
                series, truth = simulate_lane(key, regime, config.days, lane_seed)
                lanes.append(series)
                truths.append(truth)
    return lanes, truths


def _window_labels(series, stride, horizon):
    windows, _ = segment_windows(series, stride=stride)
    labels = []
    for end, _w in windows:
        outcome = label_window(end, series, horizon=horizon)
        if outcome is not None:
            labels.append(outcome)
    return labels


def _censoring_proportion(lanes, stride, horizon):
    total = censored = 0
    for lane in lanes:
        for outcome in _window_labels(lane, stride, horizon):
            total += 1
            censored += 1 - outcome.y
    return censored / max(total, 1), total


def apply_censoring(lanes, truths, target, seed, stride=7, horizon=DEFAULT_HORIZON):
    """Administratively truncate event lanes until the window-level censoring
    proportion reaches the target. Returns new (lanes, truths)."""
    if not 0.0 <= target < 1.0:
        raise ValidationError(f"censoring fraction {target} outside [0, 1)")
    lanes = list(lanes)
    truths = [replace_truth(t) for t in truths]
    if target == 0.0:
        return lanes, truths
    rng = np.random.default_rng(seed)
    per_lane = []
    for lane in lanes:
        labels = _window_labels(lane, stride, horizon)
        per_lane.append((sum(1 - o.y for o in labels), len(labels)))
    censored = sum(c for c, _n in per_lane)
    total = sum(n for _c, n in per_lane)
    current = censored / max(total, 1)
    candidates = [i for i, lane in enumerate(lanes)
                  if lane.event_day is not None and lane.event_day >= WINDOW_LEN + 8]
    rng.shuffle(candidates)
    for i in candidates:
        if current >= target:
            break
        lane = lanes[i]
        cut = int(rng.integers(WINDOW_LEN, lane.event_day))
        lanes[i] = LaneSeries(key=lane.key, features=lane.features[:cut],
                              event_day=None, last_observed_day=cut)
        truths[i].emitted_event_day = None
        truths[i].last_observed_day = cut
        labels = _window_labels(lanes[i], stride, horizon)
        old_c, old_n = per_lane[i]
        new_c, new_n = sum(1 - o.y for o in labels), len(labels)
        per_lane[i] = (new_c, new_n)
        censored += new_c - old_c
        total += new_n - old_n
        current = censored / max(total, 1)
    if current < target - 0.03:
        raise ValidationError(
            f"cannot reach censoring target {target}: only {current:.3f} achievable "
            f"with the available event lanes")
    return lanes, truths


def replace_truth(t):
    return LaneTruth(key=t.key, regime_id=t.regime_id,
                     true_event_day=t.true_event_day,
                     emitted_event_day=t.emitted_event_day,
                     last_observed_day=t.last_observed_day,
                     stress_onset=t.stress_onset, stress_scale=t.stress_scale)


def generate_parametric_survival(n, theta, seed, horizon):
    """Covariates uniform in [-1, 1]^p and event times drawn exactly from the
    per-step logistic hazard with coefficient rows theta (H x (p+1))."""
    theta = np.asarray(theta, dtype=np.float64)
    if theta.ndim != 2 or theta.shape[0] != horizon:
        raise ValidationError(f"theta must be ({horizon}, p+1), got {theta.shape}")
    p = theta.shape[1] - 1
    rng = np.random.default_rng(seed)
    X = rng.uniform(-1.0, 1.0, size=(n, p))
    design = np.hstack([np.ones((n, 1)), X])
    hazards = 1.0 / (1.0 + np.exp(-(design @ theta.T)))     # (n, H)
    draws = rng.random((n, horizon))
    outcomes = []
    for i in range(n):
        hit = np.nonzero(draws[i] < hazards[i])[0]
        if hit.size:
            outcomes.append(ObservedOutcome(t=int(hit[0]) + 1, y=1))
        else:
            outcomes.append(ObservedOutcome(t=horizon, y=0))
    return X, outcomes


# ------------------------------------------------------------------ manifest

def write_manifest(truths, path):
    with open(path, "w") as f:
        f.write(json.dumps({"schema": MANIFEST_SCHEMA}) + "\n")
        for t in truths:
            f.write(json.dumps({
                "site": t.key.site, "plant": t.key.plant, "part": t.key.part,
                "regime_id": t.regime_id,
                "true_event_day": t.true_event_day,
                "emitted_event_day": t.emitted_event_day,
                "last_observed_day": t.last_observed_day,
                "stress_onset": t.stress_onset,
                "stress_scale": t.stress_scale,
                "demand_rate": t.demand_rate,
            }) + "\n")


def read_manifest(path):
    with open(path) as f:
        lines = f.readlines()
    if not lines:
        raise SchemaError(f"{path}: empty file")
    header = json.loads(lines[0])
    if header.get("schema") != MANIFEST_SCHEMA:
        raise SchemaError(f"{path}:1: expected schema {MANIFEST_SCHEMA!r}")
    truths = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            truths.append(LaneTruth(
                key=LaneKey(rec["site"], rec["plant"], rec["part"]),
                regime_id=rec["regime_id"],
                true_event_day=rec["true_event_day"],
                emitted_event_day=rec["emitted_event_day"],
                last_observed_day=rec["last_observed_day"],
                stress_onset=rec["stress_onset"],
                stress_scale=rec["stress_scale"],
                demand_rate=rec.get("demand_rate", 0.0),
            ))
        except (KeyError, json.JSONDecodeError) as e:
            raise SchemaError(f"{path}:{lineno}: {e}") from e
    return truths
