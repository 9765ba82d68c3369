"""Sharded deterministic auction replay."""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass
from fractions import Fraction
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels as K
from .errors import ContractError, UndefinedLiftError
from .panel import Panel
from .policy import PolicyCatalog, PolicySpec, candidate_floors, verify_non_decreasing

VALUE_PROXY_CONVERSION_WEIGHT = 10
_INT64_HEADROOM = 1 << 62


def value_proxy(clicks: int, conversions: int) -> int:
    """Advertiser value proxy: clicks plus ten times conversions."""
    if clicks < 0 or conversions < 0:
        raise ValueError("counts must be non-negative")
    return clicks + VALUE_PROXY_CONVERSION_WEIGHT * conversions


def _ratio(num: int, den: int, empty: Fraction = Fraction(1)) -> Fraction:
    return Fraction(num, den) if den else empty


@dataclass(frozen=True)
class DailyReplay:
    day: int
    n: int
    base_value: int
    value: int
    base_filled: int
    retained: int

    @property
    def lift(self) -> Fraction | None:
        """``None`` when the day has no baseline yield."""
        if self.base_value == 0:
            return None
        return Fraction(self.value, self.base_value) - 1

    @property
    def retained_share(self) -> Fraction:
        return _ratio(self.retained, self.base_filled)

    def to_dict(self) -> dict:
        lift = self.lift
        return {"day": self.day, "n": self.n, "base_value": self.base_value, "value": self.value,
                "base_filled": self.base_filled, "retained": self.retained,
                "lift": None if lift is None else float(lift),
                "retained_share": float(self.retained_share)}


@dataclass(frozen=True)
class ReplayResult:
    """Replay totals for one policy. All sums are exact integers; ratios are Fractions."""

    policy_id: str
    display_name: str
    n: int
    value_total: int
    baseline_value_total: int
    base_filled: int
    retained: int
    base_clicks: int
    retained_clicks: int
    base_conversions: int
    retained_conversions: int
    changed: int
    daily: tuple

    @property
    def value_per_opportunity(self) -> Fraction:
        return _ratio(self.value_total, self.n, Fraction(0))

    @property
    def baseline_value_per_opportunity(self) -> Fraction:
        return _ratio(self.baseline_value_total, self.n, Fraction(0))

    @property
    def lift(self) -> Fraction:
        if self.baseline_value_total == 0:
            raise UndefinedLiftError("baseline replay value is zero")
        return Fraction(self.value_total, self.baseline_value_total) - 1

    @property
    def impression_retention(self) -> Fraction:
        return _ratio(self.retained, self.base_filled)

    @property
    def click_retention(self) -> Fraction:
        return _ratio(self.retained_clicks, self.base_clicks)

    @property
    def conversion_retention(self) -> Fraction:
        return _ratio(self.retained_conversions, self.base_conversions)

    @property
    def base_value_proxy(self) -> int:
        return value_proxy(self.base_clicks, self.base_conversions)

    @property
    def retained_value_proxy(self) -> int:
        return value_proxy(self.retained_clicks, self.retained_conversions)

    @property
    def value_proxy_retention(self) -> Fraction:
        return _ratio(self.retained_value_proxy, self.base_value_proxy)

    @property
    def changed_share(self) -> Fraction:
        return _ratio(self.changed, self.n, Fraction(0))

    @property
    def min_daily_retention(self) -> Fraction:
        return min((d.retained_share for d in self.daily), default=Fraction(1))

    def to_dict(self) -> dict:
        return {
            "policy_id": self.policy_id,
            "display_name": self.display_name,
            "n": self.n,
            "value_total": self.value_total,
            "baseline_value_total": self.baseline_value_total,
            "value_per_opportunity": float(self.value_per_opportunity),
            "lift": float(self.lift) if self.baseline_value_total else None,
            "lift_exact": str(self.lift) if self.baseline_value_total else None,
            "retained_impressions": self.retained,
            "baseline_filled": self.base_filled,
            "impression_retention": float(self.impression_retention),
            "retained_clicks": self.retained_clicks,
            "click_retention": float(self.click_retention),
            "retained_conversions": self.retained_conversions,
            "conversion_retention": float(self.conversion_retention),
            "value_proxy_retention": float(self.value_proxy_retention),
            "changed_share": float(self.changed_share),
            "daily": [d.to_dict() for d in self.daily],
        }


def row_rewards(panel: Panel, spec: PolicySpec, catalog: PolicyCatalog) -> np.ndarray:
    """Per-row replay yield ``D * 1{bid >= f} * max(pay, f)`` under ``spec``."""
    c = panel.columns
    cand = candidate_floors(spec, panel, catalog)
    keep = (c["filled"] == 1) & (c["bid"] >= cand)
    return np.where(keep, np.maximum(c["pay"], cand), 0).astype(np.int64)


def row_value_proxy(panel: Panel, spec: PolicySpec, catalog: PolicyCatalog) -> np.ndarray:
    c = panel.columns
    cand = candidate_floors(spec, panel, catalog)
    keep = (c["filled"] == 1) & (c["bid"] >= cand)
    q = c["clicked"].astype(np.int64) + VALUE_PROXY_CONVERSION_WEIGHT * c["converted"].astype(np.int64)
    return np.where(keep, q, 0)


def _chunks(start: int, stop: int, bound: int) -> list[tuple[int, int]]:
    """Split ``[start, stop)`` so no int64 partial sum can overflow."""
    if stop <= start:
        return [(start, stop)]
    rows = max(1, _INT64_HEADROOM // max(bound, 1))
    return [(a, min(a + rows, stop)) for a in range(start, stop, rows)]


def _shard_stats(panel: Panel, spec: PolicySpec, catalog: PolicyCatalog, day_idx: np.ndarray,
                 n_days: int, start: int, stop: int) -> np.ndarray:
    c = panel.columns
    sl = slice(start, stop)
    cand = candidate_floors(spec, panel, catalog, sl)
    return K.replay_accumulate(day_idx[sl], n_days, c["bid"][sl], c["floor"][sl], c["pay"][sl],
                               c["filled"][sl], c["clicked"][sl], c["converted"][sl], cand)


def replay_policy(panel: Panel, spec: PolicySpec, catalog: PolicyCatalog, *,
                  shards: int | None = None, threads: int = 1,
                  require_baseline: bool = True) -> ReplayResult:
    """Replay ``spec`` over ``panel``.

    Each shard produces per-day int64 partial sums; partials are merged as
    Python integers, so the result is identical for any shard count, thread
    count or merge order.
    """
    if not verify_non_decreasing(spec, panel, catalog):
        raise ContractError(f"policy {spec.id} lowers a logged floor")
    c = panel.columns
    days = np.unique(c["day"])
    day_idx = np.searchsorted(days, c["day"]).astype(np.int64)
    bound = 1
    if len(panel):
        bound = int(max(c["pay"].max(), c["bid"].max(), c["floor"].max())) + spec.add + \
            catalog.quantile_value(spec) + 1
        bound = max(bound, int(c["floor"].max()) * 2 + 1)
    pieces = []
    for start, stop in panel.shard_bounds(shards):
        pieces.extend(_chunks(start, stop, bound))

    def run(bounds):
        return _shard_stats(panel, spec, catalog, day_idx, len(days), *bounds)

    if threads > 1 and len(pieces) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            partials = list(pool.map(run, pieces))
    else:
        partials = [run(b) for b in pieces]

    totals = [[0] * K.N_STATS for _ in range(len(days))]
    for part in partials:
        for d, row in enumerate(part.tolist()):
            acc = totals[d]
            for j, v in enumerate(row):
                acc[j] += v

    daily = tuple(
        DailyReplay(int(days[d]), t[K.S_N], t[K.S_BASE_VALUE], t[K.S_VALUE],
                    t[K.S_BASE_FILLED], t[K.S_RETAINED])
        for d, t in enumerate(totals))
    agg = [sum(t[j] for t in totals) for j in range(K.N_STATS)]
    if require_baseline and agg[K.S_BASE_VALUE] == 0:
        raise UndefinedLiftError(f"baseline replay value is zero on {panel.window_id}")
    return ReplayResult(
        policy_id=spec.id, display_name=spec.display_name, n=agg[K.S_N],
        value_total=agg[K.S_VALUE], baseline_value_total=agg[K.S_BASE_VALUE],
        base_filled=agg[K.S_BASE_FILLED], retained=agg[K.S_RETAINED],
        base_clicks=agg[K.S_BASE_CLICKS], retained_clicks=agg[K.S_CLICKS],
        base_conversions=agg[K.S_BASE_CONV], retained_conversions=agg[K.S_CONV],
        changed=agg[K.S_CHANGED], daily=daily,
    )


def replay_all(panel: Panel, catalog: PolicyCatalog, *, policies: Iterable[str] | None = None,
               shards: int | None = None, threads: int = 1) -> dict[str, ReplayResult]:
    ids = list(policies) if policies is not None else catalog.ids
    return {pid: replay_policy(panel, catalog[pid], catalog, shards=shards, threads=threads)
            for pid in ids}


@dataclass(frozen=True)
class FrontierRow:
    policy_id: str
    display_name: str
    changed_share: float
    lift: float
    guardrails_passed: int | None

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "display_name": self.display_name,
                "changed_share": self.changed_share, "lift": self.lift,
                "guardrails_passed": self.guardrails_passed}


def _policy_number(pid: str) -> int:
    digits = "".join(ch for ch in pid if ch.isdigit())
    return int(digits) if digits else 10**6


def replay_frontier(results: Sequence[ReplayResult] | Mapping[str, ReplayResult],
                    guardrails_passed: Mapping[str, int] | None = None) -> list[FrontierRow]:
    """One row per policy sorted by lift (desc), then changed share (asc), then id."""
    if isinstance(results, Mapping):
        results = list(results.values())
    if not any(r.policy_id == "P0" for r in results):
        raise ValueError("frontier needs the P0 baseline result")
    ordered = sorted(results, key=lambda r: (-r.lift, r.changed_share, _policy_number(r.policy_id),
                                             r.policy_id))
    gp = guardrails_passed or {}
    return [FrontierRow(r.policy_id, r.display_name, float(r.changed_share), float(r.lift),
                        gp.get(r.policy_id)) for r in ordered]


@dataclass(frozen=True)
class DailyStability:
    min_daily_lift: float | None
    max_daily_lift: float | None
    days_positive: int
    days_defined: int
    days_total: int

    @property
    def has_undefined_days(self) -> bool:
        return self.days_defined < self.days_total


def daily_stability(result: ReplayResult) -> DailyStability:
    if not result.daily:
        raise ValueError("result has no daily breakdown")
    lifts = [d.lift for d in result.daily if d.lift is not None]
    return DailyStability(
        min_daily_lift=float(min(lifts)) if lifts else None,
        max_daily_lift=float(max(lifts)) if lifts else None,
        days_positive=sum(1 for x in lifts if x > 0),
        days_defined=len(lifts),
        days_total=len(result.daily),
    )


def rank_by_lift(results: Mapping[str, ReplayResult]) -> dict[str, int]:
    """Competition ranking on lift: tied policies share the better rank."""
    lifts = {pid: r.lift for pid, r in results.items()}
    return {pid: 1 + sum(1 for other in lifts.values() if other > lift)
            for pid, lift in lifts.items()}
