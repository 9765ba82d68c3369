"""Seven-screen replay guardrail matrix and the guardrail-feasible policy set."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping

from .errors import ConfigError
from .replay import ReplayResult, daily_stability, value_proxy  # noqa: F401  (re-export)

SCREENS = (
    "yield_lift",
    "impression_retention",
    "daily_impression_retention",
    "click_retention",
    "conversion_retention",
    "value_proxy_retention",
    "daily_positive_lift",
)


@dataclass(frozen=True)
class GuardrailConfig:
    min_yield_lift: float = 0.005
    min_impression_retention: float = 0.98
    min_daily_impression_retention: float = 0.98
    min_click_retention: float = 0.97
    min_conversion_retention: float = 0.90
    min_value_retention: float = 0.97
    require_daily_positive_lift: bool = True

    def __post_init__(self):
        if self.min_yield_lift < 0:
            raise ConfigError("min_yield_lift must be non-negative")
        for name in ("min_impression_retention", "min_daily_impression_retention",
                     "min_click_retention", "min_conversion_retention", "min_value_retention"):
            if not 0.0 <= getattr(self, name) <= 1.0:
                raise ConfigError(f"{name} must lie in [0, 1]")

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True)
class Cell:
    passed: bool
    value: float | None
    threshold: float | None
    note: str = ""


@dataclass(frozen=True)
class GuardrailMatrix:
    cells: Mapping[str, Mapping[str, Cell]]
    config: GuardrailConfig = field(default_factory=GuardrailConfig)

    def all_pass(self, policy_id: str) -> bool:
        return all(c.passed for c in self.cells[policy_id].values())

    def passed_count(self, policy_id: str) -> int:
        return sum(c.passed for c in self.cells[policy_id].values())

    @property
    def feasible(self) -> list[str]:
        """Policies passing every screen, in input order."""
        return [pid for pid in self.cells if self.all_pass(pid)]

    def rows(self) -> list[dict]:
        out = []
        for pid, cells in self.cells.items():
            for screen, c in cells.items():
                out.append({"policy_id": pid, "guardrail": screen, "value": c.value,
                            "threshold": c.threshold, "pass": int(c.passed), "note": c.note})
        return out

    def to_dict(self) -> dict:
        return {"config": self.config.to_dict(),
                "policies": {pid: {"all_pass": self.all_pass(pid),
                                   "passed": self.passed_count(pid),
                                   "cells": {s: asdict(c) for s, c in cells.items()}}
                             for pid, cells in self.cells.items()}}


def _at_least(value: Fraction, threshold: float, note: str = "") -> Cell:
    return Cell(bool(value >= Fraction(str(threshold))), float(value), threshold, note)


def screen_one(r: ReplayResult, config: GuardrailConfig) -> dict[str, Cell]:
    cells = {
        "yield_lift": _at_least(r.lift, config.min_yield_lift),
        "impression_retention": _at_least(r.impression_retention, config.min_impression_retention,
                                          "" if r.base_filled else "no baseline fills; vacuous"),
        "daily_impression_retention": _at_least(r.min_daily_retention,
                                                config.min_daily_impression_retention),
        "click_retention": _at_least(r.click_retention, config.min_click_retention,
                                     "" if r.base_clicks else "no baseline clicks; vacuous"),
        "conversion_retention": _at_least(r.conversion_retention, config.min_conversion_retention,
                                          "" if r.base_conversions else
                                          "no baseline conversions; vacuous"),
        "value_proxy_retention": _at_least(r.value_proxy_retention, config.min_value_retention),
    }
    if config.require_daily_positive_lift:
        if not r.daily:
            raise ConfigError(f"{r.policy_id}: daily breakdown required for stability screen")
        st = daily_stability(r)
        ok = st.days_defined > 0 and st.days_positive == st.days_defined
        note = f"{st.days_positive}/{st.days_defined} days positive"
        if st.has_undefined_days:
            note += f"; {st.days_total - st.days_defined} day(s) without baseline yield excluded"
        share = st.days_positive / st.days_defined if st.days_defined else 0.0
        cells["daily_positive_lift"] = Cell(ok, share, 1.0, note)
    else:
        cells["daily_positive_lift"] = Cell(True, None, None, "screen disabled")
    return cells


def screen(results: Mapping[str, ReplayResult] | list, config: GuardrailConfig | None = None
           ) -> GuardrailMatrix:
    """Compare every measured quantity with its threshold using ``>=``."""
    config = config or GuardrailConfig()
    if not isinstance(results, Mapping):
        results = {r.policy_id: r for r in results}
    n = {r.n for r in results.values()}
    if len(n) > 1:
        raise ConfigError("guardrail screening needs results from one panel")
    return GuardrailMatrix({pid: screen_one(r, config) for pid, r in results.items()}, config)
