"""Deterministic stress tests: adverse marketplace response and support contraction."""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import DomainError

SUPPORT_SCALES = (1.0, 0.75, 0.5, 0.25, 0.10, 0.05)
RHO_MAX = 0.60
RHO_POINTS = 31


def rho_grid(points: int = RHO_POINTS, rho_max: float = RHO_MAX) -> np.ndarray:
    return np.linspace(0.0, rho_max, points)


def response_adjusted_lift(lift0: float, rho: float) -> float:
    """Lift left after an adverse response removes a share ``rho`` of policy yield."""
    if not 0.0 <= rho < 1.0:
        raise DomainError(f"response-loss share must lie in [0, 1), got {rho}")
    return (1.0 + lift0) * (1.0 - rho) - 1.0


def breakeven_rho(lift0: float) -> float:
    """Response-loss share at which the adjusted lift is exactly zero."""
    if lift0 <= -1.0:
        raise DomainError("lift must exceed -1")
    return lift0 / (1.0 + lift0)


def support_adjusted_lower(median: float, p10: float, s: float) -> float:
    """Lower tail with the median-to-p10 gap widened by ``1/sqrt(s)``."""
    if s <= 0 or s > 1:
        raise DomainError(f"support scale must lie in (0, 1], got {s}")
    if p10 > median:
        raise DomainError("p10 exceeds the median")
    if s == 1.0:
        return p10
    return median - (median - p10) / math.sqrt(s)


@dataclass(frozen=True)
class SensitivityThresholds:
    min_breakeven_rho: float = 0.15
    support_scales: tuple = SUPPORT_SCALES
    rho_points: int = RHO_POINTS
    rho_max: float = RHO_MAX


CHECKS = ("positive_replay_lift", "positive_p10_dr_lift", "breakeven_above_threshold",
          "positive_lower_tail_under_support_scales", "validation_first_recommendation")


@dataclass(frozen=True)
class RobustnessSummary:
    policy_id: str
    replay_lift: float
    p10_dr_lift: float
    median_dr_lift: float
    breakeven_rho: float
    response_curve: tuple
    support_curve: tuple
    checks: dict = field(default_factory=dict)

    @property
    def checks_passed(self) -> int:
        return sum(bool(v) for v in self.checks.values())

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "replay_lift": self.replay_lift,
                "p10_dr_lift": self.p10_dr_lift, "median_dr_lift": self.median_dr_lift,
                "breakeven_rho": self.breakeven_rho,
                "response_curve": [list(p) for p in self.response_curve],
                "support_curve": [list(p) for p in self.support_curve],
                "checks": dict(self.checks), "checks_passed": self.checks_passed}


def robustness_summary(policy_id: str, replay_lift: float, median_dr_lift: float,
                       p10_dr_lift: float, thresholds: SensitivityThresholds | None = None,
                       interference_attested: bool = False) -> RobustnessSummary:
    """Five offline robustness checks for one policy.

    The last check holds when the recommendation stays validation-first,
    i.e. no one has attested interference-resolved online evidence, so the
    offline evidence is not being read as launch evidence.
    """
    t = thresholds or SensitivityThresholds()
    rho_star = breakeven_rho(replay_lift) if replay_lift > -1 else -math.inf
    response = tuple((float(r), response_adjusted_lift(replay_lift, float(r)))
                     for r in rho_grid(t.rho_points, t.rho_max))
    finite = math.isfinite(median_dr_lift) and math.isfinite(p10_dr_lift)
    support = tuple((s, support_adjusted_lower(median_dr_lift, min(p10_dr_lift, median_dr_lift), s))
                    for s in t.support_scales) if finite else ()
    checks = {
        "positive_replay_lift": replay_lift > 0,
        "positive_p10_dr_lift": finite and p10_dr_lift > 0,
        "breakeven_above_threshold": rho_star >= t.min_breakeven_rho,
        "positive_lower_tail_under_support_scales": bool(support) and all(v > 0 for _, v in support),
        "validation_first_recommendation": not interference_attested,
    }
    return RobustnessSummary(policy_id, replay_lift, p10_dr_lift, median_dr_lift, rho_star,
                             response, support, checks)
