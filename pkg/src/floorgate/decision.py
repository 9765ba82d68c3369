"""Gate vector, decision map, out-of-time transfer gate, MDE planning and rule ablation."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from statistics import NormalDist
from typing import Mapping, Sequence

import numpy as np

from .errors import ContractError, DesignError
from .guardrails import GuardrailConfig
from .ope import SupportGateConfig
from .panel import Panel, baseline_value_total
from .replay import ReplayResult, rank_by_lift

GATES = ("R", "T", "S", "C", "H", "B", "I")
ACTIONS = ("launch", "validate_online", "hold", "redesign")
ACTION_PRIORITY = {a: j for j, a in enumerate(ACTIONS)}


@dataclass(frozen=True)
class Gate:
    value: int
    measured: object = None
    threshold: object = None
    source: str = ""
    note: str = ""

    def to_dict(self) -> dict:
        return {"value": self.value, "measured": self.measured, "threshold": self.threshold,
                "source": self.source, "note": self.note}


@dataclass(frozen=True)
class GateVector:
    gates: Mapping[str, Gate]

    @classmethod
    def from_bits(cls, bits: Sequence[int]) -> "GateVector":
        return cls({g: Gate(int(b)) for g, b in zip(GATES, bits)})

    def __getitem__(self, name: str) -> int:
        return self.gates[name].value

    @property
    def bits(self) -> tuple:
        return tuple(self[g] for g in GATES)

    @property
    def q_minus_i(self) -> int:
        return int(all(self[g] for g in GATES[:-1]))

    @property
    def q(self) -> int:
        return self.q_minus_i * self["I"]

    def to_dict(self) -> dict:
        return {"gates": {g: self.gates[g].to_dict() for g in GATES},
                "Q_minus_I": self.q_minus_i, "Q": self.q}


def decide(gates: GateVector | Sequence[int], measurement_failure: bool = False) -> str:
    """Map a gate vector to launch / validate_online / hold / redesign.

    Anything short of validation readiness is ``redesign`` when the
    guardrails fail or the measurement itself is flagged, and ``hold``
    otherwise.
    """
    if not isinstance(gates, GateVector):
        gates = GateVector.from_bits(gates)
    if gates.q:
        return "launch"
    if gates.q_minus_i and not gates["I"]:
        return "validate_online"
    if not gates["H"] or measurement_failure:
        return "redesign"
    return "hold"


# --------------------------------------------------------------------------- transfer


@dataclass(frozen=True)
class TransferOutcome:
    policy_id: str
    value: int
    available: bool
    lift: float | None = None
    rank: int | None = None
    retention: Mapping[str, float] = field(default_factory=dict)
    note: str = ""

    def to_dict(self) -> dict:
        return {"policy_id": self.policy_id, "T": self.value, "available": self.available,
                "validation_lift": self.lift, "validation_rank": self.rank,
                "retention": dict(self.retention), "note": self.note}


def transfer_gate(discovery: Mapping[str, ReplayResult] | None,
                  validation: Mapping[str, ReplayResult] | None, policy_id: str,
                  r_max: int = 3, thresholds: GuardrailConfig | None = None, *,
                  discovery_catalog: str | None = None,
                  validation_catalog: str | None = None) -> TransferOutcome:
    """Positive out-of-time lift, validation rank within ``r_max``, retention above thresholds.

    Catalog digests, when given, must match: the validation replay has to use
    the policy definitions frozen on the discovery window.
    """
    if discovery_catalog is not None and validation_catalog is not None \
            and discovery_catalog != validation_catalog:
        raise ContractError("validation replay used a different catalog than discovery")
    if not validation:
        return TransferOutcome(policy_id, 1, False,
                               note="validation window unavailable; T=1 as a non-blocking "
                                    "placeholder")
    t = thresholds or GuardrailConfig()
    r = validation[policy_id]
    lift = r.lift
    rank = rank_by_lift(validation)[policy_id]
    retention = {
        "impression_retention": (r.impression_retention, t.min_impression_retention),
        "click_retention": (r.click_retention, t.min_click_retention),
        "conversion_retention": (r.conversion_retention, t.min_conversion_retention),
        "value_proxy_retention": (r.value_proxy_retention, t.min_value_retention),
    }
    ok_ret = all(v >= Fraction(str(th)) for v, th in retention.values())
    value = int(lift > 0 and rank <= r_max and ok_ret)
    return TransferOutcome(policy_id, value, True, float(lift), rank,
                           {k: float(v) for k, (v, _) in retention.items()},
                           f"rank {rank} (r_max {r_max})")


# --------------------------------------------------------------------------- gates


@dataclass(frozen=True)
class EvidenceBundle:
    """Upstream evidence for one policy; ``None`` marks a missing component."""

    policy_id: str
    replay_lift: float | None = None
    transfer: TransferOutcome | None = None
    ess_share: float | None = None
    p99_weight: float | None = None
    lower_tail_lift: float | None = None
    guardrails_all_pass: bool | None = None
    breakeven_rho: float | None = None
    interference_attestation: str | None = None


def _missing(source: str) -> Gate:
    return Gate(0, None, None, source, "missing evidence")


def _finite(x) -> bool:
    return x is not None and not (isinstance(x, float) and math.isnan(x))


def evaluate_gates(bundle: EvidenceBundle, support: SupportGateConfig | None = None,
                   min_breakeven_rho: float = 0.15) -> GateVector:
    support = support or SupportGateConfig()
    g = {}
    g["R"] = (Gate(int(bundle.replay_lift > 0), bundle.replay_lift, 0.0, "replay", "lift > 0")
              if _finite(bundle.replay_lift) else _missing("replay"))
    if bundle.transfer is None:
        g["T"] = _missing("transfer")
    else:
        tr = bundle.transfer
        g["T"] = Gate(tr.value, tr.lift, None, "transfer", tr.note)
    if _finite(bundle.ess_share) and _finite(bundle.p99_weight):
        ok = support.passes(bundle.ess_share, bundle.p99_weight)
        g["S"] = Gate(int(ok), {"ess_share": bundle.ess_share, "p99_weight": bundle.p99_weight},
                      {"min_ess_share": support.min_ess_share,
                       "max_p99_weight": support.max_p99_weight}, "ope")
    else:
        g["S"] = _missing("ope")
    g["C"] = (Gate(int(bundle.lower_tail_lift > 0), bundle.lower_tail_lift, 0.0, "ope",
                   "lower-tail lift > 0")
              if _finite(bundle.lower_tail_lift) else _missing("ope"))
    g["H"] = (Gate(int(bool(bundle.guardrails_all_pass)), bundle.guardrails_all_pass, True,
                   "guardrails")
              if bundle.guardrails_all_pass is not None else _missing("guardrails"))
    g["B"] = (Gate(int(bundle.breakeven_rho >= min_breakeven_rho), bundle.breakeven_rho,
                   min_breakeven_rho, "sensitivity")
              if _finite(bundle.breakeven_rho) else _missing("sensitivity"))
    att = bundle.interference_attestation
    g["I"] = (Gate(1, att, None, "attestation", "online experiment artifact attested")
              if att else Gate(0, None, None, "attestation",
                               "logs alone cannot resolve interference"))
    return GateVector(g)


# --------------------------------------------------------------------------- dominance


def prune_dominated(results: Mapping[str, ReplayResult], passed: Mapping[str, int],
                    candidates: Sequence[str]) -> list[str]:
    """Drop candidates weakly Pareto-dominated on (lift, impression retention, guardrails passed).

    Exact ties are kept.
    """
    def vec(pid):
        r = results[pid]
        return (r.lift, r.impression_retention, passed[pid])

    vecs = {pid: vec(pid) for pid in candidates}
    keep = []
    for pid in candidates:
        v = vecs[pid]
        dominated = any(all(o >= x for o, x in zip(w, v)) and any(o > x for o, x in zip(w, v))
                        for other, w in vecs.items() if other != pid)
        if not dominated:
            keep.append(pid)
    return keep


# --------------------------------------------------------------------------- MDE

MDE_DESIGNS = {
    "advertiser": ("advertiser", "day"),
    "exchange_hour": ("exchange", "day", "hour"),
    "exchange_region": ("exchange", "region", "day"),
    "region_day": ("region", "day"),
}


@dataclass(frozen=True)
class MdeCurve:
    design: str
    units: int
    units_per_day: float
    sigma: float
    baseline_yield: float
    c: float
    points: tuple

    def mde(self, days: float) -> float:
        return self.c / math.sqrt(days)

    def to_dict(self) -> dict:
        return {"design": self.design, "units": self.units, "G": self.units_per_day,
                "sigma": self.sigma, "baseline_yield": self.baseline_yield, "c": self.c,
                "points": [{"days": t, "relative": r, "absolute": a} for t, r, a in self.points]}


def power_multiplier(alpha: float = 0.05, power: float = 0.80) -> float:
    """``z_{1-alpha/2} + z_{power}``."""
    nd = NormalDist()
    return nd.inv_cdf(1 - alpha / 2) + nd.inv_cdf(power)


def mde_curve(panel: Panel, design: str, durations: Sequence[float] = (1, 7, 14, 28),
              alpha: float = 0.05, power: float = 0.80) -> MdeCurve:
    """Relative and absolute MDE over ``durations`` for one assignment design.

    Baseline yield per opportunity is aggregated to one-day assignment units;
    ``sigma`` is their sample standard deviation and ``G`` the mean number of
    units per day.
    """
    if design not in MDE_DESIGNS:
        raise DesignError(f"unknown design {design!r}")
    ctx = panel.context(MDE_DESIGNS[design])
    _, inverse = np.unique(ctx, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    c = panel.columns
    y = np.where(c["filled"] == 1, c["pay"], 0).astype(np.float64)
    counts = np.bincount(inverse)
    unit_yield = np.bincount(inverse, weights=y) / counts
    units = len(counts)
    n_days = len(np.unique(c["day"]))
    g = units / n_days
    if units < 2 or g < 2:
        raise DesignError(f"{design}: need at least two assignment units per day, got {g:.2f}")
    sigma = float(np.std(unit_yield, ddof=1))
    y0 = baseline_value_total(panel) / len(panel)
    if y0 <= 0:
        raise DesignError("baseline yield is zero")
    mde_abs_1 = power_multiplier(alpha, power) * 2.0 * sigma / math.sqrt(g)
    c_d = mde_abs_1 / y0
    rel = [c_d / math.sqrt(t) for t in durations]
    pts = tuple((float(t), r, y0 * r) for t, r in zip(durations, rel))
    return MdeCurve(design, units, g, sigma, y0, c_d, pts)


# --------------------------------------------------------------------------- ablation

EVIDENCE_CLASSES = ("replay", "guardrails", "ope", "support", "season3_validation",
                    "response_sensitivity", "interference_propensity")


@dataclass(frozen=True)
class AblationRule:
    name: str
    classes: tuple
    criterion: str
    requires: tuple = ()


DEFAULT_RULES = (
    AblationRule("replay_only", ("replay",), "replay_lift"),
    AblationRule("replay_guardrails", ("replay", "guardrails"), "replay_lift", ("guardrails",)),
    AblationRule("ope_mean_only", ("ope",), "dr_mean_lift"),
    AblationRule("ope_lower_tail_only", ("ope", "support"), "dr_p10_lift", ("support",)),
    AblationRule("season3_replay_only", ("replay", "season3_validation"), "validation_lift"),
    AblationRule("full_dss", EVIDENCE_CLASSES, "full"),
)


@dataclass(frozen=True)
class AblationEvidence:
    """Per-policy criteria for the simplified rules plus the full-DSS outcome."""

    replay_lift: Mapping[str, float]
    guardrails_pass: Mapping[str, bool]
    dr_mean_lift: Mapping[str, float]
    dr_p10_lift: Mapping[str, float]
    support_pass: Mapping[str, bool]
    validation_lift: Mapping[str, float]
    full_selected: str | None
    full_gates: GateVector | None
    measurement_failure: bool = False


def _number(pid: str) -> int:
    digits = "".join(ch for ch in pid if ch.isdigit())
    return int(digits) if digits else 10**6


def ablation(evidence: AblationEvidence, rules: Sequence[AblationRule] = DEFAULT_RULES
             ) -> list[dict]:
    """Selected policy, action, overclaim flag and unresolved-gate count per decision rule.

    A simplified rule recommends direct launch whenever its best criterion is
    positive, leaving every evidence class it ignores unresolved.
    """
    interference = bool(evidence.full_gates and evidence.full_gates["I"])
    rows = []
    for rule in rules:
        if rule.criterion == "full":
            action = decide(evidence.full_gates, evidence.measurement_failure) \
                if evidence.full_gates is not None else "redesign"
            unresolved = 0
            if action == "launch":
                unresolved = sum(1 for g in GATES if not evidence.full_gates[g])
            rows.append({"rule": rule.name, "evidence": list(rule.classes),
                         "selected": evidence.full_selected, "action": action,
                         "overclaim": action == "launch" and not interference,
                         "unresolved_gates": unresolved})
            continue
        scores: Mapping[str, float] = getattr(evidence, rule.criterion)
        pool = [pid for pid, v in scores.items() if v is not None and math.isfinite(v)]
        if "guardrails" in rule.requires:
            pool = [p for p in pool if evidence.guardrails_pass.get(p)]
        if "support" in rule.requires:
            pool = [p for p in pool if evidence.support_pass.get(p)]
        pool.sort(key=lambda p: (-scores[p], _number(p), p))
        selected = pool[0] if pool else None
        favorable = selected is not None and scores[selected] > 0
        action = "direct_launch" if favorable else "no_action"
        unresolved = len(EVIDENCE_CLASSES) - len(set(rule.classes)) if favorable else 0
        rows.append({"rule": rule.name, "evidence": list(rule.classes), "selected": selected,
                     "action": action, "overclaim": favorable and not interference,
                     "unresolved_gates": unresolved})
    return rows
