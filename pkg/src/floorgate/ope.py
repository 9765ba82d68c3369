"""Support-aware off-policy evaluation: DM / IPW / DR, weight diagnostics, cross-fitting."""
from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from statistics import NormalDist
from typing import Iterable, Mapping, Sequence

import numpy as np

from . import kernels, rng
from .errors import ConfigError, EmptyFeasibleSetError, OverlapError, SupportError
from .nuisance import LoggedActionPanel, ModelConfig, fit_outcome_models
from .policy import PolicyCatalog

METHODS = ("DM", "IPW", "DR")
DEFAULT_CAPS = (1.0, 2.0, 5.0, 10.0, math.inf)
_FOLD_STREAM = 601
_BOOT_STREAM = 602


def _target_index(logged: LoggedActionPanel, target: str) -> int:
    if target not in logged.action_ids:
        raise SupportError(f"target {target} is not in the logged action set {logged.action_ids}")
    return logged.action_index(target)


def importance_weights(logged: LoggedActionPanel, target: str) -> np.ndarray:
    """``1{A_i = pi(X_i)} / e(pi(X_i) | X_i)`` for a deterministic target."""
    a = _target_index(logged, target)
    match = logged.actions == a
    prop = logged.probs[a]
    if match.any() and prop <= 0:
        raise OverlapError(f"matched rows for {target} carry propensity {prop}")
    return np.where(match, 1.0 / prop if prop > 0 else 0.0, 0.0)


@dataclass(frozen=True)
class ScoreParts:
    """Per-row ingredients of the DM, IPW and DR scores for one target."""

    m_target: np.ndarray
    m_logged: np.ndarray
    weights: np.ndarray
    rewards: np.ndarray

    def dr(self, cap: float = math.inf) -> np.ndarray:
        w = np.minimum(self.weights, cap)
        return self.m_target + w * (self.rewards - self.m_logged)

    def ipw(self, cap: float = math.inf) -> np.ndarray:
        return np.minimum(self.weights, cap) * self.rewards


def score_parts(logged: LoggedActionPanel, target: str, models) -> ScoreParts:
    """``models`` is anything with ``predict_reward(panel, action_id)``."""
    weights = importance_weights(logged, target)
    m_target = np.asarray(models.predict_reward(logged.panel, target), dtype=np.float64)
    m_logged = np.zeros(len(logged))
    for a, pid in enumerate(logged.action_ids):
        mask = logged.actions == a
        if mask.any():
            m_logged[mask] = np.asarray(models.predict_reward(logged.panel, pid),
                                        dtype=np.float64)[mask]
    return ScoreParts(m_target, m_logged, weights, logged.rewards.astype(np.float64))


def estimate_value(logged: LoggedActionPanel, target: str, models=None, method: str = "DR") -> float:
    """Policy value per opportunity by the direct method, IPW or doubly robust score."""
    method = method.upper()
    if method not in METHODS:
        raise ConfigError(f"unknown OPE method {method!r}")
    if method == "IPW":
        return float(np.mean(importance_weights(logged, target) * logged.rewards))
    if models is None:
        raise ConfigError(f"{method} needs an outcome model")
    parts = score_parts(logged, target, models)
    if method == "DM":
        return float(np.mean(parts.m_target))
    return float(np.mean(parts.dr()))


def effective_sample_size(weights) -> float:
    """Kish ESS, ``(sum w)^2 / sum w^2``."""
    w = np.asarray(weights, dtype=np.float64)
    if np.any(w < 0):
        raise ValueError("weights must be non-negative")
    s2 = float(np.dot(w, w))
    if s2 == 0.0:
        raise SupportError("all importance weights are zero")
    return float(w.sum()) ** 2 / s2


def clipping_sweep(logged: LoggedActionPanel, target: str, caps: Sequence[float] = DEFAULT_CAPS,
                   models=None) -> list[dict]:
    """Clipped IPW (and clipped DR when ``models`` is given) for each cap ``c``: ``w -> min(w, c)``."""
    caps = list(caps)
    if any(c <= 0 for c in caps) or caps != sorted(caps):
        raise ConfigError("caps must be positive and ascending")
    weights = importance_weights(logged, target)
    rewards = logged.rewards.astype(np.float64)
    parts = score_parts(logged, target, models) if models is not None else None
    out = []
    for c in caps:
        row = {"cap": c, "ipw": float(np.mean(np.minimum(weights, c) * rewards))}
        if parts is not None:
            row["dr"] = float(np.mean(parts.dr(c)))
        out.append(row)
    return out


def lower_bound_score(lift: float, se: float, alpha: float = 0.10) -> float:
    """One-sided normal lower bound ``lift - z_{1-alpha} * se``."""
    if se < 0:
        raise ValueError("standard error must be non-negative")
    if not 0.0 < alpha < 1.0:
        raise ValueError("alpha must lie in (0, 1)")
    return lift - NormalDist().inv_cdf(1.0 - alpha) * se


# --------------------------------------------------------------------------- cross-fitting


@dataclass(frozen=True)
class CrossfitResult:
    targets: tuple
    baseline: str
    scores: np.ndarray          # (n, 1 + len(targets)); column 0 is the baseline
    point_lift: Mapping[str, float]
    boot_lifts: np.ndarray      # (B, len(targets))
    flagged_folds: Mapping[str, list] = field(default_factory=dict)

    def summary(self, target: str) -> dict:
        j = self.targets.index(target)
        lifts = self.boot_lifts[:, j]
        finite = lifts[np.isfinite(lifts)]
        if len(finite) == 0:
            return {"boot_median": math.nan, "boot_p10": math.nan, "boot_p90": math.nan,
                    "boot_se": math.nan, "point_lift": self.point_lift[target]}
        p10, p50, p90 = np.percentile(finite, [10, 50, 90])
        se = float(np.std(finite, ddof=1)) if len(finite) > 1 else 0.0
        return {"boot_median": float(p50), "boot_p10": float(p10), "boot_p90": float(p90),
                "boot_se": se, "point_lift": self.point_lift[target]}


def fold_ids(n: int, k: int, seed: int) -> np.ndarray:
    """Random balanced fold labels: rank of a uniform key, modulo ``k``."""
    keys = rng.uniform_range(seed, _FOLD_STREAM, n)
    order = np.argsort(keys, kind="stable")
    folds = np.empty(n, dtype=np.int64)
    folds[order] = np.arange(n) % k
    return folds


def crossfit_dr(logged: LoggedActionPanel, targets: str | Sequence[str], catalog: PolicyCatalog,
                model_config: ModelConfig | None = None, k_folds: int = 5, boot_b: int = 200,
                seed: int = 0, baseline: str = "P0") -> CrossfitResult:
    """Out-of-fold DR scores plus a paired row bootstrap of the lift over ``baseline``.

    All targets share the same resampled rows in every replicate.
    """
    if isinstance(targets, str):
        targets = [targets]
    targets = tuple(targets)
    if k_folds < 2:
        raise ConfigError("cross-fitting needs at least two folds")
    if boot_b < 1:
        raise ConfigError("bootstrap needs at least one replicate")
    for t in (baseline,) + targets:
        _target_index(logged, t)
    n = len(logged)
    folds = fold_ids(n, k_folds, seed)
    columns = (baseline,) + targets
    scores = np.zeros((n, len(columns)))
    flagged: dict[str, list] = {}
    for j in range(k_folds):
        held = folds == j
        if not held.any():
            continue
        models = fit_outcome_models(logged.panel.take(~held), catalog, logged.action_ids,
                                    model_config)
        part = logged.take(np.flatnonzero(held))
        for c, t in enumerate(columns):
            sp = score_parts(part, t, models)
            if not np.any(sp.weights > 0):
                flagged.setdefault(t, []).append(j)
                warnings.warn(f"fold {j} has no rows matching {t}", stacklevel=2)
            scores[held, c] = sp.dr()
    means = scores.mean(axis=0)
    point = {t: (float(means[c + 1] / means[0] - 1.0) if means[0] != 0 else math.nan)
             for c, t in enumerate(targets)}
    boot = kernels.bootstrap_means(seed, _BOOT_STREAM, scores, boot_b)
    with np.errstate(divide="ignore", invalid="ignore"):
        lifts = boot[:, 1:] / boot[:, :1] - 1.0
    return CrossfitResult(targets, baseline, scores, point, lifts, flagged)


# --------------------------------------------------------------------------- estimates and ranking


@dataclass(frozen=True)
class SupportGateConfig:
    min_ess_share: float = 0.10
    max_p99_weight: float = 10.0

    def passes(self, ess_share: float, p99_weight: float) -> bool:
        return ess_share >= self.min_ess_share and p99_weight <= self.max_p99_weight


@dataclass(frozen=True)
class OpeEstimate:
    policy_id: str
    n: int
    v_dm: float
    v_ipw: float
    v_dr: float
    lift_dr: float
    ess: float
    ess_share: float
    p99_weight: float
    clip_sweep: tuple
    boot_median: float
    boot_p10: float
    boot_p90: float
    boot_se: float
    crossfit_lift: float
    lower_bound: float
    matched: int

    def to_dict(self) -> dict:
        d = dict(self.__dict__)
        d["clip_sweep"] = [dict(r, cap=("inf" if math.isinf(r["cap"]) else r["cap"]))
                           for r in self.clip_sweep]
        return d


def evaluate_policies(logged: LoggedActionPanel, targets: Sequence[str], models,
                      catalog: PolicyCatalog, *, model_config: ModelConfig | None = None,
                      caps: Sequence[float] = DEFAULT_CAPS, k_folds: int = 5, boot_b: int = 200,
                      alpha: float = 0.10, seed: int = 0, baseline: str = "P0",
                      crossfit: CrossfitResult | None = None) -> dict[str, OpeEstimate]:
    """Full diagnostic bundle for every target, sharing one cross-fit bootstrap."""
    targets = [t for t in targets if t != baseline]
    if crossfit is None:
        crossfit = crossfit_dr(logged, targets, catalog, model_config, k_folds, boot_b, seed, baseline)
    v_base_dr = estimate_value(logged, baseline, models, "DR")
    out = {}
    for t in targets:
        parts = score_parts(logged, t, models)
        w = parts.weights
        matched = int(np.count_nonzero(w))
        ess = effective_sample_size(w) if matched else 0.0
        s = crossfit.summary(t)
        v_dr = float(np.mean(parts.dr()))
        out[t] = OpeEstimate(
            policy_id=t, n=len(logged), v_dm=float(np.mean(parts.m_target)),
            v_ipw=float(np.mean(parts.ipw())), v_dr=v_dr,
            lift_dr=v_dr / v_base_dr - 1.0 if v_base_dr else math.nan,
            ess=ess, ess_share=ess / len(logged), p99_weight=float(np.percentile(w, 99)),
            clip_sweep=tuple(clipping_sweep(logged, t, caps, models)),
            boot_median=s["boot_median"], boot_p10=s["boot_p10"], boot_p90=s["boot_p90"],
            boot_se=s["boot_se"], crossfit_lift=s["point_lift"],
            lower_bound=lower_bound_score(s["point_lift"], s["boot_se"], alpha)
            if math.isfinite(s["boot_se"]) else math.nan,
            matched=matched,
        )
    return out


def _policy_number(pid: str) -> int:
    digits = "".join(ch for ch in pid if ch.isdigit())
    return int(digits) if digits else 10**6


def conservative_score(est: OpeEstimate, mode: str = "bootstrap") -> float:
    if mode == "bootstrap":
        return est.boot_p10
    if mode == "z":
        return est.lower_bound
    raise ConfigError(f"unknown ranking mode {mode!r}")


def rank_conservative(estimates: Mapping[str, OpeEstimate], feasible: Iterable[str],
                      mode: str = "bootstrap") -> list[str]:
    """Guardrail-feasible policies by conservative lift; the head is the validation priority."""
    if hasattr(feasible, "feasible"):
        feasible = feasible.feasible
    pool = [pid for pid in feasible if pid in estimates]
    if not pool:
        raise EmptyFeasibleSetError("no guardrail-feasible policy has OPE evidence")

    def key(pid):
        score = conservative_score(estimates[pid], mode)
        score = score if math.isfinite(score) else -math.inf
        return (-score, -estimates[pid].ess_share, _policy_number(pid), pid)

    return sorted(pool, key=key)


# --------------------------------------------------------------------------- segments


@dataclass(frozen=True)
class SegmentLift:
    dimension: str
    value: str
    n_rows: int
    dr_lift: float
    flag_large_negative: bool

    def to_dict(self) -> dict:
        return dict(self.__dict__)


def segment_heterogeneity(logged: LoggedActionPanel, target: str, models=None,
                          dimensions: Sequence[str] = ("exchange", "region"), *,
                          min_cell: int = 1000, baseline: str = "P0",
                          negative_threshold: float = -0.05,
                          scores: np.ndarray | None = None) -> list[SegmentLift]:
    """DR lift per segment cell; cells smaller than ``min_cell`` are pooled into ``other``.

    ``scores`` may carry precomputed per-row ``(baseline, target)`` DR scores,
    e.g. the out-of-fold columns of a :class:`CrossfitResult`.
    """
    if scores is None:
        if models is None:
            raise ConfigError("segment lifts need models or precomputed scores")
        base = score_parts(logged, baseline, models).dr()
        tgt = score_parts(logged, target, models).dr()
    else:
        base, tgt = scores[:, 0], scores[:, 1]
    out = []
    for dim in dimensions:
        values = logged.panel.context([dim])[:, 0]
        uniq, inverse, counts = np.unique(values, return_inverse=True, return_counts=True)
        big = counts >= min_cell
        groups = [(str(v), inverse == j) for j, v in enumerate(uniq) if big[j]]
        small = np.isin(inverse, np.flatnonzero(~big))
        if small.any():
            groups.append(("other", small))
        for label, mask in groups:
            b = base[mask].mean()
            lift = float(tgt[mask].mean() / b - 1.0) if b != 0 else math.nan
            out.append(SegmentLift(dim, label, int(mask.sum()), lift,
                                   bool(math.isfinite(lift) and lift < negative_threshold)))
    return out
