"""Outcome models, calibration diagnostics and the simulated known-propensity logger."""
from __future__ import annotations

import warnings
from dataclasses import asdict, dataclass, field
from typing import Mapping, Sequence

import numpy as np

from . import rng
from .errors import ConfigError, EmptyPanelError
from .panel import Panel
from .policy import PolicyCatalog
from .replay import row_rewards, row_value_proxy

DEFAULT_KEYS = ("exchange", "region", "advertiser", "dow")
_LOGGER_STREAM = 501


def row_hash(ctx: np.ndarray) -> np.ndarray:
    """64-bit key per context row (SplitMix64 chain over the columns)."""
    ctx = np.asarray(ctx, dtype=np.int64)
    h = np.zeros(len(ctx), dtype=np.uint64)
    with np.errstate(over="ignore"):
        for j in range(ctx.shape[1]):
            h = rng._mix(h ^ (ctx[:, j].astype(np.uint64) + np.uint64(j + 1) * rng.GOLDEN))
    return h


@dataclass(frozen=True, eq=False)
class BinnedMeanModel:
    """Cell means over exact context tuples with a global fallback.

    With ``smoothing = a > 0`` each cell mean is shrunk toward the global
    mean by ``a`` pseudo-observations: ``(sum + a * g) / (count + a)``.
    """

    cell_keys: np.ndarray
    cell_means: np.ndarray
    cell_counts: np.ndarray
    global_mean: float
    smoothing: float = 0.0

    @classmethod
    def fit(cls, ctx: np.ndarray, y: np.ndarray, smoothing: float = 0.0) -> "BinnedMeanModel":
        y = np.asarray(y, dtype=np.float64)
        if len(y) == 0:
            return cls(np.zeros(0, np.uint64), np.zeros(0), np.zeros(0, np.int64), 0.0, smoothing)
        h = row_hash(ctx)
        keys, inverse, counts = np.unique(h, return_inverse=True, return_counts=True)
        if len(keys) != len(np.unique(np.asarray(ctx), axis=0)):
            raise ConfigError("context hash collision; widen the key encoding")
        sums = np.bincount(inverse, weights=y, minlength=len(keys))
        g = float(y.mean())
        means = (sums + smoothing * g) / (counts + smoothing)
        return cls(keys, means, counts, g, smoothing)

    def predict(self, ctx: np.ndarray) -> np.ndarray:
        h = row_hash(ctx)
        if len(self.cell_keys) == 0:
            return np.full(len(h), self.global_mean)
        idx = np.minimum(np.searchsorted(self.cell_keys, h), len(self.cell_keys) - 1)
        found = self.cell_keys[idx] == h
        return np.where(found, self.cell_means[idx], self.global_mean)

    def same_as(self, other: "BinnedMeanModel") -> bool:
        return (np.array_equal(self.cell_keys, other.cell_keys)
                and np.array_equal(self.cell_means, other.cell_means)
                and self.global_mean == other.global_mean)


@dataclass(frozen=True)
class ModelConfig:
    keys: tuple = DEFAULT_KEYS
    smoothing: float = 1.0

    def __post_init__(self):
        if not self.keys:
            raise ConfigError("outcome models need at least one context key")
        if self.smoothing < 0:
            raise ConfigError("smoothing must be non-negative")

    def to_dict(self) -> dict:
        return {"keys": list(self.keys), "smoothing": self.smoothing}


@dataclass(frozen=True, eq=False)
class OutcomeModelSet:
    """Fill / click probabilities and per-action reward and value-proxy regressions.

    ``reward_models[a]`` predicts the replay yield of a row under policy
    ``a`` (the outcome model ``m(X, a)`` used by DM and DR).
    """

    keys: tuple
    fill_model: BinnedMeanModel
    ctr_model: BinnedMeanModel
    reward_models: Mapping[str, BinnedMeanModel]
    value_models: Mapping[str, BinnedMeanModel]

    @property
    def action_ids(self) -> tuple:
        return tuple(self.reward_models)

    def predict_fill(self, panel: Panel) -> np.ndarray:
        return self.fill_model.predict(panel.context(self.keys))

    def predict_ctr(self, panel: Panel) -> np.ndarray:
        return self.ctr_model.predict(panel.context(self.keys))

    def predict_reward(self, panel: Panel, action_id: str) -> np.ndarray:
        return self.reward_models[action_id].predict(panel.context(self.keys))

    def predict_value(self, panel: Panel, action_id: str) -> np.ndarray:
        return self.value_models[action_id].predict(panel.context(self.keys))

    def same_as(self, other: "OutcomeModelSet") -> bool:
        if self.keys != other.keys or self.action_ids != other.action_ids:
            return False
        pairs = [(self.fill_model, other.fill_model), (self.ctr_model, other.ctr_model)]
        pairs += [(self.reward_models[a], other.reward_models[a]) for a in self.action_ids]
        pairs += [(self.value_models[a], other.value_models[a]) for a in self.action_ids]
        return all(x.same_as(y) for x, y in pairs)


def fit_outcome_models(train: Panel, catalog: PolicyCatalog, actions: Sequence[str],
                       config: ModelConfig | None = None) -> OutcomeModelSet:
    """Fit every nuisance model on ``train`` only."""
    config = config or ModelConfig()
    if len(train) == 0:
        raise EmptyPanelError("cannot fit outcome models on an empty panel")
    ctx = train.context(config.keys)
    c = train.columns
    filled = c["filled"] == 1
    fill = BinnedMeanModel.fit(ctx, c["filled"], config.smoothing)
    ctr = BinnedMeanModel.fit(ctx[filled], c["clicked"][filled], config.smoothing)
    reward, value = {}, {}
    for a in actions:
        spec = catalog[a]
        reward[a] = BinnedMeanModel.fit(ctx, row_rewards(train, spec, catalog))
        value[a] = BinnedMeanModel.fit(ctx, row_value_proxy(train, spec, catalog))
    return OutcomeModelSet(tuple(config.keys), fill, ctr, reward, value)


# --------------------------------------------------------------------------- calibration


@dataclass(frozen=True)
class CalibrationBin:
    mean_prediction: float
    mean_outcome: float
    count: int


def calibration_bins(pred, outcome, n_bins: int = 10) -> list[CalibrationBin]:
    """Equal-frequency bins over predictions (stable sort, ``np.array_split`` sizes)."""
    pred = np.asarray(pred, dtype=np.float64)
    outcome = np.asarray(outcome, dtype=np.float64)
    n = len(pred)
    if n == 0:
        raise EmptyPanelError("no held-out rows to calibrate on")
    if n_bins > n:
        warnings.warn(f"{n_bins} bins requested for {n} rows; using {n}", stacklevel=2)
        n_bins = n
    order = np.argsort(pred, kind="stable")
    return [CalibrationBin(float(pred[ix].mean()), float(outcome[ix].mean()), int(len(ix)))
            for ix in np.array_split(order, n_bins)]


def max_gap(bins: Sequence[CalibrationBin], min_bin: int = 1) -> float:
    gaps = [abs(b.mean_prediction - b.mean_outcome) for b in bins if b.count >= min_bin]
    return max(gaps, default=0.0)


@dataclass(frozen=True)
class CalibrationReport:
    bins: Mapping[str, list]
    min_bin: int = 1

    @property
    def max_gap(self) -> dict[str, float]:
        return {name: max_gap(b, self.min_bin) for name, b in self.bins.items()}

    def rows(self) -> list[dict]:
        return [{"model": name, "bin": j, **asdict(b)}
                for name, bins in self.bins.items() for j, b in enumerate(bins)]

    def to_dict(self) -> dict:
        return {"max_gap": self.max_gap, "min_bin": self.min_bin,
                "bins": {k: [asdict(b) for b in v] for k, v in self.bins.items()}}


def calibration_report(models: OutcomeModelSet, test: Panel, n_bins: int = 10,
                       min_bin: int = 1, status_quo: str = "P0") -> CalibrationReport:
    """Held-out calibration for fill, click, payment and value-proxy models."""
    c = test.columns
    filled = c["filled"] == 1
    bins = {"fill": calibration_bins(models.predict_fill(test), c["filled"], n_bins)}
    if filled.any():
        held = test.take(filled)
        bins["ctr"] = calibration_bins(models.predict_ctr(held), held.columns["clicked"], n_bins)
    if status_quo in models.reward_models:
        realized = np.where(filled, c["pay"], 0)
        bins["pay"] = calibration_bins(models.predict_reward(test, status_quo), realized, n_bins)
        proxy = np.where(filled, c["clicked"].astype(np.int64) + 10 * c["converted"].astype(np.int64), 0)
        bins["value"] = calibration_bins(models.predict_value(test, status_quo), proxy, n_bins)
    return CalibrationReport(bins, min_bin)


# --------------------------------------------------------------------------- logger


@dataclass(frozen=True)
class LoggerConfig:
    """Action distribution ``eps/K + (1 - eps) * ((1 - tilt)/K + tilt * 1{a = status quo})``."""

    epsilon: float = 0.2
    tilt: float = 0.25
    min_propensity: float = 1e-3
    status_quo: str = "P0"

    def __post_init__(self):
        if not 0.0 < self.epsilon <= 1.0:
            raise ConfigError("logger epsilon must lie in (0, 1]")
        if not 0.0 <= self.tilt <= 1.0:
            raise ConfigError("logger tilt must lie in [0, 1]")
        if self.min_propensity <= 0:
            raise ConfigError("propensity floor must be positive")

    def probabilities(self, action_ids: Sequence[str]) -> np.ndarray:
        k = len(action_ids)
        probs = np.full(k, 1.0 / k)
        if self.status_quo in action_ids and k > 1:
            sq = np.array([a == self.status_quo for a in action_ids], dtype=np.float64)
            probs = self.epsilon / k + (1 - self.epsilon) * ((1 - self.tilt) / k + self.tilt * sq)
        return probs

    def to_dict(self) -> dict:
        return asdict(self)


@dataclass(frozen=True, eq=False)
class LoggedActionPanel:
    """Rows of ``panel`` with the sampled action, its exact sampling probability and the reward."""

    panel: Panel
    action_ids: tuple
    probs: np.ndarray
    actions: np.ndarray
    rewards: np.ndarray
    seed: int = 0
    config: LoggerConfig = field(default_factory=LoggerConfig)

    def __len__(self) -> int:
        return len(self.actions)

    @property
    def propensities(self) -> np.ndarray:
        return self.probs[self.actions]

    def action_index(self, policy_id: str) -> int:
        return self.action_ids.index(policy_id)

    def take(self, index) -> "LoggedActionPanel":
        return LoggedActionPanel(self.panel.take(index), self.action_ids, self.probs,
                                 self.actions[index], self.rewards[index], self.seed, self.config)

    def rows(self) -> list[dict]:
        p = self.propensities
        return [{"row": i, "action": self.action_ids[a], "propensity": float(p[i]),
                 "reward": int(r)} for i, (a, r) in enumerate(zip(self.actions.tolist(),
                                                                 self.rewards.tolist()))]


def simulate_logger(panel: Panel, shortlist: Sequence[str], catalog: PolicyCatalog,
                    config: LoggerConfig | None = None, seed: int = 0) -> LoggedActionPanel:
    """Sample one shortlist action per row from a recorded categorical distribution."""
    config = config or LoggerConfig()
    action_ids = tuple(dict.fromkeys(shortlist))
    if not action_ids:
        raise ConfigError("logger shortlist is empty")
    probs = config.probabilities(action_ids)
    if np.any(probs <= 0) or np.any(probs < config.min_propensity):
        raise ConfigError(f"logger propensities {probs} violate the floor {config.min_propensity}")
    n = len(panel)
    u = rng.uniform_range(seed, _LOGGER_STREAM, n)
    actions = np.minimum(np.searchsorted(np.cumsum(probs), u, side="right"), len(probs) - 1)
    rewards = np.zeros(n, dtype=np.int64)
    for a, pid in enumerate(action_ids):
        mask = actions == a
        if mask.any():
            rewards[mask] = row_rewards(panel, catalog[pid], catalog)[mask]
    return LoggedActionPanel(panel, action_ids, probs, actions.astype(np.int64), rewards, seed, config)
