"""Run configuration: nested defaults, a YAML file, then dotted ``key.path=value`` overrides."""
from __future__ import annotations

import copy
import json
from dataclasses import dataclass
from typing import Any, Iterable, Mapping

import yaml

from .errors import ConfigError

DEFAULTS: dict[str, Any] = {
    "data": {
        "discovery": [],
        "validation": [],
        "schema": None,
    },
    "synth": {
        "discovery": {"n_rows": 60_000, "n_days": 7, "seed": 11, "window_id": "discovery"},
        "validation": {"n_rows": 30_000, "n_days": 9, "seed": 12, "day_start": 7,
                       "window_id": "validation"},
    },
    "guardrails": {
        "min_yield_lift": 0.005,
        "min_impression_retention": 0.98,
        "min_daily_impression_retention": 0.98,
        "min_click_retention": 0.97,
        "min_conversion_retention": 0.90,
        "min_value_retention": 0.97,
        "require_daily_positive_lift": True,
    },
    "policy": {
        "hybrid_population": "positive_floors",
    },
    "ope": {
        "shortlist_size": 6,
        "split": [0.6, 0.2, 0.2],
        "keys": ["exchange", "region", "advertiser", "dow"],
        "smoothing": 1.0,
        "epsilon": 0.2,
        "tilt": 0.25,
        "min_propensity": 0.001,
        "k_folds": 5,
        "boot_b": 200,
        "caps": [1, 2, 5, 10, "inf"],
        "alpha": 0.10,
        "mode": "bootstrap",
        "min_ess_share": 0.10,
        "max_p99_weight": 10.0,
        "calibration_bins": 10,
        "segment_dims": ["exchange", "region", "dow"],
        "min_cell": 1000,
        "negative_threshold": -0.05,
    },
    "sensitivity": {
        "min_breakeven_rho": 0.15,
        "rho_points": 31,
        "rho_max": 0.60,
        "support_scales": [1.0, 0.75, 0.5, 0.25, 0.10, 0.05],
    },
    "decision": {
        "r_max": 3,
        "interference_attestation": None,
        "max_quarantine_share": 0.01,
        "mde_designs": ["advertiser", "exchange_hour", "exchange_region", "region_day"],
        "mde_durations": [1, 2, 4, 7, 14, 21, 28],
        "mde_alpha": 0.05,
        "mde_power": 0.80,
    },
    "run": {
        "seed": 20240601,
        "shards": 4,
        "threads": 1,
        "out_dir": None,
        "run_id": None,
    },
}


def _merge(base: dict, update: Mapping, path: str = "") -> None:
    for key, value in update.items():
        where = f"{path}{key}"
        if key not in base:
            raise ConfigError(f"unknown config key {where!r}")
        current = base[key]
        if path == "synth." and (value is None or isinstance(value, Mapping)):
            # generator sections are free-form; GenConfig validates them
            if value is None or current is None:
                base[key] = copy.deepcopy(value)
            else:
                current.update(value)
        elif isinstance(current, dict):
            if not isinstance(value, Mapping):
                raise ConfigError(f"config key {where!r} expects a mapping")
            _merge(current, value, where + ".")
        else:
            base[key] = value


def parse_override(text: str) -> tuple[list[str], Any]:
    if "=" not in text:
        raise ConfigError(f"override {text!r} is not key.path=value")
    key, raw = text.split("=", 1)
    try:
        value = yaml.safe_load(raw)
    except yaml.YAMLError as exc:
        raise ConfigError(f"cannot parse override value {raw!r}") from exc
    return key.strip().split("."), value


@dataclass(frozen=True)
class RunConfig:
    data: dict

    @classmethod
    def load(cls, path=None, overrides: Iterable[str] = (), extra: Mapping | None = None
             ) -> "RunConfig":
        """Defaults, then ``path`` (YAML or JSON), then ``extra``, then ``overrides``."""
        cfg = copy.deepcopy(DEFAULTS)
        if path is not None:
            with open(path) as fh:
                loaded = yaml.safe_load(fh) or {}
            if not isinstance(loaded, Mapping):
                raise ConfigError(f"{path}: top level must be a mapping")
            _merge(cfg, loaded)
        if extra:
            _merge(cfg, extra)
        for text in overrides:
            keys, value = parse_override(text)
            node = {}
            cursor = node
            for k in keys[:-1]:
                cursor[k] = {}
                cursor = cursor[k]
            cursor[keys[-1]] = value
            _merge(cfg, node)
        return cls(cfg)

    def get(self, dotted: str, default=None):
        node = self.data
        for k in dotted.split("."):
            if not isinstance(node, Mapping) or k not in node:
                return default
            node = node[k]
        return node

    def section(self, name: str) -> dict:
        return copy.deepcopy(self.data[name])

    def to_dict(self) -> dict:
        return copy.deepcopy(self.data)

    def to_json(self) -> str:
        return json.dumps(self.data, sort_keys=True)
