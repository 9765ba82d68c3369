"""The P0-P18 reserve/floor policy catalog."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass

import numpy as np

from . import kernels
from .errors import ConfigError
from .panel import AuctionRecord, Panel, QuantileSet

FAMILIES = {
    "baseline": kernels.BASELINE,
    "uniform_pct": kernels.UNIFORM_PCT,
    "absolute_add": kernels.ABSOLUTE_ADD,
    "min_positive": kernels.MIN_POSITIVE,
    "min_all": kernels.MIN_ALL,
    "margin_add": kernels.MARGIN_ADD,
    "hybrid_min_margin": kernels.HYBRID,
}

PCT_RANGE = (5, 10, 15, 20, 30)
ADD_RANGE = (5, 10, 20)
GAP_RANGE = (25, 50, 100)
QUANTILE_KEYS = ("q25", "q50", "q75")


@dataclass(frozen=True)
class PolicySpec:
    """One deterministic floor rule.

    Margin gates compare ``bid - logged_floor`` against ``gap``. Quantile
    families read ``quantile`` from the catalog's positive-floor or all-floor
    set according to ``population``.
    """

    id: str
    family: str
    display_name: str = ""
    pct: int = 0
    add: int = 0
    quantile: str | None = None
    gap: int = 0
    population: str | None = None

    def __post_init__(self):
        if self.family not in FAMILIES:
            raise ConfigError(f"unknown policy family {self.family!r}")

    @property
    def code(self) -> int:
        return FAMILIES[self.family]

    @property
    def number(self) -> int:
        digits = "".join(ch for ch in self.id if ch.isdigit())
        return int(digits) if digits else 10**6

    def check_ranges(self) -> None:
        f = self.family
        if f == "uniform_pct" and self.pct not in PCT_RANGE:
            raise ConfigError(f"{self.id}: pct {self.pct} outside {PCT_RANGE}")
        if f in ("absolute_add", "margin_add") and self.add not in ADD_RANGE:
            raise ConfigError(f"{self.id}: add {self.add} outside {ADD_RANGE}")
        if f in ("margin_add", "hybrid_min_margin") and self.gap not in GAP_RANGE:
            raise ConfigError(f"{self.id}: gap {self.gap} outside {GAP_RANGE}")
        if f in ("min_positive", "min_all", "hybrid_min_margin") and self.quantile not in QUANTILE_KEYS:
            raise ConfigError(f"{self.id}: quantile {self.quantile!r} outside {QUANTILE_KEYS}")

    def to_dict(self) -> dict:
        params = {}
        if self.family == "uniform_pct":
            params["pct"] = self.pct
        if self.family in ("absolute_add", "margin_add"):
            params["add"] = self.add
        if self.quantile:
            params["quantile"] = self.quantile
            params["population"] = self.population
        if self.family in ("margin_add", "hybrid_min_margin"):
            params["gap"] = self.gap
        return {"id": self.id, "family": self.family, "params": params,
                "display_name": self.display_name}


def _specs(hybrid_population: str) -> list[PolicySpec]:
    S = PolicySpec
    return [
        S("P0", "baseline", "Logged Status Quo"),
        S("P1", "uniform_pct", "Uniform +5%", pct=5),
        S("P2", "uniform_pct", "Uniform +10%", pct=10),
        S("P3", "uniform_pct", "Uniform +15%", pct=15),
        S("P4", "uniform_pct", "Uniform +20%", pct=20),
        S("P5", "uniform_pct", "Uniform +30%", pct=30),
        S("P6", "absolute_add", "Add 5 To All Floors", add=5),
        S("P7", "absolute_add", "Add 10 To All Floors", add=10),
        S("P8", "absolute_add", "Add 20 To All Floors", add=20),
        S("P9", "min_positive", "Positive Floors To Q25", quantile="q25", population="positive_floors"),
        S("P10", "min_positive", "Positive Floors To Q50", quantile="q50", population="positive_floors"),
        S("P11", "min_positive", "Positive Floors To Q75", quantile="q75", population="positive_floors"),
        S("P12", "min_all", "All Low Floors To Q25", quantile="q25", population="all_floors"),
        S("P13", "min_all", "All Low Floors To Q50", quantile="q50", population="all_floors"),
        S("P14", "margin_add", "Gap 25 Add 5", add=5, gap=25),
        S("P15", "margin_add", "Gap 50 Add 10", add=10, gap=50),
        S("P16", "margin_add", "Gap 100 Add 20", add=20, gap=100),
        S("P17", "hybrid_min_margin", "Q50 Margin-Gated Floor", quantile="q50", gap=50,
          population=hybrid_population),
        S("P18", "hybrid_min_margin", "Q75 Margin-Gated Floor", quantile="q75", gap=100,
          population=hybrid_population),
    ]


@dataclass(frozen=True)
class PolicyCatalog:
    specs: tuple
    quantiles_positive: QuantileSet
    quantiles_all: QuantileSet

    def __post_init__(self):
        ids = [s.id for s in self.specs]
        if len(set(ids)) != len(ids):
            raise ConfigError("duplicate policy ids in catalog")
        if sum(s.family == "baseline" for s in self.specs) != 1:
            raise ConfigError("catalog needs exactly one baseline policy")

    def __len__(self) -> int:
        return len(self.specs)

    def __iter__(self):
        return iter(self.specs)

    def __getitem__(self, policy_id: str) -> PolicySpec:
        for s in self.specs:
            if s.id == policy_id:
                return s
        raise KeyError(policy_id)

    @property
    def baseline(self) -> PolicySpec:
        return next(s for s in self.specs if s.family == "baseline")

    @property
    def ids(self) -> list[str]:
        return [s.id for s in self.specs]

    def quantile_value(self, spec: PolicySpec) -> int:
        if spec.quantile is None:
            return 0
        qs = self.quantiles_all if spec.population == "all_floors" else self.quantiles_positive
        return qs.get(spec.quantile)

    def to_dict(self) -> dict:
        return {"quantiles_positive": self.quantiles_positive.to_dict(),
                "quantiles_all": self.quantiles_all.to_dict(),
                "policies": [s.to_dict() for s in self.specs]}

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()


def build_catalog(qpos: QuantileSet, qall: QuantileSet,
                  hybrid_population: str = "positive_floors") -> PolicyCatalog:
    specs = _specs(hybrid_population)
    for s in specs:
        s.check_ranges()
    return PolicyCatalog(tuple(specs), qpos, qall)


def floor_rule(spec: PolicySpec, catalog: PolicyCatalog):
    """Scalar rule ``(bid, logged_floor) -> candidate_floor`` for ``spec``."""
    fam = spec.family
    q = catalog.quantile_value(spec)
    pct, add, gap = spec.pct, spec.add, spec.gap
    if fam == "baseline":
        return lambda bid, f0: f0
    if fam == "uniform_pct":
        return lambda bid, f0: (f0 * (100 + pct) + 50) // 100
    if fam == "absolute_add":
        return lambda bid, f0: f0 + add
    if fam == "min_positive":
        return lambda bid, f0: q if 0 < f0 < q else f0
    if fam == "min_all":
        return lambda bid, f0: q if f0 < q else f0
    if fam == "margin_add":
        return lambda bid, f0: f0 + add if bid - f0 >= gap else f0
    if fam == "hybrid_min_margin":
        return lambda bid, f0: (q if f0 < q else f0) if bid - f0 >= gap else f0
    raise ConfigError(f"unknown family {fam!r}")


def apply_policy(spec: PolicySpec, record: AuctionRecord, catalog: PolicyCatalog) -> int:
    """Candidate floor for a single record (scalar reference path)."""
    return floor_rule(spec, catalog)(record.bid, record.floor)


def reference_floors(spec: PolicySpec, panel: Panel, catalog: PolicyCatalog) -> list[int]:
    """Row-by-row candidate floors as Python ints, bypassing the vectorised kernels."""
    rule = floor_rule(spec, catalog)
    return [rule(b, f) for b, f in zip(panel.columns["bid"].tolist(),
                                       panel.columns["floor"].tolist())]


def candidate_floors(spec: PolicySpec, panel: Panel, catalog: PolicyCatalog,
                     rows: slice | None = None) -> np.ndarray:
    """Candidate floor for every row of ``panel`` (or the ``rows`` slice)."""
    c = panel.columns
    sl = rows if rows is not None else slice(None)
    return kernels.candidate_floors(spec.code, c["bid"][sl], c["floor"][sl], spec.pct, spec.add,
                                    catalog.quantile_value(spec), spec.gap)


def verify_non_decreasing(spec: PolicySpec, panel: Panel, catalog: PolicyCatalog) -> bool:
    if len(panel) == 0:
        return True
    return bool(np.all(candidate_floors(spec, panel, catalog) >= panel.columns["floor"]))
