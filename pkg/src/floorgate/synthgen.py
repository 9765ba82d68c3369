"""Synthetic auction panels with known ground truth, plus the brute-force replay oracle."""
from __future__ import annotations

from dataclasses import asdict, dataclass, field
from fractions import Fraction
from typing import Mapping, Sequence

import numpy as np

from . import rng
from .errors import ConfigError, ContractError
from .panel import Panel

MS_PER_DAY = 86_400_000

# stream ids, fixed so panels are reproducible from the seed alone
_S_EXCHANGE, _S_REGION, _S_ADVERTISER, _S_SLOT, _S_DEVICE = 1, 2, 3, 4, 5
_S_FLOOR_ZERO, _S_DEMAND, _S_PAY, _S_CLICK, _S_CONV, _S_FLOOR_UNIFORM = 7, 9, 10, 11, 12, 13
_N_BID, _N_FLOOR = 100, 101


@dataclass(frozen=True)
class GenConfig:
    """Generator parameters.

    Bids are log-normal (``exp(bid_mu + shift[exchange] + bid_sigma * z)``),
    rounded to integer units. Logged floors are zero with probability
    ``floor_zero_share`` and otherwise either an independent log-normal draw
    (``floor_mode="lognormal"``) or a uniform fraction of the bid
    (``floor_mode="below_bid"``, floors never exceed bids). A row fills iff
    ``bid >= floor`` and an independent demand coin with probability
    ``fill_prob`` (scalar, or per-exchange mapping) lands heads. Payments
    sit between floor and bid at ``floor + (bid - floor) * u**pay_exponent``;
    exponents above one push clearing prices toward the floor.
    """

    n_rows: int = 20_000
    n_days: int = 7
    seed: int = 1
    window_id: str = "synthetic"
    day_start: int = 0
    bid_mu: float = 4.8
    bid_sigma: float = 0.7
    exchange_bid_shift: Mapping[int, float] = field(default_factory=dict)
    floor_mode: str = "lognormal"
    floor_zero_share: float = 0.5
    floor_mu: float = 3.4
    floor_sigma: float = 0.6
    fill_prob: float | Mapping[int, float] = 0.25
    click_rate: float = 0.001
    conversion_rate: float = 0.0002
    pay_exponent: float = 6.0
    n_exchanges: int = 3
    n_regions: int = 8
    n_advertisers: int = 5
    n_slots: int = 4
    n_devices: int = 3

    def __post_init__(self):
        if self.n_rows < 1 or self.n_days < 1:
            raise ConfigError("n_rows and n_days must be at least 1")
        probs = [self.floor_zero_share, self.click_rate, self.conversion_rate]
        probs += list(self.fill_prob.values()) if isinstance(self.fill_prob, Mapping) else [self.fill_prob]
        if any(not 0.0 <= p <= 1.0 for p in probs):
            raise ConfigError("probabilities must lie in [0, 1]")
        if self.bid_sigma < 0 or self.floor_sigma < 0 or self.pay_exponent <= 0:
            raise ConfigError("log-normal sigma must be non-negative and pay_exponent positive")
        if self.floor_mode not in ("lognormal", "below_bid"):
            raise ConfigError(f"unknown floor_mode {self.floor_mode!r}")
        for name in ("n_exchanges", "n_regions", "n_advertisers", "n_slots", "n_devices"):
            if getattr(self, name) < 1:
                raise ConfigError(f"{name} must be positive")

    @classmethod
    def from_dict(cls, data: Mapping) -> "GenConfig":
        data = dict(data)
        for key in ("exchange_bid_shift", "fill_prob"):
            if isinstance(data.get(key), Mapping):
                data[key] = {int(k): float(v) for k, v in data[key].items()}
        unknown = set(data) - set(cls.__dataclass_fields__)
        if unknown:
            raise ConfigError(f"unknown generator keys {sorted(unknown)}")
        return cls(**data)

    def to_dict(self) -> dict:
        d = asdict(self)
        for key in ("exchange_bid_shift", "fill_prob"):
            if isinstance(d[key], Mapping):
                d[key] = {str(k): v for k, v in d[key].items()}
        return d


def _categorical(seed: int, stream: int, n: int, k: int) -> np.ndarray:
    return np.minimum((rng.uniform_range(seed, stream, n) * k).astype(np.int64), k - 1)


def generate_panel(config: GenConfig) -> Panel:
    """Draw a panel from ``config``; bit-identical for a fixed seed."""
    n, seed = config.n_rows, config.seed
    idx = np.arange(n, dtype=np.int64)
    day_off = (idx * config.n_days) // n
    day = config.day_start + day_off
    starts = np.searchsorted(day_off, day_off, side="left")
    counts = np.bincount(day_off, minlength=config.n_days)[day_off]
    timestamp = day * MS_PER_DAY + ((idx - starts) * MS_PER_DAY) // counts

    exchange = 1 + _categorical(seed, _S_EXCHANGE, n, config.n_exchanges)
    region = _categorical(seed, _S_REGION, n, config.n_regions)
    advertiser = 1000 + _categorical(seed, _S_ADVERTISER, n, config.n_advertisers)
    slot = _categorical(seed, _S_SLOT, n, config.n_slots)
    device = _categorical(seed, _S_DEVICE, n, config.n_devices)

    shift = np.zeros(n)
    for ex, s in config.exchange_bid_shift.items():
        shift[exchange == int(ex)] = s
    z_bid = rng.normal_range(seed, _N_BID, n)
    bid = np.floor(np.exp(config.bid_mu + shift + config.bid_sigma * z_bid) + 0.5).astype(np.int64)

    if config.floor_mode == "lognormal":
        z_floor = rng.normal_range(seed, _N_FLOOR, n)
        floor = np.floor(np.exp(config.floor_mu + config.floor_sigma * z_floor) + 0.5).astype(np.int64)
    else:
        u = rng.uniform_range(seed, _S_FLOOR_UNIFORM, n)
        floor = np.floor(bid * 0.9 * u).astype(np.int64)
    zero = rng.uniform_range(seed, _S_FLOOR_ZERO, n) < config.floor_zero_share
    floor[zero] = 0

    if isinstance(config.fill_prob, Mapping):
        phi = np.zeros(n)
        for ex, p in config.fill_prob.items():
            phi[exchange == int(ex)] = p
    else:
        phi = np.full(n, float(config.fill_prob))
    demand = rng.uniform_range(seed, _S_DEMAND, n) < phi
    filled = (bid >= floor) & demand

    u_pay = rng.uniform_range(seed, _S_PAY, n)
    pay = np.where(filled, floor + np.floor((bid - floor) * u_pay ** config.pay_exponent).astype(np.int64), 0)
    clicked = filled & (rng.uniform_range(seed, _S_CLICK, n) < config.click_rate)
    converted = filled & (rng.uniform_range(seed, _S_CONV, n) < config.conversion_rate)

    return Panel.from_columns(
        window_id=config.window_id, timestamp=timestamp, day=day, exchange=exchange,
        region=region, advertiser=advertiser, slot=slot, device=device, bid=bid, floor=floor,
        pay=pay, filled=filled, clicked=clicked, converted=converted,
    )


def oracle_replay_value(panel: Panel, floors: Sequence[int]):
    """Straight-line replay of candidate ``floors`` over ``panel``.

    Returns ``(value_per_opportunity, retained, retained_clicks, retained_conversions)``
    with the value as an exact :class:`~fractions.Fraction`. Deliberately
    unoptimised: one Python loop, Python integers, no sharding.
    """
    c = panel.columns
    n = len(panel)
    if len(floors) != n:
        raise ContractError(f"expected {n} floors, got {len(floors)}")
    floors = floors.tolist() if hasattr(floors, "tolist") else [int(f) for f in floors]
    total = retained = clicks = conversions = 0
    rows = zip(c["bid"].tolist(), c["floor"].tolist(), c["pay"].tolist(), c["filled"].tolist(),
               c["clicked"].tolist(), c["converted"].tolist(), floors)
    for bid, logged, pay, filled, clicked, converted, f in rows:
        if f < logged:
            raise ContractError(f"candidate floor {f} below logged floor {logged}")
        if filled and bid >= f:
            total += pay if pay > f else f
            retained += 1
            clicks += clicked
            conversions += converted
    value = Fraction(total, n) if n else Fraction(0)
    return value, retained, clicks, conversions
