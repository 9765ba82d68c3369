"""Columnar auction panels: ingestion, chronological splits, floor quantiles, summaries."""
from __future__ import annotations

import csv
import gzip
import hashlib
import io
import json
import math
import zlib
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from decimal import Decimal, InvalidOperation
from fractions import Fraction
from pathlib import Path
from typing import Iterable, Mapping, NamedTuple, Sequence

import numpy as np

from .errors import ConfigError, EmptyPanelError, QuantileError, SchemaError

CONTEXT_FIELDS = ("exchange", "region", "advertiser", "slot", "device")
MONEY_FIELDS = ("bid", "floor", "pay")
FLAG_FIELDS = ("filled", "clicked", "converted")
INT_FIELDS = ("timestamp", "day") + CONTEXT_FIELDS + MONEY_FIELDS
ALL_FIELDS = INT_FIELDS + FLAG_FIELDS

REQUIRED_FIELDS = ("day", "exchange", "region", "advertiser") + MONEY_FIELDS + FLAG_FIELDS
OPTIONAL_FIELDS = ("timestamp", "slot", "device")

MS_PER_HOUR = 3_600_000


class AuctionRecord(NamedTuple):
    """One logged bid opportunity. Money fields are integer minor units."""

    timestamp: int
    day: int
    exchange: int
    region: int
    advertiser: int
    slot: int
    device: int
    bid: int
    floor: int
    pay: int
    filled: int
    clicked: int
    converted: int


@dataclass(frozen=True)
class QuarantineRow:
    source: str
    line: int
    reason: str
    fields: tuple


@dataclass(frozen=True, eq=False)
class Panel:
    """Immutable column store of :class:`AuctionRecord` rows sorted by ``(day, timestamp)``."""

    columns: Mapping[str, np.ndarray]
    window_id: str = "panel"
    shard_count: int = 1
    quarantine: tuple = ()
    checksums: tuple = ()

    def __post_init__(self):
        if self.shard_count < 1:
            raise ConfigError("shard_count must be positive")
        n = None
        for name in ALL_FIELDS:
            if name not in self.columns:
                raise SchemaError(f"panel is missing column {name!r}")
            col = self.columns[name]
            if n is None:
                n = len(col)
            elif len(col) != n:
                raise SchemaError("panel columns have different lengths")
            col.flags.writeable = False

    @classmethod
    def from_columns(cls, window_id: str = "panel", shard_count: int = 1,
                     quarantine: Iterable[QuarantineRow] = (), checksums: Iterable = (),
                     **cols) -> "Panel":
        """Build a panel from raw columns; rows are stably sorted by ``(day, timestamp)``."""
        n = len(cols["bid"])
        data = {}
        for name in INT_FIELDS:
            if name in cols:
                data[name] = np.asarray(cols[name], dtype=np.int64)
            elif name in OPTIONAL_FIELDS:
                data[name] = np.zeros(n, dtype=np.int64)
            else:
                raise SchemaError(f"missing column {name!r}")
        for name in FLAG_FIELDS:
            data[name] = np.asarray(cols[name], dtype=np.uint8)
        order = np.lexsort((data["timestamp"], data["day"]))
        if not np.array_equal(order, np.arange(n)):
            data = {k: v[order] for k, v in data.items()}
        data = {k: np.ascontiguousarray(v) for k, v in data.items()}
        return cls(data, window_id, shard_count, tuple(quarantine), tuple(checksums))

    def __len__(self) -> int:
        return len(self.columns["bid"])

    def __getattr__(self, name):
        cols = object.__getattribute__(self, "columns")
        if name in cols:
            return cols[name]
        raise AttributeError(name)

    def record(self, i: int) -> AuctionRecord:
        return AuctionRecord(*(int(self.columns[f][i]) for f in ALL_FIELDS))

    def records(self):
        cols = [self.columns[f].tolist() for f in ALL_FIELDS]
        for row in zip(*cols):
            yield AuctionRecord(*row)

    def take(self, index, window_id: str | None = None) -> "Panel":
        """Rows at ``index`` (slice, int array or bool mask); order is preserved."""
        cols = {k: np.ascontiguousarray(v[index]) for k, v in self.columns.items()}
        return Panel(cols, window_id or self.window_id, self.shard_count)

    def with_shards(self, shard_count: int) -> "Panel":
        return Panel(self.columns, self.window_id, shard_count, self.quarantine, self.checksums)

    def shard_bounds(self, shard_count: int | None = None) -> list[tuple[int, int]]:
        """Contiguous, near-equal ``[start, stop)`` row ranges covering the panel."""
        k = shard_count or self.shard_count
        n = len(self)
        edges = [(n * j) // k for j in range(k + 1)]
        return [(edges[j], edges[j + 1]) for j in range(k)]

    @property
    def days(self) -> np.ndarray:
        return np.unique(self.columns["day"])

    @property
    def hour(self) -> np.ndarray:
        return (self.columns["timestamp"] // MS_PER_HOUR) % 24

    @property
    def day_of_week(self) -> np.ndarray:
        return day_of_week(self.columns["day"])

    def context(self, keys: Sequence[str]) -> np.ndarray:
        """Integer context matrix ``(n, len(keys))``; accepts derived keys ``dow`` and ``hour``."""
        out = np.empty((len(self), len(keys)), dtype=np.int64)
        for j, key in enumerate(keys):
            if key == "dow":
                out[:, j] = self.day_of_week
            elif key == "hour":
                out[:, j] = self.hour
            elif key in self.columns:
                out[:, j] = self.columns[key]
            else:
                raise ConfigError(f"unknown context key {key!r}")
        return out

    def same_records(self, other: "Panel") -> bool:
        return len(self) == len(other) and all(
            np.array_equal(self.columns[f], other.columns[f]) for f in ALL_FIELDS)

    def digest(self) -> str:
        h = hashlib.sha256()
        for name in ALL_FIELDS:
            h.update(name.encode())
            h.update(np.ascontiguousarray(self.columns[name]).tobytes())
        return h.hexdigest()


def day_of_week(day: np.ndarray) -> np.ndarray:
    """Weekday bucket 0..6; ``YYYYMMDD`` keys are read as calendar dates, other keys as day numbers."""
    day = np.asarray(day, dtype=np.int64)
    out = np.mod(day, 7)
    calendar = day >= 10_000_000
    if calendar.any():
        d = day[calendar]
        dates = np.array([f"{v // 10000:04d}-{(v // 100) % 100:02d}-{v % 100:02d}" for v in d],
                         dtype="datetime64[D]")
        # 1970-01-01 was a Thursday; shift so Monday is 0.
        out[calendar] = (dates.astype(np.int64) + 3) % 7
    return out


# --------------------------------------------------------------------------- ingestion


@dataclass(frozen=True)
class LogSchema:
    """Column mapping for delimiter-separated logs.

    ``columns`` maps each panel field to a header name or a 0-based column
    index. Money columns are multiplied by ``money_scale`` and must land on
    an integer.
    """

    columns: Mapping[str, str | int] = field(default_factory=lambda: {f: f for f in ALL_FIELDS})
    delimiter: str = "\t"
    header: bool = True
    money_scale: int = 1

    @classmethod
    def from_mapping(cls, data: Mapping) -> "LogSchema":
        data = dict(data)
        cols = data.pop("columns", None)
        if cols is None:
            raise SchemaError("schema needs a 'columns' mapping")
        unknown = set(data) - {"delimiter", "header", "money_scale"}
        if unknown:
            raise SchemaError(f"unknown schema keys {sorted(unknown)}")
        return cls(columns=dict(cols), **data)

    @classmethod
    def load(cls, path) -> "LogSchema":
        with open(path) as fh:
            return cls.from_mapping(json.load(fh))

    def to_dict(self) -> dict:
        return {"columns": dict(self.columns), "delimiter": self.delimiter,
                "header": self.header, "money_scale": self.money_scale}


def _open_text(path: Path, mode: str = "rt"):
    if str(path).endswith(".gz"):
        return gzip.open(path, mode, encoding="utf-8", newline="")
    return open(path, mode, encoding="utf-8", newline="")


def _resolve(schema: LogSchema, header: list[str] | None, source: str) -> dict[str, int]:
    missing = [f for f in REQUIRED_FIELDS if f not in schema.columns]
    if missing:
        raise SchemaError(f"schema does not map required columns {missing}")
    index = {}
    for name, col in schema.columns.items():
        if name not in ALL_FIELDS:
            raise SchemaError(f"schema maps unknown field {name!r}")
        if isinstance(col, int):
            index[name] = col
        elif header is None:
            if str(col).isdigit():
                index[name] = int(col)
            else:
                raise SchemaError(f"column {col!r} named but file has no header")
        elif col in header:
            index[name] = header.index(col)
        else:
            raise SchemaError(f"{source}: required column {col!r} not in header")
    return index


def _parse_money(text: str, scale: int) -> int:
    value = Decimal(text.strip()) * scale
    if value != value.to_integral_value() or not value.is_finite():
        raise InvalidOperation
    return int(value)


def _categorical(text: str) -> int:
    text = text.strip()
    try:
        return int(text)
    except ValueError:
        # non-numeric ids map to a stable 32-bit hash, independent of file order
        return zlib.crc32(text.encode("utf-8"))


def _flag(text: str) -> int:
    text = text.strip().lower()
    if text in ("1", "true", "t", "yes"):
        return 1
    if text in ("0", "false", "f", "no", ""):
        return 0
    raise ValueError(text)


def _read_file(path: Path, schema: LogSchema):
    source = str(path)
    rows = {f: [] for f in ALL_FIELDS}
    bad: list[QuarantineRow] = []
    digest = hashlib.sha256()
    with open(path, "rb") as raw:
        for chunk in iter(lambda: raw.read(1 << 20), b""):
            digest.update(chunk)
    with _open_text(path) as fh:
        reader = csv.reader(fh, delimiter=schema.delimiter, quoting=csv.QUOTE_NONE)
        header = next(reader, None) if schema.header else None
        if schema.header and header is None:
            return rows, bad, (source, digest.hexdigest())
        index = _resolve(schema, header, source)
        width = max(index.values()) + 1
        first = 2 if schema.header else 1
        for line, parts in enumerate(reader, start=first):
            if not parts:
                continue
            reason = _validate_row(parts, index, width, schema.money_scale, rows)
            if reason:
                bad.append(QuarantineRow(source, line, reason, tuple(parts)))
    return rows, bad, (source, digest.hexdigest())


def _validate_row(parts, index, width, scale, rows) -> str | None:
    if len(parts) < width:
        return "short_row"
    try:
        flags = {f: _flag(parts[index[f]]) for f in FLAG_FIELDS}
    except ValueError:
        return "unparseable_flag"
    money = {}
    for f in MONEY_FIELDS:
        text = parts[index[f]].strip()
        if text == "" or text.lower() in ("null", "na", "nan"):
            if f == "pay" and not flags["filled"]:
                money[f] = 0
                continue
            return "missing_pay" if f == "pay" else "unparseable_money"
        try:
            money[f] = _parse_money(text, scale)
        except (InvalidOperation, ValueError):
            return "unparseable_money"
    try:
        ints = {"day": int(parts[index["day"]])}
        ints["timestamp"] = int(parts[index["timestamp"]]) if "timestamp" in index else 0
    except ValueError:
        return "unparseable_field"
    if money["bid"] < 0 or money["floor"] < 0 or money["pay"] < 0:
        return "negative_money"
    if not flags["filled"] and (money["pay"] or flags["clicked"] or flags["converted"]):
        return "unfilled_with_outcome"
    if flags["filled"] and money["bid"] < money["floor"]:
        return "bid_below_floor"
    if flags["converted"] and not flags["filled"]:
        return "unfilled_with_outcome"
    for f in CONTEXT_FIELDS:
        ints[f] = _categorical(parts[index[f]]) if f in index else 0
    for f in ("timestamp", "day") + CONTEXT_FIELDS:
        rows[f].append(ints[f])
    for f in MONEY_FIELDS:
        rows[f].append(money[f])
    for f in FLAG_FIELDS:
        rows[f].append(flags[f])
    return None


def ingest_logs(paths: Sequence, schema: LogSchema | None = None, *, window_id: str = "panel",
                shard_count: int = 1, threads: int = 1,
                quarantine_path=None) -> Panel:
    """Read delimiter-separated (optionally gzipped) logs into a sorted :class:`Panel`.

    Rows breaking the record invariants are not repaired; they are kept on
    ``Panel.quarantine`` and, when ``quarantine_path`` is given, written there
    with a trailing reason column. The result does not depend on ``threads``.
    """
    schema = schema or LogSchema()
    paths = [Path(p) for p in paths]
    for p in paths:
        if not p.exists():
            raise FileNotFoundError(p)
    if threads > 1 and len(paths) > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda p: _read_file(p, schema), paths))
    else:
        parts = [_read_file(p, schema) for p in paths]

    merged = {f: [] for f in ALL_FIELDS}
    quarantine: list[QuarantineRow] = []
    checksums = []
    for rows, bad, checksum in parts:
        for f in ALL_FIELDS:
            merged[f].extend(rows[f])
        quarantine.extend(bad)
        checksums.append(checksum)
    if quarantine_path is not None:
        write_quarantine(quarantine, quarantine_path, schema.delimiter)
    if not merged["bid"]:
        raise EmptyPanelError(f"no parseable rows in {[str(p) for p in paths]}")
    return Panel.from_columns(window_id=window_id, shard_count=shard_count,
                              quarantine=quarantine, checksums=checksums, **merged)


def write_quarantine(rows: Iterable[QuarantineRow], path, delimiter: str = "\t") -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        for q in rows:
            fh.write(delimiter.join(list(q.fields) + [q.reason]) + "\n")


def write_panel(panel: Panel, path, delimiter: str = "\t") -> LogSchema:
    """Write ``panel`` in the ingest format (header row, canonical column names)."""
    path = Path(path)
    cols = [panel.columns[f].tolist() for f in ALL_FIELDS]
    buf = io.StringIO()
    buf.write(delimiter.join(ALL_FIELDS) + "\n")
    for row in zip(*cols):
        buf.write(delimiter.join(map(str, row)) + "\n")
    with _open_text(path, "wt") as fh:
        fh.write(buf.getvalue())
    return LogSchema(delimiter=delimiter)


# --------------------------------------------------------------------------- splits / quantiles


def split_sizes(n: int, fractions: Sequence[float]) -> tuple[int, ...]:
    """Floor each share, then hand the remainder to the earliest splits one row at a time."""
    exact = [Fraction(str(f)) for f in fractions]
    if any(f < 0 for f in exact) or abs(float(sum(exact)) - 1.0) > 1e-9:
        raise ConfigError(f"split fractions must be non-negative and sum to 1, got {fractions}")
    sizes = [math.floor(f * n) for f in exact]
    remainder = n - sum(sizes)
    for j in range(remainder):
        sizes[j % len(sizes)] += 1
    return tuple(sizes)


def chronological_split(panel: Panel, fractions: Sequence[float] = (0.6, 0.2, 0.2)
                        ) -> tuple[Panel, ...]:
    if len(panel) == 0:
        raise EmptyPanelError("cannot split an empty panel")
    sizes = split_sizes(len(panel), fractions)
    names = ("train", "val", "test") if len(sizes) == 3 else tuple(f"part{j}" for j in range(len(sizes)))
    out, start = [], 0
    for name, size in zip(names, sizes):
        out.append(panel.take(slice(start, start + size), f"{panel.window_id}:{name}"))
        start += size
    return tuple(out)


@dataclass(frozen=True)
class QuantileSet:
    q25: int
    q50: int
    q75: int
    population: str = "positive_floors"

    def __post_init__(self):
        if not self.q25 <= self.q50 <= self.q75:
            raise QuantileError(f"quantiles out of order: {self}")

    def get(self, key: str) -> int:
        return {"q25": self.q25, "q50": self.q50, "q75": self.q75}[key]

    def to_dict(self) -> dict:
        return {"q25": self.q25, "q50": self.q50, "q75": self.q75, "population": self.population}


def nearest_rank(sorted_values: np.ndarray, pct: int) -> int:
    """Smallest value whose cumulative share reaches ``pct`` percent."""
    n = len(sorted_values)
    rank = max(1, -(-pct * n // 100))
    return int(sorted_values[rank - 1])


def floor_quantiles(panel: Panel, population: str = "positive_floors") -> QuantileSet:
    floors = panel.columns["floor"]
    if population == "positive_floors":
        floors = floors[floors > 0]
    elif population != "all_floors":
        raise ConfigError(f"unknown floor population {population!r}")
    if len(floors) == 0:
        raise QuantileError(f"empty {population} population")
    s = np.sort(floors, kind="stable")
    return QuantileSet(nearest_rank(s, 25), nearest_rank(s, 50), nearest_rank(s, 75), population)


# --------------------------------------------------------------------------- summaries


@dataclass(frozen=True)
class PanelSummary:
    days: int
    opportunities: int
    filled: int
    clicks: int
    conversions: int

    @property
    def fill_rate(self) -> Fraction:
        return Fraction(self.filled, self.opportunities) if self.opportunities else Fraction(0)

    def to_dict(self) -> dict:
        return {"days": self.days, "opportunities": self.opportunities, "filled": self.filled,
                "fill_rate": float(self.fill_rate), "clicks": self.clicks,
                "conversions": self.conversions}


def panel_summary(panel: Panel) -> PanelSummary:
    c = panel.columns
    return PanelSummary(
        days=int(len(np.unique(c["day"]))),
        opportunities=len(panel),
        filled=int(c["filled"].sum(dtype=np.int64)),
        clicks=int(c["clicked"].sum(dtype=np.int64)),
        conversions=int(c["converted"].sum(dtype=np.int64)),
    )


def baseline_value_total(panel: Panel) -> int:
    """Exact logged yield: sum of ``filled * pay``."""
    c = panel.columns
    return int(np.sum(c["pay"][c["filled"] == 1], dtype=np.int64)) if len(panel) else 0
