import gzip
import json
from fractions import Fraction

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floorgate.errors import EmptyPanelError, QuantileError, SchemaError
from floorgate.panel import (ALL_FIELDS, LogSchema, chronological_split, floor_quantiles,
                             ingest_logs, nearest_rank, panel_summary, split_sizes, write_panel)
from floorgate.synthgen import GenConfig, generate_panel

from conftest import make_panel

HEADER = "\t".join(ALL_FIELDS)


def _line(day=0, ts=0, bid=120, floor=50, pay=60, filled=1, clicked=0, converted=0):
    vals = [ts, day, 1, 2, 3, 0, 0, bid, floor, pay, filled, clicked, converted]
    return "\t".join(str(v) for v in vals)


def _write(path, lines, header=True):
    path.write_text(("\n".join(([HEADER] if header else []) + lines)) + "\n")
    return path


def test_two_files_ten_rows_each(tmp_path):
    a = _write(tmp_path / "a.tsv", [_line(ts=i) for i in range(10)])
    b = _write(tmp_path / "b.tsv", [_line(day=1, ts=i) for i in range(10)])
    panel = ingest_logs([a, b])
    assert len(panel) == 20
    assert panel.quarantine == ()


def test_filled_row_without_pay_is_quarantined(tmp_path):
    lines = [_line(ts=i) for i in range(5)]
    lines.append(_line(ts=9).replace("\t60\t1\t", "\t\t1\t"))
    panel = ingest_logs([_write(tmp_path / "a.tsv", lines)])
    assert len(panel) == 5
    assert [q.reason for q in panel.quarantine] == ["missing_pay"]
    assert panel.quarantine[0].line == 7


@pytest.mark.parametrize("line,reason", [
    (_line(bid=-1, floor=0, pay=0, filled=0), "negative_money"),
    (_line(filled=0, clicked=1, pay=0), "unfilled_with_outcome"),
    (_line(bid=40, floor=50, pay=50), "bid_below_floor"),
    (_line(filled=7), "unparseable_flag"),
    ("1\t2\t3", "short_row"),
])
def test_invariant_violations(tmp_path, line, reason):
    panel = ingest_logs([_write(tmp_path / "a.tsv", [_line(), line])])
    assert len(panel) == 1
    assert panel.quarantine[0].reason == reason


def test_quarantine_file_written(tmp_path):
    out = tmp_path / "q.tsv"
    ingest_logs([_write(tmp_path / "a.tsv", [_line(), _line(filled=3)])], quarantine_path=out)
    rows = out.read_text().splitlines()
    assert len(rows) == 1 and rows[0].endswith("unparseable_flag")


def test_all_rows_bad_is_empty_panel(tmp_path):
    with pytest.raises(EmptyPanelError):
        ingest_logs([_write(tmp_path / "a.tsv", [_line(filled=9)])])


def test_schema_missing_required_column(tmp_path):
    path = tmp_path / "a.tsv"
    path.write_text("day\tbid\n0\t10\n")
    with pytest.raises(SchemaError):
        ingest_logs([path])


def test_schema_mapping_and_money_scale(tmp_path):
    path = tmp_path / "a.csv"
    path.write_text("d,ex,reg,adv,b,f,p,fill,clk,cnv\n"
                    "3,x,y,z,1.25,0.5,0.75,1,0,0\n")
    schema = LogSchema.from_mapping({
        "columns": {"day": "d", "exchange": "ex", "region": "reg", "advertiser": "adv",
                    "bid": "b", "floor": "f", "pay": "p", "filled": "fill",
                    "clicked": "clk", "converted": "cnv"},
        "delimiter": ",", "money_scale": 100})
    panel = ingest_logs([path], schema)
    r = panel.record(0)
    assert (r.bid, r.floor, r.pay, r.day) == (125, 50, 75, 3)
    # non-numeric ids are hashed stably
    assert r.exchange == ingest_logs([path], schema).record(0).exchange


def test_schema_load_roundtrip(tmp_path):
    s = LogSchema(delimiter=",", money_scale=10)
    p = tmp_path / "s.json"
    p.write_text(json.dumps(s.to_dict()))
    assert LogSchema.load(p) == s


def test_synthetic_dump_roundtrip_is_bit_identical(tmp_path):
    panel = generate_panel(GenConfig(n_rows=1000, seed=3))
    write_panel(panel, tmp_path / "p.tsv.gz")
    back = ingest_logs([tmp_path / "p.tsv.gz"], threads=2)
    assert back.same_records(panel)
    assert back.digest() == panel.digest()
    with gzip.open(tmp_path / "p.tsv.gz", "rt") as fh:
        assert fh.readline().strip().split("\t") == list(ALL_FIELDS)


def test_ingest_independent_of_threads(tmp_path):
    panel = generate_panel(GenConfig(n_rows=3000, seed=4))
    paths = []
    for j, (a, b) in enumerate([(0, 1000), (1000, 2000), (2000, 3000)]):
        paths.append(tmp_path / f"{j}.tsv")
        write_panel(panel.take(slice(a, b)), paths[-1])
    one = ingest_logs(paths, threads=1)
    many = ingest_logs(paths[::-1], threads=3)
    assert one.digest() == many.digest() == panel.digest()


def test_rows_sorted_by_day_then_timestamp():
    p = make_panel([{"day": 2, "timestamp": 5}, {"day": 1, "timestamp": 9},
                    {"day": 1, "timestamp": 3}])
    assert p.day.tolist() == [1, 1, 2]
    assert p.timestamp.tolist() == [3, 9, 5]
    with pytest.raises(ValueError):
        p.bid[0] = 1


@pytest.mark.parametrize("n,sizes", [(10, (6, 2, 2)), (5, (3, 1, 1)), (1, (1, 0, 0)),
                                     (7, (5, 1, 1))])
def test_split_sizes(n, sizes):
    assert split_sizes(n, (0.6, 0.2, 0.2)) == sizes


@given(st.integers(0, 10_000))
def test_split_sizes_brute_force(n):
    sizes = split_sizes(n, (0.6, 0.2, 0.2))
    assert sum(sizes) == n
    exact = [Fraction(3, 5) * n, Fraction(1, 5) * n, Fraction(1, 5) * n]
    assert all(abs(s - e) < 1 for s, e in zip(sizes, exact))


def test_chronological_split_is_contiguous(small_panel):
    train, val, test = chronological_split(small_panel)
    assert len(train) + len(val) + len(test) == len(small_panel)
    assert train.day.max() <= val.day.min() and val.day.max() <= test.day.min()
    assert np.array_equal(train.bid, small_panel.bid[:len(train)])


def test_quantiles_constant_population():
    p = make_panel([{"floor": 50, "bid": 60}] * 7)
    q = floor_quantiles(p)
    assert (q.q25, q.q50, q.q75) == (50, 50, 50)


def test_quantiles_nearest_rank():
    p = make_panel([{"floor": f, "bid": 100} for f in (40, 10, 30, 20, 0)])
    assert floor_quantiles(p, "positive_floors").q50 == 20
    p = make_panel([{"floor": f, "bid": 100} for f in (0, 0, 100, 100)])
    assert floor_quantiles(p, "all_floors").q25 == 0


def test_quantiles_no_positive_floor():
    with pytest.raises(QuantileError):
        floor_quantiles(make_panel([{"floor": 0}]))


@settings(max_examples=200)
@given(st.lists(st.integers(0, 10**6), min_size=1, max_size=60), st.integers(1, 100))
def test_nearest_rank_brute_force(values, pct):
    s = sorted(values)
    expect = next(v for j, v in enumerate(s, start=1) if 100 * j >= pct * len(s))
    assert nearest_rank(np.array(s), pct) == expect


def test_summary_empty_and_counts():
    empty = make_panel(bid=[], floor=[], pay=[], day=[], exchange=[], region=[],
                       advertiser=[], filled=[], clicked=[], converted=[])
    s = panel_summary(empty)
    assert (s.days, s.opportunities, s.filled, s.clicks, s.conversions) == (0, 0, 0, 0, 0)
    assert s.fill_rate == 0
    p = make_panel([{"filled": 1, "pay": 5, "clicked": 1}, {"day": 1}, {"day": 1}])
    s = panel_summary(p)
    assert (s.days, s.opportunities, s.filled, s.clicks) == (2, 3, 1, 1)
    assert s.fill_rate == Fraction(1, 3)


def test_day_of_week_and_context():
    p = make_panel([{"day": 20130606, "timestamp": 3_600_000 * 5}, {"day": 8}])
    assert p.context(["dow", "hour"]).tolist() == [[1, 0], [3, 5]]
