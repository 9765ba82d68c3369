import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from floorgate import kernels
from floorgate.errors import ConfigError
from floorgate.panel import QuantileSet
from floorgate.policy import (PolicySpec, apply_policy, build_catalog, candidate_floors,
                              reference_floors, verify_non_decreasing)

from conftest import make_panel

QPOS = QuantileSet(100, 150, 200)
QALL = QuantileSet(0, 80, 150, "all_floors")


@pytest.fixture
def catalog():
    return build_catalog(QPOS, QALL)


def rec(bid, floor):
    return make_panel([{"bid": bid, "floor": floor}]).record(0)


def test_catalog_shape(catalog):
    assert len(catalog) == 19
    assert catalog.ids == [f"P{j}" for j in range(19)]
    assert catalog.baseline.id == "P0"
    assert catalog["P18"].quantile == "q75" and catalog["P18"].gap == 100
    assert catalog["P17"].quantile == "q50" and catalog["P17"].gap == 50
    assert catalog["P5"].family == "uniform_pct" and catalog["P5"].pct == 30
    assert catalog["P18"].display_name == "Q75 Margin-Gated Floor"


def test_p0_is_identity(catalog, small_panel, small_catalog):
    assert np.array_equal(candidate_floors(small_catalog["P0"], small_panel, small_catalog),
                          small_panel.floor)


@pytest.mark.parametrize("pid,bid,floor,expect", [
    ("P18", 300, 150, 200),   # gap 150 >= 100, raised to q75
    ("P18", 200, 150, 150),   # gap 50 < 100, untouched
    ("P18", 300, 250, 250),   # already above q75
    ("P2", 500, 100, 110),
    ("P1", 500, 10, 11),      # 10.5 rounds half up
    ("P1", 500, 0, 0),
    ("P6", 500, 0, 5),
    ("P9", 500, 0, 0),        # zero floors stay zero for positive-floor quantiles
    ("P9", 500, 50, 100),
    ("P12", 500, 0, 0),       # all-floor q25 is 0 here
    ("P13", 500, 0, 80),
    ("P14", 130, 100, 105),
    ("P14", 124, 100, 100),
    ("P17", 150, 100, 150),
])
def test_rules(catalog, pid, bid, floor, expect):
    assert apply_policy(catalog[pid], rec(bid, floor), catalog) == expect


def test_hybrid_population_switch():
    cat = build_catalog(QPOS, QALL, "all_floors")
    assert apply_policy(cat["P18"], rec(300, 0), cat) == 150
    cat = build_catalog(QPOS, QALL)
    assert apply_policy(cat["P18"], rec(300, 0), cat) == 200


def test_range_checks():
    with pytest.raises(ConfigError):
        PolicySpec("X", "uniform_pct", pct=7).check_ranges()
    with pytest.raises(ConfigError):
        PolicySpec("X", "hybrid_min_margin", quantile="q90", gap=50).check_ranges()
    with pytest.raises(ConfigError):
        PolicySpec("X", "mystery")


def test_digest_tracks_quantiles(catalog):
    assert catalog.digest() == build_catalog(QPOS, QALL).digest()
    assert catalog.digest() != build_catalog(QuantileSet(100, 150, 201), QALL).digest()


def test_every_policy_non_decreasing(small_panel, small_catalog):
    for spec in small_catalog:
        assert verify_non_decreasing(spec, small_panel, small_catalog)


def test_broken_policy_detected(small_panel, small_catalog, monkeypatch):
    spec = small_catalog["P6"]
    real = kernels.candidate_floors
    monkeypatch.setattr(kernels, "candidate_floors",
                        lambda *a, **k: real(*a, **k) - 6)
    assert not verify_non_decreasing(spec, small_panel, small_catalog)


def test_kernel_matches_scalar_reference(small_panel, small_catalog):
    for spec in small_catalog:
        fast = candidate_floors(spec, small_panel, small_catalog)
        assert fast.tolist() == reference_floors(spec, small_panel, small_catalog), spec.id


@settings(max_examples=150)
@given(st.integers(0, 10**7), st.integers(0, 10**7), st.sampled_from([f"P{j}" for j in range(19)]))
def test_scalar_rule_non_decreasing(bid, floor, pid):
    cat = build_catalog(QPOS, QALL)
    assert apply_policy(cat[pid], rec(bid, floor), cat) >= floor


@settings(max_examples=100)
@given(st.integers(0, 10**6), st.integers(0, 10**6), st.integers(0, 4))
def test_uniform_dominance(bid, floor, j):
    cat = build_catalog(QPOS, QALL)
    lo, hi = cat[f"P{j + 1}"], cat[f"P{min(j + 2, 5)}"]
    assert apply_policy(hi, rec(bid, floor), cat) >= apply_policy(lo, rec(bid, floor), cat)
