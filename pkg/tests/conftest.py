import numpy as np
import pytest

from floorgate.panel import Panel, floor_quantiles
from floorgate.policy import build_catalog
from floorgate.synthgen import GenConfig, generate_panel


def make_panel(rows=None, **cols):
    """Panel from a list of dicts (missing fields default) or from raw columns."""
    if rows is not None:
        defaults = dict(timestamp=0, day=0, exchange=1, region=1, advertiser=1, slot=0,
                        device=0, bid=100, floor=0, pay=0, filled=0, clicked=0, converted=0)
        full = [dict(defaults, **r) for r in rows]
        cols = {k: [r[k] for r in full] for k in defaults}
    return Panel.from_columns(**cols)


def catalog_for(panel, hybrid_population="positive_floors"):
    return build_catalog(floor_quantiles(panel, "positive_floors"),
                         floor_quantiles(panel, "all_floors"), hybrid_population)


@pytest.fixture(scope="session")
def small_panel():
    return generate_panel(GenConfig(n_rows=20_000, n_days=7, seed=5))


@pytest.fixture(scope="session")
def small_catalog(small_panel):
    return catalog_for(small_panel)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
