import itertools
import math
from fractions import Fraction

import numpy as np
import pytest

from floorgate.decision import (ACTIONS, DEFAULT_RULES, GATES, AblationEvidence, EvidenceBundle,
                                GateVector, TransferOutcome, ablation, decide, evaluate_gates,
                                mde_curve, power_multiplier, prune_dominated, transfer_gate)
from floorgate.errors import ContractError, DesignError
from floorgate.ope import SupportGateConfig
from floorgate.panel import baseline_value_total
from floorgate.replay import DailyReplay, ReplayResult
from floorgate.synthgen import GenConfig, generate_panel

ALL_VECTORS = list(itertools.product((0, 1), repeat=7))


def expected_action(bits, failure=False):
    g = dict(zip(GATES, bits))
    q_minus_i = all(g[k] for k in GATES[:-1])
    if q_minus_i and g["I"]:
        return "launch"
    if q_minus_i:
        return "validate_online"
    if not g["H"] or failure:
        return "redesign"
    return "hold"


@pytest.mark.parametrize("failure", [False, True])
def test_decision_map_exhaustive(failure):
    for bits in ALL_VECTORS:
        action = decide(bits, failure)
        assert action == expected_action(bits, failure)
        assert action in ACTIONS
        if action == "launch":
            assert bits[6] == 1
        if all(bits[:6]) and not bits[6]:
            assert action == "validate_online"


def test_decision_examples():
    assert decide((1,) * 7) == "launch"
    assert decide((1, 1, 1, 1, 1, 1, 0)) == "validate_online"
    assert decide((1, 1, 1, 1, 0, 1, 1)) == "redesign"
    assert decide((1, 1, 1, 0, 1, 1, 0)) == "hold"


def rr(pid, value, base=1000, retained=100, base_filled=100, clicks=10, conv=5):
    return ReplayResult(pid, pid, 100, value, base, base_filled, retained, 10, clicks, 5, conv,
                        0, (DailyReplay(0, 100, base, value, base_filled, retained),))


def validation_set(**values):
    out = {"P0": rr("P0", 1000)}
    out.update({k: rr(k, v) for k, v in values.items()})
    return out


def test_transfer_gate_examples():
    val = validation_set(P18=1439, P11=1300, P17=1200)
    t = transfer_gate(None, val, "P18")
    assert t.value == 1 and t.rank == 1 and t.lift == pytest.approx(0.439)
    assert all(v == 1.0 for v in t.retention.values())
    assert transfer_gate(None, validation_set(P5=990), "P5").value == 0


def test_transfer_rank_cutoff_and_ties():
    val = validation_set(P1=1500, P2=1400, P3=1300, P4=1200, P5=1100)
    assert transfer_gate(None, val, "P5", r_max=3).value == 0
    assert transfer_gate(None, val, "P5", r_max=5).value == 1
    tied = validation_set(P1=1500, P2=1400, P3=1400, P4=1400)
    assert [transfer_gate(None, tied, p).rank for p in ("P2", "P3", "P4")] == [2, 2, 2]
    assert transfer_gate(None, tied, "P4").value == 1


def test_transfer_retention_failure():
    val = validation_set(P18=1400)
    val["P18"] = rr("P18", 1400, retained=97)
    assert transfer_gate(None, val, "P18").value == 0


def test_transfer_placeholder_and_frozen_catalog():
    t = transfer_gate(None, None, "P18")
    assert t.value == 1 and not t.available and "placeholder" in t.note
    with pytest.raises(ContractError):
        transfer_gate(None, validation_set(P18=1400), "P18", discovery_catalog="a",
                      validation_catalog="b")


PAPER = EvidenceBundle("P18", 0.477, TransferOutcome("P18", 1, True, 0.439, 1), 0.4, 3.0,
                       0.458, True, 0.3229, None)


def test_priority_gates_reported_case():
    g = evaluate_gates(PAPER)
    assert g.bits == (1, 1, 1, 1, 1, 1, 0)
    assert decide(g) == "validate_online"
    attested = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__,
                                                "interference_attestation": "switchback-42"}))
    assert attested.bits == (1,) * 7 and decide(attested) == "launch"


def test_missing_evidence_is_zero():
    g = evaluate_gates(EvidenceBundle("X"))
    assert g.bits == (0,) * 7
    assert all(g.gates[k].note for k in GATES)


def test_only_guardrails_fail():
    g = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__, "guardrails_all_pass": False}))
    assert g.bits == (1, 1, 1, 1, 0, 1, 0) and decide(g) == "redesign"


def test_support_gate_thresholds():
    weak = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__, "ess_share": 0.05}))
    assert weak["S"] == 0
    heavy = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__, "p99_weight": 12.0}))
    assert heavy["S"] == 0
    edge = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__, "ess_share": 0.10,
                                            "p99_weight": 10.0}), SupportGateConfig())
    assert edge["S"] == 1


def test_prune_dominated():
    res = {"A": rr("A", 1300), "B": rr("B", 1200), "C": rr("C", 1300),
           "D": rr("D", 1500, retained=90)}
    passed = {"A": 7, "B": 7, "C": 6, "D": 5}
    # B is beaten by A everywhere; C ties A on lift and retention but passes fewer screens
    assert prune_dominated(res, passed, list(res)) == ["A", "D"]
    res2 = {"A": rr("A", 1300), "E": rr("E", 1300)}
    assert prune_dominated(res2, {"A": 7, "E": 7}, ["A", "E"]) == ["A", "E"]


def test_power_multiplier():
    assert power_multiplier() == pytest.approx(2.80158, abs=1e-5)


def test_baseline_yield_closed_form():
    y0 = Fraction(953_877_620, 53_289_330)
    assert float(y0) == pytest.approx(17.89997, abs=1e-5)


@pytest.fixture(scope="module")
def mde_panel():
    return generate_panel(GenConfig(n_rows=30_000, n_days=7, seed=4))


@pytest.mark.parametrize("design", ["advertiser", "exchange_hour", "exchange_region",
                                    "region_day"])
def test_mde_curve(mde_panel, design):
    curve = mde_curve(mde_panel, design, [1, 4, 16, 7, 28])
    assert curve.mde(4) == curve.mde(1) / 2
    assert curve.mde(16) == curve.mde(4) / 2
    for t, rel, ab in curve.points:
        assert rel == curve.c / math.sqrt(t)
        assert ab == curve.baseline_yield * rel
    assert curve.baseline_yield == baseline_value_total(mde_panel) / len(mde_panel)


def test_mde_hand_computed():
    from conftest import make_panel
    rows = [{"day": d, "region": r, "pay": pay, "filled": 1, "bid": 1000}
            for d in range(2) for r, pay in ((1, 10), (2, 30))]
    p = make_panel(rows)
    curve = mde_curve(p, "region_day", [1])
    sigma = float(np.std([10, 30, 10, 30], ddof=1))
    assert curve.sigma == sigma and curve.units_per_day == 2
    assert curve.c == pytest.approx(power_multiplier() * 2 * sigma / math.sqrt(2) / 20)


def test_mde_design_errors(mde_panel):
    with pytest.raises(DesignError):
        mde_curve(mde_panel, "galaxy")
    from conftest import make_panel
    with pytest.raises(DesignError):
        mde_curve(make_panel([{"pay": 5, "filled": 1}]), "region_day")


def dominating_evidence(attested=None):
    pids = ["P1", "P7", "P18"]
    score = {"P1": 0.05, "P7": 0.2, "P18": 0.45}
    full = evaluate_gates(EvidenceBundle(**{**PAPER.__dict__,
                                            "interference_attestation": attested}))
    return AblationEvidence(
        replay_lift=score, guardrails_pass={p: True for p in pids}, dr_mean_lift=score,
        dr_p10_lift=score, support_pass={p: True for p in pids}, validation_lift=score,
        full_selected="P18", full_gates=full)


def test_ablation_reference_counts():
    rows = ablation(dominating_evidence())
    assert [r["rule"] for r in rows] == [r.name for r in DEFAULT_RULES]
    assert [r["unresolved_gates"] for r in rows] == [6, 5, 6, 5, 5, 0]
    assert {r["selected"] for r in rows} == {"P18"}
    assert [r["overclaim"] for r in rows] == [True] * 5 + [False]
    assert rows[0]["action"] == "direct_launch"
    assert rows[-1]["action"] == "validate_online"


def test_ablation_full_rule_never_direct_launch():
    for bits in ALL_VECTORS:
        ev = dominating_evidence()
        ev = AblationEvidence(**{**ev.__dict__, "full_gates": GateVector.from_bits(bits)})
        full = ablation(ev)[-1]
        assert full["action"] != "direct_launch"
        if not bits[6]:
            assert full["action"] != "launch" and not full["overclaim"]


def test_ablation_no_favorable_policy():
    ev = dominating_evidence()
    neg = {k: -v for k, v in ev.replay_lift.items()}
    ev = AblationEvidence(**{**ev.__dict__, "replay_lift": neg})
    row = ablation(ev)[0]
    assert row["action"] == "no_action" and row["unresolved_gates"] == 0
