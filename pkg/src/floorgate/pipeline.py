"""End-to-end launch-readiness evaluation over one discovery and an optional validation window."""
from __future__ import annotations

import contextlib
import csv
import hashlib
import io
import json
import logging
import math
import os
import tempfile
from functools import cached_property
from pathlib import Path
from typing import Iterable

import numpy as np

from . import __version__
from .config import RunConfig
from .decision import (ACTION_PRIORITY, GATES, AblationEvidence, EvidenceBundle, GateVector, ablation,
                       decide, evaluate_gates, mde_curve, prune_dominated, transfer_gate)
from .errors import EmptyFeasibleSetError
from .guardrails import GuardrailConfig, screen
from .nuisance import LoggerConfig, ModelConfig, calibration_report, fit_outcome_models, simulate_logger
from .ope import SupportGateConfig, crossfit_dr, evaluate_policies, rank_conservative, segment_heterogeneity
from .panel import LogSchema, Panel, chronological_split, floor_quantiles, ingest_logs, panel_summary
from .policy import build_catalog
from .replay import daily_stability, replay_all, replay_frontier
from .sensitivity import SensitivityThresholds, robustness_summary
from .synthgen import GenConfig, generate_panel

log = logging.getLogger(__name__)

SCHEMA_VERSION = "1.0"


def _caps(raw) -> tuple:
    return tuple(math.inf if str(c).lower() in ("inf", "infinity") else float(c) for c in raw)


def clean(obj):
    """JSON-safe copy: non-finite floats become strings, numpy scalars become Python ones."""
    if isinstance(obj, dict):
        return {str(k): clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [clean(v) for v in obj]
    if isinstance(obj, np.generic):
        obj = obj.item()
    if isinstance(obj, float) and not math.isfinite(obj):
        return "nan" if math.isnan(obj) else ("inf" if obj > 0 else "-inf")
    return obj


class Pipeline:
    """Lazily evaluated stages; each property is computed once and reused."""

    def __init__(self, config: RunConfig | None = None, *, discovery: Panel | None = None,
                 validation: Panel | None = None):
        """``discovery`` / ``validation`` panels, when given, replace the configured sources."""
        self.config = config or RunConfig.load()
        if discovery is not None:
            self.__dict__["discovery"] = discovery.with_shards(int(self.config.get("run.shards")))
            self.__dict__["validation"] = validation
        c = self.config
        self.seed = int(c.get("run.seed"))
        self.shards = int(c.get("run.shards"))
        self.threads = int(c.get("run.threads"))
        self.guard_cfg = GuardrailConfig(**c.section("guardrails"))
        self.support_cfg = SupportGateConfig(c.get("ope.min_ess_share"), c.get("ope.max_p99_weight"))
        self.sens_cfg = SensitivityThresholds(
            min_breakeven_rho=c.get("sensitivity.min_breakeven_rho"),
            support_scales=tuple(c.get("sensitivity.support_scales")),
            rho_points=int(c.get("sensitivity.rho_points")),
            rho_max=float(c.get("sensitivity.rho_max")))
        self.model_cfg = ModelConfig(tuple(c.get("ope.keys")), float(c.get("ope.smoothing")))
        self.logger_cfg = LoggerConfig(epsilon=c.get("ope.epsilon"), tilt=c.get("ope.tilt"),
                                       min_propensity=c.get("ope.min_propensity"))

    # ---------------------------------------------------------------- data

    def _load(self, window: str) -> Panel | None:
        c = self.config
        paths = c.get(f"data.{window}") or []
        if paths:
            schema = c.get("data.schema")
            if isinstance(schema, str):
                schema = LogSchema.load(schema)
            elif isinstance(schema, dict):
                schema = LogSchema.from_mapping(schema)
            return ingest_logs(paths, schema, window_id=window, shard_count=self.shards,
                               threads=self.threads)
        if window == "validation" and c.get("data.discovery"):
            return None
        gen = c.get(f"synth.{window}")
        if gen is None:
            return None
        return generate_panel(GenConfig.from_dict(gen)).with_shards(self.shards)

    @cached_property
    def discovery(self) -> Panel:
        return self._load("discovery")

    @cached_property
    def validation(self) -> Panel | None:
        return self._load("validation")

    def quarantine_share(self, panel: Panel) -> float:
        total = len(panel) + len(panel.quarantine)
        return len(panel.quarantine) / total if total else 0.0

    @cached_property
    def measurement_failure(self) -> bool:
        limit = float(self.config.get("decision.max_quarantine_share"))
        panels = [p for p in (self.discovery, self.validation) if p is not None]
        return any(self.quarantine_share(p) > limit for p in panels)

    def input_checksums(self) -> dict:
        out = {}
        for name, panel in (("discovery", self.discovery), ("validation", self.validation)):
            if panel is None:
                continue
            files = {src: digest for src, digest in panel.checksums}
            out[name] = {"files": files} if files else {"panel_sha256": panel.digest()}
        return out

    @cached_property
    def run_id(self) -> str:
        explicit = self.config.get("run.run_id")
        if explicit:
            return str(explicit)
        snapshot = self.config.to_dict()
        # placement and parallelism do not change any output byte
        snapshot["run"].pop("out_dir", None)
        snapshot["run"].pop("threads", None)
        blob = json.dumps(snapshot, sort_keys=True) + json.dumps(self.input_checksums(), sort_keys=True)
        return hashlib.sha256(blob.encode()).hexdigest()[:12]

    # ---------------------------------------------------------------- replay

    @cached_property
    def catalog(self):
        d = self.discovery
        return build_catalog(floor_quantiles(d, "positive_floors"), floor_quantiles(d, "all_floors"),
                             self.config.get("policy.hybrid_population"))

    @cached_property
    def replay(self):
        return replay_all(self.discovery, self.catalog, shards=self.shards, threads=self.threads)

    @cached_property
    def guardrails(self):
        return screen(self.replay, self.guard_cfg)

    @cached_property
    def passed(self) -> dict:
        return {pid: self.guardrails.passed_count(pid) for pid in self.replay}

    @cached_property
    def frontier(self):
        return replay_frontier(self.replay, self.passed)

    @cached_property
    def candidates(self) -> list[str]:
        return [pid for pid in self.catalog.ids if pid != self.catalog.baseline.id]

    @cached_property
    def survivors(self) -> list[str]:
        return prune_dominated(self.replay, self.passed, self.candidates)

    # ---------------------------------------------------------------- transfer

    @cached_property
    def validation_replay(self):
        if self.validation is None:
            return None
        # frozen: the discovery catalog object (quantiles included) is reused as-is
        return replay_all(self.validation, self.catalog, shards=self.shards, threads=self.threads)

    @cached_property
    def transfer(self) -> dict:
        digest = self.catalog.digest()
        return {pid: transfer_gate(self.replay, self.validation_replay, pid,
                                   int(self.config.get("decision.r_max")), self.guard_cfg,
                                   discovery_catalog=digest, validation_catalog=digest)
                for pid in self.candidates}

    # ---------------------------------------------------------------- OPE

    @cached_property
    def shortlist(self) -> list[str]:
        """Positive-lift policies for OPE: non-dominated feasible first, then feasible, then the rest."""
        feasible = set(self.guardrails.feasible)
        survivors = set(self.survivors)

        def key(p):
            tier = 0 if (p in feasible and p in survivors) else 1 if p in feasible else 2
            return (tier, -self.replay[p].lift, self.catalog[p].number)

        pool = sorted((p for p in self.candidates if self.replay[p].lift > 0), key=key)
        return pool[: int(self.config.get("ope.shortlist_size"))]

    @cached_property
    def splits(self):
        return chronological_split(self.discovery, tuple(self.config.get("ope.split")))

    @cached_property
    def models(self):
        actions = [self.catalog.baseline.id] + self.shortlist
        return fit_outcome_models(self.splits[0], self.catalog, actions, self.model_cfg)

    @cached_property
    def calibration(self):
        test = self.splits[2] if len(self.splits[2]) else self.splits[0]
        return calibration_report(self.models, test, int(self.config.get("ope.calibration_bins")))

    @cached_property
    def logged(self):
        train = self.splits[0]
        holdout = self.discovery.take(slice(len(train), len(self.discovery)), "discovery:holdout")
        if len(holdout) == 0:
            holdout = self.discovery
        actions = [self.catalog.baseline.id] + self.shortlist
        return simulate_logger(holdout, actions, self.catalog, self.logger_cfg, self.seed)

    @cached_property
    def crossfit(self):
        if not self.shortlist:
            return None
        c = self.config
        return crossfit_dr(self.logged, self.shortlist, self.catalog, self.model_cfg,
                           int(c.get("ope.k_folds")), int(c.get("ope.boot_b")), self.seed,
                           self.catalog.baseline.id)

    @cached_property
    def ope(self) -> dict:
        if not self.shortlist:
            return {}
        c = self.config
        return evaluate_policies(
            self.logged, self.shortlist, self.models, self.catalog, model_config=self.model_cfg,
            caps=_caps(c.get("ope.caps")), alpha=float(c.get("ope.alpha")), seed=self.seed,
            baseline=self.catalog.baseline.id, crossfit=self.crossfit)

    # ---------------------------------------------------------------- sensitivity / gates

    @cached_property
    def robustness(self) -> dict:
        attested = bool(self.config.get("decision.interference_attestation"))
        out = {}
        for pid, est in self.ope.items():
            out[pid] = robustness_summary(pid, float(self.replay[pid].lift), est.boot_median,
                                          est.boot_p10, self.sens_cfg, attested)
        return out

    def lower_tail(self, pid: str) -> float | None:
        est = self.ope.get(pid)
        if est is None:
            return None
        mode = self.config.get("ope.mode")
        return est.boot_p10 if mode == "bootstrap" else est.lower_bound

    @cached_property
    def gates(self) -> dict[str, GateVector]:
        out = {}
        for pid in self.candidates:
            est = self.ope.get(pid)
            rob = self.robustness.get(pid)
            bundle = EvidenceBundle(
                policy_id=pid,
                replay_lift=float(self.replay[pid].lift),
                transfer=self.transfer[pid],
                ess_share=est.ess_share if est else None,
                p99_weight=est.p99_weight if est else None,
                lower_tail_lift=self.lower_tail(pid),
                guardrails_all_pass=self.guardrails.all_pass(pid),
                breakeven_rho=rob.breakeven_rho if rob else None,
                interference_attestation=self.config.get("decision.interference_attestation"),
            )
            out[pid] = evaluate_gates(bundle, self.support_cfg,
                                      float(self.config.get("sensitivity.min_breakeven_rho")))
        return out

    @cached_property
    def actions(self) -> dict[str, str]:
        return {pid: decide(g, self.measurement_failure) for pid, g in self.gates.items()}

    @cached_property
    def vp_order(self) -> list[str]:
        try:
            return rank_conservative(self.ope, self.guardrails.feasible,
                                     self.config.get("ope.mode"))
        except EmptyFeasibleSetError:
            return []

    @cached_property
    def selection(self) -> tuple[str | None, str, str]:
        """(selected policy, action, reason)."""
        if not self.guardrails.feasible:
            return None, "redesign", "no policy passes the replay guardrails"
        if not self.vp_order:
            return None, "redesign", "no guardrail-feasible policy has OPE evidence"
        rank = {p: j for j, p in enumerate(self.vp_order)}
        pool = [p for p in self.vp_order if p in self.survivors] or self.vp_order
        pid = min(pool, key=lambda p: (ACTION_PRIORITY[self.actions[p]], rank[p]))
        reason = (f"highest-priority action among guardrail-feasible policies; "
                  f"validation priority rank {rank[pid] + 1}")
        return pid, self.actions[pid], reason

    # ---------------------------------------------------------------- segments / mde / ablation

    @cached_property
    def segments(self) -> list:
        pid = self.selection[0]
        if pid is None or pid not in self.ope:
            return []
        cf = self.crossfit
        cf_scores = cf.scores[:, [0, cf.targets.index(pid) + 1]]
        c = self.config
        return segment_heterogeneity(
            self.logged, pid, self.models, tuple(c.get("ope.segment_dims")),
            min_cell=int(c.get("ope.min_cell")), baseline=self.catalog.baseline.id,
            negative_threshold=float(c.get("ope.negative_threshold")), scores=cf_scores)

    @cached_property
    def mde(self) -> list:
        c = self.config
        out = []
        for design in c.get("decision.mde_designs"):
            try:
                out.append(mde_curve(self.discovery, design, c.get("decision.mde_durations"),
                                     c.get("decision.mde_alpha"), c.get("decision.mde_power")))
            except Exception as exc:  # noqa: BLE001 - a design without units is reported, not fatal
                log.warning("MDE design %s skipped: %s", design, exc)
        return out

    @cached_property
    def ablation(self) -> list[dict]:
        val = self.validation_replay
        pid = self.selection[0]
        ev = AblationEvidence(
            replay_lift={p: float(self.replay[p].lift) for p in self.candidates},
            guardrails_pass={p: self.guardrails.all_pass(p) for p in self.candidates},
            dr_mean_lift={p: e.crossfit_lift for p, e in self.ope.items()},
            dr_p10_lift={p: e.boot_p10 for p, e in self.ope.items()},
            support_pass={p: self.support_cfg.passes(e.ess_share, e.p99_weight)
                          for p, e in self.ope.items()},
            validation_lift={p: float(val[p].lift) for p in self.candidates} if val else {},
            full_selected=pid,
            full_gates=self.gates.get(pid) if pid else None,
            measurement_failure=self.measurement_failure,
        )
        return ablation(ev)

    # ---------------------------------------------------------------- artifact

    def thresholds(self) -> dict:
        c = self.config
        return {
            "guardrails": self.guard_cfg.to_dict(),
            "support": {"min_ess_share": self.support_cfg.min_ess_share,
                        "max_p99_weight": self.support_cfg.max_p99_weight},
            "conservative": {"mode": c.get("ope.mode"), "alpha": c.get("ope.alpha"),
                             "lower_tail_gate": 0.0},
            "replay_gate": {"min_lift_exclusive": 0.0},
            "breakeven": {"min_breakeven_rho": self.sens_cfg.min_breakeven_rho},
            "transfer": {"r_max": c.get("decision.r_max")},
            "data_quality": {"max_quarantine_share": c.get("decision.max_quarantine_share")},
            "mde": {"alpha": c.get("decision.mde_alpha"), "power": c.get("decision.mde_power")},
        }

    def windows(self) -> dict:
        out = {}
        for name, panel in (("discovery", self.discovery), ("validation", self.validation)):
            if panel is None:
                continue
            d = panel_summary(panel).to_dict()
            d["quarantined"] = len(panel.quarantine)
            d["quarantine_share"] = self.quarantine_share(panel)
            out[name] = d
        return out

    def artifact(self) -> dict:
        pid, action, reason = self.selection
        gv = self.gates.get(pid) if pid else None
        art = {
            "schema_version": SCHEMA_VERSION,
            "generator": f"floorgate {__version__}",
            "run_id": self.run_id,
            "selected_policy": pid,
            "action": action,
            "reason": reason,
            "measurement_failure": self.measurement_failure,
            "gate_vector": gv.to_dict() if gv else None,
            "policy_decisions": {p: {"gates": dict(zip("RTSCHBI", g.bits)), "action": self.actions[p]}
                                 for p, g in self.gates.items()},
            "validation_priority_order": self.vp_order,
            "evidence": {
                "replay": {p: r.to_dict() for p, r in self.replay.items()},
                "frontier": [r.to_dict() for r in self.frontier],
                "daily_stability": {pid: daily_stability(self.replay[pid]).__dict__
                                    for pid in self.shortlist},
                "survivors": self.survivors,
                "guardrails": self.guardrails.to_dict(),
                "transfer": {p: t.to_dict() for p, t in self.transfer.items()},
                "shortlist": self.shortlist,
                "logger": {"actions": list(self.logged.action_ids),
                           "probabilities": self.logged.probs.tolist(),
                           "config": self.logger_cfg.to_dict(), "rows": len(self.logged)}
                if self.shortlist else None,
                "calibration": self.calibration.to_dict() if self.shortlist else None,
                "ope": {p: e.to_dict() for p, e in self.ope.items()},
                "sensitivity": {p: r.to_dict() for p, r in self.robustness.items()},
                "segments": [s.to_dict() for s in self.segments],
                "mde": [m.to_dict() for m in self.mde],
            },
            "thresholds": self.thresholds(),
            "ablation": self.ablation,
            "catalog": dict(self.catalog.to_dict(), sha256=self.catalog.digest()),
            "data_windows": self.windows(),
            "config": self.config.to_dict(),
            "inputs": self.input_checksums(),
        }
        return clean(art)


def _daily_rows(results, pids) -> list[dict]:
    return [{"policy_id": pid, **d.to_dict()} for pid in pids for d in results[pid].daily]


def figure_tables(p: Pipeline, stages: Iterable[str] = ("all",)) -> dict[str, list[dict]]:
    """Figure-data tables keyed by file stem, restricted to the requested stages."""
    want = set(stages)
    every = "all" in want
    out: dict[str, list[dict]] = {}
    if every or "replay" in want:
        out["fig_05_frontier"] = [r.to_dict() for r in p.frontier]
        pids = p.shortlist or p.candidates
        out["fig_06_daily_stability"] = _daily_rows(p.replay, pids)
        out["fig_07_guardrails"] = p.guardrails.rows()
    if every or "transfer" in want:
        out["fig_transfer"] = [
            {"policy_id": pid, "discovery_lift": float(p.replay[pid].lift),
             "validation_lift": t.lift, "validation_rank": t.rank, "T": t.value,
             "available": t.available, **t.retention}
            for pid, t in p.transfer.items()]
    if (every or "ope" in want) and p.shortlist:
        out["fig_04_calibration"] = p.calibration.rows()
        out["fig_08_estimators"] = [
            {"policy_id": pid, "replay_lift": float(p.replay[pid].lift), "dm": e.v_dm,
             "ipw": e.v_ipw, "dr": e.v_dr, "dr_lift": e.lift_dr, "crossfit_lift": e.crossfit_lift,
             "boot_p10": e.boot_p10, "boot_median": e.boot_median, "boot_p90": e.boot_p90,
             "boot_se": e.boot_se, "lower_bound": e.lower_bound}
            for pid, e in p.ope.items()]
        out["fig_08_weights"] = [
            {"policy_id": pid, "cap": r["cap"], **{k: v for k, v in r.items() if k != "cap"},
             "ess": e.ess, "ess_share": e.ess_share, "p99_weight": e.p99_weight,
             "matched": e.matched}
            for pid, e in p.ope.items() for r in e.clip_sweep]
        out["fig_08_ranking"] = [
            {"rank": j + 1, "policy_id": pid, "score": p.lower_tail(pid),
             "ess_share": p.ope[pid].ess_share}
            for j, pid in enumerate(p.vp_order)]
        out["fig_09_segments"] = [s.to_dict() for s in p.segments]
    if (every or "sensitivity" in want) and p.shortlist:
        out["fig_10_response"] = [{"policy_id": pid, "rho": rho, "lift": v}
                                  for pid, r in p.robustness.items() for rho, v in r.response_curve]
        out["fig_11_support"] = [{"policy_id": pid, "scale": sc, "lower_tail_lift": v}
                                 for pid, r in p.robustness.items() for sc, v in r.support_curve]
        out["fig_12_robustness"] = [dict({"policy_id": pid, "breakeven_rho": r.breakeven_rho,
                                          "checks_passed": r.checks_passed},
                                         **{k: int(v) for k, v in r.checks.items()})
                                    for pid, r in p.robustness.items()]
    if every or "decide" in want:
        out["fig_decisions"] = [dict({"policy_id": pid, "action": p.actions[pid]},
                                     **dict(zip(GATES, g.bits)))
                                for pid, g in p.gates.items()]
        pid = p.selection[0]
        if pid is not None:
            g = p.gates[pid]
            running, rows = 1, []
            for name in GATES:
                running *= g[name]
                rows.append({"policy_id": pid, "gate": name, "value": g[name],
                             "cumulative": running, "source": g.gates[name].source,
                             "note": g.gates[name].note})
            out["fig_13_waterfall"] = rows
    if every or "mde" in want:
        out["fig_13_mde"] = [{"design": m.design, "units": m.units, "G": m.units_per_day,
                              "sigma": m.sigma, "c": m.c, "days": t, "relative": r, "absolute": a}
                             for m in p.mde for t, r, a in m.points]
    if every or "ablate" in want:
        out["fig_ablation"] = [dict(r, evidence="+".join(r["evidence"])) for r in p.ablation]
    return out


def _atomic_write(path: Path, text: str) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.")
    try:
        with os.fdopen(fd, "w", newline="") as fh:
            fh.write(text)
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def _cell(v):
    v = clean(v)
    if v is None:
        return ""
    if isinstance(v, bool):
        return int(v)
    if isinstance(v, float):
        return repr(v)
    if isinstance(v, (dict, list)):
        return json.dumps(v, sort_keys=True)
    return v


def write_table(rows: list[dict], path: Path) -> None:
    """CSV with the union of keys as header, in first-seen order."""
    header: list[str] = []
    for r in rows:
        header.extend(k for k in r if k not in header)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for r in rows:
        w.writerow([_cell(r.get(k)) for k in header])
    _atomic_write(path, buf.getvalue())


def write_json(obj, path: Path) -> None:
    _atomic_write(path, json.dumps(clean(obj), indent=2, sort_keys=True) + "\n")


def output_dir(p: Pipeline, out: str | os.PathLike | None = None) -> Path:
    base = out or p.config.get("run.out_dir") or os.environ.get("FLOORGATE_OUT") or "out"
    return Path(base) / p.run_id


def write_quarantine_file(p: Pipeline, directory: Path) -> None:
    rows = [q for panel in (p.discovery, p.validation) if panel is not None
            for q in panel.quarantine]
    buf = io.StringIO()
    w = csv.writer(buf, delimiter="\t", lineterminator="\n")
    w.writerow(["source", "line", "reason", "fields"])
    for q in rows:
        w.writerow([q.source, q.line, q.reason, "\x1f".join(q.fields)])
    _atomic_write(directory / "quarantine.tsv", buf.getvalue())


def write_outputs(p: Pipeline, out=None, stages: Iterable[str] = ("all",),
                  artifact: bool = True) -> Path:
    """Write figure tables (and the artifact) under ``out/<run-id>/``; returns the directory."""
    directory = output_dir(p, out)
    for name, rows in figure_tables(p, stages).items():
        write_table(rows, directory / f"{name}.csv")
    write_quarantine_file(p, directory)
    if artifact:
        write_json(p.artifact(), directory / "artifact.json")
    return directory


def run_pipeline(config: RunConfig | None = None, **panels) -> dict:
    """Run every stage and return the decision artifact as a JSON-ready dict."""
    return Pipeline(config, **panels).artifact()
