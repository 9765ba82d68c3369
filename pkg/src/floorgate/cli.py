"""Command-line entry point: ``floorgate <command> [options]``.

Exit codes: 0 success, 2 usage error, 3 invariant or contract violation,
4 input/output failure. Failures print one JSON object on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path

from . import __version__, backend
from .config import RunConfig
from .errors import FloorgateError
from .panel import LogSchema, ingest_logs, panel_summary, write_panel, write_quarantine
from .pipeline import Pipeline, clean, output_dir, write_json, write_outputs
from .synthgen import GenConfig, generate_panel

STAGES = {
    "replay": ("replay", "transfer"),
    "ope": ("ope",),
    "sensitivity": ("sensitivity",),
    "decide": ("decide",),
    "ablate": ("ablate",),
    "mde": ("mde",),
    "all": ("all",),
}


def _common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--config", help="YAML or JSON run configuration")
    p.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                   help="dotted config override, e.g. ope.boot_b=500 (repeatable)")
    p.add_argument("--out", help="output root (default: $FLOORGATE_OUT or ./out)")
    p.add_argument("--threads", type=int, help="worker threads for ingest and replay")
    p.add_argument("--seed", type=int, help="run seed for logger, folds and bootstrap")
    p.add_argument("--discovery", nargs="+", metavar="PATH", help="discovery-window log files")
    p.add_argument("--validation", nargs="+", metavar="PATH", help="validation-window log files")
    p.add_argument("--schema", help="JSON log schema mapping")
    p.add_argument("-v", "--verbose", action="store_true")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="floorgate",
                                     description="Offline launch-readiness evaluation of "
                                                 "reserve-price policies.")
    parser.add_argument("--version", action="version",
                        version=f"floorgate {__version__} ({backend()} kernels)")
    sub = parser.add_subparsers(dest="command", required=True)

    g = sub.add_parser("gen", help="write a synthetic auction log")
    _common(g)
    g.add_argument("--window", choices=("discovery", "validation"), default="discovery",
                   help="which synth.* section to use")
    g.add_argument("--rows", type=int)
    g.add_argument("--days", type=int)
    g.add_argument("--output", required=True, help="destination TSV (.gz allowed)")

    i = sub.add_parser("ingest", help="validate logs; write a clean panel and quarantine")
    _common(i)
    i.add_argument("paths", nargs="+")
    i.add_argument("--output", help="clean panel TSV (default: <out>/<run-id>/panel.tsv)")

    for name, text in (("replay", "replay every catalog policy and screen guardrails"),
                       ("ope", "simulated-logger OPE diagnostics for the shortlist"),
                       ("sensitivity", "response and support stress tests"),
                       ("decide", "gate vectors, actions and the decision artifact"),
                       ("ablate", "decision-rule ablation table"),
                       ("mde", "validation-design MDE curves"),
                       ("all", "run every stage and write all outputs")):
        _common(sub.add_parser(name, help=text))
    return parser


def _config(args) -> RunConfig:
    extra: dict = {"run": {}, "data": {}}
    if args.threads is not None:
        extra["run"]["threads"] = args.threads
    if args.seed is not None:
        extra["run"]["seed"] = args.seed
    if args.out is not None:
        extra["run"]["out_dir"] = args.out
    if args.discovery:
        extra["data"]["discovery"] = args.discovery
    if args.validation:
        extra["data"]["validation"] = args.validation
    if args.schema:
        extra["data"]["schema"] = args.schema
    return RunConfig.load(args.config, args.overrides, extra)


def _schema(cfg: RunConfig) -> LogSchema | None:
    schema = cfg.get("data.schema")
    if isinstance(schema, str):
        return LogSchema.load(schema)
    if isinstance(schema, dict):
        return LogSchema.from_mapping(schema)
    return None


def _cmd_gen(args, cfg: RunConfig) -> dict:
    section = dict(cfg.get(f"synth.{args.window}") or {})
    if args.rows is not None:
        section["n_rows"] = args.rows
    if args.days is not None:
        section["n_days"] = args.days
    if args.seed is not None:
        section["seed"] = args.seed
    gen = GenConfig.from_dict(section)
    panel = generate_panel(gen)
    write_panel(panel, args.output)
    return {"output": args.output, "rows": len(panel), "config": gen.to_dict()}


def _cmd_ingest(args, cfg: RunConfig) -> dict:
    panel = ingest_logs(args.paths, _schema(cfg), window_id="ingest",
                        threads=int(cfg.get("run.threads")))
    target = Path(args.output) if args.output else None
    if target is None:
        p = Pipeline(cfg, discovery=panel)
        directory = output_dir(p, cfg.get("run.out_dir"))
        target = directory / "panel.tsv"
    target.parent.mkdir(parents=True, exist_ok=True)
    write_panel(panel, target)
    quarantine = target.with_name("quarantine.tsv")
    write_quarantine(panel.quarantine, quarantine)
    summary = panel_summary(panel).to_dict()
    summary.update(quarantined=len(panel.quarantine), checksums=dict(panel.checksums))
    write_json(summary, target.with_name("ingest_summary.json"))
    return {"output": str(target), "rows": len(panel), "quarantined": len(panel.quarantine)}


def _cmd_stage(args, cfg: RunConfig) -> dict:
    p = Pipeline(cfg)
    want_artifact = args.command in ("decide", "all")
    directory = write_outputs(p, cfg.get("run.out_dir"), STAGES[args.command],
                              artifact=want_artifact)
    if args.command == "replay":
        write_json({pid: r.to_dict() for pid, r in p.replay.items()}, directory / "replay.json")
    result = {"run_id": p.run_id, "out": str(directory), "backend": backend()}
    if want_artifact:
        pid, action, _ = p.selection
        result.update(selected_policy=pid, action=action)
    return result


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        cfg = _config(args)
        if args.command == "gen":
            result = _cmd_gen(args, cfg)
        elif args.command == "ingest":
            result = _cmd_ingest(args, cfg)
        else:
            result = _cmd_stage(args, cfg)
    except FloorgateError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 3
    except OSError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 4
    print(json.dumps(clean(result), sort_keys=True))
    return 0


if __name__ == "__main__":
    sys.exit(main())
