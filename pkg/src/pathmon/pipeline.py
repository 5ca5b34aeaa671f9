"""Stage runner: every stage reads and writes files in one output directory.

Each run appends an entry to ``run_manifest.json`` with the stage, a
fingerprint of the config sections the stage depends on, sha256 digests
of its inputs and outputs, timestamps and the effective config.
"""
from __future__ import annotations

import hashlib
import json
import logging
import os
import time
from collections import Counter, defaultdict
from dataclasses import replace
from datetime import datetime
from pathlib import Path
from typing import Any, Callable

from . import eventlog as el
from .config import PipelineConfig, fingerprint
from .evaluate import CaseSplit, case_level_split, evaluate, write_predictions, write_report
from .featurize import build_feature_table, fit_spec, read_feature_table, write_feature_table
from .ingest import (
    SourceTable,
    UntimestampedCaseError,
    apply_correction_rules,
    build_anchor_table,
    build_timestamp,
    compress_high_frequency,
    infer_timestamps,
    load_table,
    normalize_missing,
    parse_datetime_field,
)
from .learn import fit, load_model, predict, serialize_model
from .prefixing import build_prefix_dataset, derive_case_label, read_prefix_dataset, write_prefix_dataset
from .synth import generate_log
from .timeutil import UTC, format_ts
from .xes import write_xes

log = logging.getLogger(__name__)

MANIFEST = "run_manifest.json"
TS_COL = "__ts"
STAGES = ("lift", "log", "synth", "prefixes", "features", "train", "evaluate", "all")
MODEL_STAGES = ("train", "evaluate")

LIFTED = "lifted_events.csv"
LIFT_REPORT = "lift_report.json"
EVENTLOG = "eventlog.csv"
EVENTLOG_XES = "eventlog.xes"
LOG_REPORT = "log_report.json"
PREFIXES = "prefixes.csv"
PREFIXES_META = "prefixes.json"
SPLIT = "split.json"
FEATURES = "features.csv"
FEATURES_SPEC = "features.spec.json"


class PipelineError(Exception):
    def __init__(self, message: str, stage: str | None = None):
        super().__init__(message)
        self.stage = stage


def sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with path.open("rb") as fh:
        for block in iter(lambda: fh.read(1 << 16), b""):
            h.update(block)
    return h.hexdigest()


def _now() -> str:
    # SOURCE_DATE_EPOCH pins manifest times for reproducible builds
    epoch = os.environ.get("SOURCE_DATE_EPOCH")
    t = datetime.fromtimestamp(int(epoch) if epoch else time.time(), UTC)
    return format_ts(t)


def _dump(obj: Any, path: Path) -> None:
    path.write_text(json.dumps(obj, indent=2, sort_keys=True, default=str) + "\n", encoding="utf-8")


# -- stage graph -----------------------------------------------------------------


def stage_order(cfg: PipelineConfig) -> list[str]:
    head = ["synth"] if cfg.source == "synth" else ["lift", "log"]
    return head + ["prefixes", "features", "train", "evaluate"]


def stage_outputs(stage: str, kind: str) -> list[str]:
    return {
        "lift": [LIFTED, LIFT_REPORT],
        "log": [EVENTLOG, EVENTLOG_XES, LOG_REPORT],
        "synth": [EVENTLOG, EVENTLOG_XES, LOG_REPORT],
        "prefixes": [PREFIXES, PREFIXES_META],
        "features": [SPLIT, FEATURES, FEATURES_SPEC],
        "train": [f"model_{kind}.json"],
        "evaluate": [f"predictions_{kind}.csv", f"metrics_{kind}.json", f"metrics_{kind}.txt"],
    }[stage]


def stage_inputs(stage: str, kind: str) -> list[tuple[str, str]]:
    """(file, producing stage) pairs; the log producer is resolved per source."""
    return {
        "lift": [],
        "synth": [],
        "log": [(LIFTED, "lift")],
        "prefixes": [(EVENTLOG, "log")],
        "features": [(EVENTLOG, "log"), (PREFIXES, "prefixes"), (PREFIXES_META, "prefixes")],
        "train": [(FEATURES, "features"), (FEATURES_SPEC, "features"), (SPLIT, "features")],
        "evaluate": [(FEATURES, "features"), (FEATURES_SPEC, "features"), (SPLIT, "features"), (f"model_{kind}.json", "train")],
    }[stage]


def stage_fingerprint(cfg: PipelineConfig, stage: str, kind: str | None = None) -> str:
    """Fingerprint of every config section that can change this stage's outputs."""
    raw = cfg.raw
    head = {"synth": raw["synth"], "seed": cfg.seed} if cfg.source == "synth" else {"lift": raw.get("lift")}
    parts: dict[str, Any] = {"source": cfg.source, **head}
    order = ["synth", "lift", "log", "prefixes", "features", "train", "evaluate"]
    level = order.index(stage)
    if level >= order.index("log") and cfg.source != "synth":
        parts["log"] = raw["log"]
    if level >= order.index("prefixes"):
        parts["target"] = raw["target"]
        parts["prefixes"] = raw["prefixes"]
    if level >= order.index("features"):
        parts.update(features=raw["features"], split=raw["split"], seed=cfg.seed)
    if level >= order.index("train"):
        kind = kind or cfg.model_kind
        parts["model"] = {"kind": kind, "hyper": raw["model"][kind]}
    if level >= order.index("evaluate"):
        parts["evaluate"] = raw["evaluate"]
    return fingerprint(parts)


# -- manifest --------------------------------------------------------------------


def read_manifest(out: Path) -> dict:
    path = out / MANIFEST
    if not path.exists():
        return {"format": "pathmon-manifest", "version": 1, "runs": []}
    return json.loads(path.read_text(encoding="utf-8"))


def _latest(manifest: dict, stage: str, kind: str | None = None) -> dict | None:
    for entry in reversed(manifest["runs"]):
        if entry["stage"] == stage and (stage not in MODEL_STAGES or entry.get("model") == kind):
            return entry
    return None


def _recorded_kinds(manifest: dict) -> set[str]:
    return {e["model"] for e in manifest["runs"] if e["stage"] in MODEL_STAGES}


def _producer(cfg: PipelineConfig, stage: str) -> str:
    return "synth" if stage == "log" and cfg.source == "synth" else stage


def check_stage(cfg: PipelineConfig, stage: str, kind: str, force: bool = False) -> None:
    """Refuse to run on missing, stale or modified prerequisites, or over artifacts from another config."""
    out = cfg.out
    if stage == "synth" and cfg.source != "synth":
        raise PipelineError("stage 'synth' needs source: synth in the config", "synth")
    if stage in ("lift", "log") and cfg.source == "synth":
        raise PipelineError(f"stage '{stage}' builds the log from tables; this config is synthetic, use 'synth'", stage)
    manifest = read_manifest(out)
    for name, producer in stage_inputs(stage, kind):
        producer = _producer(cfg, producer)
        path = out / name
        if not path.exists():
            raise PipelineError(f"missing {name} in {out}: run stage '{producer}' first", producer)
        entry = _latest(manifest, producer, kind)
        if entry is None or force:
            continue
        if entry["config_fingerprint"] != stage_fingerprint(cfg, producer, kind):
            raise PipelineError(
                f"{name} was built by stage '{producer}' under a different config; rerun '{producer}' or pass --force",
                producer,
            )
        recorded = entry["outputs"].get(name)
        if recorded is not None and recorded != sha256_file(path):
            raise PipelineError(f"{name} changed since stage '{producer}' wrote it; rerun '{producer}' or pass --force", producer)
    if force:
        return
    order = stage_order(cfg)
    downstream = order[order.index(stage):]
    kinds = _recorded_kinds(manifest) | {kind}
    for later in downstream:
        for k in sorted(kinds) if later in MODEL_STAGES else [kind]:
            entry = _latest(manifest, later, k)
            if entry is None:
                continue
            if not any((out / name).exists() for name in entry["outputs"]):
                continue
            if entry["config_fingerprint"] != stage_fingerprint(cfg, later, k):
                label = f"{later} ({k})" if later in MODEL_STAGES else later
                raise PipelineError(
                    f"existing artifacts of stage '{label}' in {out} come from a different config; pass --force to overwrite",
                    later,
                )


def _record(cfg: PipelineConfig, stage: str, kind: str, inputs: list[str], outputs: list[str], started: str, stats: dict) -> dict:
    out = cfg.out
    entry = {
        "stage": stage,
        "config_fingerprint": stage_fingerprint(cfg, stage, kind),
        "seed": cfg.seed,
        "started_at": started,
        "finished_at": _now(),
        "inputs": {n: sha256_file(out / n) for n in inputs},
        "outputs": {n: sha256_file(out / n) for n in outputs},
        "stats": stats,
        "config": cfg.raw,
    }
    if stage in MODEL_STAGES:
        entry["model"] = kind
    manifest = read_manifest(out)
    manifest["runs"].append(entry)
    _dump(manifest, out / MANIFEST)
    return entry


# -- stages ----------------------------------------------------------------------


def _timestamped_table(tc, stats: Counter) -> SourceTable:
    schema = tc.schema
    table = normalize_missing(load_table(schema.path, schema))
    rows = []
    for row in table.rows:
        row = dict(row)
        if tc.datetime_column:
            built = parse_datetime_field(row.get(tc.datetime_column), schema.timezone)
        elif tc.date_column:
            built = build_timestamp(row.get(tc.date_column), row.get(tc.time_column) if tc.time_column else None, schema.timezone)
        else:
            built = None
        row[TS_COL] = built.instant if built else None
        row[f"{TS_COL}__inferred"] = bool(built and built.time_inferred)
        rows.append(row)
    stats[f"rows:{schema.name}"] = len(rows)
    table = replace(table, columns=[*table.columns, TS_COL, f"{TS_COL}__inferred"], rows=rows)
    if tc.compress:
        # untimed rows get a unique key so compression never merges them
        key = "__compress_key"
        keyed = [{**r, key: r[TS_COL] if r[TS_COL] is not None else ("untimed", i)} for i, r in enumerate(rows)]
        table = compress_high_frequency(replace(table, columns=[*table.columns, key], rows=keyed), [schema.case_column, key])
        table = replace(table, columns=table.columns[:-1], rows=[{k: v for k, v in r.items() if k != key} for r in table.rows])
        stats[f"compressed:{schema.name}"] = len(rows) - len(table.rows)
    return table


def run_lift(cfg: PipelineConfig, kind: str) -> dict:
    lift = cfg.lift
    stats: Counter = Counter()
    tables = {tc.schema.name: _timestamped_table(tc, stats) for tc in lift.tables}
    by_case: dict[str, list] = defaultdict(list)
    for spec in lift.collectors:
        cands = el.collect_candidates(spec, tables)
        stats[f"candidates:{spec.name}"] = len(cands)
        for c in cands:
            by_case[c.case_id].append(c)
    events: list[el.EventRecord] = []
    dropped, warnings, untimed_cases = [], [], []
    for cid in sorted(by_case):
        cands = [c for c in by_case[cid] if c.activity]
        for c in by_case[cid]:
            if not c.activity:
                dropped.append({"case_id": cid, "activity": "", "source": c.source, "row": c.row_index, "reason": "empty activity"})
        cands = apply_correction_rules(cands, lift.rules, stats)
        per_source: dict[str, list] = defaultdict(list)
        for c in cands:
            per_source[c.source].append(c.timestamp)
        try:
            anchors = build_anchor_table(cid, per_source, lift.anchors, lift.anchor_constraints)
        except UntimestampedCaseError:
            untimed_cases.append(cid)
            continue
        warnings.extend({"case_id": cid, "warning": w} for w in anchors.warnings)
        result = infer_timestamps(cands, anchors, lift.ordering_labels)
        for c, reason in result.dropped:
            dropped.append({"case_id": cid, "activity": c.activity, "source": c.source, "row": c.row_index, "reason": reason})
        for c in result.events:
            e = el.candidate_to_event(c)
            events.append(replace(e, attributes={**e.attributes, "_source": c.source, "_row": c.row_index}))
    lifted = el.build_traces(events, priority=cfg.raw["log"]["activity_priority"])
    el.write_csv(lifted, cfg.out / LIFTED)
    report = {
        "counts": dict(sorted(stats.items())),
        "cases": len(lifted),
        "events": lifted.n_events,
        "untimestamped_cases": untimed_cases,
        "dropped_events": dropped,
        "anchor_warnings": warnings,
    }
    _dump(report, cfg.out / LIFT_REPORT)
    return {"cases": len(lifted), "events": lifted.n_events, "dropped": len(dropped), "untimestamped_cases": len(untimed_cases)}


def _strip_provenance(e: el.EventRecord) -> el.EventRecord:
    attrs = dict(e.attributes)
    source = str(attrs.pop("_source", e.source))
    row = int(attrs.pop("_row", e.row_index))
    return el.EventRecord(e.case_id, e.activity, e.timestamp, attrs, source, row)


def _write_log(cfg: PipelineConfig, log_: el.EventLog, report: dict) -> None:
    el.write_csv(log_, cfg.out / EVENTLOG)
    write_xes(log_, cfg.out / EVENTLOG_XES)
    report = {
        **report,
        "cases": len(log_),
        "events": log_.n_events,
        "activities": dict(sorted(Counter(e.activity for t in log_ for e in t.events).items())),
    }
    _dump(report, cfg.out / LOG_REPORT)


def run_log(cfg: PipelineConfig, kind: str) -> dict:
    lifted = el.read_csv(cfg.out / LIFTED)
    events = [_strip_provenance(e) for t in lifted for e in t.events]
    case_attrs: dict[str, dict] = {}
    report: dict[str, Any] = {}
    demo = cfg.raw["log"].get("demographics")
    if demo:
        tc = next((t for t in cfg.lift.tables if t.schema.name == demo["table"]), None)
        if tc is None:
            raise PipelineError(f"demographics table {demo['table']!r} is not listed under lift.tables", "log")
        table = normalize_missing(load_table(tc.schema.path, tc.schema))
        events, case_attrs = el.propagate_case_attributes(events, table, demo.get("columns"), demo.get("types"))
        report["cases_without_demographics"] = sorted(c for c, a in case_attrs.items() if not a)
    log_ = el.build_traces(events, case_attrs, cfg.raw["log"]["activity_priority"])
    _write_log(cfg, log_, report)
    return {"cases": len(log_), "events": log_.n_events}


def run_synth(cfg: PipelineConfig, kind: str) -> dict:
    sc = cfg.synth
    log_, labels = generate_log(sc)
    target = cfg.target
    derived = {t.case_id: derive_case_label(t, target) for t in log_}
    if derived != labels:
        raise PipelineError(f"target activity {target.activity!r} does not reproduce the synthetic labels", "synth")
    _write_log(cfg, log_, {"synth": {**cfg.raw["synth"], "seed": sc.seed}, "positive_cases": sum(labels.values())})
    return {"cases": len(log_), "events": log_.n_events, "positive_cases": sum(labels.values())}


def run_prefixes(cfg: PipelineConfig, kind: str) -> dict:
    log_ = el.read_csv(cfg.out / EVENTLOG)
    ds = build_prefix_dataset(log_, cfg.target, cfg.raw["prefixes"]["max_length"])
    write_prefix_dataset(ds, cfg.out / PREFIXES, EVENTLOG, cfg.target, sha256_file(cfg.out / EVENTLOG))
    return {"prefixes": len(ds.prefixes), "cases": len(ds.case_labels), "positive_rate": ds.positive_rate}


def _load_prefixes(cfg: PipelineConfig):
    log_ = el.read_csv(cfg.out / EVENTLOG)
    meta = json.loads((cfg.out / PREFIXES_META).read_text(encoding="utf-8"))
    if meta.get("event_log_sha256") and meta["event_log_sha256"] != sha256_file(cfg.out / EVENTLOG):
        raise PipelineError(f"{EVENTLOG} changed after the prefixes were built; rerun 'prefixes'", "prefixes")
    return read_prefix_dataset(cfg.out / PREFIXES, log_)


def run_features(cfg: PipelineConfig, kind: str) -> dict:
    ds = _load_prefixes(cfg)
    split = case_level_split(ds.case_labels, cfg.raw["split"]["test_fraction"], cfg.seed)
    _dump(split.to_dict(), cfg.out / SPLIT)
    spec = fit_spec(ds.subset(split.train_cases), cfg.features)
    quality: Counter = Counter()
    table = build_feature_table(ds, spec, quality)
    write_feature_table(table, cfg.out / FEATURES)
    return {
        "rows": len(table.prefix_ids),
        "columns": spec.width,
        "train_cases": len(split.train_cases),
        "test_cases": len(split.test_cases),
        "quality": dict(sorted(quality.items())),
    }


def _load_split(cfg: PipelineConfig) -> CaseSplit:
    return CaseSplit.from_dict(json.loads((cfg.out / SPLIT).read_text(encoding="utf-8")))


def run_train(cfg: PipelineConfig, kind: str) -> dict:
    table = read_feature_table(cfg.out / FEATURES)
    split = _load_split(cfg)
    train = table.select(split.train_cases)
    model = fit(kind, train, **cfg.model_hyper(kind))
    serialize_model(model, cfg.out / f"model_{kind}.json")
    stats: dict[str, Any] = {"train_rows": len(train.prefix_ids)}
    if kind == "logreg":
        stats.update(iterations=model.iterations, converged=model.converged, final_objective=model.final_objective)
    return stats


def run_evaluate(cfg: PipelineConfig, kind: str) -> dict:
    table = read_feature_table(cfg.out / FEATURES)
    split = _load_split(cfg)
    model = load_model(cfg.out / f"model_{kind}.json", table)
    preds = predict(model, table.select(split.test_cases))
    write_predictions(preds, cfg.out / f"predictions_{kind}.csv")
    ev = cfg.raw["evaluate"]
    report = evaluate(preds, kind, ev["threshold"], ev["lengths"])
    write_report(report, cfg.out / f"metrics_{kind}.json")
    return {"auc": report.auc, "f1": report.f1, "test_prefixes": report.n_prefixes}


RUNNERS: dict[str, Callable[[PipelineConfig, str], dict]] = {
    "lift": run_lift,
    "log": run_log,
    "synth": run_synth,
    "prefixes": run_prefixes,
    "features": run_features,
    "train": run_train,
    "evaluate": run_evaluate,
}


def run_stage(stage: str, cfg: PipelineConfig, force: bool = False, kind: str | None = None) -> list[dict]:
    """Run one stage (or all of them in order); returns the new manifest entries."""
    if stage not in STAGES:
        raise PipelineError(f"unknown stage {stage!r}; choose from {', '.join(STAGES)}")
    kind = kind or cfg.model_kind
    cfg.out.mkdir(parents=True, exist_ok=True)
    if stage == "all":
        order = stage_order(cfg)
        check_stage(cfg, order[0], kind, force)
        return [_run_one(s, cfg, kind, force=True) for s in order]
    check_stage(cfg, stage, kind, force)
    return [_run_one(stage, cfg, kind, force)]


def _run_one(stage: str, cfg: PipelineConfig, kind: str, force: bool) -> dict:
    if force:
        check_stage(cfg, stage, kind, force=True)
    started = _now()
    log.info("stage %s: start", stage)
    stats = RUNNERS[stage](cfg, kind)
    inputs = [n for n, _ in stage_inputs(stage, kind)]
    return _record(cfg, stage, kind, inputs, stage_outputs(stage, kind), started, stats)
