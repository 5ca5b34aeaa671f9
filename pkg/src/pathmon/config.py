"""Pipeline configuration: one YAML/JSON document merged over defaults."""
from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

from .eventlog import DEFAULT_PRIORITY, CollectorSpec
from .evaluate import REPORT_LENGTHS
from .featurize import FeatureConfig
from .ingest import AnchorSpec, CorrectionRule, OrderingLabel, TableSchema
from .prefixing import TargetSpec
from .synth import SynthConfig

DEFAULTS: dict[str, Any] = {
    "seed": 42,
    "out": "runs/default",
    "source": "synth",
    "synth": {
        "n_cases": 1000,
        "positive_rate": 0.126,
        "mean_trace_length": 10.5,
        "signal_onset_position": 10,
        "noise_level": 0.25,
    },
    "lift": None,
    "log": {"activity_priority": list(DEFAULT_PRIORITY), "demographics": None},
    "target": {"activity": "ICU Admission", "exclude_target_suffix": True},
    "prefixes": {"max_length": None},
    "features": {
        "admission_activity": "Admission",
        "signals": [
            {"name": s} for s in ("spo2", "hr", "temp", "crp", "lymph", "flow")
        ],
        "case_attributes": [
            {"name": "age", "encoding": "numeric"},
            {"name": "sex", "encoding": "one_hot"},
        ],
    },
    "split": {"test_fraction": 0.2},
    "model": {
        "kind": "logreg",
        "logreg": {"l2_lambda": 0.01, "max_iters": 500, "tolerance": 1e-6, "class_weight": False},
        "rf": {"n_trees": 100, "max_depth": 12, "min_samples_leaf": 5, "features_per_split": None, "class_weight": False},
    },
    "evaluate": {"threshold": 0.5, "lengths": list(REPORT_LENGTHS)},
}


class ConfigError(Exception):
    pass


def deep_merge(base: Mapping, override: Mapping) -> dict:
    out = copy.deepcopy(dict(base))
    for k, v in override.items():
        if isinstance(v, Mapping) and isinstance(out.get(k), Mapping):
            out[k] = deep_merge(out[k], v)
        else:
            out[k] = copy.deepcopy(v)
    return out


def fingerprint(obj: Any) -> str:
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class TableConfig:
    schema: TableSchema
    date_column: str | None = None
    time_column: str | None = None
    datetime_column: str | None = None
    compress: bool = False


@dataclass
class LiftConfig:
    tables: list[TableConfig]
    collectors: list[CollectorSpec]
    anchors: list[AnchorSpec] = field(default_factory=list)
    anchor_constraints: list[tuple[str, str]] = field(default_factory=list)
    rules: list[CorrectionRule] = field(default_factory=list)
    ordering_labels: dict[str, OrderingLabel] = field(default_factory=dict)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any], base_dir: Path) -> "LiftConfig":
        tables = []
        for t in d.get("tables", []):
            path = Path(t["path"])
            if not path.is_absolute():
                path = base_dir / path
            schema = TableSchema(
                name=t["name"], path=str(path), case_column=t["case_column"],
                delimiter=t.get("delimiter", ","), timezone=t.get("timezone", "UTC"),
                columns=dict(t.get("columns", {})), nullable=tuple(t.get("nullable", ())),
            )
            ts = t.get("timestamp", {})
            tables.append(TableConfig(schema, ts.get("date"), ts.get("time"), ts.get("column"), bool(t.get("compress", False))))
        collectors = []
        for c in d.get("collectors", []):
            c = dict(c)
            c.setdefault("timestamp", "__ts")
            collectors.append(CollectorSpec(**c))
        return cls(
            tables=tables,
            collectors=collectors,
            anchors=[AnchorSpec(**a) for a in d.get("anchors", [])],
            anchor_constraints=[tuple(p) for p in d.get("anchor_constraints", [])],
            rules=[CorrectionRule(**r) for r in d.get("rules", [])],
            ordering_labels={k: OrderingLabel(v) for k, v in d.get("ordering_labels", {}).items()},
        )


@dataclass
class PipelineConfig:
    raw: dict[str, Any]
    base_dir: Path = Path(".")

    @property
    def seed(self) -> int:
        return int(self.raw["seed"])

    @property
    def out(self) -> Path:
        out = Path(self.raw["out"])
        return out if out.is_absolute() else self.base_dir / out

    @property
    def source(self) -> str:
        return self.raw["source"]

    @property
    def synth(self) -> SynthConfig:
        return SynthConfig(seed=self.seed, **self.raw["synth"])

    @property
    def lift(self) -> LiftConfig:
        if not self.raw.get("lift"):
            raise ConfigError("config has no 'lift' section")
        return LiftConfig.from_dict(self.raw["lift"], self.base_dir)

    @property
    def target(self) -> TargetSpec:
        return TargetSpec(**self.raw["target"])

    @property
    def features(self) -> FeatureConfig:
        return FeatureConfig.from_dict(self.raw["features"])

    @property
    def model_kind(self) -> str:
        return self.raw["model"]["kind"]

    def model_hyper(self, kind: str | None = None) -> dict:
        kind = kind or self.model_kind
        hyper = {k: v for k, v in self.raw["model"][kind].items() if v is not None}
        hyper["seed"] = self.seed
        return hyper

    def section_fingerprint(self, *keys: str) -> str:
        return fingerprint({k: self.raw.get(k) for k in keys})


def load_config(path: str | Path | None = None, overrides: Mapping[str, Any] | None = None) -> PipelineConfig:
    """Defaults, then the config document, then ``overrides`` (dotted keys allowed)."""
    raw = copy.deepcopy(DEFAULTS)
    base_dir = Path.cwd()
    if path is not None:
        path = Path(path)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        doc = yaml.safe_load(path.read_text(encoding="utf-8")) or {}
        if not isinstance(doc, Mapping):
            raise ConfigError(f"{path}: top level must be a mapping")
        raw = deep_merge(raw, doc)
        base_dir = path.resolve().parent
    for key, value in (overrides or {}).items():
        if value is None:
            continue
        node = raw
        parts = key.split(".")
        for p in parts[:-1]:
            node = node.setdefault(p, {})
        node[parts[-1]] = value
    if raw["source"] not in ("synth", "tables"):
        raise ConfigError(f"source must be 'synth' or 'tables', got {raw['source']!r}")
    if raw["model"]["kind"] not in ("logreg", "rf"):
        raise ConfigError(f"model.kind must be logreg or rf, got {raw['model']['kind']!r}")
    return PipelineConfig(raw, base_dir)
