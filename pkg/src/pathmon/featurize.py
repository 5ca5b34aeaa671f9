"""Prefix-level feature extraction.

Five families are computed for each prefix: temporal, activity, transition,
clinical-signal aggregates and static case attributes. Vocabularies, levels
and standardization constants come from training prefixes only and are kept
in a :class:`FeatureSpec` so that test data is encoded identically.
"""
from __future__ import annotations

import csv
import hashlib
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Any, Iterable, Mapping, Sequence

import numpy as np

from .prefixing import Prefix, PrefixDataset

OOV = "__OOV__"
AGGREGATIONS = ("latest", "min", "max", "mean")


class FeatureError(Exception):
    pass


@dataclass(frozen=True)
class SignalSpec:
    name: str
    aggregations: tuple[str, ...] = AGGREGATIONS

    def __post_init__(self):
        object.__setattr__(self, "aggregations", tuple(self.aggregations))
        bad = set(self.aggregations) - set(AGGREGATIONS)
        if bad:
            raise ValueError(f"signal {self.name}: unknown aggregations {sorted(bad)}")


@dataclass(frozen=True)
class CaseAttributeSpec:
    name: str
    encoding: str = "numeric"

    def __post_init__(self):
        if self.encoding not in ("numeric", "one_hot"):
            raise ValueError(f"case attribute {self.name}: encoding must be numeric or one_hot")


@dataclass
class FeatureConfig:
    admission_activity: str = "Admission"
    signals: list[SignalSpec] = field(default_factory=list)
    case_attributes: list[CaseAttributeSpec] = field(default_factory=list)

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureConfig":
        return cls(
            admission_activity=d.get("admission_activity", "Admission"),
            signals=[SignalSpec(s["name"], tuple(s.get("aggregations", AGGREGATIONS))) for s in d.get("signals", [])],
            case_attributes=[CaseAttributeSpec(c["name"], c.get("encoding", "numeric")) for c in d.get("case_attributes", [])],
        )


@dataclass
class FeatureSpec:
    admission_activity: str
    activity_vocabulary: list[str]
    transition_vocabulary: list[tuple[str, str]]
    signal_specs: list[SignalSpec]
    case_attribute_specs: list[CaseAttributeSpec]
    categorical_levels: dict[str, list[str]]
    means: list[float] = field(default_factory=list)
    stds: list[float] = field(default_factory=list)

    @property
    def columns(self) -> list[str]:
        cols = [
            "elapsed_total", "time_since_admission", "gap_mean", "gap_max", "gap_last",
            "has_inferred_time", "missing:time_since_admission", "missing:gaps",
        ]
        vocab = [*self.activity_vocabulary, OOV]
        cols += [f"count:{a}" for a in vocab]
        cols += [f"freq:{a}" for a in vocab]
        cols += [f"last:{a}" for a in vocab]
        cols += [f"trans:{a}->{b}" for a, b in self.transition_vocabulary] + [f"trans:{OOV}"]
        for s in self.signal_specs:
            cols += [f"sig:{s.name}:{agg}" for agg in s.aggregations] + [f"missing:sig:{s.name}"]
        for c in self.case_attribute_specs:
            if c.encoding == "numeric":
                cols += [f"case:{c.name}", f"missing:case:{c.name}"]
            else:
                cols += [f"case:{c.name}={lvl}" for lvl in [*self.categorical_levels.get(c.name, []), OOV]]
        return cols

    @property
    def width(self) -> int:
        return len(self.columns)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["transition_vocabulary"] = [list(p) for p in self.transition_vocabulary]
        d["signal_specs"] = [{"name": s.name, "aggregations": list(s.aggregations)} for s in self.signal_specs]
        d["case_attribute_specs"] = [{"name": c.name, "encoding": c.encoding} for c in self.case_attribute_specs]
        return d

    @classmethod
    def from_dict(cls, d: Mapping[str, Any]) -> "FeatureSpec":
        return cls(
            admission_activity=d["admission_activity"],
            activity_vocabulary=list(d["activity_vocabulary"]),
            transition_vocabulary=[tuple(p) for p in d["transition_vocabulary"]],
            signal_specs=[SignalSpec(s["name"], tuple(s["aggregations"])) for s in d["signal_specs"]],
            case_attribute_specs=[CaseAttributeSpec(c["name"], c["encoding"]) for c in d["case_attribute_specs"]],
            categorical_levels={k: list(v) for k, v in d["categorical_levels"].items()},
            means=[float(x) for x in d["means"]],
            stds=[float(x) for x in d["stds"]],
        )

    def fingerprint(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def standardize(self, raw: np.ndarray) -> np.ndarray:
        """Center and scale; zero-variance columns and missing values map to 0."""
        mu = np.asarray(self.means)
        sd = np.asarray(self.stds)
        safe = np.where(sd > 0, sd, 1.0)
        z = (raw - mu) / safe
        z = np.where(sd > 0, z, 0.0)
        return np.where(np.isnan(z), 0.0, z)

    def inverse_standardize(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z) * np.asarray(self.stds) + np.asarray(self.means)


# -- feature families ----------------------------------------------------------


def temporal_features(prefix: Prefix, admission_activity: str = "Admission") -> dict[str, float]:
    ev = prefix.events
    t0, tk = ev[0].timestamp, ev[-1].timestamp
    out = {"elapsed_total": (tk - t0).total_seconds()}
    adm = next((e.timestamp for e in ev if e.activity == admission_activity), None)
    out["time_since_admission"] = (tk - adm).total_seconds() if adm is not None else math.nan
    gaps = [(b.timestamp - a.timestamp).total_seconds() for a, b in zip(ev, ev[1:])]
    if gaps:
        out.update(gap_mean=sum(gaps) / len(gaps), gap_max=max(gaps), gap_last=gaps[-1])
    else:
        out.update(gap_mean=math.nan, gap_max=math.nan, gap_last=math.nan)
    out["has_inferred_time"] = float(any(e.time_inferred for e in ev))
    out["missing:time_since_admission"] = float(adm is None)
    out["missing:gaps"] = float(not gaps)
    return out


def activity_features(prefix: Prefix, spec: FeatureSpec) -> dict[str, float]:
    vocab = set(spec.activity_vocabulary)
    counts = Counter(e.activity if e.activity in vocab else OOV for e in prefix.events)
    n = len(prefix.events)
    names = [*spec.activity_vocabulary, OOV]
    last = prefix.events[-1].activity
    last = last if last in vocab else OOV
    out = {f"count:{a}": float(counts[a]) for a in names}
    out.update({f"freq:{a}": counts[a] / n for a in names})
    out.update({f"last:{a}": float(a == last) for a in names})
    return out


def transition_features(prefix: Prefix, spec: FeatureSpec) -> dict[str, float]:
    vocab = set(spec.transition_vocabulary)
    out = {f"trans:{a}->{b}": 0.0 for a, b in spec.transition_vocabulary}
    out[f"trans:{OOV}"] = 0.0
    acts = [e.activity for e in prefix.events]
    for pair in zip(acts, acts[1:]):
        key = f"trans:{pair[0]}->{pair[1]}" if pair in vocab else f"trans:{OOV}"
        out[key] += 1.0
    return out


def _numeric(value) -> float | None:
    if isinstance(value, bool):
        return float(value)
    if isinstance(value, (int, float)):
        return float(value) if math.isfinite(value) else None
    return None


def clinical_aggregates(prefix: Prefix, signal_specs: Sequence[SignalSpec], quality: Counter | None = None) -> dict[str, float]:
    out = {}
    for s in signal_specs:
        obs = []
        for e in prefix.events:
            if s.name not in e.attributes:
                continue
            v = _numeric(e.attributes[s.name])
            if v is None:
                if quality is not None:
                    quality[f"non_numeric:{s.name}"] += 1
                continue
            obs.append(v)
        stats = {"latest": obs[-1], "min": min(obs), "max": max(obs), "mean": sum(obs) / len(obs)} if obs else {}
        for agg in s.aggregations:
            out[f"sig:{s.name}:{agg}"] = stats.get(agg, math.nan)
        out[f"missing:sig:{s.name}"] = float(not obs)
    return out


def case_features(prefix: Prefix, spec: FeatureSpec) -> dict[str, float]:
    out = {}
    attrs = prefix.case_attributes
    for c in spec.case_attribute_specs:
        value = attrs.get(c.name)
        if c.encoding == "numeric":
            v = _numeric(value)
            out[f"case:{c.name}"] = math.nan if v is None else v
            out[f"missing:case:{c.name}"] = float(v is None)
        else:
            levels = spec.categorical_levels.get(c.name, [])
            for lvl in levels:
                out[f"case:{c.name}={lvl}"] = float(value is not None and str(value) == lvl)
            out[f"case:{c.name}={OOV}"] = float(value is not None and str(value) not in levels)
    return out


def raw_features(prefix: Prefix, spec: FeatureSpec, quality: Counter | None = None) -> np.ndarray:
    """Unstandardized feature vector, NaN where a value is missing."""
    named = {}
    named.update(temporal_features(prefix, spec.admission_activity))
    named.update(activity_features(prefix, spec))
    named.update(transition_features(prefix, spec))
    named.update(clinical_aggregates(prefix, spec.signal_specs, quality))
    named.update(case_features(prefix, spec))
    return np.array([named[c] for c in spec.columns], dtype=float)


def raw_matrix(prefixes: Iterable[Prefix], spec: FeatureSpec, quality: Counter | None = None) -> np.ndarray:
    rows = [raw_features(p, spec, quality) for p in prefixes]
    if not rows:
        return np.zeros((0, spec.width))
    return np.vstack(rows)


def fit_spec(train: PrefixDataset, config: FeatureConfig) -> FeatureSpec:
    """Fit vocabularies, levels (pass 1) and standardization constants (pass 2)."""
    if not train.prefixes:
        raise FeatureError("cannot fit features on an empty training set")
    activities: set[str] = set()
    transitions: set[tuple[str, str]] = set()
    # the longest prefix of each case contains all shorter ones
    longest: dict[str, Prefix] = {}
    for p in train.prefixes:
        if p.case_id not in longest or p.length > longest[p.case_id].length:
            longest[p.case_id] = p
    for p in longest.values():
        acts = [e.activity for e in p.events]
        activities.update(acts)
        transitions.update(zip(acts, acts[1:]))
    levels: dict[str, list[str]] = {}
    for c in config.case_attributes:
        if c.encoding == "one_hot":
            seen = {str(p.case_attributes[c.name]) for p in longest.values() if p.case_attributes.get(c.name) is not None}
            levels[c.name] = sorted(seen)
    spec = FeatureSpec(
        admission_activity=config.admission_activity,
        activity_vocabulary=sorted(activities),
        transition_vocabulary=sorted(transitions),
        signal_specs=list(config.signals),
        case_attribute_specs=list(config.case_attributes),
        categorical_levels=levels,
    )
    raw = raw_matrix(train.prefixes, spec)
    means, stds = [], []
    for j in range(raw.shape[1]):
        col = raw[:, j]
        col = col[~np.isnan(col)]
        if col.size == 0:
            means.append(0.0)
            stds.append(0.0)
            continue
        mu = float(col.mean())
        sd = float(np.sqrt(np.mean((col - mu) ** 2)))
        means.append(mu)
        stds.append(sd if sd > 1e-12 * max(1.0, abs(mu)) else 0.0)
    spec.means, spec.stds = means, stds
    return spec


# -- feature table ---------------------------------------------------------------


@dataclass
class FeatureVector:
    prefix_id: str
    case_id: str
    length: int
    values: list[float]
    label: int


@dataclass
class FeatureTable:
    spec: FeatureSpec
    prefix_ids: list[str]
    case_ids: list[str]
    lengths: np.ndarray
    labels: np.ndarray
    X: np.ndarray

    @property
    def column_names(self) -> list[str]:
        return self.spec.columns

    def __len__(self) -> int:
        return len(self.prefix_ids)

    @property
    def rows(self) -> list[FeatureVector]:
        return [
            FeatureVector(p, c, int(k), list(map(float, x)), int(y))
            for p, c, k, x, y in zip(self.prefix_ids, self.case_ids, self.lengths, self.X, self.labels)
        ]

    def select(self, cases) -> "FeatureTable":
        cases = set(cases)
        idx = [i for i, c in enumerate(self.case_ids) if c in cases]
        return FeatureTable(
            self.spec,
            [self.prefix_ids[i] for i in idx],
            [self.case_ids[i] for i in idx],
            self.lengths[idx],
            self.labels[idx],
            self.X[idx],
        )


def build_feature_table(dataset: PrefixDataset, spec: FeatureSpec, quality: Counter | None = None) -> FeatureTable:
    """Encode every prefix with a fitted spec; rows ordered by (case_id, length)."""
    prefixes = sorted(dataset.prefixes, key=lambda p: (p.case_id, p.length))
    for p in prefixes:
        if len(p.events) != p.length:
            raise FeatureError(f"prefix {p.prefix_id} has {len(p.events)} events, expected {p.length}")
    X = spec.standardize(raw_matrix(prefixes, spec, quality))
    return FeatureTable(
        spec,
        [p.prefix_id for p in prefixes],
        [p.case_id for p in prefixes],
        np.array([p.length for p in prefixes], dtype=int),
        np.array([p.label for p in prefixes], dtype=int),
        X,
    )


def write_feature_table(table: FeatureTable, path: str | Path) -> None:
    """CSV ``prefix_id,case_id,length,label,<features>``; spec goes to a JSON sidecar."""
    path = Path(path)
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["prefix_id", "case_id", "length", "label", *table.column_names])
        for p, c, k, y, x in zip(table.prefix_ids, table.case_ids, table.lengths, table.labels, table.X):
            w.writerow([p, c, int(k), int(y), *(repr(float(v)) for v in x)])
    write_spec(table.spec, path.with_suffix(".spec.json"))


def write_spec(spec: FeatureSpec, path: str | Path) -> None:
    Path(path).write_text(json.dumps(spec.to_dict(), indent=2, sort_keys=True) + "\n", encoding="utf-8")


def read_spec(path: str | Path) -> FeatureSpec:
    return FeatureSpec.from_dict(json.loads(Path(path).read_text(encoding="utf-8")))


def read_feature_table(path: str | Path) -> FeatureTable:
    path = Path(path)
    spec = read_spec(path.with_suffix(".spec.json"))
    with path.open(newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header[4:] != spec.columns:
            raise FeatureError(f"{path}: columns do not match the feature spec")
        ids, cases, lengths, labels, values = [], [], [], [], []
        for row in reader:
            ids.append(row[0])
            cases.append(row[1])
            lengths.append(int(row[2]))
            labels.append(int(row[3]))
            values.append([float(v) for v in row[4:]])
    X = np.array(values, dtype=float).reshape(len(ids), spec.width)
    return FeatureTable(spec, ids, cases, np.array(lengths, dtype=int), np.array(labels, dtype=int), X)
