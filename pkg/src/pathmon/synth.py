"""Synthetic clinical pathways with an outcome signal that appears late.

Each case opens with an admission and continues with vital signs, labs,
medications and occasional oxygen therapy. Cases that end in ICU admission
start to deteriorate only after ``signal_onset_position`` events: oxygen
saturation drifts down, CRP drifts up and oxygen therapy becomes more
frequent. Before the onset the two classes share one distribution, so
early prefixes carry no information about the outcome.

``noise_level`` scales every label-dependent effect by ``1 - noise_level``;
at 1 the labels are independent of the log apart from the target event.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from datetime import datetime, timedelta

import numpy as np

from .eventlog import EventLog, EventRecord, build_traces
from .timeutil import UTC

TARGET = "ICU Admission"
ADMISSION = "Admission"
ACTIVITIES = ("Vital Signs", "Lab Test", "Medication", "Oxygen Therapy")
BASE_RATES = np.array([0.5, 0.25, 0.17, 0.08])
DRUGS = ("paracetamol", "azithromycin", "enoxaparin", "dexamethasone", "ceftriaxone")

SHORT_LENGTHS = (2, 8)
# long stays run from onset+4 to onset+12
LONG_SPAN = (4, 12)
# per event past onset, at zero noise
SPO2_DRIFT = 1.6
CRP_DRIFT = 14.0
OXYGEN_BOOST = 0.3
SPO2_BASE_SD = 1.5
HR_BASE_SD = 9.0
CRP_BASE_SD = 0.6


class SynthError(Exception):
    pass


@dataclass(frozen=True)
class SynthConfig:
    n_cases: int = 1000
    positive_rate: float = 0.126
    mean_trace_length: float = 10.5
    signal_onset_position: int = 10
    noise_level: float = 0.25
    seed: int = 0

    def __post_init__(self):
        if not 0 < self.positive_rate < 1:
            raise SynthError("positive_rate must lie in (0, 1)")
        if self.signal_onset_position < 1:
            raise SynthError("signal_onset_position must be at least 1")
        if not 0 <= self.noise_level <= 1:
            raise SynthError("noise_level must lie in [0, 1]")
        if self.n_cases < 1:
            raise SynthError("n_cases must be positive")

    @property
    def n_positive(self) -> int:
        return int(math.floor(self.n_cases * self.positive_rate + 0.5))


def _length_sampler(cfg: SynthConfig):
    """Mixture of short stays and long stays that reach well past the onset.

    The mixing weight is chosen so the expected length equals
    ``mean_trace_length`` (clamped to what the two components can reach).
    """
    lo, hi = SHORT_LENGTHS
    long_lo = cfg.signal_onset_position + LONG_SPAN[0]
    long_hi = cfg.signal_onset_position + LONG_SPAN[1]
    short_mean = (lo + hi) / 2
    long_mean = (long_lo + long_hi) / 2
    if long_mean <= short_mean:
        q = 1.0 if cfg.mean_trace_length >= short_mean else 0.0
    else:
        q = (cfg.mean_trace_length - short_mean) / (long_mean - short_mean)
        q = min(max(q, 0.0), 1.0)

    def sample(rng: np.random.Generator) -> int:
        if rng.random() < q:
            return int(rng.integers(long_lo, long_hi + 1))
        return int(rng.integers(lo, hi + 1))

    return sample


def _case(cid: str, positive: bool, rng: np.random.Generator, n_events: int, cfg: SynthConfig):
    strength = (1.0 - cfg.noise_level) if positive else 0.0
    onset = cfg.signal_onset_position
    age = int(np.clip(round(rng.normal(62, 15)), 18, 99))
    sex = "F" if rng.random() < 0.45 else "M"
    spo2_base = rng.normal(95.5, SPO2_BASE_SD)
    hr_base = rng.normal(82, HR_BASE_SD)
    crp_base = float(np.exp(rng.normal(3.3, CRP_BASE_SD)))

    t = datetime(2020, 3, 1, tzinfo=UTC) + timedelta(seconds=int(rng.integers(0, 60 * 86400)))
    events = [EventRecord(cid, ADMISSION, t, {"department": "ED"}, "synth", 0)]
    for pos in range(2, n_events + 1):
        t = t + timedelta(seconds=int(60 + rng.exponential(3 * 3600)))
        past = max(0, pos - onset)
        rates = BASE_RATES.copy()
        if past:
            rates[3] += strength * OXYGEN_BOOST
        rates = rates / rates.sum()
        activity = ACTIVITIES[int(rng.choice(len(ACTIVITIES), p=rates))]
        drift = strength * past
        if activity == "Vital Signs":
            attrs = {
                "spo2": round(float(min(100.0, spo2_base - SPO2_DRIFT * drift + rng.normal(0, 1.0))), 1),
                "hr": round(float(hr_base + 1.5 * drift + rng.normal(0, 6)), 1),
                "temp": round(float(rng.normal(37.1, 0.5)), 1),
            }
        elif activity == "Lab Test":
            attrs = {
                "crp": round(float(crp_base * math.exp(rng.normal(0, 0.25)) + CRP_DRIFT * drift), 1),
                "lymph": round(float(max(0.1, rng.normal(1.4, 0.4))), 2),
            }
        elif activity == "Medication":
            attrs = {"drug": DRUGS[int(rng.integers(len(DRUGS)))]}
        else:
            attrs = {"flow": round(float(rng.uniform(1, 6) + 0.5 * drift), 1)}
        events.append(EventRecord(cid, activity, t, attrs, "synth", pos - 1))
    if positive:
        t = t + timedelta(seconds=int(600 + rng.exponential(2 * 3600)))
        events.append(EventRecord(cid, TARGET, t, {}, "synth", n_events))
        t = t + timedelta(seconds=int(86400 * (2 + rng.exponential(5))))
        events.append(EventRecord(cid, "ICU Discharge", t, {}, "synth", n_events + 1))
    return events, {"age": age, "sex": sex}


def generate_log(config: SynthConfig) -> tuple[EventLog, dict[str, int]]:
    """Deterministic synthetic log and its case labels."""
    if config.n_positive == 0 or config.n_positive == config.n_cases:
        raise SynthError(
            f"{config.n_cases} cases at positive_rate {config.positive_rate} give {config.n_positive} positives"
        )
    width = max(4, len(str(config.n_cases)))
    ids = [f"case{i:0{width}d}" for i in range(1, config.n_cases + 1)]
    chooser = np.random.default_rng([config.seed, 0])
    positives = set(chooser.choice(config.n_cases, size=config.n_positive, replace=False).tolist())
    sample_length = _length_sampler(config)
    events: list[EventRecord] = []
    case_attrs: dict[str, dict] = {}
    labels: dict[str, int] = {}
    for i, cid in enumerate(ids):
        rng = np.random.default_rng([config.seed, 1, i])
        n_events = sample_length(rng)
        case_events, attrs = _case(cid, i in positives, rng, n_events, config)
        events.extend(case_events)
        case_attrs[cid] = attrs
        labels[cid] = int(i in positives)
    return build_traces(events, case_attrs), labels
