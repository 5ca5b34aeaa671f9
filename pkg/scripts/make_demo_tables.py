"""Write a small set of messy hospital tables to data/demo/.

The tables are derived from a synthetic log and then damaged the way real
extracts tend to be: split date and time columns, local clock times, zero
placeholders, repeated monitor readings, triage recorded a few minutes
before admission and medication rows with no time or no date at all.

    python scripts/make_demo_tables.py [--cases 200] [--seed 7] [--out data/demo]
"""
from __future__ import annotations

import argparse
import csv
from datetime import timedelta
from pathlib import Path
from zoneinfo import ZoneInfo

import numpy as np

from pathmon.synth import SynthConfig, generate_log

LOCAL = ZoneInfo("Europe/Madrid")


def _write(path: Path, header: list[str], rows: list[list]) -> None:
    with path.open("w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def _num(v) -> str:
    return "" if v is None else str(v)


def main() -> None:
    ap = argparse.ArgumentParser()
    ap.add_argument("--cases", type=int, default=200)
    ap.add_argument("--seed", type=int, default=7)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "data" / "demo"))
    args = ap.parse_args()
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)

    log, _ = generate_log(SynthConfig(n_cases=args.cases, seed=args.seed))
    rng = np.random.default_rng(args.seed)
    patients, admissions, triage, vitals, labs, meds, oxygen, icu = ([] for _ in range(8))

    for trace in log:
        pid = trace.case_id.replace("case", "P")
        patients.append([pid, trace.case_attributes["age"], trace.case_attributes["sex"]])
        icu_row = [pid, "", ""]
        for e in trace.events:
            t = e.timestamp
            a = e.attributes
            if e.activity == "Admission":
                local = t.astimezone(LOCAL)
                admissions.append([pid, local.strftime("%d/%m/%Y"), local.strftime("%H:%M"), a["department"]])
                # triage usually lands a few minutes before admission
                lead = int(rng.integers(60, 600)) if rng.random() < 0.85 else int(rng.integers(1800, 3600))
                tt = t - timedelta(seconds=lead)
                triage.append([pid, tt.strftime("%Y-%m-%d %H:%M:%S"), int(rng.integers(1, 6))])
            elif e.activity == "Vital Signs":
                hr = a["hr"] if rng.random() > 0.05 else 0
                row = [pid, t.strftime("%Y-%m-%d"), t.strftime("%H:%M:%S"), a["spo2"], hr, a["temp"]]
                vitals.append(row)
                if rng.random() < 0.15:
                    # monitor repeats a reading at the same second
                    vitals.append([pid, row[1], row[2], a["spo2"], a["hr"], round(a["temp"] + 0.1, 1)])
            elif e.activity == "Lab Test":
                labs.append([pid, t.strftime("%Y-%m-%dT%H:%M:%S"), _num(a.get("crp")), _num(a.get("lymph"))])
            elif e.activity == "Medication":
                u = rng.random()
                if u < 0.1:
                    meds.append([pid, a["drug"], "", ""])
                elif u < 0.2:
                    meds.append([pid, a["drug"], t.strftime("%Y-%m-%d"), ""])
                else:
                    meds.append([pid, a["drug"], t.strftime("%Y-%m-%d"), t.strftime("%H:%M")])
            elif e.activity == "Oxygen Therapy":
                oxygen.append([pid, t.strftime("%Y-%m-%d %H:%M:%S"), a["flow"]])
            elif e.activity == "ICU Admission":
                icu_row[1] = t.strftime("%Y-%m-%d %H:%M:%S")
            elif e.activity == "ICU Discharge":
                icu_row[2] = t.strftime("%Y-%m-%d %H:%M:%S")
        if icu_row[1]:
            icu.append(icu_row)

    _write(out / "patients.csv", ["patient_id", "age", "sex"], patients)
    _write(out / "admissions.csv", ["patient_id", "adm_date", "adm_time", "department"], admissions)
    _write(out / "triage.csv", ["patient_id", "triage_ts", "esi_level"], triage)
    _write(out / "vitals.csv", ["patient_id", "vs_date", "vs_time", "spo2", "hr", "temp"], vitals)
    _write(out / "labs.csv", ["patient_id", "drawn_at", "crp", "lymph"], labs)
    _write(out / "medications.csv", ["patient_id", "drug", "med_date", "med_time"], meds)
    _write(out / "oxygen.csv", ["patient_id", "started_at", "flow"], oxygen)
    _write(out / "icu.csv", ["patient_id", "icu_in", "icu_out"], icu)
    print(f"wrote {len(patients)} patients to {out}")


if __name__ == "__main__":
    main()
