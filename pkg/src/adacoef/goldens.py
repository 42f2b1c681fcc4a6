"""Golden-value verification: expected metrics with tolerances and
provenance, checked against run outputs keyed by manifest hash."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field
from pathlib import Path

PROVENANCES = ("reference", "trivial", "derived")


class GoldenError(ValueError):
    pass


@dataclass(frozen=True)
class GoldenRecord:
    manifest_hash: str  # "" matches any run (pure identities)
    metric: str
    expected: float
    tolerance: float
    provenance: str
    note: str = ""

    def __post_init__(self):
        if self.provenance not in PROVENANCES:
            raise GoldenError(
                f"provenance must be one of {PROVENANCES}, got "
                f"'{self.provenance}'"
            )
        if self.tolerance < 0:
            raise GoldenError("tolerance must be >= 0")


def load_goldens(path) -> list[GoldenRecord]:
    data = json.loads(Path(path).read_text())
    return [GoldenRecord(**item) for item in data]


def save_goldens(path, goldens):
    payload = [
        {
            "manifest_hash": g.manifest_hash,
            "metric": g.metric,
            "expected": g.expected,
            "tolerance": g.tolerance,
            "provenance": g.provenance,
            "note": g.note,
        }
        for g in goldens
    ]
    Path(path).write_text(json.dumps(payload, indent=2))


def verify_goldens(
    outputs: dict, goldens, run_hash: str = ""
) -> dict:
    """Compare observed metrics to golden records.

    outputs maps metric name -> observed value; records whose
    manifest_hash is non-empty must match run_hash or they fail as stale.
    Returns a report dict with per-golden pass/fail entries."""
    entries = []
    n_pass = 0
    for g in goldens:
        entry = {
            "metric": g.metric,
            "expected": g.expected,
            "tolerance": g.tolerance,
            "provenance": g.provenance,
        }
        if g.manifest_hash and g.manifest_hash != run_hash:
            entry.update(status="fail", reason="stale golden (manifest hash mismatch)")
        elif g.metric not in outputs:
            entry.update(status="fail", reason="missing metric")
        else:
            observed = float(outputs[g.metric])
            entry["observed"] = observed
            if math.isfinite(observed) and abs(observed - g.expected) <= g.tolerance:
                entry["status"] = "pass"
                n_pass += 1
            else:
                entry.update(status="fail", reason="outside tolerance")
        entries.append(entry)
    return {
        "n_pass": n_pass,
        "n_fail": len(entries) - n_pass,
        "entries": entries,
    }


def write_report(report: dict, path) -> None:
    Path(path).write_text(json.dumps(report, indent=2))


def print_report(report: dict) -> None:
    for entry in report["entries"]:
        status = entry["status"].upper()
        observed = entry.get("observed", "n/a")
        print(
            f"[{status}] {entry['metric']}: observed={observed} "
            f"expected={entry['expected']}+-{entry['tolerance']} "
            f"({entry['provenance']})"
            + (f" -- {entry['reason']}" if "reason" in entry else "")
        )
