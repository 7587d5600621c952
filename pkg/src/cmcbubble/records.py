"""JSON check records shared by the diagnostic routines and the CLI."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass


@dataclass
class CheckRecord:
    name: str
    lhs: float
    rhs: float
    ratio: float
    tolerance: float
    passed: bool
    note: str = ""

    def to_dict(self) -> dict:
        d = asdict(self)
        for k in ("lhs", "rhs", "ratio", "tolerance"):
            v = d[k]
            d[k] = None if v is None or (isinstance(v, float) and not math.isfinite(v)) else float(v)
        d["passed"] = bool(d["passed"])
        return d


def close_record(name: str, value: float, target: float, tol: float, note: str = "") -> CheckRecord:
    """|value - target| <= tol, reported with ratio value/target."""
    ratio = value / target if target else (0.0 if value == 0 else math.inf)
    return CheckRecord(name, float(value), float(target), float(ratio), float(tol), abs(value - target) <= tol, note)


def bound_record(name: str, lhs: float, rhs: float, tol: float = 0.0, note: str = "") -> CheckRecord:
    """lhs <= rhs + tol."""
    ratio = lhs / rhs if rhs else (0.0 if lhs == 0 else math.inf)
    return CheckRecord(name, float(lhs), float(rhs), float(ratio), float(tol), lhs <= rhs + tol, note)


def ratio_record(name: str, ratio: float, target: float, rel_tol: float, lhs=math.nan, rhs=math.nan,
                 note: str = "") -> CheckRecord:
    """ratio within rel_tol (relative) of target."""
    return CheckRecord(name, float(lhs), float(rhs), float(ratio), float(rel_tol),
                       abs(ratio - target) <= rel_tol * abs(target), note)


def dump_records(records: list[CheckRecord], **meta) -> str:
    payload = dict(meta)
    payload["checks"] = [r.to_dict() for r in records]
    payload["passed"] = all(r.passed for r in records)
    return json.dumps(payload, indent=2, sort_keys=True)
