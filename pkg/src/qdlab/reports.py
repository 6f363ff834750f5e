"""Structured verification records and their serializations."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field
from typing import Any, Iterable

PASS = "PASS"
FAIL = "FAIL"
INCONCLUSIVE = "INCONCLUSIVE"


def skipped(reason: str) -> str:
    return f"SKIPPED({reason})"


def _clean(x: Any) -> Any:
    """JSON-safe values: numpy scalars to Python, non-finite floats to strings."""
    if hasattr(x, "item") and not isinstance(x, (list, dict, str)):
        try:
            x = x.item()
        except (ValueError, AttributeError):
            pass
    if isinstance(x, complex):
        return {"re": _clean(x.real), "im": _clean(x.imag)}
    if isinstance(x, float) and not math.isfinite(x):
        return str(x)
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    return x


@dataclass
class VerificationReport:
    check: str
    status: str
    metrics: dict = field(default_factory=dict)
    geometry: dict = field(default_factory=dict)
    beta: float | None = None
    notes: str = ""
    suite: str = ""
    seed: int | None = None
    wall_time: float | None = None
    version: str = ""

    @property
    def passed(self) -> bool:
        return self.status == PASS

    @property
    def failed(self) -> bool:
        return self.status in (FAIL, INCONCLUSIVE)

    @property
    def is_skipped(self) -> bool:
        return self.status.startswith("SKIPPED")

    @classmethod
    def from_bool(cls, check: str, ok: bool, **kw) -> "VerificationReport":
        return cls(check, PASS if ok else FAIL, **kw)

    def to_dict(self) -> dict:
        return _clean(asdict(self))

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True)

    def numbers(self) -> dict:
        """Everything except the wall time, for reproducibility comparisons."""
        d = self.to_dict()
        d.pop("wall_time", None)
        return d


def to_ndjson(reports: Iterable[VerificationReport]) -> str:
    return "".join(r.to_json() + "\n" for r in reports)


def summary_table(reports: list[VerificationReport]) -> str:
    rows = [("check", "beta", "status", "key metric")]
    for r in reports:
        key = ""
        for name in ("max_error", "max_deviation", "distance", "gap", "min_slack", "value"):
            if name in r.metrics:
                v = r.metrics[name]
                key = f"{name}={v:.3e}" if isinstance(v, float) else f"{name}={v}"
                break
        beta = "" if r.beta is None else f"{r.beta:g}"
        rows.append((r.check, beta, r.status, key))
    widths = [max(len(row[i]) for row in rows) for i in range(4)]
    lines = ["  ".join(c.ljust(w) for c, w in zip(row, widths)).rstrip() for row in rows]
    lines.insert(1, "  ".join("-" * w for w in widths))
    n_pass = sum(r.passed for r in reports)
    n_fail = sum(r.failed for r in reports)
    n_skip = sum(r.is_skipped for r in reports)
    lines.append(f"{n_pass} passed, {n_fail} failed, {n_skip} skipped")
    return "\n".join(lines) + "\n"


def write_csv(path, header: list[str], rows: Iterable[Iterable[float]]) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        for row in rows:
            w.writerow([f"{v:.17g}" if isinstance(v, float) else v for v in row])


def read_ndjson(text: str) -> list[VerificationReport]:
    out = []
    for line in io.StringIO(text):
        line = line.strip()
        if line:
            out.append(VerificationReport(**json.loads(line)))
    return out
