"""Key-rate reports and their JSON / CSV serialization."""

from __future__ import annotations

import csv
import io
import json
import math
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Any

import numpy as np

REPORT_FORMAT_VERSION = 1
CSV_COLUMNS = (
    "point",
    "qnu",
    "T_db_hat",
    "xi_x",
    "xi_p",
    "snr",
    "I_ab",
    "I_inter_max",
    "chi_trusted",
    "chi_untrusted",
    "K_eq1",
    "K_eq2",
)


@dataclass(frozen=True)
class QnuResult:
    """Security quantities of one network unit at one estimation point."""

    qnu: int
    T_db_hat: float
    xi_x: float
    xi_p: float
    xi_se: float
    snr: float
    V_A_hat: float
    I_ab: float
    I_inter_max: float
    I_inter_joint: float
    chi_trusted: float
    chi_untrusted: float
    K_eq1: float
    K_eq2: float
    below_threshold: bool

    @property
    def xi(self) -> float:
        return 0.5 * (self.xi_x + self.xi_p)


@dataclass(frozen=True)
class EstimationPoint:
    point: int
    first_frame: int
    n_frames: int
    n_samples: int
    qnus: tuple[QnuResult, ...]


@dataclass
class KeyRateReport:
    scenario_digest: str
    scenario: dict
    mode: str
    points: list[EstimationPoint] = field(default_factory=list)
    covariance: list[list[float]] | None = None
    diagnostics: dict = field(default_factory=dict)
    runtime: dict = field(default_factory=dict)
    failure: dict | None = None
    format_version: int = REPORT_FORMAT_VERSION

    @property
    def qnu_indices(self) -> list[int]:
        return [q.qnu for q in self.points[0].qnus] if self.points else []

    def averages(self) -> dict[int, dict[str, float]]:
        """Per-QNU mean of every numeric field over the estimation points."""
        out: dict[int, dict[str, float]] = {}
        names = [f.name for f in fields(QnuResult) if f.name not in ("qnu", "below_threshold")]
        for i in self.qnu_indices:
            rows = [q for p in self.points for q in p.qnus if q.qnu == i]
            out[i] = {n: float(np.mean([getattr(r, n) for r in rows])) for n in names}
        return out

    def result(self, point: int, qnu: int) -> QnuResult:
        return next(q for q in self.points[point].qnus if q.qnu == qnu)

    def to_dict(self, include_runtime: bool = True) -> dict:
        d = {
            "format_version": self.format_version,
            "scenario_digest": self.scenario_digest,
            "scenario": self.scenario,
            "mode": self.mode,
            "points": [asdict(p) for p in self.points],
            "averages": {str(k): v for k, v in self.averages().items()},
            "covariance": self.covariance,
            "diagnostics": self.diagnostics,
            "failure": self.failure,
        }
        if include_runtime:
            d["runtime"] = self.runtime
        return _round_floats(d)

    @classmethod
    def from_dict(cls, d: dict) -> "KeyRateReport":
        points = [
            EstimationPoint(
                p["point"],
                p["first_frame"],
                p["n_frames"],
                p["n_samples"],
                tuple(QnuResult(**q) for q in p["qnus"]),
            )
            for p in d["points"]
        ]
        return cls(
            d["scenario_digest"],
            d["scenario"],
            d["mode"],
            points,
            d.get("covariance"),
            d.get("diagnostics", {}),
            d.get("runtime", {}),
            d.get("failure"),
            d.get("format_version", REPORT_FORMAT_VERSION),
        )

    def csv_rows(self) -> list[dict[str, Any]]:
        rows = []
        for p in self.points:
            for q in p.qnus:
                row = {"point": p.point, **{c: getattr(q, c) for c in CSV_COLUMNS[1:]}}
                rows.append(row)
        return rows


def _fmt(x: float) -> float:
    return float(f"{x:.12g}") if math.isfinite(x) else x


def _round_floats(obj):
    if isinstance(obj, float):
        return _fmt(obj)
    if isinstance(obj, np.floating):
        return _fmt(float(obj))
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, dict):
        return {str(k): _round_floats(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_round_floats(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _round_floats(obj.tolist())
    return obj


def report_json(report: KeyRateReport, include_runtime: bool = True) -> str:
    return json.dumps(report.to_dict(include_runtime), sort_keys=True, indent=2) + "\n"


def report_csv(report: KeyRateReport) -> str:
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=CSV_COLUMNS, lineterminator="\n")
    writer.writeheader()
    for row in report.csv_rows():
        writer.writerow({k: (f"{v:.12g}" if isinstance(v, float) else v) for k, v in row.items()})
    return buf.getvalue()


def export_report(report: KeyRateReport, fmt: str, path: str | Path) -> Path:
    """Write ``report`` as ``json`` or ``csv``; ``path`` may be a directory."""
    if fmt not in ("json", "csv"):
        raise ValueError(f"unknown report format {fmt!r}")
    p = Path(path)
    if p.is_dir():
        p = p / f"report.{fmt}"
    text = report_json(report) if fmt == "json" else report_csv(report)
    p.write_text(text)
    return p


def load_report(path: str | Path) -> KeyRateReport:
    return KeyRateReport.from_dict(json.loads(Path(path).read_text()))
