"""Evaluation reports: JSON document plus CSV series for plotting."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import os
from dataclasses import dataclass, field
from pathlib import Path

from . import __version__
from .inference import EstimateResult, SimultaneousBands

RISK_COLUMNS = ["predictor", "mean", "ci_lower", "ci_upper"]
BIAS_COLUMNS = ["label", "mean", "ci_lower", "ci_upper", "significant"]


def config_hash(config: dict) -> str:
    blob = json.dumps(config, sort_keys=True, default=str).encode()
    return hashlib.sha256(blob).hexdigest()[:16]


@dataclass
class EvaluationReport:
    study: str
    config: dict
    seed: int
    eb_kind: str
    units: str = ""
    rows: list = field(default_factory=list)
    simultaneous: dict = field(default_factory=dict)
    risk_series: list = field(default_factory=list)
    bias_series: list = field(default_factory=list)
    metadata: dict = field(default_factory=dict)

    def add(self, result: EstimateResult, predictor: str | None = None) -> None:
        self.rows.append(result.to_row(self.study))
        if predictor is not None:
            self.risk_series.append([predictor, result.mean, result.ci_lower, result.ci_upper])

    def add_bias_point(self, result: EstimateResult, label: str | None = None) -> None:
        sig = result.ci_lower > 0 or result.ci_upper < 0
        self.bias_series.append([label or result.label, result.mean, result.ci_lower,
                                 result.ci_upper, sig])

    def add_bands(self, name: str, bands: SimultaneousBands, prefix: str) -> None:
        rows = bands.rows()
        self.simultaneous[name] = {"critical_value": bands.critical_value,
                                   "level": bands.level, "rows": rows}
        for r in rows:
            self.bias_series.append([f"{prefix}{r['label']}", r["mean"], r["ci_lower"],
                                     r["ci_upper"], r["significant"]])

    def to_dict(self) -> dict:
        meta = {
            "library": "forecast_eval",
            "version": __version__,
            "config_hash": config_hash(self.config),
            "seed": self.seed,
            "eb_kind": self.eb_kind,
            "units": self.units,
        }
        meta.update(self.metadata)
        return {"metadata": meta, "config": self.config, "rows": self.rows,
                "simultaneous": self.simultaneous}

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, allow_nan=False) + "\n"


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow([repr(v) if isinstance(v, float) else v for v in row])
    return buf.getvalue()


def write_outputs(report: EvaluationReport, out_path) -> dict:
    """Write ``out_path`` and ``plots/{risk,bias}.csv`` beside it.

    Everything is rendered first and written to temporary files that are
    renamed into place. On failure the temporaries and any files already
    renamed are removed, so no partial set of outputs is left behind.
    """
    out_path = Path(out_path)
    plots = out_path.parent / "plots"
    targets = {
        out_path: report.to_json(),
        plots / "risk.csv": _csv_text(RISK_COLUMNS, report.risk_series),
        plots / "bias.csv": _csv_text(BIAS_COLUMNS, report.bias_series),
    }
    plots.mkdir(parents=True, exist_ok=True)
    temps, done = [], []
    try:
        for target, text in targets.items():
            tmp = target.with_name(f".{target.name}.tmp")
            temps.append((tmp, target))
            tmp.write_text(text, encoding="utf-8")
        for tmp, target in temps:
            os.replace(tmp, target)
            done.append(target)
    except BaseException:
        for tmp, _ in temps:
            tmp.unlink(missing_ok=True)
        for target in done:
            target.unlink(missing_ok=True)
        raise
    return {str(k): len(v) for k, v in targets.items()}


def format_table(document: dict) -> str:
    """Plain-text table of a report's rows."""
    rows = document.get("rows", [])
    units = document.get("metadata", {}).get("units", "")
    lines = [f"{'estimand':<36} {'mean':>12} {'95% interval':>28} {'p':>7}"]
    for r in rows:
        ci = f"({r['ci_lower']:.4g}, {r['ci_upper']:.4g})"
        lines.append(f"{r['estimand']:<36} {r['mean']:>12.4g} {ci:>28} {r['p_value']:>7.3f}")
    if units:
        lines.append(f"units: {units}")
    return "\n".join(lines)
