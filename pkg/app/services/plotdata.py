"""
Plain tabular plot data from run records.

  gamma_failure.csv   gamma, p_hat, failure_rate, ci_low, ci_high    (survey, gamma ascending)
  drift_curve.csv     eps, max_D_s, log_eps, log_max_D_s             (drift, max over trials)
  time_series.csv     config_hash, t, D_s                            (simulate)
  residual_curve.csv  config_hash, eps, residual                     (pipeline)

Every file is written even when no record feeds it (header only).
"""
from __future__ import annotations

import csv
import logging
import math
from collections import defaultdict
from pathlib import Path
from typing import Any, Iterable, Sequence

from ..core.errors import ConfigError
from ..schemas.experiment import ExperimentKind, ResultRecord

logger = logging.getLogger(__name__)

GAMMA_COLUMNS = ["gamma", "p_hat", "failure_rate", "ci_low", "ci_high"]
DRIFT_COLUMNS = ["eps", "max_D_s", "log_eps", "log_max_D_s"]
SERIES_COLUMNS = ["config_hash", "t", "D_s"]
RESIDUAL_COLUMNS = ["config_hash", "eps", "residual"]


def _field(record: ResultRecord, *path: str) -> Any:
    value: Any = record.metrics
    for key in path:
        if not isinstance(value, dict) or key not in value:
            raise ConfigError(
                f"{record.experiment.value} record {record.config_hash[:12]} lacks metrics field {'.'.join(path)}"
            )
        value = value[key]
    return value


def _log(x: float | None) -> float | None:
    return math.log(x) if x is not None and x > 0 else None


def gamma_failure_rows(records: Iterable[ResultRecord]) -> list[dict]:
    rows = [
        {k: row.get(k) for k in GAMMA_COLUMNS}
        for rec in records if rec.experiment == ExperimentKind.SURVEY
        for row in _field(rec, "table")
    ]
    return sorted(rows, key=lambda row: row["gamma"])


def drift_curve_rows(records: Iterable[ResultRecord]) -> list[dict]:
    worst: dict[float, float] = defaultdict(float)
    for rec in records:
        if rec.experiment != ExperimentKind.DRIFT:
            continue
        for row in _field(rec, "rows"):
            worst[row["eps"]] = max(worst[row["eps"]], row["max_D_s"])
    return [
        {"eps": eps, "max_D_s": d, "log_eps": _log(eps), "log_max_D_s": _log(d)}
        for eps, d in sorted(worst.items())
    ]


def time_series_rows(records: Iterable[ResultRecord]) -> list[dict]:
    return [
        {"config_hash": rec.config_hash[:12], "t": point["t"], "D_s": point["D_s"]}
        for rec in records if rec.experiment == ExperimentKind.SIMULATE
        for point in _field(rec, "series")
    ]


def residual_curve_rows(records: Iterable[ResultRecord]) -> list[dict]:
    rows = []
    for rec in records:
        if rec.experiment != ExperimentKind.PIPELINE:
            continue
        eps, norms = _field(rec, "scaling", "eps"), _field(rec, "scaling", "norms")
        rows.extend({"config_hash": rec.config_hash[:12], "eps": e, "residual": v} for e, v in zip(eps, norms))
    return rows


def _write(path: Path, columns: Sequence[str], rows: list[dict]) -> Path:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(columns), lineterminator="\n", extrasaction="ignore")
        writer.writeheader()
        for row in rows:
            writer.writerow({k: "" if v is None else (repr(v) if isinstance(v, float) else v) for k, v in row.items()})
    return path


def emit_plotdata(records: Sequence[ResultRecord], out_dir: str | Path) -> list[Path]:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    tables = [
        ("gamma_failure.csv", GAMMA_COLUMNS, gamma_failure_rows(records)),
        ("drift_curve.csv", DRIFT_COLUMNS, drift_curve_rows(records)),
        ("time_series.csv", SERIES_COLUMNS, time_series_rows(records)),
        ("residual_curve.csv", RESIDUAL_COLUMNS, residual_curve_rows(records)),
    ]
    paths = [_write(out / name, columns, rows) for name, columns, rows in tables]
    logger.info(f"plot data from {len(records)} records: " + ", ".join(f"{n} ({len(r)} rows)" for n, _, r in tables))
    return paths
