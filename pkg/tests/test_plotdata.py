import csv
import math

import pytest

from app.core.errors import ConfigError
from app.schemas.experiment import ResultRecord
from app.services.plotdata import drift_curve_rows, emit_plotdata, gamma_failure_rows, residual_curve_rows


def _record(experiment: str, metrics: dict, tag: str = "a") -> ResultRecord:
    return ResultRecord(experiment=experiment, config_hash=tag * 64, version="0.1.0", seed=0, metrics=metrics)


def test_no_records_still_writes_every_table(tmp_path):
    paths = emit_plotdata([], tmp_path / "plots")
    assert sorted(p.name for p in paths) == ["drift_curve.csv", "gamma_failure.csv", "residual_curve.csv", "time_series.csv"]
    for path in paths:
        assert len(path.read_text().splitlines()) == 1


def test_gamma_rows_sorted_ascending():
    table = [
        {"gamma": 0.1, "p_hat": 0.9, "failure_rate": 0.1, "ci_low": 0.85, "ci_high": 0.93},
        {"gamma": 0.01, "p_hat": 0.99, "failure_rate": 0.01, "ci_low": 0.97, "ci_high": 1.0},
    ]
    rows = gamma_failure_rows([_record("survey", {"trials": 100, "table": table})])
    assert [row["gamma"] for row in rows] == [0.01, 0.1]


def test_drift_curve_keeps_the_worst_trial(tmp_path):
    records = [
        _record("drift", {"rows": [{"eps": 0.05, "max_D_s": 1e-4}, {"eps": 0.1, "max_D_s": 2e-3}]}, "a"),
        _record("drift", {"rows": [{"eps": 0.05, "max_D_s": 3e-4}]}, "b"),
    ]
    rows = drift_curve_rows(records)
    assert [row["eps"] for row in rows] == [0.05, 0.1]
    assert rows[0]["max_D_s"] == 3e-4
    assert rows[0]["log_eps"] == pytest.approx(math.log(0.05))
    emit_plotdata(records, tmp_path)
    with open(tmp_path / "drift_curve.csv", newline="") as fh:
        written = list(csv.DictReader(fh))
    assert float(written[1]["max_D_s"]) == 2e-3


def test_residual_curve_from_pipeline_scaling():
    rec = _record("pipeline", {"scaling": {"eps": [0.01, 0.1], "norms": [1e-10, 1e-5]}})
    rows = residual_curve_rows([rec])
    assert rows == [
        {"config_hash": "a" * 12, "eps": 0.01, "residual": 1e-10},
        {"config_hash": "a" * 12, "eps": 0.1, "residual": 1e-5},
    ]


def test_missing_metrics_field_is_reported():
    with pytest.raises(ConfigError, match="table"):
        gamma_failure_rows([_record("survey", {"trials": 0})])
