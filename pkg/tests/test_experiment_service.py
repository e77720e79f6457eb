import csv
import json

import pytest

from app.core.errors import ConfigError
from app.models.experiment_run import RunStatus
from app.schemas.experiment import ExperimentConfig
from app.schemas.params import IntegratorConfig
from app.services import experiment_service, run_service


def _cfg(tmp_path, **fields) -> ExperimentConfig:
    return ExperimentConfig(output=str(tmp_path / "out"), **fields)


def _read_csv(path) -> list[dict]:
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def test_zero_trial_survey_writes_a_header(tmp_path):
    cfg = _cfg(tmp_path, experiment="survey", trials=0)
    record = experiment_service.run(cfg)
    directory = experiment_service.run_directory(cfg)
    assert (directory / "survey.csv").read_text() == "gamma,seed,trial,eps,verdict,worst_margin,k\n"
    assert experiment_service.load_records(directory) == [record.model_copy(update={"wall_time": None})]
    assert record.metrics == {"trials": 0, "table": []}


def test_survey_below_the_minimum_size_is_refused(tmp_path, db):
    cfg = _cfg(tmp_path, experiment="survey", trials=50)
    with pytest.raises(ConfigError):
        experiment_service.run(cfg, db)
    (row,) = run_service.list_runs(db)
    assert row.status == RunStatus.FAILED
    assert "trials" in row.error


def test_successful_runs_are_registered(tmp_path, db):
    cfg = _cfg(tmp_path, experiment="birkhoff-oracle", window=2)
    experiment_service.run(cfg, db)
    (row,) = run_service.list_runs(db, status=RunStatus.SUCCEEDED)
    assert row.config_hash == cfg.config_hash()
    assert row.metrics["verdicts"]["beta_exact"] is True
    assert row.output_dir == str(experiment_service.run_directory(cfg))


def test_run_directory_naming(tmp_path, tmp_settings):
    cfg = ExperimentConfig(experiment="drift", eps=0.05)
    directory = experiment_service.run_directory(cfg)
    assert directory.name == f"drift-{cfg.config_hash()[:12]}"
    assert str(directory.parent) == tmp_settings.OUTPUT_ROOT


def test_plane_wave_simulation_keeps_its_action(tmp_path):
    cfg = _cfg(
        tmp_path, experiment="simulate", window=4, mode=1, eps=0.1,
        integrator=IntegratorConfig(dt=1e-2, T=0.2, sample_every=5),
    )
    record = experiment_service.run(cfg)
    rows = _read_csv(experiment_service.run_directory(cfg) / "diagnostics.csv")
    assert len(rows) == len(record.metrics["series"]) >= 2
    assert all(float(row["I_mode"]) == pytest.approx(0.01, rel=1e-12) for row in rows)
    assert record.verdicts["mass_conserved"] is True


def test_birkhoff_oracle_table(tmp_path):
    cfg = _cfg(tmp_path, experiment="birkhoff-oracle", window=3)
    record = experiment_service.run(cfg)
    rows = _read_csv(experiment_service.run_directory(cfg) / "beta.csv")
    assert len(rows) == 7 * 6
    assert all(row["match"] == "True" for row in rows)
    assert record.verdicts == {"beta_exact": True, "alpha_zero": True, "gamma_zero": True}


def test_reruns_are_byte_identical(tmp_path):
    first = ExperimentConfig(experiment="birkhoff-oracle", window=2, output=str(tmp_path / "a"))
    second = first.model_copy(update={"output": str(tmp_path / "b")})
    experiment_service.run(first)
    experiment_service.run(second)
    da, db_ = experiment_service.run_directory(first), experiment_service.run_directory(second)
    assert da.name == db_.name
    names = sorted(p.name for p in da.iterdir())
    assert names == sorted(p.name for p in db_.iterdir())
    for name in names:
        assert (da / name).read_bytes() == (db_ / name).read_bytes()
    assert "output" not in json.loads((da / "config.json").read_text())


def test_small_bracket_audit(tmp_path):
    cfg = _cfg(tmp_path, experiment="bracket-audit", trials=9, window=4)
    record = experiment_service.run(cfg)
    directory = experiment_service.run_directory(cfg)
    assert len(_read_csv(directory / "closure.csv")) == 9
    assert len(_read_csv(directory / "homological.csv")) == record.metrics["homological_inputs"]
    assert record.verdicts == {"closure": True, "homological": True}


def test_small_pipeline(tmp_path):
    cfg = _cfg(tmp_path, experiment="pipeline", r=2, window=4, trials=2, eps_grid=(0.05, 0.1, 0.2))
    record = experiment_service.run(cfg)
    directory = experiment_service.run_directory(cfg)
    assert len(_read_csv(directory / "scaling.csv")) == 3
    payload = json.loads((directory / "pipeline.json").read_text())
    assert payload["scaling"]["expected"] == 5
    assert record.verdicts["slope_ok"] is True
    assert record.verdicts["near_identity"] is True
    assert len(record.metrics["near_identity"]) + record.metrics["screened_out"] == 4


def test_small_drift_run(tmp_path):
    cfg = _cfg(
        tmp_path, experiment="drift", window=3, trials=2, eps_grid=(0.05, 0.1), s=1.0,
        integrator=IntegratorConfig(dt=0.05, T=0.5, sample_every=2),
    )
    record = experiment_service.run(cfg)
    rows = _read_csv(experiment_service.run_directory(cfg) / "drift.csv")
    assert len(rows) == 4
    assert {float(row["eps"]) for row in rows} == {0.05, 0.1}
    assert "drift_ok" in record.verdicts


def test_small_sequence_run(tmp_path):
    cfg = _cfg(tmp_path, experiment="sequence", window=3, trials=2, n_max=1, eps=0.1, s=1.0, check_window=3)
    record = experiment_service.run(cfg)
    rows = _read_csv(experiment_service.run_directory(cfg) / "sequence.csv")
    assert len(rows) == 2 * 2 * 2
    assert "outer_fraction" in record.verdicts
