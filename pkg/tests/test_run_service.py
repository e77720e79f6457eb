from sqlalchemy import inspect

from app.db.base import table_name
from app.models.experiment_run import RunStatus
from app.schemas.experiment import RunRead
from app.services import run_service


def _record(db, experiment: str, status: RunStatus = RunStatus.SUCCEEDED, **kw):
    return run_service.record_run(db, experiment=experiment, config_hash="f" * 64, version="0.1.0", seed=3, status=status, **kw)


def test_record_and_read_back(db):
    run = _record(db, "survey", wall_time=1.5, metrics={"verdicts": {"monotone": True}}, output_dir="runs/survey-x")
    assert run.id
    fetched = run_service.get_run(db, run.id)
    assert fetched is not None
    row = RunRead.model_validate(fetched)
    assert row.experiment == "survey"
    assert row.status == "SUCCEEDED"
    assert row.wall_time == 1.5
    assert row.metrics == {"verdicts": {"monotone": True}}
    assert row.error is None


def test_list_filters(db):
    _record(db, "survey")
    _record(db, "drift")
    _record(db, "drift", RunStatus.FAILED, error="denominator below floor")
    assert len(run_service.list_runs(db)) == 3
    assert {r.experiment for r in run_service.list_runs(db, experiment="drift")} == {"drift"}
    (failed,) = run_service.list_runs(db, status=RunStatus.FAILED)
    assert failed.error == "denominator below floor"
    assert run_service.get_run(db, "missing") is None


def test_registry_table_names(db):
    assert table_name("ExperimentRun") == "experiment_run"
    inspector = inspect(db.get_bind())
    assert "experiment_run" in inspector.get_table_names()
    assert inspector.get_pk_constraint("experiment_run")["name"] in (None, "pk_experiment_run")
