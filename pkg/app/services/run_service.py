from sqlalchemy import select
from sqlalchemy.orm import Session
from ..models.experiment_run import ExperimentRun, RunStatus


def record_run(
    db: Session, *,
    experiment: str,
    config_hash: str,
    version: str,
    seed: int,
    status: RunStatus = RunStatus.SUCCEEDED,
    wall_time: float = 0.0,
    metrics: dict | None = None,
    error: str | None = None,
    output_dir: str | None = None,
) -> ExperimentRun:
    run = ExperimentRun(
        experiment=experiment,
        config_hash=config_hash,
        version=version,
        seed=seed,
        status=status,
        wall_time=wall_time,
        metrics=metrics or {},
        error=error,
        output_dir=output_dir,
    )
    db.add(run)
    db.commit()
    db.refresh(run)
    return run

def get_run(db: Session, run_id: str) -> ExperimentRun | None:
    return db.get(ExperimentRun, run_id)

def list_runs(db: Session, *, experiment: str | None = None, status: RunStatus | None = None) -> list[ExperimentRun]:
    q = select(ExperimentRun).order_by(ExperimentRun.created_at, ExperimentRun.id)
    if experiment is not None:
        q = q.where(ExperimentRun.experiment == experiment)
    if status is not None:
        q = q.where(ExperimentRun.status == status)
    return list(db.execute(q).scalars())
