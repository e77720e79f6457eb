import pytest
from sqlalchemy.orm import sessionmaker

import app.main as cli
from app.db.session import make_engine
from app.services import experiment_service


@pytest.fixture
def registry(tmp_settings, monkeypatch):
    engine = make_engine(tmp_settings.DATABASE_URL)
    monkeypatch.setattr(cli, "engine", engine)
    monkeypatch.setattr(cli, "SessionLocal", sessionmaker(bind=engine, autoflush=False, autocommit=False, future=True))
    yield engine
    engine.dispose()


def test_run_without_registry(tmp_path):
    assert cli.main(["run", "--experiment", "survey", "--trials", "0", "--output", str(tmp_path), "--no-registry"]) == 0
    (directory,) = tmp_path.iterdir()
    assert directory.name.startswith("survey-")
    assert (directory / "records.jsonl").exists()


def test_domain_errors_exit_with_two(tmp_path):
    argv = ["run", "--experiment", "survey", "--trials", "50", "--output", str(tmp_path), "--no-registry"]
    assert cli.main(argv) == 2
    assert cli.main(["run", "--experiment", "survey", "--eps", "5", "--no-registry"]) == 2
    assert cli.main(["run", "--config", str(tmp_path / "absent.toml"), "--no-registry"]) == 2


def test_config_file_and_nested_flags(tmp_path):
    config = tmp_path / "oracle.toml"
    config.write_text('experiment = "birkhoff-oracle"\nwindow = 2\n')
    out = tmp_path / "runs"
    assert cli.main(["run", "--config", str(config), "--model.phi1", "2.0", "--output", str(out), "--no-registry"]) == 0
    (directory,) = out.iterdir()
    (record,) = experiment_service.load_records(directory)
    assert record.verdicts["beta_exact"] is True


def test_plotdata_command(tmp_path, capsys):
    runs = tmp_path / "runs"
    cli.main(["run", "--experiment", "survey", "--trials", "0", "--output", str(runs), "--no-registry"])
    out = tmp_path / "plots"
    assert cli.main(["plotdata", *map(str, runs.iterdir()), "--out", str(out)]) == 0
    assert (out / "gamma_failure.csv").exists()
    assert "gamma_failure.csv" in capsys.readouterr().out


def test_list_runs_reads_the_registry(tmp_path, registry, capsys):
    assert cli.main(["run", "--experiment", "survey", "--trials", "0", "--output", str(tmp_path)]) == 0
    capsys.readouterr()
    assert cli.main(["list-runs", "--experiment", "survey"]) == 0
    out = capsys.readouterr().out
    assert "survey" in out and "SUCCEEDED" in out
