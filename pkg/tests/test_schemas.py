import pytest

from app.core.errors import ConfigError
from app.schemas.experiment import ExperimentConfig, ExperimentKind
from app.schemas.params import ModelKind, ModelParams, NonResonanceParams, ResonanceSet


def test_toml_with_overrides(tmp_path):
    path = tmp_path / "survey.toml"
    path.write_text('experiment = "survey"\neps = 0.2\ngammas = [0.1, 0.01]\n\n[model]\nphi1 = 2.0\n')
    cfg = ExperimentConfig.from_toml(path, {"gamma": "0.05", "model.phi2": "0.3", "trials": None})
    assert cfg.experiment == ExperimentKind.SURVEY
    assert cfg.eps == 0.2
    assert cfg.gammas == (0.1, 0.01)
    assert (cfg.model.phi1, cfg.model.phi2) == (2.0, 0.3)
    assert cfg.resolved_gamma() == 0.05
    assert cfg.trials is None


def test_derived_gamma_and_cutoff():
    cfg = ExperimentConfig(experiment="survey", eps=0.1, r=2, s=4.0, check_window=8)
    assert cfg.resolved_gamma() == pytest.approx(0.1 ** (5 / 12))
    assert cfg.resolved_cutoff() == pytest.approx(0.1 ** -0.5)
    q = cfg.nonresonance()
    assert isinstance(q, NonResonanceParams)
    assert q.cap(ResonanceSet.FULL) == 4 and q.cap(ResonanceSet.TRUNCATED) == 14
    assert ExperimentConfig(experiment="survey", eps=0.01, r=3, s=1.0).resolved_cutoff() == 8.0


def test_nlsp_tag_takes_the_standard_normalisation():
    assert ExperimentConfig(experiment="drift", model="NLSP").model == ModelParams.nlsp()
    cfg = ExperimentConfig.from_mapping({"experiment": "drift"}, {"model": "NLSP", "model.phi0": "1.5"})
    assert (cfg.model.model, cfg.model.phi1, cfg.model.phi0) == (ModelKind.NLSP, 0.5, 1.5)
    assert cfg.nonresonance().alpha_r == 16 * cfg.r


@pytest.mark.parametrize(
    "data",
    [
        {"experiment": "survey", "bogus": 1},
        {"experiment": "nothing"},
        {"experiment": "survey", "gammas": [0.1, -0.1]},
        {"experiment": "sequence", "xn_mode": "sometimes"},
        {"experiment": "simulate", "model": {"phi1": 0.0}},
    ],
)
def test_invalid_configurations(data):
    with pytest.raises(ConfigError):
        ExperimentConfig.from_mapping(data)


def test_missing_and_broken_files(tmp_path):
    with pytest.raises(ConfigError, match="does not exist"):
        ExperimentConfig.from_toml(tmp_path / "absent.toml")
    broken = tmp_path / "broken.toml"
    broken.write_text("experiment = \n")
    with pytest.raises(ConfigError, match="not valid TOML"):
        ExperimentConfig.from_toml(broken)


def test_hash_ignores_the_output_location():
    a = ExperimentConfig(experiment="survey", output="/tmp/a")
    b = ExperimentConfig(experiment="survey", output="/tmp/b")
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != ExperimentConfig(experiment="survey", seed=1).config_hash()
    assert len(a.config_hash()) == 64
