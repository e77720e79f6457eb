import hashlib
import json
from datetime import datetime
from enum import Enum
from pathlib import Path
from typing import Any, Mapping

import tomli
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator

from ..core.errors import ConfigError
from .params import IntegratorConfig, ModelKind, ModelParams, NonResonanceParams, ResonanceSet, SamplingLaw


class ExperimentKind(str, Enum):
    SIMULATE = "simulate"
    SURVEY = "survey"
    SEQUENCE = "sequence"
    BIRKHOFF_ORACLE = "birkhoff-oracle"
    BRACKET_AUDIT = "bracket-audit"
    PIPELINE = "pipeline"
    DRIFT = "drift"


class InitialKind(str, Enum):
    PLANE_WAVE = "plane-wave"
    LAW = "law"


def canonical_json(value: Any) -> str:
    return json.dumps(value, sort_keys=True, separators=(",", ":"), ensure_ascii=False)


class ExperimentConfig(BaseModel):
    """One run. gamma and N left unset take gamma = eps^{5/12} and N = eps^{-(2r-2)/s} capped at check_window."""
    model_config = ConfigDict(frozen=True, extra="forbid")
    experiment: ExperimentKind
    model: ModelParams = ModelParams()
    integrator: IntegratorConfig = IntegratorConfig()
    eps: float = Field(default=0.1, gt=0, lt=1)
    gamma: float | None = Field(default=None, gt=0)
    r: int = Field(default=2, ge=1)
    s: float = Field(default=4.0, ge=0)
    N: float | None = Field(default=None, ge=1)
    window: int = Field(default=8, ge=1)
    check_window: int = Field(default=8, ge=1)
    trials: int | None = Field(default=None, ge=0)  # None: the experiment's own default size
    seed: int = Field(default=0, ge=0)
    gammas: tuple[float, ...] = (0.3, 0.1, 0.03, 0.01)
    eps_grid: tuple[float, ...] = ()
    which: ResonanceSet = ResonanceSet.FULL
    n_max: int = Field(default=3, ge=0)
    xn_mode: str = "iid"
    initial: InitialKind = InitialKind.PLANE_WAVE
    mode: int = 1  # plane-wave wavenumber
    output: str | None = None

    @field_validator("model", mode="before")
    @classmethod
    def _model_tag(cls, v):
        # a bare tag selects the model with its standard normalisation
        if isinstance(v, (str, ModelKind)):
            return ModelParams.nlsp() if ModelKind(v) == ModelKind.NLSP else ModelParams()
        if isinstance(v, Mapping) and v.get("model") == ModelKind.NLSP.value and "phi1" not in v:
            return ModelParams.nlsp(**{k: x for k, x in v.items() if k != "model"})
        return v

    @field_validator("gammas", "eps_grid")
    @classmethod
    def _positive(cls, v: tuple[float, ...]) -> tuple[float, ...]:
        if any(x <= 0 for x in v):
            raise ValueError("grid values must be positive")
        return v

    @field_validator("xn_mode")
    @classmethod
    def _xn_mode(cls, v: str) -> str:
        if v not in ("iid", "constant"):
            raise ValueError("xn_mode must be 'iid' or 'constant'")
        return v

    def resolved_gamma(self) -> float:
        return self.gamma if self.gamma is not None else self.eps ** (1.0 / 3.0 + 1.0 / 12.0)

    def resolved_cutoff(self) -> float:
        if self.N is not None:
            return self.N
        n = self.eps ** (-(2 * self.r - 2) / self.s) if self.s > 0 else float(self.check_window)
        return min(max(n, 1.0), float(self.check_window))

    def nonresonance(self, **update) -> NonResonanceParams:
        fields = dict(
            gamma=self.resolved_gamma(), eps=self.eps, r=self.r, s=self.s, N=self.resolved_cutoff(),
            check_window=self.check_window, model=self.model.model,
        )
        fields.update(update)
        return NonResonanceParams(**fields)

    def law(self) -> SamplingLaw:
        return SamplingLaw(model=self.model.model, s=self.s, window=self.window, seed=self.seed)

    def hashed_fields(self) -> dict:
        """Everything that determines the results; the output location does not."""
        return self.model_dump(mode="json", exclude={"output"})

    def config_hash(self) -> str:
        return hashlib.sha256(canonical_json(self.hashed_fields()).encode("utf-8")).hexdigest()

    @classmethod
    def from_mapping(cls, data: Mapping[str, Any], overrides: Mapping[str, Any] | None = None) -> "ExperimentConfig":
        merged = _merge(data, overrides or {})
        try:
            return cls.model_validate(merged)
        except ValidationError as exc:
            raise ConfigError(f"invalid experiment configuration:\n{exc}") from exc

    @classmethod
    def from_toml(cls, path: str | Path, overrides: Mapping[str, Any] | None = None) -> "ExperimentConfig":
        try:
            with open(path, "rb") as fh:
                data = tomli.load(fh)
        except FileNotFoundError as exc:
            raise ConfigError(f"config file {path} does not exist") from exc
        except tomli.TOMLDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid TOML: {exc}") from exc
        return cls.from_mapping(data, overrides)


def _merge(data: Mapping[str, Any], overrides: Mapping[str, Any]) -> dict:
    """Apply overrides on top of the file; dotted keys reach into nested tables."""
    merged = {k: (dict(v) if isinstance(v, Mapping) else v) for k, v in data.items()}
    for key, value in overrides.items():
        if value is None:
            continue
        head, _, rest = key.partition(".")
        if rest:
            table = merged.get(head)
            if isinstance(table, str):
                table = {"model": table}
            table = dict(table or {})
            table[rest] = value
            merged[head] = table
        else:
            merged[head] = value
    return merged


class ResultRecord(BaseModel):
    """One line of records.jsonl; wall_time goes to the run registry only."""
    model_config = ConfigDict(frozen=True)
    experiment: ExperimentKind
    config_hash: str
    version: str
    seed: int
    metrics: dict[str, Any] = {}
    verdicts: dict[str, Any] = {}
    wall_time: float | None = None

    def to_line(self) -> str:
        return canonical_json(self.model_dump(mode="json", exclude={"wall_time"}))

    @classmethod
    def from_line(cls, line: str) -> "ResultRecord":
        return cls.model_validate_json(line)


class RunRead(BaseModel):
    model_config = ConfigDict(from_attributes=True)
    id: str
    experiment: str
    config_hash: str
    version: str
    status: str
    seed: int
    wall_time: float
    metrics: dict[str, Any]
    error: str | None = None
    output_dir: str | None = None
    created_at: datetime
