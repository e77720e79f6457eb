from enum import Enum

from pydantic import BaseModel, ConfigDict, Field, field_validator


class ModelKind(str, Enum):
    NLS = "NLS"
    NLSP = "NLSP"


class ResonanceSet(str, Enum):
    FULL = "full"
    TRUNCATED = "truncated"


class IntegratorMode(str, Enum):
    PSEUDOSPECTRAL = "pseudospectral"  # Galerkin on |a| <= K, unaliased grid products
    GALERKIN = "galerkin"  # exact truncated convolution, cubic only


class ModelParams(BaseModel):
    """Taylor data of phi at 0 plus the model tag. NLSP's standard normalisation is phi1 = 1/2."""
    model_config = ConfigDict(frozen=True)
    phi0: float = 0.0
    phi1: float = 1.0
    phi2: float = 0.0
    higher: tuple[float, ...] = ()  # phi'''(0), phi''''(0), ...
    model: ModelKind = ModelKind.NLS
    tail_window: int | None = Field(default=None, ge=1)

    @field_validator("phi1")
    @classmethod
    def _phi1_nonzero(cls, v: float) -> float:
        if v == 0:
            raise ValueError("phi'(0) must be nonzero")
        return v

    @classmethod
    def nlsp(cls, **kw) -> "ModelParams":
        kw.setdefault("phi1", 0.5)
        return cls(model=ModelKind.NLSP, **kw)

    @property
    def derivatives(self) -> tuple[float, ...]:
        """(phi(0), phi'(0), phi''(0), ...)."""
        return (self.phi0, self.phi1, self.phi2, *self.higher)

    def tail(self, window: int) -> int:
        return self.tail_window if self.tail_window is not None else 4 * window

    def generator_values(self) -> dict[str, float]:
        return {"phi0": self.phi0, "phi1": self.phi1, "phi2": self.phi2}


class NonResonanceParams(BaseModel):
    model_config = ConfigDict(frozen=True)
    gamma: float = Field(gt=0)
    eps: float = Field(gt=0)
    r: int = Field(ge=1)
    s: float = Field(ge=0)
    N: float = Field(default=1.0, ge=1)
    check_window: int = Field(default=8, ge=1)
    length_cap: int | None = Field(default=None, ge=2)
    model: ModelKind = ModelKind.NLS

    @property
    def alpha_r(self) -> int:
        return 16 * self.r if self.model == ModelKind.NLSP else 24 * self.r

    def cap(self, which: ResonanceSet) -> int:
        if self.length_cap is not None:
            return self.length_cap
        return 2 * self.r if which == ResonanceSet.FULL else 7 * self.r

    def with_gamma(self, gamma: float) -> "NonResonanceParams":
        return self.model_copy(update={"gamma": gamma})

    def with_eps(self, eps: float) -> "NonResonanceParams":
        return self.model_copy(update={"eps": eps})


class SamplingLaw(BaseModel):
    model_config = ConfigDict(frozen=True)
    model: ModelKind = ModelKind.NLS
    s: float = Field(default=4.0, ge=0)
    window: int = Field(default=8, ge=0)
    seed: int = Field(default=0, ge=0)

    def upper(self, a) -> float:
        """Support bound of I_a."""
        # <a>^{-2s-4} in both models; NLS draws I_a^2 uniformly, NLSP draws I_a
        return (1.0 + a * a) ** (-(self.s + 2))


class IntegratorConfig(BaseModel):
    model_config = ConfigDict(frozen=True)
    dt: float = Field(default=1e-2, gt=0)
    T: float | None = Field(default=None, gt=0)  # None: the experiment's own horizon
    scheme: str = "strang"
    grid_oversample: int = Field(default=4, ge=4)
    ode_tolerance: float = Field(default=1e-10, gt=0)
    taylor_order: int = Field(default=3, ge=1)
    mode: IntegratorMode = IntegratorMode.PSEUDOSPECTRAL
    blowup_factor: float = Field(default=10.0, gt=1)
    sample_every: int = Field(default=100, ge=1)

    @field_validator("scheme")
    @classmethod
    def _strang_only(cls, v: str) -> str:
        if v != "strang":
            raise ValueError("only the 'strang' scheme is available")
        return v

    def horizon(self, default: float = 1.0) -> float:
        return self.T if self.T is not None else default

    def with_horizon(self, T: float) -> "IntegratorConfig":
        return self.model_copy(update={"T": T})
