from pydantic_settings import BaseSettings, SettingsConfigDict
class Settings(BaseSettings):
    model_config = SettingsConfigDict(env_prefix="RNF_", env_file=".env", extra="ignore")
    DATABASE_URL: str = "sqlite:///./rnf_runs.db"
    OUTPUT_ROOT: str = "./runs"
    LOG_LEVEL: str = "INFO"

    # budgets for combinatorial work
    ENUMERATION_CAP: int = 2_000_000
    TERM_CAP: int = 200_000
    REALITY_TOL: float = 1e-12
settings = Settings()
