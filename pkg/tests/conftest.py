import numpy as np
import pytest
from sqlalchemy.orm import sessionmaker

from app.core.config import settings
from app.db.session import init_schema, make_engine
from app.schemas.params import ModelParams


@pytest.fixture
def params() -> ModelParams:
    """Cubic NLS, phi(x) = x."""
    return ModelParams()


@pytest.fixture
def quintic_params() -> ModelParams:
    return ModelParams(phi1=1.0, phi2=0.7)


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20240611)


@pytest.fixture
def tmp_settings(tmp_path, monkeypatch):
    """Output root and run registry inside tmp_path."""
    monkeypatch.setattr(settings, "OUTPUT_ROOT", str(tmp_path / "runs"))
    monkeypatch.setattr(settings, "DATABASE_URL", f"sqlite:///{tmp_path / 'registry.db'}")
    return settings


@pytest.fixture
def db(tmp_settings):
    engine = make_engine(tmp_settings.DATABASE_URL)
    init_schema(engine)
    session = sessionmaker(bind=engine, autoflush=False, autocommit=False, future=True)()
    try:
        yield session
    finally:
        session.close()
        engine.dispose()
