from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import sessionmaker
from ..core.config import settings


def make_engine(url: str) -> Engine:
    # Required for SQLite (otherwise threading errors)
    connect_args = {"check_same_thread": False} if url.startswith("sqlite") else {}
    return create_engine(url, echo=False, future=True, connect_args=connect_args)


def init_schema(bind: Engine) -> None:
    from .. import models  # noqa: F401  registers the tables on RegistryBase.metadata
    from .base import RegistryBase
    RegistryBase.metadata.create_all(bind=bind)


engine = make_engine(settings.DATABASE_URL)
# Session factory
SessionLocal = sessionmaker(
    bind=engine,
    autoflush=False,
    autocommit=False,
    future=True
)
