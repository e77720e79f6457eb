"""Declarative base of the run registry; tables are named in snake_case after their model."""
import re

from sqlalchemy import MetaData
from sqlalchemy.orm import DeclarativeBase, declared_attr

# constraint and index names
REGISTRY_NAMING = {
    "ix": "ix_%(table_name)s_%(column_0_name)s",
    "ck": "ck_%(table_name)s_%(constraint_name)s",
    "pk": "pk_%(table_name)s",
}


def table_name(model_name: str) -> str:
    """ExperimentRun -> experiment_run."""
    return re.sub(r"(?<!^)(?=[A-Z])", "_", model_name).lower()


class RegistryBase(DeclarativeBase):
    metadata = MetaData(naming_convention=REGISTRY_NAMING)

    @declared_attr.directive
    def __tablename__(cls) -> str:
        return table_name(cls.__name__)
