from enum import Enum
from sqlalchemy import String, DateTime, Float, Integer, JSON, Text
from sqlalchemy.orm import Mapped, mapped_column
from uuid import uuid4
from ..db.base import RegistryBase
from . import utcnow

class RunStatus(str, Enum):
    SUCCEEDED = "SUCCEEDED"
    FAILED = "FAILED"

class ExperimentRun(RegistryBase):
    id: Mapped[str] = mapped_column(String(36), primary_key=True, default=lambda: str(uuid4()))
    experiment: Mapped[str] = mapped_column(String(32), index=True, nullable=False)
    config_hash: Mapped[str] = mapped_column(String(64), index=True, nullable=False)
    version: Mapped[str] = mapped_column(String(32), nullable=False)
    status: Mapped[RunStatus] = mapped_column(default=RunStatus.SUCCEEDED, index=True)
    seed: Mapped[int] = mapped_column(Integer, default=0, nullable=False)
    wall_time: Mapped[float] = mapped_column(Float, default=0.0, nullable=False)
    metrics: Mapped[dict] = mapped_column(JSON, default=dict, nullable=False)
    error: Mapped[str | None] = mapped_column(Text)
    output_dir: Mapped[str | None] = mapped_column(String(512))
    created_at: Mapped["DateTime"] = mapped_column(DateTime(timezone=True), default=utcnow, nullable=False)
