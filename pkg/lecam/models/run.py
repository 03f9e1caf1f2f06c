from sqlalchemy import JSON, Column, DateTime, Float, Integer, String, Text
from sqlalchemy.sql import func

from lecam.db import Base


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    experiment = Column(String(32), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    config_hash = Column(String(64), nullable=False, index=True)
    status = Column(String(16), nullable=False)
    wall_time = Column(Float)
    version = Column(String(32))
    artifacts = Column(JSON, default=list)
    error = Column(Text, nullable=True)
    created_at = Column(DateTime(timezone=True), server_default=func.now())

    def to_dict(self):
        return {
            "id": self.id,
            "experiment": self.experiment,
            "seed": self.seed,
            "config_hash": self.config_hash,
            "status": self.status,
            "wall_time": self.wall_time,
            "version": self.version,
            "artifacts": list(self.artifacts or []),
            "error": self.error,
            "created_at": self.created_at.isoformat() if self.created_at else None,
        }
