from lecam.db import SessionLocal
from lecam.models.run import Run

__all__ = ["Run", "SessionLocal"]
