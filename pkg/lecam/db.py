import logging
import os

from dotenv import load_dotenv
from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

load_dotenv()

logger = logging.getLogger(__name__)

DATABASE_URL = os.getenv("LECAM_DATABASE_URL", "sqlite:///lecam_runs.db")

engine = create_engine(DATABASE_URL)
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

Base = declarative_base()


def get_db():
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()


def init_db():
    from lecam import models  # noqa: F401  registers the tables on Base

    try:
        Base.metadata.create_all(bind=engine)
    except Exception as e:
        logger.error(f"Could not initialise the run ledger at {engine.url}: {str(e)}")
        raise
