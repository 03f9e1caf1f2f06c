import numpy as np
import pytest
from click.testing import CliRunner
from sqlalchemy import create_engine
from sqlalchemy.orm import sessionmaker

from lecam import db


@pytest.fixture(autouse=True)
def isolated_env(monkeypatch, tmp_path):
    """Keep results and the run ledger out of the working tree."""
    monkeypatch.setenv("LECAM_LEDGER", "0")
    monkeypatch.setenv("LECAM_OUTPUT_DIR", str(tmp_path / "results"))
    monkeypatch.setenv("LECAM_LOG_LEVEL", "WARNING")
    return tmp_path


@pytest.fixture
def ledger(monkeypatch, tmp_path):
    """A fresh sqlite ledger wired into lecam.db."""
    engine = create_engine(f"sqlite:///{tmp_path / 'ledger.db'}")
    monkeypatch.setattr(db, "engine", engine)
    monkeypatch.setattr(db, "SessionLocal", sessionmaker(autocommit=False, autoflush=False, bind=engine))
    monkeypatch.setenv("LECAM_LEDGER", "1")
    db.init_db()
    yield db.SessionLocal
    engine.dispose()


@pytest.fixture
def runner():
    return CliRunner()


@pytest.fixture
def cli():
    from lecam.app import create_app

    return create_app()


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
