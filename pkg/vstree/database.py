"""
Database configuration and connection management for the run store
"""
import os
from contextlib import contextmanager
from typing import Iterator, Optional

from sqlalchemy import create_engine
from sqlalchemy.engine import Engine
from sqlalchemy.orm import Session, declarative_base, sessionmaker

from vstree.constants import DATABASE_URL as DEFAULT_DATABASE_URL

# Get database URL from environment variable or use default from constants
DATABASE_URL = os.getenv("VSTREE_DATABASE_URL", DEFAULT_DATABASE_URL)

Base = declarative_base()


def make_engine(url: str) -> Engine:
    return create_engine(
        url,
        connect_args={"check_same_thread": False} if url.startswith("sqlite") else {},
    )


engine = make_engine(DATABASE_URL)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)


def create_db_and_tables(bind: Optional[Engine] = None):
    """Create run-store tables"""
    # Import registers the tables on Base.metadata
    from vstree import models  # noqa: F401

    Base.metadata.create_all(bind=bind or engine)


@contextmanager
def session_scope(url: Optional[str] = None) -> Iterator[Session]:
    """
    Session on the default engine, or on `url` when given; tables are
    created on first use, committed on success, rolled back on error
    """
    bind = engine if url is None else make_engine(url)
    create_db_and_tables(bind)
    db = sessionmaker(autocommit=False, autoflush=False, bind=bind)()
    try:
        yield db
        db.commit()
    except Exception:
        db.rollback()
        raise
    finally:
        db.close()
        if url is not None:
            bind.dispose()
