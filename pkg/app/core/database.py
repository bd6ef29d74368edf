import logging

from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker

from app.core.config import settings

logger = logging.getLogger(__name__)

engine = create_engine(
    settings.DATABASE_URL,
    connect_args={"check_same_thread": False} if "sqlite" in settings.DATABASE_URL else {}
)

SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)
Base = declarative_base()


def init_db() -> None:
    """Create the run tables if they do not exist yet"""
    # imported for its side effect of registering the table on Base
    from app.models import experiment_run  # noqa: F401
    Base.metadata.create_all(bind=engine)


def get_db():
    logger.debug("opening database session")
    db = SessionLocal()
    try:
        yield db
    finally:
        db.close()
