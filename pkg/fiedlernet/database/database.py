from sqlalchemy import create_engine
from sqlalchemy.orm import declarative_base, sessionmaker
from sqlalchemy.pool import StaticPool
from fiedlernet.config import settings
import logging

logger = logging.getLogger(__name__)


def make_engine(url: str = None):
    """Engine for the run ledger; SQLite URLs share one connection"""
    url = url or settings.database_url
    kwargs = {"echo": settings.debug, "pool_pre_ping": True}
    if url.startswith("sqlite"):
        kwargs.update(poolclass=StaticPool, connect_args={"check_same_thread": False})
    return create_engine(url, **kwargs)


engine = make_engine()

# Create session factory
SessionLocal = sessionmaker(autocommit=False, autoflush=False, bind=engine)

# Create base class for models
Base = declarative_base()


def get_db():
    """Dependency to get database session"""
    db = SessionLocal()
    try:
        yield db
    except Exception as e:
        logger.error(f"Database session error: {e}")
        db.rollback()
        raise
    finally:
        db.close()


def init_db(bind=None):
    """Initialize database tables"""
    try:
        # registers the ledger tables on Base.metadata
        from fiedlernet.database import models  # noqa: F401

        Base.metadata.create_all(bind=bind or engine)
        logger.info("Database tables created successfully")
    except Exception as e:
        logger.error(f"Failed to create database tables: {e}")
        raise
