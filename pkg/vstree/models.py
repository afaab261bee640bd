"""
SQLAlchemy models of the run store
"""
from datetime import datetime

from sqlalchemy import Column, DateTime, Float, ForeignKey, Integer, String, Text
from sqlalchemy.orm import relationship

from vstree.database import Base


class Run(Base):
    __tablename__ = "runs"

    id = Column(Integer, primary_key=True, index=True)
    command = Column(String(50), nullable=False, index=True)
    tag = Column(String(255), nullable=False, index=True)
    seed = Column(Integer, nullable=False)
    config_json = Column(Text, nullable=False, default="{}")
    created_at = Column(DateTime, default=datetime.utcnow)

    # Relationship
    metrics = relationship("RunMetric", back_populates="run", cascade="all, delete-orphan")


class RunMetric(Base):
    __tablename__ = "run_metrics"

    id = Column(Integer, primary_key=True, index=True)
    run_id = Column(Integer, ForeignKey("runs.id"), nullable=False)
    name = Column(String(100), nullable=False, index=True)
    value = Column(Float, nullable=False)

    # Relationship
    run = relationship("Run", back_populates="metrics")
