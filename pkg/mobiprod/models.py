from sqlalchemy import Column, DateTime, Float, Integer, LargeBinary, String
from sqlalchemy.sql import func

from .database import Base


class ValueTableRecord(Base):
    __tablename__ = "value_tables"

    id = Column(Integer, primary_key=True, index=True)
    cache_key = Column(String(64), unique=True, nullable=False, index=True)  # sha256 hex
    schema_version = Column(String, nullable=False)
    location = Column(Integer, nullable=False)
    beta = Column(Float, nullable=False)
    grid_denominator = Column(Integer, nullable=False)
    iterations = Column(Integer, nullable=False, default=0)
    residual = Column(Float, nullable=False, default=0.0)
    payload = Column(LargeBinary, nullable=False)  # np.savez archive

    created_at = Column(DateTime(timezone=True), server_default=func.now())
