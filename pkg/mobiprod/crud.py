import logging
from typing import Optional

from sqlalchemy.orm import Session

from .models import ValueTableRecord
from .sl_value import TABLE_SCHEMA, ValueTable, table_from_bytes, table_to_bytes

logger = logging.getLogger(__name__)


class TableCacheCRUD:
    @staticmethod
    def get(db: Session, cache_key: str) -> Optional[ValueTable]:
        """Cached table for the key, or None on a miss or a stale schema."""
        record = db.query(ValueTableRecord).filter(ValueTableRecord.cache_key == cache_key).first()
        if record is None:
            return None
        if record.schema_version != TABLE_SCHEMA:
            logger.info("discarding cached table %s with schema %s", cache_key[:12], record.schema_version)
            db.delete(record)
            db.commit()
            return None
        return table_from_bytes(record.payload)

    @staticmethod
    def put(db: Session, cache_key: str, table: ValueTable, beta: float) -> ValueTableRecord:
        record = db.query(ValueTableRecord).filter(ValueTableRecord.cache_key == cache_key).first()
        if record is None:
            record = ValueTableRecord(cache_key=cache_key)
            db.add(record)
        record.schema_version = TABLE_SCHEMA
        record.location = table.location
        record.beta = beta
        record.grid_denominator = table.grid.denominator
        record.iterations = table.iterations
        record.residual = table.residual
        record.payload = table_to_bytes(table)
        db.commit()
        db.refresh(record)
        return record

    @staticmethod
    def purge(db: Session) -> int:
        """Delete every cached table; returns the number removed."""
        count = db.query(ValueTableRecord).delete()
        db.commit()
        return count

    @staticmethod
    def count(db: Session) -> int:
        return db.query(ValueTableRecord).count()
