import numpy as np
import pytest

from mobiprod import services
from mobiprod.crud import TableCacheCRUD
from mobiprod.database import SessionLocal, init_db
from mobiprod.harness import stationary_grid
from mobiprod.models import ValueTableRecord
from mobiprod.sl_value import static_value_iteration


@pytest.fixture
def db():
    init_db()
    session = SessionLocal()
    TableCacheCRUD.purge(session)
    try:
        yield session
    finally:
        session.close()


def test_put_get_purge(db, make_instance):
    inst = make_instance(L=1, Y=1, cap=(1,))
    table = static_value_iteration(inst, 0, stationary_grid(inst, 3))
    record = TableCacheCRUD.put(db, "k" * 64, table, inst.beta)
    assert record.id is not None
    assert record.grid_denominator == 3
    cached = TableCacheCRUD.get(db, "k" * 64)
    np.testing.assert_array_equal(cached.values, table.values)
    assert TableCacheCRUD.get(db, "missing") is None
    # a second put under the same key overwrites
    TableCacheCRUD.put(db, "k" * 64, table, inst.beta)
    assert TableCacheCRUD.count(db) == 1
    assert TableCacheCRUD.purge(db) == 1
    assert TableCacheCRUD.count(db) == 0


def test_stale_schema_is_a_miss(db, make_instance):
    inst = make_instance(L=1, Y=1, cap=(1,))
    table = static_value_iteration(inst, 0, stationary_grid(inst, 3))
    TableCacheCRUD.put(db, "s" * 64, table, inst.beta)
    record = db.query(ValueTableRecord).filter(ValueTableRecord.cache_key == "s" * 64).first()
    record.schema_version = "mobiprod-table/0"
    db.commit()
    assert TableCacheCRUD.get(db, "s" * 64) is None
    assert TableCacheCRUD.count(db) == 0


def test_services_reuse_cached_tables(db, make_instance):
    inst = make_instance()
    grid = stationary_grid(inst, 3)
    first = services.value_tables(inst, grid, db)
    assert TableCacheCRUD.count(db) == 2
    # movement costs do not enter the tables: a cost sibling hits the same rows
    sibling = inst.with_move_costs(7.0, 3.0, instance_id="sibling")
    second = services.value_tables(sibling, grid, db)
    assert TableCacheCRUD.count(db) == 2
    for a, b in zip(first, second):
        np.testing.assert_array_equal(a.values, b.values)
        assert a.iterations == b.iterations
    changed = make_instance(b=3.0)
    services.value_tables(changed, stationary_grid(changed, 3), db)
    assert TableCacheCRUD.count(db) == 4
