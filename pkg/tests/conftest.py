import pytest

from support import example_schema, make_example_database


@pytest.fixture(scope="session")
def schema():
    return example_schema()


@pytest.fixture(scope="session")
def small_db():
    """Small seeded instance of the example database, shared read-only."""
    return make_example_database(n_users=40, n_activities=8, seed=7)
