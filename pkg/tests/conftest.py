from __future__ import annotations

import pytest

from todstep import (
    GenConfig,
    build_database,
    generate_corpus,
    toy_schema,
)


@pytest.fixture(scope="session")
def schema():
    return toy_schema()


@pytest.fixture(scope="session")
def schema_no_acts():
    return toy_schema(acts=False)


@pytest.fixture(scope="session")
def db(schema):
    return build_database(schema)


@pytest.fixture(scope="session")
def small_corpus(schema, db):
    # 40 dialogues keeps every test that touches it under a second
    return generate_corpus(GenConfig(seed=0, n_dialogues=40), schema, db)
