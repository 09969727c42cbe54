from __future__ import annotations

import json
from pathlib import Path

import pytest

from ragtemp.dataset import parse_records
from ragtemp.toy import make_toy_records

FIXTURES = Path(__file__).parent / "fixtures"


@pytest.fixture
def two_records_path() -> Path:
    return FIXTURES / "two_records.json"


@pytest.fixture(scope="session")
def toy_records():
    return make_toy_records(per_cell=4, seed=0)


@pytest.fixture(scope="session")
def toy_samples(toy_records):
    samples, rejected = parse_records(toy_records)
    assert not rejected
    return samples


@pytest.fixture
def toy_path(tmp_path, toy_records) -> Path:
    path = tmp_path / "toy.json"
    path.write_text(json.dumps(toy_records), encoding="utf-8")
    return path
