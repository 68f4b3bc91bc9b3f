from __future__ import annotations

from pathlib import Path

import pytest

from capolish.synthetic import SyntheticBackend, load_backend_dir

REPO = Path(__file__).resolve().parent.parent
FIXTURES = REPO / "fixtures"


@pytest.fixture(scope="session")
def toy7() -> SyntheticBackend:
    return load_backend_dir(FIXTURES / "toy7")


@pytest.fixture(scope="session")
def twomode() -> SyntheticBackend:
    return load_backend_dir(FIXTURES / "twomode")


@pytest.fixture()
def fixtures_dir() -> Path:
    return FIXTURES
