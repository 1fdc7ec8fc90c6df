import pytest

from crypto import KeyRegistry


@pytest.fixture
def registry():
    return KeyRegistry(4, seed=7)


@pytest.fixture
def out_dir(tmp_path):
    return str(tmp_path / "runs")
