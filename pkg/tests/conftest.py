import pytest

from idm import demo
from idm.engine import Engine


@pytest.fixture
def engine(tmp_path):
    return Engine(tmp_path / "data")


@pytest.fixture
def seeded(tmp_path):
    eng = Engine(tmp_path / "data")
    demo.seed(eng)
    return eng
