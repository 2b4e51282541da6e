import os
import sys

import numpy as np
import pytest

ROOT = os.path.abspath(os.path.join(os.path.dirname(__file__), ".."))
if ROOT not in sys.path:
    sys.path.insert(0, ROOT)

from oll_dac.onemax_env import EnvConfig  # noqa: E402
from oll_dac.seeding import derive_seed_list  # noqa: E402


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(12345)


@pytest.fixture
def small_env() -> EnvConfig:
    return EnvConfig(n=8)


@pytest.fixture
def eval_seeds() -> list[int]:
    return derive_seed_list(7, 0, "test", 12)


@pytest.fixture
def flask_app(tmp_path):
    from app import create_app

    app = create_app({
        "TESTING": True,
        "JOB_BASE_DIR": str(tmp_path / "jobs"),
        "REDIS_URL": "",
        "EVAL_WORKERS": 1,
        "START_JOB_CLEANUP": False,
    })
    yield app


@pytest.fixture
def client(flask_app):
    return flask_app.test_client()
