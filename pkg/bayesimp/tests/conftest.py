import os

import numpy as np
import pytest

test_dir = os.path.dirname(os.path.abspath(__file__))
fixture_path = os.path.join(test_dir, '..', 'data', 'psa_volume.csv')


def pytest_addoption(parser):
    parser.addoption("--runslow", action="store_true", default=False,
                     help="run slow statistical reproductions")


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: slow statistical reproduction")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="need --runslow option to run")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


def write_config(tmpdir, text, name='run.ini'):
    path = os.path.join(str(tmpdir), name)
    with open(path, 'w', encoding='utf-8') as f:
        f.write(text)
    return path
