"""
Shared pytest configuration: the ``slow`` marker and test settings.
"""
import pytest

from freezetfrc import create_app


def pytest_addoption(parser):
    parser.addoption(
        "--runslow", action="store_true", default=False,
        help="run the full handover matrix and other long simulations"
    )


def pytest_configure(config):
    config.addinivalue_line("markers", "slow: long-running simulation, needs --runslow")


def pytest_collection_modifyitems(config, items):
    if config.getoption("--runslow"):
        return
    skip_slow = pytest.mark.skip(reason="needs --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip_slow)


@pytest.fixture
def settings(tmp_path):
    """Testing settings with results written under a temporary directory."""
    config = create_app('testing')
    config['OUTPUT_DIR'] = str(tmp_path)
    return config
