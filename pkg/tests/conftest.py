import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

from thermoflip.calibration import calibrated_params  # noqa: E402
from thermoflip.controller import ControllerConfig  # noqa: E402
from thermoflip.thermal import PeltierParams  # noqa: E402

PATTERN_DIR = Path(__file__).parents[1] / "src" / "thermoflip" / "data" / "patterns"


@pytest.fixture(scope="session")
def cal():
    return calibrated_params()


@pytest.fixture
def config():
    return ControllerConfig()


@pytest.fixture
def simple_params():
    """Well-conditioned set with visible ambient losses, handy for fast tests."""
    return PeltierParams(seebeck_alpha=0.02, resistance=4.0, internal_conductance=0.15,
                         heat_capacity_side=8.0, ambient_conductance=0.02)


@pytest.fixture
def pattern_dir():
    return PATTERN_DIR
