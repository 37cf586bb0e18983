import pytest

from fastretrial.analytic import SystemConfig


@pytest.fixture
def cfg_40_20():
    return SystemConfig(40, 20, 0.10)


@pytest.fixture
def cfg_50_25():
    return SystemConfig(50, 25, 0.08)
