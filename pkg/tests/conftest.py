"""Shared test fixtures: paths to the shipped fixture files."""

from pathlib import Path

import pytest

REPO_ROOT = Path(__file__).resolve().parent.parent
FIXTURES = REPO_ROOT / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir() -> Path:
    return FIXTURES


@pytest.fixture(scope="session")
def tx2_log() -> Path:
    return FIXTURES / "telemetry" / "tx2_tegrastats.log"


@pytest.fixture(scope="session")
def rtx_log() -> Path:
    return FIXTURES / "telemetry" / "rtx_nvidia_smi.log"


@pytest.fixture(scope="session")
def constant_csv() -> Path:
    return FIXTURES / "telemetry" / "constant_2000mw.csv"


@pytest.fixture(scope="session")
def constant_tegrastats() -> Path:
    return FIXTURES / "telemetry" / "constant_2000mw_tegrastats.log"


@pytest.fixture(scope="session")
def table1_csv() -> Path:
    return FIXTURES / "registry" / "table1.csv"
