import importlib.resources as resources
from pathlib import Path

import pytest

from surropt.grid import parse_case


def data_path(name: str) -> Path:
    return Path(resources.files("surropt") / "data" / name)


@pytest.fixture(scope="session")
def case5():
    return parse_case(data_path("case5.json"))


@pytest.fixture(scope="session")
def case5_paths():
    return data_path("case5.json"), data_path("case5.m")
