import importlib
from pathlib import Path
from types import ModuleType

import numpy as np
import pytest

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

import mdframe as md


@pytest.fixture(scope="module")
def project_pkg(project_name: str) -> ModuleType:
    return importlib.import_module(project_name)


@pytest.fixture(scope="module")
def project_name() -> str:
    project_root = Path(__file__).parent.parent.resolve()
    pyproject_toml = project_root / "pyproject.toml"

    with open(pyproject_toml, mode="rb") as toml_file:
        data = tomllib.load(toml_file)
        name = data["project"]["name"]

    return name


@pytest.fixture
def rng() -> np.random.Generator:
    return np.random.default_rng(20250101)


@pytest.fixture
def parseval_window() -> md.signal.StepFunction:
    """χ_[1, a) with δ = 2, p = q = 1 and two cells per δ-step."""
    params = md.lattice.derive_params(2, 1, 1)
    return md.signal.StepFunction.indicator(params, 2, 0, 2)
