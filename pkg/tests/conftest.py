import shutil
from importlib import resources
from pathlib import Path

import pytest

HERE = Path(__file__).resolve().parent
FIXTURES = HERE / "fixtures"


@pytest.fixture(scope="session")
def data_dir() -> Path:
    with resources.as_file(resources.files("gigcount") / "data") as path:
        return Path(path)


@pytest.fixture
def sample_dir(tmp_path, data_dir) -> Path:
    """Writable copy of the bundled sample (census, fixtures, configs)."""
    dest = tmp_path / "sample"
    shutil.copytree(data_dir, dest, ignore=shutil.ignore_patterns("__pycache__", "__init__.py"))
    return dest
