import os
from pathlib import Path

import pytest

from hkgx.ingest import load_dataset

REPO_ROOT = Path(__file__).resolve().parent.parent
TOY_DIR = REPO_ROOT / "data" / "toy"

# Real benchmark datasets are not redistributed with the toolkit. Place
# them under data/<name>/ (or point HKGX_DATA_DIR at a directory that
# contains fbauto/, jf17k/, wikipeople/) to enable the full-scale checks.
DATA_ROOT = Path(os.environ.get("HKGX_DATA_DIR", REPO_ROOT / "data"))

BENCHMARKS = {
    "fbauto": "fbauto",
    "jf17k": "jf17k",
    "wikipeople": "wikipeople",
}


def benchmark_dir(name: str) -> Path | None:
    path = DATA_ROOT / name
    if (path / "train.txt").is_file() or (path / "n-ary_train.json").is_file() \
            or (path / "train.json").is_file():
        return path
    return None


def require_benchmark(name: str) -> Path:
    path = benchmark_dir(name)
    if path is None:
        pytest.skip(
            f"benchmark dataset {name!r} not present under {DATA_ROOT} "
            f"(not redistributable; see README for the expected layout)"
        )
    return path


@pytest.fixture(scope="session")
def toy_ds():
    return load_dataset(TOY_DIR, "canonical")
