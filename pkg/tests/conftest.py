import os
import subprocess
import sys
from pathlib import Path

import numpy as np
import pytest

from mobcache.core import NetworkTopology

ROOT = Path(__file__).resolve().parents[1]


@pytest.fixture
def grid2():
    return NetworkTopology.grid(2, 2)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture(scope="session")
def ratings_file():
    """Path to the MovieLens ratings; fetched once if missing, skipped when offline."""
    path = Path(os.environ.get("MOBCACHE_RATINGS", ROOT / "data/ml-100k/ratings.dat"))
    if not path.exists():
        proc = subprocess.run(
            [sys.executable, str(ROOT / "scripts/fetch_movielens.py"), "--out", str(path)],
            capture_output=True,
        )
        if proc.returncode != 0 or not path.exists():
            pytest.skip("MovieLens ratings unavailable; run scripts/fetch_movielens.py")
    return str(path)
