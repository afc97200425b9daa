import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from lowfield.volume import PhantomSpec, Volume, make_phantom, normalize_intensity


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


@pytest.fixture
def random_volume(rng):
    return Volume(data=rng.random((16, 16, 16)), spacing=(1.0, 1.0, 1.0), subject_id="rand16")


@pytest.fixture
def phantom32():
    spec = PhantomSpec(grid_size=(32, 32, 32), num_shapes=3, seed=7)
    return normalize_intensity(make_phantom(spec))
