import sys
from pathlib import Path

import numpy as np
import pytest

# make the sibling oracles module importable regardless of invocation dir
sys.path.insert(0, str(Path(__file__).parent))


@pytest.fixture
def rng():
    return np.random.default_rng(20260821)


def random_mask(rng, shape, density=None):
    if density is None:
        density = rng.uniform(0.05, 0.9)
    return (rng.random(shape) < density).astype(np.uint8)
