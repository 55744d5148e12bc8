import sys
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from rcm2he.preprocess import build_dataset
from rcm2he.synthgen import PhantomConfig, generate_corpus


@pytest.fixture(scope="session")
def tiny_split():
    """3 patients x 4 images at 32px: enough to exercise training paths."""
    cfg = PhantomConfig(image_size=32, nuclei_count_range=(2, 4),
                        nuclei_radius_range=(3.0, 5.0), seed=7)
    corpus = generate_corpus(cfg, patients=3, images_per_patient=4)
    return build_dataset(corpus, ["p002"])


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
