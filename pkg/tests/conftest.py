import numpy as np
import pytest

from lclnet.data import synth_glyphs
from lclnet.nn import ModelSpec
from lclnet.train import init_params


@pytest.fixture(scope="session")
def glyphs16():
    """30 classes x 20 samples at 16x16, the desk-scale training set."""
    return synth_glyphs(30, 20, 16, seed=1)


@pytest.fixture(scope="session")
def glyphs16_heldout():
    """Held-out classes drawn from a disjoint seed space."""
    return synth_glyphs(10, 20, 16, seed=99)


@pytest.fixture(scope="session")
def tiny_spec():
    return ModelSpec(depth_n=1, image_size=8, n_candidates=3)


@pytest.fixture()
def tiny_model(tiny_spec):
    from lclnet.nn import ContrastNet

    return ContrastNet(tiny_spec, init_params(tiny_spec, seed=0))


@pytest.fixture()
def rng():
    return np.random.default_rng(0)
