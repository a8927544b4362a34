import numpy as np
import pytest
import torch

from helpers import TOY_SIG, build_toy_corpus

# Small tensors dominate these tests; thread fan-out only slows them down.
torch.set_num_threads(1)


@pytest.fixture(scope="session")
def toy_corpus(tmp_path_factory):
    """Manifest path for a 10-clip synthetic corpus at the toy signal config."""
    directory = tmp_path_factory.mktemp("corpus")
    return build_toy_corpus(directory, TOY_SIG)


@pytest.fixture()
def rng():
    return np.random.default_rng(1234)
