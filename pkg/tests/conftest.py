import numpy as np
import pytest

from agtnet.model import AgtNetwork, NetworkConfig


def make_net(n_layers=3, hidden=4, input_dim=5, seed=0, **kw):
    kw.setdefault("dropout", 0.0)
    return AgtNetwork.initialize(NetworkConfig(input_dim=input_dim, hidden=hidden, n_layers=n_layers, **kw), seed)


def random_batch(rng, lengths, input_dim):
    n_max = max(lengths)
    x = np.zeros((len(lengths), n_max, input_dim))
    mask = np.zeros((len(lengths), n_max), dtype=bool)
    for b, n in enumerate(lengths):
        x[b, :n] = rng.uniform(-1, 1, size=(n, input_dim))
        mask[b, :n] = True
    return x, mask


@pytest.fixture
def rng():
    return np.random.default_rng(1234)
