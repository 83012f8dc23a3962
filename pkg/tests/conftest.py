import socket

import numpy as np
import pytest

from fsum.backends import StubCaptionBackend, StubEmbeddingBackend
from fsum.synthetic import make_synthetic_dataset


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


@pytest.fixture
def stub_backends():
    return StubCaptionBackend(), StubEmbeddingBackend()


@pytest.fixture
def no_network(monkeypatch):
    """Fail loudly on any attempt to open a socket."""
    calls = []

    def guard(*args, **kwargs):
        calls.append(args)
        raise RuntimeError("network access attempted")

    monkeypatch.setattr(socket.socket, "connect", guard)
    monkeypatch.setattr(socket.socket, "connect_ex", guard)
    monkeypatch.setattr(socket, "create_connection", guard)
    return calls


@pytest.fixture(scope="session")
def synthetic_dataset(tmp_path_factory):
    root = tmp_path_factory.mktemp("synthetic")
    return make_synthetic_dataset(root, n_images=5, seed=3, dataset_id="synth5")
