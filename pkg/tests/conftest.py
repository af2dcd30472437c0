import numpy as np
import pytest

from deepgeom.data import DatasetSpec, generate_dataset
from deepgeom.network import Layer, Network
from deepgeom.training import Architecture, HyperParams, train


def random_net(rng, sizes, activation="softplus", scale=1.0):
    layers = []
    for k, (fan_in, fan_out) in enumerate(zip(sizes, sizes[1:])):
        act = activation if k < len(sizes) - 2 else "identity"
        W = scale * rng.standard_normal((fan_out, fan_in)) / np.sqrt(fan_in)
        b = 0.3 * rng.standard_normal(fan_out)
        layers.append(Layer(W, b, act))
    return Network(layers)


@pytest.fixture
def rng():
    return np.random.default_rng(1234)


MOONS = DatasetSpec("moons", d=2, L=2, n_train=1000, n_val=500, noise=0.1, seed=0)


@pytest.fixture(scope="session")
def moons_data():
    return generate_dataset(MOONS)


@pytest.fixture(scope="session")
def moons_checkpoint(moons_data):
    tr, va = moons_data
    return train(tr, Architecture((64, 64), "softplus"), HyperParams(epochs=150), seed=0,
                 validation=va, dataset_id=MOONS.id)


@pytest.fixture(scope="session")
def moons_net(moons_checkpoint):
    return moons_checkpoint.model


EMBEDDED = DatasetSpec("moons", d=20, L=2, n_train=1000, n_val=500, noise=0.05, seed=3)


@pytest.fixture(scope="session")
def embedded_data():
    return generate_dataset(EMBEDDED)


@pytest.fixture(scope="session")
def embedded_net(embedded_data):
    tr, va = embedded_data
    return train(tr, Architecture((64, 64), "softplus"), HyperParams(epochs=100), seed=1,
                 validation=va, dataset_id=EMBEDDED.id).model


# acceptance results, printed as one line per criterion at the end of the run
ACCEPTANCE = {}


def record_acceptance(number: int, ok: bool, detail: str) -> bool:
    line = f"ACCEPTANCE {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE[number] = line
    print(line)
    return ok


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for k in sorted(ACCEPTANCE):
            terminalreporter.write_line(ACCEPTANCE[k])
