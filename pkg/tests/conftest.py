import numpy as np
import pytest

from tbfa.harness import toy_victim
from tbfa.quantizer import quantize_model
from tbfa.tensor_core import LabeledBatch, build_mlp, train_sgd

ACCEPTANCE_LINES = []


@pytest.fixture(scope="session")
def victim():
    return toy_victim()


def tiny_qmodel(seed, sizes=(6, 10, 4), n_bits=4, n_samples=24, train_epochs=5):
    """Small quantized MLP plus a labelled batch; under 1000 weight bits at the default sizes."""
    rng = np.random.default_rng(seed)
    d_in, hidden, n_cls = sizes
    x = rng.normal(size=(n_samples, d_in))
    y = rng.integers(0, n_cls, size=n_samples)
    batch = LabeledBatch(x, y)
    model = build_mlp(d_in, [hidden], n_cls, seed=seed)
    if train_epochs:
        model = train_sgd(model, batch, train_epochs, 0.05, seed=seed)
    return quantize_model(model, n_bits), batch


@pytest.fixture
def make_tiny():
    return tiny_qmodel


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
