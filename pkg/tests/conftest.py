import numpy as np
import pytest

from svqvae import ModelConfig, Rng, init_model

ACCEPTANCE_LINES: list[str] = []


def tiny_config(variant="supervised", **kw):
    base = dict(input_dim=6, encoder_layers=[(5, "tanh"), (4, "linear")], num_codes=3,
                decoder_layers=[(5, "tanh")], output_range=(-2.0, 3.0), variant=variant)
    base.update(kw)
    return ModelConfig(**base)


@pytest.fixture
def tiny_model():
    def build(seed=0, variant="supervised", scale_codes=1.0, **kw):
        model = init_model(tiny_config(variant, **kw), Rng(seed), class_names=("a", "b", "c"))
        model.embedding *= scale_codes
        return model
    return build


@pytest.fixture
def tiny_batch():
    rng = np.random.default_rng(7)
    x = rng.uniform(-2.0, 3.0, size=(5, 6))
    y = np.array([0, 1, 2, 1, 0])
    return x, y


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
