"""MNIST-style checks on the 8x8 digits bundled with scikit-learn.

This is a stand-in that runs anywhere without downloads.  It mirrors the
MNIST acceptance checks at a smaller scale; it does not replace them.
"""

import numpy as np
import pytest

from svqvae import Dataset, ModelConfig, Rng, evaluate, stratified_split, train
from svqvae.analysis import class_mean_oracle, decode_codes, pearson_rows

datasets = pytest.importorskip("sklearn.datasets")


@pytest.fixture(scope="module")
def digits():
    d = datasets.load_digits()
    full = Dataset(d.data * (2.0 / 16.0) - 1.0, d.target, tuple(str(i) for i in range(10)), (-1.0, 1.0),
                   image_shape=(8, 8))
    train_ds, test_ds = stratified_split(full, 0.8, Rng(0))
    models = {}
    for variant in ("supervised", "baseline"):
        cfg = ModelConfig(input_dim=64, encoder_layers=[(128, "relu"), (32, "linear")], num_codes=10,
                          epochs=60, batch_size=32, variant=variant, image_shape=(8, 8))
        models[variant] = train(cfg, train_ds, Rng(0))[0]
    return train_ds, test_ds, models


def test_supervised_codes_track_classes(digits):
    train_ds, test_ds, models = digits
    report = evaluate(models["supervised"], test_ds)
    _, bound = class_mean_oracle(train_ds, test_ds)
    assert report.accuracy >= 0.8
    assert report.perplexity >= 9.0
    assert report.mse <= bound + 0.05


def test_baseline_uses_codes_less_evenly(digits):
    _, test_ds, models = digits
    assert evaluate(models["baseline"], test_ds).perplexity < evaluate(models["supervised"], test_ds).perplexity


def test_prototypes_look_like_class_means(digits):
    train_ds, _, models = digits
    means, _ = class_mean_oracle(train_ds, train_ds)
    assert np.min(pearson_rows(decode_codes(models["supervised"]), means)) >= 0.9
