"""
Decoding the class codes of handwritten digits
==============================================

Uses the 8x8 digits that ship with scikit-learn.  Each code is decoded to
an image and compared with the average image of its class, and new digits
are sampled from per-class Gaussians in latent space.
"""

import sys
from pathlib import Path

import numpy as np
from sklearn.datasets import load_digits

from svqvae import (Dataset, ModelConfig, Rng, estimate_class_latent_stats, evaluate, generate,
                    stratified_split, train)
from svqvae.analysis import class_mean_oracle, decode_codes, pearson_rows, write_prototypes

out = Path(sys.argv[1] if len(sys.argv) > 1 else "digits_out")

# pixel values 0..16 map to [-1, 1]
d = load_digits()
full = Dataset(d.data * (2 / 16) - 1, d.target, [str(i) for i in range(10)], (-1, 1), image_shape=(8, 8))
train_ds, test_ds = stratified_split(full, 0.8, Rng(0))

cfg = ModelConfig(input_dim=64, encoder_layers=[(128, "relu"), (32, "linear")], num_codes=10,
                  batch_size=32, epochs=60, image_shape=(8, 8))
model, _, _ = train(cfg, train_ds, Rng(0), progress=print)

report = evaluate(model, test_ds)
print("test accuracy", round(report.accuracy, 3), "mse", round(report.mse, 4))
print(report.confusion)

prototypes = decode_codes(model)
means, _ = class_mean_oracle(train_ds, train_ds)
print("prototype vs class mean, Pearson r:", np.round(pearson_rows(prototypes, means), 3))

# a quick look without an image viewer
shades = " .:-=+*#%@"
for row in prototypes[3].reshape(8, 8):
    print("".join(shades[int((v + 1) / 2 * 9.999)] * 2 for v in row))

written = write_prototypes(out, prototypes, report.class_names, (-1, 1), (8, 8))
print("wrote", len(written), "PGM files to", out)

# generation: latent mean/covariance per class, centered on the class code
stats = estimate_class_latent_stats(model, train_ds, "full", jitter=1e-6)
samples, classes = generate(model, stats, 5, Rng(1), class_index=7)
print("five sevens, first pixels:", np.round(samples[:, :4], 2))
