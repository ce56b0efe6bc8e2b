"""
One code per class on synthetic clusters
========================================

Eight Gaussian clusters in 100 dimensions stand in for a labeled
expression matrix.  The model learns one code per class; afterwards the
distances between codes are compared with the distances between the
planted centers.
"""

import numpy as np

from svqvae import (ModelConfig, Rng, code_distance_matrix, evaluate, louvain, make_blobs,
                    nearest_partner_graph, stratified_split, train)

full, centers = make_blobs(Rng(0), classes=8, dims=100, per_class=60)
train_ds, test_ds = stratified_split(full, 0.9, Rng(0))
print(train_ds.n_samples, "train rows,", test_ds.n_samples, "test rows")

# a single tanh layer is the latent; the decoder is one output layer
cfg = ModelConfig(input_dim=100, encoder_layers=[(32, "tanh")], num_codes=8,
                  output_range=full.value_range, batch_size=32, epochs=60)
model, history, _ = train(cfg, train_ds, Rng(0))
print(history.records[-1].log_line())

report = evaluate(model, test_ds)
print("nearest-code accuracy", report.accuracy, "perplexity", round(report.perplexity, 3))

# how well do the code distances follow the planted ones?
planted = code_distance_matrix(centers)
iu = np.triu_indices(8, 1)
r = np.corrcoef(planted[iu], report.distance_matrix[iu])[0, 1]
print("correlation of pairwise distances", round(r, 3))

# each class points at its closest other class
graph = nearest_partner_graph(report.distance_matrix, report.class_names)
for s, t, d in graph.edges:
    print(f"  {graph.names[s]} -> {graph.names[t]}  ({d:.3f})")

part = louvain(graph, Rng(0))
print("communities", part.membership.tolist(), "modularity", round(part.modularity, 3))
