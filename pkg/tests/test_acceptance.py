"""Acceptance criteria, one test each, at their stated tolerances.

Every test appends a ``PASS``/``FAIL`` line to ``ACCEPTANCE_LINES``; the lines
are printed in an "acceptance criteria" section at the end of the pytest run.

The MNIST criteria (2-4) need the four IDX files.  They are looked up in
``$SVQVAE_MNIST_DIR`` and then in ``data/mnist/`` at the repository root; the
gzip-compressed originals work as they are.  Set
``SVQVAE_MNIST_TRAIN_SUBSAMPLE=10000`` to train on a 10k subsample.
"""

import json
import os
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE_LINES, tiny_config
from oracles import (
    all_partition_modularities, manual_forward, max_relative_error, model_layers, modularity_pairs,
    numeric_gradients, two_clique_graph,
)
from svqvae import (
    Rng, backward, code_distance_matrix, encode, evaluate, init_model, load_checkpoint, load_mnist_idx,
    loss_forward, louvain, make_blobs, mnist_config, nearest_code, nearest_partner_graph, save_checkpoint,
    stratified_split, train,
)
from svqvae.analysis import class_mean_oracle, decode_codes, pearson_rows
from svqvae.cli import main
from svqvae.data import rescale_output
from svqvae.model import ModelConfig

REPO = Path(__file__).resolve().parents[1]
MNIST_FILES = {
    "train_images": "train-images-idx3-ubyte", "train_labels": "train-labels-idx1-ubyte",
    "test_images": "t10k-images-idx3-ubyte", "test_labels": "t10k-labels-idx1-ubyte",
}


def record(number, title, passed, detail):
    ACCEPTANCE_LINES.append(f"{'PASS' if passed else 'FAIL'} AC{number} {title}: {detail}")


# 1 ---------------------------------------------------------------------------

def test_ac1_gradient_fidelity():
    start = time.perf_counter()
    model = init_model(tiny_config(), Rng(11), class_names=("a", "b", "c"))
    model.embedding *= 4.0  # spread the codes so some nearest codes differ from the labels
    rng = np.random.default_rng(11)
    x = rng.uniform(-2.0, 3.0, size=(5, 6))
    y = np.array([0, 1, 2, 1, 0])
    trace = loss_forward(model, x, y, "train")
    grads = backward(model, trace, x, y)
    numeric = numeric_gradients(model, x, y, trace.nearest)
    rel = max_relative_error(grads.as_list(), numeric)
    st_exact = np.array_equal(grads.recon_wrt_ze, grads.recon_wrt_zq)
    elapsed = time.perf_counter() - start
    mismatched = int(np.sum(trace.nearest != y))
    passed = rel <= 1e-4 and st_exact and elapsed < 1.0
    record(1, "gradient fidelity", passed,
           f"max rel err {rel:.2e} (<= 1e-4), straight-through exact={st_exact}, "
           f"{mismatched}/5 mis-assigned, {elapsed:.2f}s (< 1s)")
    assert mismatched > 0
    assert passed


# 2-4 -------------------------------------------------------------------------

def _find_mnist():
    roots = [Path(p) for p in (os.environ.get("SVQVAE_MNIST_DIR"), REPO / "data" / "mnist") if p]
    for root in roots:
        found = {}
        for key, stem in MNIST_FILES.items():
            for name in (stem, stem + ".gz", stem.replace("-idx", ".idx")):
                if (root / name).is_file():
                    found[key] = root / name
                    break
        if len(found) == 4:
            return found
    return None


@pytest.fixture(scope="module")
def mnist_runs():
    files = _find_mnist()
    if files is None:
        return None
    train_ds = load_mnist_idx(files["train_images"], files["train_labels"])
    test_ds = load_mnist_idx(files["test_images"], files["test_labels"])
    sub = os.environ.get("SVQVAE_MNIST_TRAIN_SUBSAMPLE")
    if sub:
        keep = np.sort(Rng(0).permutation(train_ds.n_samples)[: int(sub)])
        train_ds = train_ds.subset(keep)
    runs = {"train": train_ds, "test": test_ds}
    for variant in ("supervised", "baseline"):
        start = time.perf_counter()
        model, _, _ = train(mnist_config(variant=variant, seed=0), train_ds, Rng(0))
        runs[variant] = model
        runs[variant + "_seconds"] = time.perf_counter() - start
    return runs


def _require_mnist(runs, number, title):
    if runs is None:
        record(number, title, False, "MNIST IDX files not found (set SVQVAE_MNIST_DIR or use data/mnist/)")
        pytest.fail("MNIST IDX files not found; set SVQVAE_MNIST_DIR or place them in data/mnist/")


@pytest.mark.slow
def test_ac2_mnist_desk_run(mnist_runs):
    title = "MNIST desk run"
    _require_mnist(mnist_runs, 2, title)
    report = evaluate(mnist_runs["supervised"], mnist_runs["test"])
    _, bound = class_mean_oracle(mnist_runs["train"], mnist_runs["test"])
    seconds = mnist_runs["supervised_seconds"]
    passed = (report.accuracy >= 0.80 and report.perplexity >= 9.0 and report.mse <= bound + 0.05
              and seconds <= 15 * 60)
    record(2, title, passed,
           f"accuracy {report.accuracy:.4f} (>= 0.80), perplexity {report.perplexity:.3f} (>= 9.0), "
           f"test MSE {report.mse:.4f} (<= {bound:.4f} + 0.05), {seconds:.0f}s (<= 900s), "
           f"{mnist_runs['train'].n_samples} train samples")
    assert passed


@pytest.mark.slow
def test_ac3_baseline_collapse(mnist_runs):
    title = "baseline has lower perplexity"
    _require_mnist(mnist_runs, 3, title)
    sup = evaluate(mnist_runs["supervised"], mnist_runs["test"]).perplexity
    base = evaluate(mnist_runs["baseline"], mnist_runs["test"]).perplexity
    record(3, title, base < sup, f"baseline {base:.3f} < supervised {sup:.3f}")
    assert base < sup


@pytest.mark.slow
def test_ac4_prototype_fidelity(mnist_runs):
    title = "prototype fidelity"
    _require_mnist(mnist_runs, 4, title)
    means, _ = class_mean_oracle(mnist_runs["train"], mnist_runs["train"])
    r = pearson_rows(decode_codes(mnist_runs["supervised"]), means)
    record(4, title, bool(r.min() >= 0.9), f"min Pearson r {r.min():.4f} over 10 digits (>= 0.9)")
    assert r.min() >= 0.9


# 5 ---------------------------------------------------------------------------
# Settings chosen on held-out data seeds 100-119 before this test's seed was run.

BLOBS = dict(classes=8, dims=100, per_class=60, center_spread=1.0, noise_std=0.1)


def blobs_run(seed):
    full, centers = make_blobs(Rng(seed), **BLOBS)
    train_ds, test_ds = stratified_split(full, 0.9, Rng(seed))
    cfg = ModelConfig(input_dim=100, encoder_layers=[(32, "tanh")], num_codes=8,
                      output_range=full.value_range, learning_rate=1e-3, batch_size=32, epochs=60, seed=seed)
    model, _, _ = train(cfg, train_ds, Rng(seed))
    report = evaluate(model, test_ds)
    planted = code_distance_matrix(centers)
    np.fill_diagonal(planted, np.inf)
    i, j = np.unravel_index(np.argmin(planted), planted.shape)
    graph = nearest_partner_graph(report.distance_matrix, report.class_names)
    return report.accuracy, (int(i), int(j)), graph.connects(i, j)


def test_ac5_synthetic_surrogate():
    start = time.perf_counter()
    accuracy, pair, connected = blobs_run(0)
    elapsed = time.perf_counter() - start
    passed = accuracy >= 0.95 and connected and elapsed <= 120
    record(5, "synthetic surrogate", passed,
           f"accuracy {accuracy:.3f} (>= 0.95), closest planted pair {pair} joined={connected}, "
           f"{elapsed:.1f}s (<= 120s)")
    assert passed


def test_ac5_supplement_seed_sweep():
    """Not a criterion: how often the closest pair is joined across data seeds 1-10."""
    joined = [blobs_run(s)[2] for s in range(1, 11)]
    ACCEPTANCE_LINES.append(f"INFO AC5 closest planted pair joined on {sum(joined)}/10 further seeds "
                            f"(chance ~ 0.27 per seed)")


# 6 ---------------------------------------------------------------------------

def test_ac6_louvain_two_cliques():
    worst, graphs, recompute = 0.0, 0, 0.0
    for n in range(2, 9):
        for a in range(1, n // 2 + 1):
            for bridge in (False, True):
                adj = two_clique_graph(a, n - a, bridge)
                if adj.sum() == 0:
                    continue
                part = louvain(adj, Rng(n * 10 + a))
                best = all_partition_modularities(adj).max()
                worst = max(worst, abs(part.modularity - best))
                recompute = max(recompute, abs(part.modularity - modularity_pairs(adj, part.membership)))
                graphs += 1
    passed = worst <= 1e-12 and recompute <= 1e-12
    record(6, "Louvain optimality", passed,
           f"{graphs} two-clique graphs, max |Q - Q_opt| {worst:.1e}, max recompute gap {recompute:.1e} (<= 1e-12)")
    assert passed


# 7 ---------------------------------------------------------------------------

def test_ac7_determinism(tmp_path):
    cfg = tmp_path / "run.json"
    cfg.write_text(json.dumps({
        "data": {"format": "blobs", "classes": 4, "dims": 12, "per_class": 25, "noise_std": 0.2},
        "model": {"input_dim": 12, "encoder_layers": [[16, "tanh"], [6, "linear"]], "num_codes": 4,
                  "output_range": [-5, 5], "epochs": 5, "batch_size": 16}}))
    for d in ("a", "b"):
        assert main(["train", "--config", str(cfg), "--seed", "42", "--out", str(tmp_path / d),
                     "--save-optimizer"]) == 0
    a = (tmp_path / "a" / "checkpoint.json").read_bytes()
    identical = a == (tmp_path / "b" / "checkpoint.json").read_bytes()

    ds, _ = make_blobs(Rng(1), 4, 12, 25, 1.0, 0.2)
    model, _, state = train(ModelConfig(input_dim=12, encoder_layers=[(16, "tanh"), (6, "linear")], num_codes=4,
                                        output_range=(-5, 5), epochs=5, batch_size=16), ds, Rng(42))
    save_checkpoint(model, tmp_path / "rt.json", state)
    reloaded = load_checkpoint(tmp_path / "rt.json")[0]
    x = np.random.default_rng(0).uniform(-5, 5, size=(50, 12))
    exact = encode(model, x).tobytes() == encode(reloaded, x).tobytes()
    record(7, "determinism", identical and exact,
           f"checkpoints byte-identical={identical} ({len(a)} bytes), encode bit-exact after reload={exact}")
    assert identical and exact


# 8 ---------------------------------------------------------------------------

def test_ac8_loss_algebra():
    rng = np.random.default_rng(8)
    worst_sum = worst_eq = 0.0
    for trial in range(1000):
        variant = "supervised" if trial % 4 else "baseline"
        model = init_model(tiny_config(variant, beta=rng.uniform(0, 1), gamma=rng.uniform(0, 0.5)),
                           Rng(trial), class_names=("a", "b", "c"))
        model.embedding *= rng.uniform(0.5, 8.0)
        b = int(rng.integers(1, 9))
        x = rng.uniform(-2.0, 3.0, size=(b, 6))
        y = rng.integers(0, 3, size=b)
        t = loss_forward(model, x, y, "train")
        beta, gamma = model.config.beta, model.config.gamma
        recomposed = t.recon + t.vq + beta * t.commit - (t.mis_vq + gamma * t.divergence)
        worst_sum = max(worst_sum, abs(t.total - recomposed) / max(1.0, abs(t.total)))

        if variant == "supervised":
            # gamma = 0 and labels equal to the nearest codes: the plain vector-quantized loss with e_y
            plain = init_model(tiny_config(gamma=0.0, beta=beta), Rng(trial), class_names=("a", "b", "c"))
            plain.embedding[:] = model.embedding
            enc, dec = model_layers(plain)
            z_e = manual_forward(enc, x)
            yk = nearest_code(plain.embedding, z_e)
            e_y = plain.embedding[yk]
            x_hat = rescale_output(manual_forward(dec, e_y), plain.config.output_range)
            sq = np.sum((z_e - e_y) ** 2, axis=1)
            expected = np.mean(np.mean((x - x_hat) ** 2, axis=1) + sq + beta * sq)
            got = loss_forward(plain, x, yk, "train").total
            worst_eq = max(worst_eq, abs(got - expected) / max(1.0, abs(expected)))
    passed = worst_sum <= 1e-12 and worst_eq <= 1e-12
    record(8, "loss algebra", passed,
           f"1000 batches, max recomposition gap {worst_sum:.1e}, max gap to gamma=0 reference {worst_eq:.1e} "
           f"(<= 1e-12, relative to max(1, |L|))")
    assert passed
