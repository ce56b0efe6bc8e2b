"""Epoch/batch training loop and JSON checkpoints."""

from __future__ import annotations

import json
import logging
import math
import os
import tempfile
import time
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable

import numpy as np

from . import analysis
from .data import Dataset
from .model import (
    AdamState, LayerParams, Model, ModelConfig, adam_step, backward, init_model,
    loss_forward,
)
from .numeric import Rng

log = logging.getLogger(__name__)

FORMAT_VERSION = 1
TERMS = ("recon", "vq", "commit", "mis", "div", "total")


class CheckpointError(ValueError):
    pass


@dataclass
class EpochRecord:
    epoch: int
    recon: float
    vq: float
    commit: float
    mis: float
    div: float
    total: float
    perplexity: float
    wall_time: float
    eval_perplexity: float | None = None
    eval_mse: float | None = None

    def log_line(self) -> str:
        line = (f"epoch={self.epoch} recon={self.recon:.6g} vq={self.vq:.6g} commit={self.commit:.6g} "
                f"mis={self.mis:.6g} div={self.div:.6g} total={self.total:.6g} "
                f"perplexity={self.perplexity:.6g}")
        if self.eval_perplexity is not None:
            line += f" eval_perplexity={self.eval_perplexity:.6g} eval_mse={self.eval_mse:.6g}"
        return line


@dataclass
class TrainHistory:
    records: list[EpochRecord] = field(default_factory=list)

    def to_csv(self, path) -> None:
        cols = ["epoch", *TERMS, "perplexity", "eval_perplexity", "eval_mse", "wall_time"]
        lines = [",".join(cols)]
        for r in self.records:
            vals = [getattr(r, c) for c in cols]
            lines.append(",".join("" if v is None else repr(v) for v in vals))
        Path(path).write_text("\n".join(lines) + "\n")


def clip_gradients(grads: list[np.ndarray], max_norm: float) -> float:
    norm = math.sqrt(sum(float(np.sum(g * g)) for g in grads))
    if norm > max_norm:
        scale = max_norm / norm
        for g in grads:
            g *= scale
    return norm


def train(config: ModelConfig, train_ds: Dataset, rng: Rng, eval_ds: Dataset | None = None,
          progress: Callable[[str], None] | None = None,
          model: Model | None = None, state: AdamState | None = None):
    """Train for ``config.epochs`` epochs; returns ``(model, history, adam_state)``.

    Each epoch visits a fresh permutation of the training set in batches of
    ``config.batch_size`` (the last batch may be short).  ``progress`` gets
    one machine-parseable line per epoch.
    """
    if train_ds.n_samples == 0:
        raise ValueError("training set is empty")
    if train_ds.n_features != config.input_dim:
        raise ValueError(f"data has {train_ds.n_features} features, config expects {config.input_dim}")
    if config.variant == "supervised" and train_ds.n_classes != config.num_codes:
        raise ValueError(f"data has {train_ds.n_classes} classes, config has {config.num_codes} codes")
    if model is None:
        model = init_model(config, rng, train_ds.class_names)
    params = model.parameters()
    if state is None:
        state = AdamState.zeros_like(params)
    history = TrainHistory()
    x_all, y_all = train_ds.features, train_ds.labels
    n = train_ds.n_samples

    for epoch in range(1, config.epochs + 1):
        start = time.perf_counter()
        order = rng.permutation(n)
        sums = dict.fromkeys(TERMS, 0.0)
        assignments = np.empty(n, dtype=np.int64)
        warned = False
        for lo in range(0, n, config.batch_size):
            idx = order[lo:lo + config.batch_size]
            x, y = x_all[idx], y_all[idx]
            trace = loss_forward(model, x, y, phase="train")
            if not warned and trace.divergence > 10.0 * trace.vq and trace.divergence > 0:
                log.warning("epoch %d: divergence term %.3g exceeds 10x the VQ term %.3g; "
                            "consider grad_clip", epoch, trace.divergence, trace.vq)
                warned = True
            grads = backward(model, trace, x, y).as_list()
            if config.grad_clip is not None:
                clip_gradients(grads, config.grad_clip)
            adam_step(params, grads, state, config.learning_rate)
            for name, value in trace.terms().items():
                sums[name] += value * idx.size
            assignments[lo:lo + idx.size] = trace.nearest
        rec = EpochRecord(epoch, *(sums[t] / n for t in TERMS),
                          perplexity=analysis.perplexity(assignments, config.num_codes),
                          wall_time=time.perf_counter() - start)
        if eval_ds is not None:
            report = analysis.evaluate(model, eval_ds)
            rec.eval_perplexity, rec.eval_mse = report.perplexity, report.mse
        history.records.append(rec)
        if progress is not None:
            progress(rec.log_line())
    return model, history, state


def _layers_to_json(layers: list[LayerParams]) -> list[dict]:
    return [{"activation": l.activation, "weights": l.weights.tolist(), "bias": l.bias.tolist()}
            for l in layers]


def checkpoint_json(model: Model, state: AdamState | None = None) -> str:
    doc = {
        "format_version": FORMAT_VERSION,
        "config": model.config.to_dict(),
        "class_names": None if model.class_names is None else list(model.class_names),
        "encoder": _layers_to_json(model.encoder),
        "decoder": _layers_to_json(model.decoder),
        "embedding": model.embedding.tolist(),
    }
    if state is not None:
        doc["adam"] = {"step": state.step, "beta1": state.beta1, "beta2": state.beta2, "eps": state.eps,
                       "m": [a.tolist() for a in state.m], "v": [a.tolist() for a in state.v]}
    # repr-based float printing is shortest round-trip, so parameters reload bit-exactly
    return json.dumps(doc, allow_nan=False, separators=(",", ":"))


def save_checkpoint(model: Model, path, state: AdamState | None = None) -> None:
    text = checkpoint_json(model, state)
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=path.name, suffix=".tmp")
    with os.fdopen(fd, "w") as f:
        f.write(text)
    os.replace(tmp, path)


def _array(obj, shape, what: str) -> np.ndarray:
    try:
        a = np.array(obj, dtype=np.float64)
    except (TypeError, ValueError) as exc:
        raise CheckpointError(f"{what}: not a numeric array ({exc})") from None
    if a.shape != tuple(shape):
        raise CheckpointError(f"{what}: shape {a.shape} does not match config shape {tuple(shape)}")
    if not np.all(np.isfinite(a)):
        raise CheckpointError(f"{what}: non-finite values")
    return a


def load_checkpoint(path) -> tuple[Model, AdamState | None]:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise CheckpointError(f"{path}: not a valid checkpoint document ({exc})") from None
    if not isinstance(doc, dict) or "format_version" not in doc:
        raise CheckpointError(f"{path}: missing format_version")
    if doc["format_version"] != FORMAT_VERSION:
        raise CheckpointError(f"{path}: unsupported checkpoint format_version {doc['format_version']!r}")
    try:
        config = ModelConfig.from_dict(doc["config"])
        spec_enc = config.encoder_layers
        spec_dec = config.decoder_layers + [(config.input_dim, config.output_activation)]
        widths = [config.input_dim] + [w for w, _ in spec_enc]
        if len(doc["encoder"]) != len(spec_enc) or len(doc["decoder"]) != len(spec_dec):
            raise CheckpointError(f"{path}: layer count does not match config")
        encoder = [LayerParams(_array(l["weights"], (a, b), f"encoder[{i}].weights"),
                               _array(l["bias"], (b,), f"encoder[{i}].bias"), act)
                   for i, (l, a, b, (_, act)) in enumerate(zip(doc["encoder"], widths[:-1], widths[1:], spec_enc))]
        widths = [config.code_dim] + [w for w, _ in spec_dec]
        decoder = [LayerParams(_array(l["weights"], (a, b), f"decoder[{i}].weights"),
                               _array(l["bias"], (b,), f"decoder[{i}].bias"), act)
                   for i, (l, a, b, (_, act)) in enumerate(zip(doc["decoder"], widths[:-1], widths[1:], spec_dec))]
        for i, (l, (_, act)) in enumerate(zip(doc["encoder"] + doc["decoder"], spec_enc + spec_dec)):
            if l["activation"] != act:
                raise CheckpointError(f"{path}: layer {i} activation {l['activation']!r} != config {act!r}")
        embedding = _array(doc["embedding"], (config.num_codes, config.code_dim), "embedding")
        names = doc.get("class_names")
        model = Model(config, encoder, decoder, embedding, None if names is None else tuple(names))
        state = None
        if doc.get("adam") is not None:
            a = doc["adam"]
            shapes = [p.shape for p in model.parameters()]
            state = AdamState([_array(m, s, "adam.m") for m, s in zip(a["m"], shapes, strict=True)],
                              [_array(v, s, "adam.v") for v, s in zip(a["v"], shapes, strict=True)],
                              int(a["step"]), a["beta1"], a["beta2"], a["eps"])
    except CheckpointError:
        raise
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"{path}: malformed checkpoint ({exc})") from None
    return model, state
