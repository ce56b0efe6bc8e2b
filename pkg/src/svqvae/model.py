"""Supervised VQ-VAE with dense encoder/decoder and hand-written backprop.

The supervised variant keeps one code per class.  During training the
decoder always sees the code of the sample's own class; at evaluation time
(and always for the unsupervised baseline) it sees the nearest code.  The
per-sample objective of the supervised variant is::

    mse(x, d(e_y)) + |sg[z_e] - e_y|^2 + beta |z_e - sg[e_y]|^2
        - [k != y] (|sg[z_e] - e_k|^2 + gamma |z_e - sg[e_k]|^2)

and the baseline drops the bracketed term and uses the nearest code ``e_k``
everywhere.  ``sg`` marks operands treated as constants when
differentiating; the reconstruction gradient at the quantized latent is
copied onto the encoder output (straight-through).
"""

from __future__ import annotations

import logging
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .data import Dataset, rescale_output
from .numeric import (
    ACTIVATIONS, NotPositiveDefiniteError, Rng, ShapeError, activate, affine,
    cholesky, covariance, gaussian,
)

log = logging.getLogger(__name__)

VARIANTS = ("supervised", "baseline")

# chunk size for row-wise distance computations (rows * codes * dim floats)
_DIST_BUDGET = 1 << 22


@dataclass
class ModelConfig:
    input_dim: int
    encoder_layers: list[tuple[int, str]]
    num_codes: int
    decoder_layers: list[tuple[int, str]] | None = None
    output_activation: str = "tanh"
    output_range: tuple[float, float] = (-1.0, 1.0)
    beta: float = 0.25
    gamma: float = 0.1
    learning_rate: float = 1e-3
    batch_size: int = 256
    epochs: int = 25
    seed: int = 0
    variant: str = "supervised"
    grad_clip: float | None = None
    image_shape: tuple[int, int] | None = None

    def __post_init__(self):
        self.encoder_layers = [(int(w), str(a)) for w, a in self.encoder_layers]
        if self.decoder_layers is None:
            # mirror the encoder's hidden layers; the output layer is added separately
            hidden = self.encoder_layers[:-1]
            self.decoder_layers = list(reversed(hidden))
        self.decoder_layers = [(int(w), str(a)) for w, a in self.decoder_layers]
        self.output_range = (float(self.output_range[0]), float(self.output_range[1]))
        if self.image_shape is not None:
            self.image_shape = (int(self.image_shape[0]), int(self.image_shape[1]))
        self.validate()

    @property
    def code_dim(self) -> int:
        return self.encoder_layers[-1][0]

    def validate(self) -> None:
        if self.input_dim < 1:
            raise ValueError("input_dim must be positive")
        if not self.encoder_layers:
            raise ValueError("encoder needs at least one layer")
        for width, act in self.encoder_layers + self.decoder_layers + [(1, self.output_activation)]:
            if width < 1:
                raise ValueError(f"layer width must be positive, got {width}")
            if act not in ACTIVATIONS:
                raise ValueError(f"unknown activation {act!r}")
        if self.num_codes < 1:
            raise ValueError("num_codes must be at least 1")
        if self.beta < 0 or self.gamma < 0:
            raise ValueError("beta and gamma must be non-negative")
        if not self.output_range[0] < self.output_range[1]:
            raise ValueError("output_range must satisfy lo < hi")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {VARIANTS}, got {self.variant!r}")
        if self.learning_rate <= 0 or self.batch_size < 1 or self.epochs < 0:
            raise ValueError("learning_rate, batch_size must be positive and epochs non-negative")
        if self.grad_clip is not None and self.grad_clip <= 0:
            raise ValueError("grad_clip must be positive when set")
        if self.image_shape is not None and math.prod(self.image_shape) != self.input_dim:
            raise ValueError(f"image_shape {self.image_shape} does not match input_dim {self.input_dim}")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["encoder_layers"] = [list(layer) for layer in self.encoder_layers]
        d["decoder_layers"] = [list(layer) for layer in self.decoder_layers]
        d["output_range"] = list(self.output_range)
        d["image_shape"] = None if self.image_shape is None else list(self.image_shape)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ModelConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown model config keys: {sorted(unknown)}")
        return cls(**d)


def mnist_config(**overrides) -> ModelConfig:
    """Dense 784-256-64 model trained 25 epochs at batch 256, lr 1e-3."""
    base = dict(input_dim=784, encoder_layers=[(256, "relu"), (64, "linear")], num_codes=10,
                decoder_layers=[(256, "relu")], output_range=(-1.0, 1.0), learning_rate=1e-3,
                batch_size=256, epochs=25, image_shape=(28, 28))
    base.update(overrides)
    return ModelConfig(**base)


def dense_matrix_config(input_dim: int, num_codes: int, hidden: int = 1000,
                        value_range=(-10.0, 10.0), **overrides) -> ModelConfig:
    """One tanh hidden layer as the latent, 1200 epochs at batch 128, lr 1e-4."""
    base = dict(input_dim=input_dim, encoder_layers=[(hidden, "tanh")], num_codes=num_codes,
                decoder_layers=[], output_range=tuple(value_range), learning_rate=1e-4,
                batch_size=128, epochs=1200)
    base.update(overrides)
    return ModelConfig(**base)


@dataclass
class LayerParams:
    weights: np.ndarray
    bias: np.ndarray
    activation: str


@dataclass
class Model:
    config: ModelConfig
    encoder: list[LayerParams]
    decoder: list[LayerParams]
    embedding: np.ndarray
    class_names: tuple[str, ...] | None = None

    def parameters(self) -> list[np.ndarray]:
        """All trainable arrays in a fixed order (encoder, decoder, embedding)."""
        out = []
        for layer in self.encoder + self.decoder:
            out += [layer.weights, layer.bias]
        out.append(self.embedding)
        return out


@dataclass
class ForwardTrace:
    phase: str
    labels: np.ndarray | None
    encoder_inputs: list[np.ndarray]
    encoder_pre: list[np.ndarray]
    z_e: np.ndarray
    nearest: np.ndarray
    assigned: np.ndarray
    z_q: np.ndarray
    decoder_inputs: list[np.ndarray]
    decoder_pre: list[np.ndarray]
    output: np.ndarray
    x_hat: np.ndarray
    per_sample: np.ndarray
    recon: float
    vq: float
    commit: float
    mis_vq: float
    divergence: float
    total: float

    def terms(self) -> dict[str, float]:
        return {"recon": self.recon, "vq": self.vq, "commit": self.commit,
                "mis": self.mis_vq, "div": self.divergence, "total": self.total}


@dataclass
class Gradients:
    encoder: list[tuple[np.ndarray, np.ndarray]]
    decoder: list[tuple[np.ndarray, np.ndarray]]
    embedding: np.ndarray
    recon_wrt_zq: np.ndarray
    recon_wrt_ze: np.ndarray

    def as_list(self) -> list[np.ndarray]:
        out = []
        for dw, db in self.encoder + self.decoder:
            out += [dw, db]
        out.append(self.embedding)
        return out


@dataclass
class AdamState:
    m: list[np.ndarray]
    v: list[np.ndarray]
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def zeros_like(cls, params: list[np.ndarray]) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params])


@dataclass
class ClassLatentStats:
    mode: str
    counts: np.ndarray
    means: np.ndarray
    covariances: list[np.ndarray | None]
    factors: list[np.ndarray | None]
    problems: dict[int, str] = field(default_factory=dict)

    def usable(self, c: int) -> bool:
        return self.factors[c] is not None


def _glorot(rng: Rng, n_in: int, n_out: int) -> np.ndarray:
    limit = math.sqrt(6.0 / (n_in + n_out))
    return rng.uniform_range(-limit, limit, (n_in, n_out))


def init_model(config: ModelConfig, rng: Rng, class_names=None) -> Model:
    widths = [config.input_dim] + [w for w, _ in config.encoder_layers]
    encoder = [LayerParams(_glorot(rng, a, b), np.zeros(b), act)
               for a, b, (_, act) in zip(widths[:-1], widths[1:], config.encoder_layers)]
    dec_spec = config.decoder_layers + [(config.input_dim, config.output_activation)]
    widths = [config.code_dim] + [w for w, _ in dec_spec]
    decoder = [LayerParams(_glorot(rng, a, b), np.zeros(b), act)
               for a, b, (_, act) in zip(widths[:-1], widths[1:], dec_spec)]
    y = config.num_codes
    embedding = rng.uniform_range(-1.0 / y, 1.0 / y, (y, config.code_dim))
    if class_names is not None:
        class_names = tuple(str(c) for c in class_names)
    return Model(config, encoder, decoder, embedding, class_names)


def _run_layers(layers: list[LayerParams], h: np.ndarray):
    inputs, pre = [], []
    for layer in layers:
        inputs.append(h)
        a = affine(h, layer.weights, layer.bias)
        pre.append(a)
        h = activate(layer.activation, a)
    return h, inputs, pre


def encode(model: Model, x) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != model.config.input_dim:
        raise ShapeError(f"expected input with {model.config.input_dim} columns, got shape {x.shape}")
    return _run_layers(model.encoder, x)[0]


def nearest_code(embedding: np.ndarray, z_e: np.ndarray) -> np.ndarray:
    """Index of the closest code per row; ties go to the lowest index."""
    e = np.asarray(embedding, dtype=np.float64)
    z = np.asarray(z_e, dtype=np.float64)
    if z.ndim != 2 or z.shape[1] != e.shape[1]:
        raise ShapeError(f"latent shape {z.shape} does not match code dimension {e.shape[1]}")
    step = max(1, _DIST_BUDGET // max(1, e.size))
    out = np.empty(z.shape[0], dtype=np.int64)
    for start in range(0, z.shape[0], step):
        diff = z[start:start + step, None, :] - e[None, :, :]
        out[start:start + step] = np.argmin(np.einsum("bkd,bkd->bk", diff, diff), axis=1)
    return out


def _check_labels(model: Model, labels, n: int) -> np.ndarray:
    y = np.asarray(labels, dtype=np.int64)
    if y.shape != (n,):
        raise ValueError(f"expected {n} labels, got shape {y.shape}")
    if n and (y.min() < 0 or y.max() >= model.config.num_codes):
        raise ValueError(f"labels must lie in [0, {model.config.num_codes})")
    return y


def quantize(model: Model, z_e, labels=None, phase: str = "train"):
    """Return ``(z_q, k)``; ``k`` is always the nearest-code index."""
    if phase not in ("train", "eval"):
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    k = nearest_code(model.embedding, z_e)
    if model.config.variant == "supervised" and phase == "train":
        if labels is None:
            raise ValueError("supervised training needs labels for quantization")
        y = _check_labels(model, labels, k.size)
        return model.embedding[y].copy(), k
    return model.embedding[k].copy(), k


def decode(model: Model, z_q) -> np.ndarray:
    z_q = np.asarray(z_q, dtype=np.float64)
    if z_q.ndim != 2 or z_q.shape[1] != model.config.code_dim:
        raise ShapeError(f"expected latent with {model.config.code_dim} columns, got shape {z_q.shape}")
    out = _run_layers(model.decoder, z_q)[0]
    return rescale_output(out, model.config.output_range)


def loss_forward(model: Model, x, labels=None, phase: str = "train") -> ForwardTrace:
    cfg = model.config
    x = np.asarray(x, dtype=np.float64)
    if x.ndim != 2 or x.shape[1] != cfg.input_dim:
        raise ShapeError(f"expected input with {cfg.input_dim} columns, got shape {x.shape}")
    supervised = cfg.variant == "supervised"
    y = None
    if labels is not None:
        y = _check_labels(model, labels, x.shape[0])
    elif supervised:
        raise ValueError("supervised loss needs labels")

    z_e, enc_in, enc_pre = _run_layers(model.encoder, x)
    k = nearest_code(model.embedding, z_e)
    if supervised and phase == "train":
        assigned = y
    elif phase in ("train", "eval"):
        assigned = k
    else:
        raise ValueError(f"phase must be 'train' or 'eval', got {phase!r}")
    e = model.embedding
    z_q = e[assigned].copy()
    out, dec_in, dec_pre = _run_layers(model.decoder, z_q)
    x_hat = rescale_output(out, cfg.output_range)

    diff = x - x_hat
    recon_b = np.mean(diff * diff, axis=1)
    target = y if supervised else k
    d_t = z_e - e[target]
    sq_t = np.sum(d_t * d_t, axis=1)
    if supervised:
        wrong = (k != y).astype(np.float64)
        d_k = z_e - e[k]
        sq_k = wrong * np.sum(d_k * d_k, axis=1)
    else:
        sq_k = np.zeros_like(sq_t)
    per_sample = recon_b + sq_t + cfg.beta * sq_t - (sq_k + cfg.gamma * sq_k)

    return ForwardTrace(
        phase=phase, labels=y, encoder_inputs=enc_in, encoder_pre=enc_pre, z_e=z_e,
        nearest=k, assigned=assigned, z_q=z_q, decoder_inputs=dec_in, decoder_pre=dec_pre,
        output=out, x_hat=x_hat, per_sample=per_sample,
        recon=float(np.mean(recon_b)), vq=float(np.mean(sq_t)), commit=float(np.mean(sq_t)),
        mis_vq=float(np.mean(sq_k)), divergence=float(np.mean(sq_k)),
        total=float(np.mean(per_sample)),
    )


def _backprop(layers, inputs, pre, grad_out):
    grads = [None] * len(layers)
    g = grad_out
    for i in reversed(range(len(layers))):
        layer = layers[i]
        g = g * activate(layer.activation, pre[i], "derivative")
        grads[i] = (inputs[i].T @ g, g.sum(axis=0))
        g = g @ layer.weights.T
    return grads, g


def backward(model: Model, trace: ForwardTrace, x, labels=None) -> Gradients:
    cfg = model.config
    if trace.phase != "train":
        raise ValueError("backward needs a trace from the train phase")
    x = np.asarray(x, dtype=np.float64)
    if x.shape != trace.x_hat.shape or trace.z_e.shape[1] != model.embedding.shape[1]:
        raise ShapeError("trace does not belong to this model and batch")
    supervised = cfg.variant == "supervised"
    b = x.shape[0]
    lo, hi = cfg.output_range

    g_out = (2.0 / x.size) * (trace.x_hat - x) * (0.5 * (hi - lo))
    dec_grads, g_zq = _backprop(model.decoder, trace.decoder_inputs, trace.decoder_pre, g_out)

    e = model.embedding
    g_recon_ze = g_zq.copy()  # straight-through: reconstruction gradient passes unchanged
    z_e = trace.z_e
    d_e = np.zeros_like(e)
    if supervised:
        y = _check_labels(model, labels if labels is not None else trace.labels, b)
        k = trace.nearest
        wrong = k != y
        d_y = z_e - e[y]
        d_k = z_e - e[k]
        g_ze = g_recon_ze + (2.0 * cfg.beta / b) * d_y - (2.0 * cfg.gamma / b) * wrong[:, None] * d_k
        np.add.at(d_e, y, (-2.0 / b) * d_y)
        np.add.at(d_e, k[wrong], (2.0 / b) * d_k[wrong])
    else:
        k = trace.nearest
        d_k = z_e - e[k]
        g_ze = g_recon_ze + (2.0 * cfg.beta / b) * d_k
        np.add.at(d_e, k, (-2.0 / b) * d_k)

    enc_grads, _ = _backprop(model.encoder, trace.encoder_inputs, trace.encoder_pre, g_ze)
    return Gradients(enc_grads, dec_grads, d_e, g_zq, g_recon_ze)


def adam_step(params: list[np.ndarray], grads: list[np.ndarray], state: AdamState, lr: float) -> AdamState:
    """One bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeError("params, grads and optimizer state have different lengths")
    state.step += 1
    bc1 = 1.0 - state.beta1 ** state.step
    bc2 = 1.0 - state.beta2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeError(f"gradient shape {g.shape} does not match parameter {p.shape}")
        m *= state.beta1
        m += (1.0 - state.beta1) * g
        v *= state.beta2
        v += (1.0 - state.beta2) * (g * g)
        p -= lr * (m / bc1) / (np.sqrt(v / bc2) + state.eps)
    return state


def encode_all(model: Model, x, chunk: int = 4096) -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    parts = [encode(model, x[i:i + chunk]) for i in range(0, x.shape[0], chunk)]
    return np.concatenate(parts) if parts else np.zeros((0, model.config.code_dim))


def estimate_class_latent_stats(model: Model, ds: Dataset, mode: str = "diagonal",
                                jitter: float = 0.0) -> ClassLatentStats:
    """Per-class latent mean and covariance.

    ``full`` mode precomputes a Cholesky factor of ``cov + jitter * I``; a
    class whose matrix is not positive definite is marked unusable.
    """
    if mode not in ("diagonal", "full"):
        raise ValueError(f"unknown covariance mode {mode!r}")
    y_count = model.config.num_codes
    if ds.n_classes > y_count:
        raise ValueError(f"dataset has {ds.n_classes} classes, model has {y_count} codes")
    z = encode_all(model, ds.features)
    d = z.shape[1]
    counts = np.bincount(ds.labels, minlength=y_count)
    means = np.zeros((y_count, d))
    covs: list[np.ndarray | None] = []
    factors: list[np.ndarray | None] = []
    problems: dict[int, str] = {}
    for c in range(y_count):
        if counts[c] == 0:
            covs.append(None)
            factors.append(None)
            problems[c] = "class has no samples"
            continue
        zc = z[ds.labels == c]
        means[c] = zc.mean(axis=0)
        cov = covariance(zc, mode)
        covs.append(cov)
        if mode == "diagonal":
            factors.append(np.sqrt(cov + jitter))
            continue
        try:
            factors.append(cholesky(cov + jitter * np.eye(d)))
        except NotPositiveDefiniteError as exc:
            factors.append(None)
            problems[c] = str(exc)
    return ClassLatentStats(mode, counts, means, covs, factors, problems)


def generate(model: Model, stats: ClassLatentStats, n: int, rng: Rng, class_index: int | None = None):
    """Draw ``n`` samples; returns ``(samples, classes)``.

    Each draw picks a class (fixed, or from the empirical class frequencies),
    then a latent ``z ~ N(e_y, sigma_y)`` centred on the class code, and
    decodes it.
    """
    cfg = model.config
    if n == 0:
        return np.zeros((0, cfg.input_dim)), np.zeros(0, dtype=np.int64)
    if class_index is None:
        classes = rng.choice(stats.counts.astype(np.float64), n)
    else:
        if not 0 <= class_index < cfg.num_codes:
            raise ValueError(f"class index {class_index} out of range")
        classes = np.full(n, class_index, dtype=np.int64)
    for c in np.unique(classes):
        if not stats.usable(int(c)):
            raise ValueError(f"class {c} has no usable latent statistics: {stats.problems.get(int(c))}; "
                             "use diagonal mode or add jitter")
    z = np.empty((n, cfg.code_dim))
    for c in np.unique(classes):
        rows = np.flatnonzero(classes == c)
        z[rows] = gaussian(rng, model.embedding[c], stats.factors[c], rows.size)
    return decode(model, z), classes
