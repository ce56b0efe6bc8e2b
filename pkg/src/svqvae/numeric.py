"""Dense float64 kernels, a seeded random stream and small numeric helpers.

Everything here works on plain ``numpy.ndarray`` objects in float64.  The
random stream is deliberately independent of ``numpy.random.Generator``'s
sampling methods (whose output may change between numpy releases): only the
raw 64-bit words of the PCG64 bit generator are used, and uniforms, normals
and permutations are derived from them with fixed formulas.
"""

from __future__ import annotations

import math
from typing import Callable

import numpy as np

ACTIVATIONS = ("tanh", "relu", "linear")


class ShapeError(ValueError):
    """Raised when array shapes do not conform."""


class NotPositiveDefiniteError(ValueError):
    """Raised when a Cholesky factorization is impossible."""


class Rng:
    """Deterministic random stream built on PCG64 raw output.

    * uniform: ``(word >> 11) * 2**-53`` in [0, 1)
    * normal: Box-Muller on pairs of uniforms, ``u1`` taken as ``1 - u``
      so the logarithm never sees zero
    * permutation: stable argsort of ``n`` uniforms

    The raw words for a seed are the same on every platform; normals go
    through ``log``/``cos`` and may differ in the last bit between libms.
    An ``Rng`` is single-owner and must not be shared between threads.
    """

    def __init__(self, seed: int):
        if seed < 0 or seed >= 2**64:
            raise ValueError(f"seed must be a 64-bit unsigned integer, got {seed}")
        self.seed = int(seed)
        self._bits = np.random.PCG64(self.seed)

    def raw(self, n: int) -> np.ndarray:
        return np.asarray(self._bits.random_raw(int(n)), dtype=np.uint64).reshape(-1)

    def uniform(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        u = (self.raw(n) >> np.uint64(11)).astype(np.float64) * (2.0**-53)
        if size is None:
            return float(u[0])
        return u.reshape(size)

    def uniform_range(self, lo: float, hi: float, size) -> np.ndarray:
        return lo + (hi - lo) * self.uniform(size)

    def normal(self, size=None) -> np.ndarray | float:
        n = 1 if size is None else int(np.prod(size))
        pairs = (n + 1) // 2
        u = self.uniform((pairs, 2))
        radius = np.sqrt(-2.0 * np.log(1.0 - u[:, 0]))
        angle = 2.0 * math.pi * u[:, 1]
        z = np.stack([radius * np.cos(angle), radius * np.sin(angle)], axis=1).reshape(-1)[:n]
        if size is None:
            return float(z[0])
        return z.reshape(size)

    def permutation(self, n: int) -> np.ndarray:
        return np.argsort(self.uniform(int(n)), kind="stable")

    def choice(self, probabilities: np.ndarray, size: int) -> np.ndarray:
        """Draw indices by inverse CDF of a (not necessarily normalized) weight vector."""
        p = np.asarray(probabilities, dtype=np.float64)
        if p.ndim != 1 or p.size == 0 or np.any(p < 0) or p.sum() <= 0:
            raise ValueError("probabilities must be a non-empty, non-negative vector with positive sum")
        cdf = np.cumsum(p / p.sum())
        idx = np.searchsorted(cdf, self.uniform(int(size)), side="right")
        return np.minimum(idx, p.size - 1)


def _as_matrix(a, name: str) -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if a.ndim != 2:
        raise ShapeError(f"{name} must be 2-D, got shape {a.shape}")
    return a


def check_finite(a: np.ndarray, name: str = "array") -> np.ndarray:
    a = np.asarray(a, dtype=np.float64)
    if not np.all(np.isfinite(a)):
        raise ValueError(f"{name} contains NaN or infinite entries")
    return a


def matmul(a, b) -> np.ndarray:
    a = _as_matrix(a, "a")
    b = _as_matrix(b, "b")
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"cannot multiply {a.shape[0]}x{a.shape[1]} by {b.shape[0]}x{b.shape[1]}")
    return a @ b


def affine(x, w, bias) -> np.ndarray:
    """Dense layer ``x @ w + bias`` with the bias broadcast over rows."""
    out = matmul(x, w)
    bias = np.asarray(bias, dtype=np.float64)
    if bias.shape != (out.shape[1],):
        raise ShapeError(f"bias of shape {bias.shape} does not match output width {out.shape[1]}")
    return out + bias


def activate(kind: str, x, mode: str = "value") -> np.ndarray:
    x = np.asarray(x, dtype=np.float64)
    if kind == "tanh":
        if mode == "value":
            return np.tanh(x)
        t = np.tanh(x)
        return 1.0 - t * t
    if kind == "relu":
        if mode == "value":
            return np.maximum(x, 0.0)
        return (x > 0.0).astype(np.float64)
    if kind == "linear":
        return x.copy() if mode == "value" else np.ones_like(x)
    raise ValueError(f"unsupported activation {kind!r}; expected one of {ACTIVATIONS}")


def mse(a, b) -> float:
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeError(f"mse of mismatched shapes {a.shape} and {b.shape}")
    d = a - b
    return float(np.mean(d * d))


def covariance(samples, mode: str = "diagonal") -> np.ndarray:
    """Unbiased covariance of the rows of ``samples``.

    Returns a length-D variance vector in ``diagonal`` mode and a DxD matrix
    in ``full`` mode.  A single sample gives zero covariance.
    """
    x = _as_matrix(samples, "samples")
    n, d = x.shape
    if n == 0:
        raise ValueError("covariance needs at least one sample")
    if mode not in ("diagonal", "full"):
        raise ValueError(f"unknown covariance mode {mode!r}")
    if n == 1:
        return np.zeros(d) if mode == "diagonal" else np.zeros((d, d))
    centered = x - x.mean(axis=0)
    if mode == "diagonal":
        return np.sum(centered * centered, axis=0) / (n - 1)
    return centered.T @ centered / (n - 1)


def cholesky(s, symmetry_tol: float = 1e-10) -> np.ndarray:
    s = _as_matrix(s, "s")
    if s.shape[0] != s.shape[1]:
        raise ShapeError(f"cholesky needs a square matrix, got {s.shape}")
    scale = max(1.0, float(np.max(np.abs(s)))) if s.size else 1.0
    if np.max(np.abs(s - s.T), initial=0.0) > symmetry_tol * scale:
        raise ValueError("cholesky input is not symmetric")
    try:
        return np.linalg.cholesky(s)
    except np.linalg.LinAlgError as exc:
        raise NotPositiveDefiniteError(
            "matrix is not positive definite; add diagonal jitter or use diagonal covariance mode"
        ) from exc


def gaussian(rng: Rng, mean, factor, n: int | None = None) -> np.ndarray:
    """Sample ``mean + L @ u`` with ``u`` standard normal.

    ``factor`` is either a lower-triangular DxD matrix or a length-D vector of
    standard deviations.  With ``n`` given, returns an ``n x D`` batch.
    """
    mean = np.asarray(mean, dtype=np.float64)
    factor = np.asarray(factor, dtype=np.float64)
    d = mean.shape[0]
    if mean.ndim != 1 or factor.shape not in ((d,), (d, d)):
        raise ShapeError(f"factor of shape {factor.shape} does not match mean of length {d}")
    rows = 1 if n is None else int(n)
    u = rng.normal((rows, d))
    z = mean + (u * factor if factor.ndim == 1 else u @ factor.T)
    return z[0] if n is None else z


def finite_diff_grad(f: Callable[[np.ndarray], float], p, eps: float = 1e-5) -> np.ndarray:
    """Central-difference gradient of a scalar function of a flat vector."""
    if eps <= 0:
        raise ValueError("eps must be positive")
    p = np.array(p, dtype=np.float64).reshape(-1)
    grad = np.empty_like(p)
    for i in range(p.size):
        orig = p[i]
        p[i] = orig + eps
        hi = f(p)
        p[i] = orig - eps
        lo = f(p)
        p[i] = orig
        grad[i] = (hi - lo) / (2.0 * eps)
    return grad
