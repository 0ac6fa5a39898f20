"""Dense float64 primitives and seeded randomness used by every other module.

Everything here is pure: values are immutable once built and safe to share
across workers. Each worker owns its RngStream exclusively.
"""
from __future__ import annotations

import numpy as np

MASK64 = (1 << 64) - 1
_GAMMA = 0x9E3779B97F4A7C15  # splitmix64 increment


class ContractError(ValueError):
    """An argument violated a documented precondition."""


def _splitmix64(x: int) -> int:
    x &= MASK64
    x = ((x ^ (x >> 30)) * 0xBF58476D1CE4E5B9) & MASK64
    x = ((x ^ (x >> 27)) * 0x94D049BB133111EB) & MASK64
    return (x ^ (x >> 31)) & MASK64


def derive_seed(base_seed: int, index: int) -> int:
    """Child seed for stream `index` under `base_seed`.

    Fixed mixing function of both arguments, so the family of streams derived
    from one base seed nests: growing the index range never changes the seeds
    already handed out.
    """
    if index < 0:
        raise ContractError(f"stream index must be >= 0, got {index}")
    return _splitmix64((base_seed + (index + 1) * _GAMMA) & MASK64)


class RngStream:
    """Deterministic random stream: same seed, same call sequence, same draws."""

    def __init__(self, seed: int):
        self.seed = int(seed) & MASK64
        self._gen = np.random.Generator(np.random.PCG64(self.seed))

    def child(self, index: int) -> "RngStream":
        return RngStream(derive_seed(self.seed, index))

    def uniform(self) -> float:
        """One draw from U[0, 1)."""
        return float(self._gen.random())

    def uniform_vec(self, shape, low: float = 0.0, high: float = 1.0) -> np.ndarray:
        return self._gen.uniform(low, high, size=shape)

    def normal_vec(self, dim: int) -> np.ndarray:
        return self._gen.standard_normal(dim)

    def integers(self, low: int, high: int, size=None):
        """Uniform integers in [low, high)."""
        return self._gen.integers(low, high, size=size)

    def permutation(self, n: int) -> np.ndarray:
        return self._gen.permutation(n)

    def __repr__(self) -> str:
        return f"RngStream(seed={self.seed})"


def matvec(m: np.ndarray, v: np.ndarray) -> np.ndarray:
    """Matrix-vector product with explicit shape checking."""
    m = np.asarray(m, dtype=np.float64)
    v = np.asarray(v, dtype=np.float64)
    if m.ndim != 2 or v.ndim != 1:
        raise ContractError(f"matvec expects a matrix and a vector, got {m.shape} and {v.shape}")
    if m.shape[1] != v.shape[0]:
        raise ContractError(f"dimension mismatch: {m.shape} x {v.shape}")
    return m @ v


def softmax(logits: np.ndarray) -> np.ndarray:
    """Stable softmax (max-subtraction); output is positive and sums to 1."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ContractError(f"softmax expects a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("softmax input must be finite")
    e = np.exp(x - np.max(x))
    return e / e.sum()


def log_softmax(logits: np.ndarray) -> np.ndarray:
    """Stable log-softmax; exp of the result matches softmax()."""
    x = np.asarray(logits, dtype=np.float64)
    if x.ndim != 1 or x.size == 0:
        raise ContractError(f"log_softmax expects a non-empty vector, got shape {x.shape}")
    if not np.all(np.isfinite(x)):
        raise ContractError("log_softmax input must be finite")
    shifted = x - np.max(x)
    return shifted - np.log(np.exp(shifted).sum())


def sigmoid(x: np.ndarray) -> np.ndarray:
    """Numerically stable logistic function."""
    x = np.asarray(x, dtype=np.float64)
    out = np.empty_like(x)
    pos = x >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-x[pos]))
    ex = np.exp(x[~pos])
    out[~pos] = ex / (1.0 + ex)
    return out


def gaussian_vec(rng: RngStream, dim: int, sigma: float) -> np.ndarray:
    """dim i.i.d. draws from N(0, sigma^2).

    sigma == 0 returns the exact zero vector without consuming any draws, so
    a zero-noise stream is bitwise identical to no stream at all.
    """
    if dim < 1:
        raise ContractError(f"dim must be >= 1, got {dim}")
    if sigma < 0:
        raise ContractError(f"sigma must be >= 0, got {sigma}")
    if sigma == 0.0:
        return np.zeros(dim)
    return rng.normal_vec(dim) * sigma


def categorical_sample(rng: RngStream, probs: np.ndarray) -> int:
    """Sample an index from a categorical distribution given by `probs`."""
    p = np.asarray(probs, dtype=np.float64)
    if p.ndim != 1 or p.size == 0:
        raise ContractError(f"probs must be a non-empty vector, got shape {p.shape}")
    if not np.all(np.isfinite(p)) or np.any(p < 0):
        raise ContractError("probs must be finite and non-negative")
    if abs(p.sum() - 1.0) > 1e-6:
        raise ContractError(f"probs must sum to 1 within 1e-6, got {p.sum()!r}")
    u = rng.uniform()
    idx = int(np.searchsorted(np.cumsum(p), u, side="right"))
    if idx >= p.size:
        idx = p.size - 1
    while idx > 0 and p[idx] == 0.0:
        idx -= 1
    return idx
