"""Dense float64 linear algebra with FLOP accounting, plus splittable RNG streams.

Matrices are plain numpy arrays (row-major float64); vectors are 1-D arrays.
Column access through ``m.T`` is a view, so per-column work never copies the
matrix. Every product routed through this module adds its modeled scalar cost
(2 multiply-adds per inner-product term) to the global ``FLOPS`` counter, which
is the hardware-independent efficiency metric reported everywhere else.
"""

from __future__ import annotations

import threading
import zlib

import numpy as np

from .errors import DimensionError, NumericError, ParameterError


class FlopCounter:
    """Monotone, thread-safe tally of modeled floating-point operations."""

    def __init__(self):
        self._lock = threading.Lock()
        self._count = 0

    def add(self, n):
        if n < 0:
            raise ParameterError("flop increment must be non-negative")
        with self._lock:
            self._count += int(n)

    def value(self) -> int:
        with self._lock:
            return self._count


#: Global counter; the only shared mutable global in the package.
FLOPS = FlopCounter()


def as_matrix(x) -> np.ndarray:
    """Coerce to a C-contiguous float64 2-D array."""
    m = np.ascontiguousarray(x, dtype=np.float64)
    if m.ndim != 2:
        raise DimensionError(f"expected a 2-D array, got ndim={m.ndim}")
    return m


def as_vector(x) -> np.ndarray:
    v = np.ascontiguousarray(x, dtype=np.float64)
    if v.ndim != 1:
        raise DimensionError(f"expected a 1-D array, got ndim={v.ndim}")
    return v


def require_finite(arr: np.ndarray, what: str = "result") -> np.ndarray:
    if not np.isfinite(arr).all():
        raise NumericError(f"{what} contains NaN or Inf")
    return arr


def matmul(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Exact product; counts 2*m*n*p scalar operations."""
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: inner dims differ ({a.shape} x {b.shape})")
    FLOPS.add(2 * a.shape[0] * a.shape[1] * b.shape[1])
    return require_finite(a @ b, "matmul result")


def vecmat(v: np.ndarray, m: np.ndarray) -> np.ndarray:
    """Row vector times matrix; counts 2*n*p scalar operations."""
    v = as_vector(v)
    m = as_matrix(m)
    if v.shape[0] != m.shape[0]:
        raise DimensionError(f"vecmat: length {v.shape[0]} vs {m.shape[0]} rows")
    FLOPS.add(2 * m.shape[0] * m.shape[1])
    return require_finite(v @ m, "vecmat result")


def col_norms(m: np.ndarray) -> np.ndarray:
    """Euclidean norm of each column; counts 2 ops per entry."""
    m = as_matrix(m)
    FLOPS.add(2 * m.size)
    return np.sqrt(np.einsum("ij,ij->j", m, m))


def row_norms(m: np.ndarray) -> np.ndarray:
    m = as_matrix(m)
    FLOPS.add(2 * m.size)
    return np.sqrt(np.einsum("ij,ij->i", m, m))


# ---------------------------------------------------------------------------
# Deterministic random streams.
#
# Philox is counter-based, so derived streams are independent and the same
# (seed, path) pair reproduces the same values on any platform. Stream paths
# mix in strings/ints via crc32, which is stable across processes (unlike
# Python's hash()).
# ---------------------------------------------------------------------------


def _path_key(part) -> int:
    if isinstance(part, (int, np.integer)):
        return int(part) & 0xFFFFFFFF
    return zlib.crc32(str(part).encode("utf-8"))


def stream(seed: int, *path) -> np.random.Generator:
    """Independent generator for (seed, path); identical inputs, identical stream."""
    entropy = [int(seed) & 0xFFFFFFFFFFFFFFFF] + [_path_key(p) for p in path]
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(entropy)))


def rng_uniform(rng: np.random.Generator, size=None):
    return rng.random(size)


def rng_gauss(rng: np.random.Generator, size=None):
    return rng.standard_normal(size)


def rng_bernoulli(rng: np.random.Generator, p: float, size=None):
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"bernoulli p must be in [0,1], got {p}")
    return rng.random(size) < p


def rng_choice_weighted(rng: np.random.Generator, weights, size=None):
    """Indices drawn with replacement proportionally to non-negative weights."""
    w = as_vector(weights)
    if (w < 0).any():
        raise ParameterError("weights must be non-negative")
    total = w.sum()
    if not total > 0:
        raise ParameterError("weights must not all be zero")
    return rng.choice(w.shape[0], size=size, replace=True, p=w / total)
