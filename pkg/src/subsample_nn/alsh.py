"""Asymmetric LSH index for maximum inner-product search over weight columns.

Data vectors are scaled into the unit ball and padded with powers of their
norm; queries are unit-normalized and padded with constant 1/2. After that
transform, nearest-neighbor search under sign-projection hashing approximates
maximum inner-product search, so probing a query's buckets returns the columns
with the largest activations. A vector agreeing with the query on one random
hyperplane with probability p lands in the same bucket of at least one of L
K-bit tables with probability 1 - (1 - p^K)^L.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .errors import DimensionError, NormBoundError, ParameterError
from .linalg import FLOPS, as_matrix, as_vector, stream


@dataclass(frozen=True)
class AlshParams:
    bits: int = 6  # hash bits per table
    tables: int = 5
    pad_terms: int = 3
    norm_bound: float = 0.83

    def __post_init__(self):
        if self.bits < 1 or self.tables < 1 or self.pad_terms < 1:
            raise ParameterError("bits, tables, and pad_terms must be at least 1")
        if not 0.0 < self.norm_bound < 1.0:
            raise ParameterError("norm_bound must lie strictly between 0 and 1")


@dataclass(frozen=True)
class ActiveSet:
    """Deduplicated node ids selected as active for one query."""

    node_ids: np.ndarray
    layer: int = -1

    def __len__(self):
        return self.node_ids.size

    @property
    def empty(self):
        return self.node_ids.size == 0


@dataclass
class AlshIndex:
    params: AlshParams
    dim: int  # original column length
    scale: float  # columns are divided by this before padding
    projections: np.ndarray  # (tables, bits, dim + pad_terms)
    buckets: list  # per table: list of 2**bits lists of column ids
    n_columns: int


def transform_data(w, pad_terms, scale=1.0) -> np.ndarray:
    """Scale a stored vector into the unit ball and pad with norm powers.

    Appends ||w'||^(2^i) for i = 1..pad_terms where w' = w / scale. The
    scaled norm must not exceed 1, otherwise the padded tail diverges and
    the search equivalence breaks.
    """
    w = as_vector(w) / float(scale)
    norm = float(np.linalg.norm(w))
    if norm > 1.0 + 1e-12:
        raise NormBoundError(f"scaled norm {norm:.6f} exceeds 1")
    pads = norm ** (2.0 ** np.arange(1, pad_terms + 1))
    return np.concatenate([w, pads])


def transform_query(a, pad_terms) -> np.ndarray:
    """Unit-normalize a query and pad with 1/2 terms.

    A zero query cannot be normalized; it is padded as-is, which still yields
    a well-defined (if arbitrary) bucket. ReLU layers do emit all-zero
    activation vectors, so this case is reachable in training.
    """
    a = as_vector(a)
    norm = float(np.linalg.norm(a))
    if norm > 0.0:
        a = a / norm
    return np.concatenate([a, np.full(pad_terms, 0.5)])


def _signatures(vectors: np.ndarray, projections: np.ndarray) -> np.ndarray:
    """Bucket id per (vector, table): the K-bit sign pattern of the projections."""
    tables, bits, dim = projections.shape
    flat = projections.reshape(tables * bits, dim)
    FLOPS.add(2 * vectors.shape[0] * dim * tables * bits)
    signs = vectors @ flat.T >= 0.0
    signs = signs.reshape(vectors.shape[0], tables, bits)
    weights = 1 << np.arange(bits)
    return signs @ weights  # (n_vectors, tables)


def build_index(columns, params: AlshParams, seed: int) -> AlshIndex:
    """Hash every column (rows of `columns`) into all tables.

    The shared scale is max column norm / norm_bound, so the largest column
    lands exactly on the bound and everything fits in the unit ball.
    """
    cols = as_matrix(columns)
    if cols.shape[0] == 0:
        raise ParameterError("need at least one column")
    rng = stream(seed, "alsh-proj")
    projections = rng.standard_normal(
        (params.tables, params.bits, cols.shape[1] + params.pad_terms))
    return _fill_tables(cols, params, projections)


def rebuild_index(index: AlshIndex, columns) -> AlshIndex:
    """Re-bucket updated columns under the index's existing projections."""
    cols = as_matrix(columns)
    if cols.shape[1] != index.dim:
        raise DimensionError(f"column length {cols.shape[1]} != indexed {index.dim}")
    return _fill_tables(cols, index.params, index.projections)


def _fill_tables(cols, params, projections):
    norms = np.linalg.norm(cols, axis=1)
    FLOPS.add(2 * cols.size)
    max_norm = float(norms.max())
    scale = max_norm / params.norm_bound if max_norm > 0 else 1.0

    scaled = cols / scale
    scaled_norms = norms / scale
    exponents = 2.0 ** np.arange(1, params.pad_terms + 1)
    pads = scaled_norms[:, None] ** exponents[None, :]
    transformed = np.concatenate([scaled, pads], axis=1)

    ids = _signatures(transformed, projections)
    buckets = [[[] for _ in range(1 << params.bits)] for _ in range(params.tables)]
    for col, row in enumerate(ids):
        for t in range(params.tables):
            buckets[t][int(row[t])].append(col)
    return AlshIndex(params, cols.shape[1], scale, projections, buckets, cols.shape[0])


def query_active(index: AlshIndex, a) -> ActiveSet:
    """Union of the buckets matching the transformed query in every table."""
    a = as_vector(a)
    if a.shape[0] != index.dim:
        raise DimensionError(f"query length {a.shape[0]} != indexed {index.dim}")
    q = transform_query(a, index.params.pad_terms)
    ids = _signatures(q[None, :], index.projections)[0]
    hits = []
    for t in range(index.params.tables):
        hits.extend(index.buckets[t][int(ids[t])])
    return ActiveSet(np.unique(np.asarray(hits, dtype=np.int64)))


def collision_probability(p: float, bits: int, tables: int) -> float:
    """Chance of sharing at least one bucket given per-hyperplane agreement p."""
    if not 0.0 <= p <= 1.0:
        raise ParameterError(f"p must be in [0,1], got {p}")
    return 1.0 - (1.0 - p**bits) ** tables


def rebuild_schedule(samples_seen: int) -> bool:
    """Rebuild every 100 samples for the first 10000, every 1000 after that."""
    if samples_seen < 0:
        raise ParameterError("samples_seen must be non-negative")
    if samples_seen == 0:
        return False
    if samples_seen <= 10000:
        return samples_seen % 100 == 0
    return samples_seen % 1000 == 0


def bucket_occupancy(index: AlshIndex) -> list[list[int]]:
    """Per-table histogram of bucket sizes (diagnostic)."""
    return [[len(b) for b in table] for table in index.buckets]


def dump_occupancy_json(index: AlshIndex, path):
    payload = {
        "tables": index.params.tables,
        "bits": index.params.bits,
        "n_columns": index.n_columns,
        "occupancy": bucket_occupancy(index),
    }
    with open(path, "w") as f:
        json.dump(payload, f, indent=2, sort_keys=True)
        f.write("\n")
