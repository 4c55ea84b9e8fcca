"""Pairwise Euclidean distances and the gradient of a single distance."""

from __future__ import annotations

import numpy as np

from .errors import EmptyBatch
from .linalg import as_matrix, as_vector

# Clamp applied inside gradients so coincident points give zero, not NaN.
EPS_D = 1e-12


def pairwise_distances(emb) -> np.ndarray:
    """N x N Euclidean distance matrix with an exactly zero diagonal.

    Entries are computed from explicit row differences rather than the
    ``|a|^2 + |b|^2 - 2ab`` expansion, so the result is exactly symmetric
    and does not suffer cancellation for nearby points.
    """
    x = as_matrix(emb)
    n = x.shape[0]
    if n < 2:
        raise EmptyBatch(f"need at least 2 rows, got {n}")
    diff = x[:, None, :] - x[None, :, :]
    sq = np.einsum("ijk,ijk->ij", diff, diff)
    d = np.sqrt(sq)
    np.fill_diagonal(d, 0.0)
    return d


def distance_grad(a, b) -> tuple[np.ndarray, np.ndarray]:
    """Return ``(dd/da, dd/db)`` for ``d = |a - b|``."""
    a = as_vector(a)
    b = as_vector(b)
    diff = a - b
    d = max(float(np.sqrt(np.dot(diff, diff))), EPS_D)
    g = diff / d
    return g, -g


def accumulate_pair_grads(x: np.ndarray, dist: np.ndarray, i, j, w) -> np.ndarray:
    """Gradient w.r.t. rows of ``x`` of ``sum_t w[t] * dist[i[t], j[t]]``.

    Vectorized equivalent of summing ``distance_grad`` over the pairs.
    """
    i = np.asarray(i, dtype=np.intp)
    j = np.asarray(j, dtype=np.intp)
    w = np.asarray(w, dtype=np.float64)
    grad = np.zeros_like(x, dtype=np.float64)
    if i.size == 0:
        return grad
    denom = np.maximum(dist[i, j], EPS_D)
    contrib = (x[i] - x[j]) * (w / denom)[:, None]
    np.add.at(grad, i, contrib)
    np.add.at(grad, j, -contrib)
    return grad
