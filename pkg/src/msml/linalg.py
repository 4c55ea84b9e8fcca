"""Dense float64 helpers and l2 normalization with its exact backward map.

Matrices and vectors are plain ``numpy.ndarray`` objects (row-major,
``float64``).  Functions never mutate their inputs.
"""

from __future__ import annotations

import numpy as np

from .errors import NonFiniteError, ShapeMismatch, ZeroNormError

EPS_NORM = 1e-12


def as_vector(v) -> np.ndarray:
    arr = np.asarray(v, dtype=np.float64)
    if arr.ndim != 1:
        raise ShapeMismatch(f"expected a 1-D vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("vector contains NaN or Inf")
    return arr


def as_matrix(m) -> np.ndarray:
    arr = np.asarray(m, dtype=np.float64)
    if arr.ndim != 2:
        raise ShapeMismatch(f"expected a 2-D matrix, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise NonFiniteError("matrix contains NaN or Inf")
    return arr


def l2_norm(v) -> float:
    v = as_vector(v)
    return float(np.sqrt(np.dot(v, v)))


def l2_normalize(v) -> np.ndarray:
    v = as_vector(v)
    n = l2_norm(v)
    if n <= EPS_NORM:
        raise ZeroNormError(f"cannot normalize vector with norm {n:.3g}")
    return v / n


def l2_normalize_backward(v, upstream) -> np.ndarray:
    """Pull ``upstream`` (a gradient w.r.t. ``v / |v|``) back to ``v``.

    Applies ``(I - f f^T) / |v|`` with ``f = v / |v|``.
    """
    v = as_vector(v)
    upstream = as_vector(upstream)
    if v.shape != upstream.shape:
        raise ShapeMismatch(f"{v.shape} vs {upstream.shape}")
    n = l2_norm(v)
    if n <= EPS_NORM:
        raise ZeroNormError(f"cannot normalize vector with norm {n:.3g}")
    f = v / n
    return (upstream - f * np.dot(f, upstream)) / n


def normalize_rows(x) -> np.ndarray:
    """Row-wise ``l2_normalize`` of a matrix."""
    x = as_matrix(x)
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        raise ZeroNormError(f"rows {bad.tolist()} have (near-)zero norm")
    return x / norms[:, None]


def normalize_rows_backward(x, upstream) -> np.ndarray:
    """Row-wise ``l2_normalize_backward``."""
    x = as_matrix(x)
    upstream = as_matrix(upstream)
    if x.shape != upstream.shape:
        raise ShapeMismatch(f"{x.shape} vs {upstream.shape}")
    norms = np.sqrt(np.einsum("ij,ij->i", x, x))
    bad = np.flatnonzero(norms <= EPS_NORM)
    if bad.size:
        raise ZeroNormError(f"rows {bad.tolist()} have (near-)zero norm")
    f = x / norms[:, None]
    radial = np.einsum("ij,ij->i", f, upstream)
    return (upstream - f * radial[:, None]) / norms[:, None]


def gemm(a, b) -> np.ndarray:
    a = as_matrix(a)
    b = as_matrix(b)
    if a.shape[1] != b.shape[0]:
        raise ShapeMismatch(f"cannot multiply {a.shape} by {b.shape}")
    return a @ b


def _same_shape(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    if a.shape != b.shape:
        raise ShapeMismatch(f"{a.shape} vs {b.shape}")
    return a, b


def add(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a + b


def sub(a, b) -> np.ndarray:
    a, b = _same_shape(a, b)
    return a - b


def scale(a, s: float) -> np.ndarray:
    return np.asarray(a, dtype=np.float64) * float(s)
