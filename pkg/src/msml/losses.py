"""Metric-learning losses with analytic gradients and mining records.

Every metric loss returns a :class:`LossOutput` holding the scalar value,
the gradient with respect to the raw (pre-normalization) embedding rows,
and the list of pairs that entered the loss.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .distance import accumulate_pair_grads, pairwise_distances
from .errors import (
    EmptyTupleList,
    IdentityWithoutPositive,
    InvalidTuple,
    LabelOutOfRange,
    ShapeMismatch,
    SingleIdentityBatch,
)
from .linalg import as_matrix, normalize_rows, normalize_rows_backward

POSITIVE = "positive"
NEGATIVE = "negative"


@dataclass(frozen=True)
class MarginConfig:
    alpha: float = 0.3
    beta: float = 0.2
    normalize_inputs: bool = True

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError(f"alpha must be >= 0, got {self.alpha}")
        if self.beta < 0:
            raise ValueError(f"beta must be >= 0, got {self.beta}")


def check_quadruplet_margins(cfg: MarginConfig) -> bool:
    """Warn when beta >= alpha; the absolute term should be the weaker one."""
    if cfg.beta >= cfg.alpha:
        warnings.warn(
            f"quadruplet margin beta={cfg.beta} is not smaller than alpha={cfg.alpha}; "
            "the absolute-distance term will dominate",
            stacklevel=2,
        )
        return False
    return True


@dataclass(frozen=True)
class EmbeddingBatch:
    features: np.ndarray
    ids: np.ndarray
    cameras: Optional[np.ndarray] = None

    def __post_init__(self):
        features = as_matrix(self.features)
        ids = np.asarray(self.ids)
        if ids.shape != (features.shape[0],):
            raise ShapeMismatch(f"{ids.shape} ids for {features.shape[0]} rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "ids", ids)

    def __len__(self):
        return self.features.shape[0]


@dataclass(frozen=True)
class MinedPair:
    kind: str
    i: int
    j: int
    distance: float


@dataclass
class LossOutput:
    value: float
    grad: np.ndarray
    mined: list
    grad_logits: Optional[np.ndarray] = None


@dataclass
class ClassificationOutput:
    value: float
    grad: np.ndarray


def hinge(z: float) -> float:
    return max(float(z), 0.0)


def hinge_grad(z: float) -> float:
    """Subgradient of ``hinge``; the kink at 0 takes the inactive side."""
    return 1.0 if z > 0 else 0.0


# -- shared plumbing ---------------------------------------------------------

def _prepare(emb: EmbeddingBatch, cfg: MarginConfig):
    x = emb.features
    f = normalize_rows(x) if cfg.normalize_inputs else x
    return x, f, pairwise_distances(f)


def _finish(x, f, dist, cfg, pair_i, pair_j, weights, value, mined) -> LossOutput:
    grad_f = accumulate_pair_grads(f, dist, pair_i, pair_j, weights)
    grad = normalize_rows_backward(x, grad_f) if cfg.normalize_inputs else grad_f
    return LossOutput(float(value), grad, mined)


def _tuple_array(tuples, width):
    if len(tuples) == 0:
        raise EmptyTupleList("no tuples given")
    arr = np.asarray([tuple(t) for t in tuples], dtype=np.intp)
    if arr.ndim != 2 or arr.shape[1] != width:
        raise InvalidTuple(f"expected tuples of length {width}")
    return arr


def _check_tuples(arr, ids, *, anchor_neg=True, other_anchor=False):
    n = len(ids)
    if arr.min() < 0 or arr.max() >= n:
        raise InvalidTuple("tuple index out of range")
    a, p, b = arr[:, 0], arr[:, 1], arr[:, 2]
    bad = (a == p) | (ids[a] != ids[p])
    if anchor_neg:
        bad |= ids[b] == ids[a]
    if arr.shape[1] == 4:
        c = arr[:, 3]
        bad |= ids[c] == ids[b]
        if other_anchor:
            bad |= ids[c] == ids[a]
    if np.any(bad):
        raise InvalidTuple(f"tuple {arr[np.argmax(bad)].tolist()} violates identity constraints")


def _records(kind, i, j, dist):
    return [MinedPair(kind, int(a), int(b), float(dist[a, b])) for a, b in zip(i, j)]


# -- random-tuple losses -----------------------------------------------------

def triplet_loss(emb: EmbeddingBatch, triplets: Sequence, cfg: MarginConfig) -> LossOutput:
    """Mean hinge of ``d(a, a') - d(a, b) + alpha`` over the given triplets."""
    t = _tuple_array(triplets, 3)
    _check_tuples(t, emb.ids)
    x, f, dist = _prepare(emb, cfg)
    a, p, b = t.T
    z = dist[a, p] - dist[a, b] + cfg.alpha
    active = (z > 0).astype(np.float64) / len(t)
    value = np.maximum(z, 0.0).mean()
    mined = _records(POSITIVE, a, p, dist) + _records(NEGATIVE, a, b, dist)
    return _finish(
        x, f, dist, cfg,
        np.concatenate([a, a]), np.concatenate([p, b]),
        np.concatenate([active, -active]), value, mined,
    )


def quadruplet_loss(emb: EmbeddingBatch, quadruplets: Sequence, cfg: MarginConfig) -> LossOutput:
    """Relative term ``d(a,a') - d(a,b) + alpha`` plus absolute term
    ``d(a,a') - d(c,b) + beta``, each averaged over the quadruplets."""
    q = _tuple_array(quadruplets, 4)
    _check_tuples(q, emb.ids, other_anchor=True)
    x, f, dist = _prepare(emb, cfg)
    a, p, b, c = q.T
    z1 = dist[a, p] - dist[a, b] + cfg.alpha
    z2 = dist[a, p] - dist[c, b] + cfg.beta
    w1 = (z1 > 0).astype(np.float64) / len(q)
    w2 = (z2 > 0).astype(np.float64) / len(q)
    value = np.maximum(z1, 0.0).mean() + np.maximum(z2, 0.0).mean()
    mined = (
        _records(POSITIVE, a, p, dist)
        + _records(NEGATIVE, a, b, dist)
        + _records(NEGATIVE, c, b, dist)
    )
    return _finish(
        x, f, dist, cfg,
        np.concatenate([a, a, c]), np.concatenate([p, b, b]),
        np.concatenate([w1 + w2, -w1, -w2]), value, mined,
    )


def quad_prime_loss(emb: EmbeddingBatch, quadruplets: Sequence, cfg: MarginConfig) -> LossOutput:
    """Single combined term ``d(a,a') - d(c,b) + alpha``.

    Here ``c`` may share the anchor's identity (or be the anchor), so
    ``(c, b) = (a, b)`` recovers the triplet term.
    """
    q = _tuple_array(quadruplets, 4)
    _check_tuples(q, emb.ids, anchor_neg=False)
    x, f, dist = _prepare(emb, cfg)
    a, p, b, c = q.T
    z = dist[a, p] - dist[c, b] + cfg.alpha
    w = (z > 0).astype(np.float64) / len(q)
    value = np.maximum(z, 0.0).mean()
    mined = _records(POSITIVE, a, p, dist) + _records(NEGATIVE, c, b, dist)
    return _finish(
        x, f, dist, cfg,
        np.concatenate([a, c]), np.concatenate([p, b]),
        np.concatenate([w, -w]), value, mined,
    )


# -- mined losses ------------------------------------------------------------

def pair_masks(ids):
    """Boolean (positive, negative) pair masks; self-pairs are neither."""
    ids = np.asarray(ids)
    same = ids[:, None] == ids[None, :]
    pos = same.copy()
    np.fill_diagonal(pos, False)
    return pos, ~same


def _check_minable(ids):
    uniq, counts = np.unique(ids, return_counts=True)
    if len(uniq) < 2:
        raise SingleIdentityBatch("batch needs at least two identities")
    lonely = uniq[counts < 2]
    if lonely.size:
        raise IdentityWithoutPositive(f"identities {lonely.tolist()} have a single sample")


def hardest_pairs(dist: np.ndarray, ids):
    """Hardest positive pair (largest distance) and hardest negative pair
    (smallest distance) over the whole matrix.

    Ties resolve to the smallest row-major linear index.  Returns
    ``((i, j), (k, l))``.
    """
    pos, neg = pair_masks(ids)
    n = dist.shape[0]
    p = int(np.argmax(np.where(pos, dist, -np.inf)))
    q = int(np.argmin(np.where(neg, dist, np.inf)))
    return divmod(p, n), divmod(q, n)


def trihard_loss(emb: EmbeddingBatch, cfg: MarginConfig) -> LossOutput:
    """Per-anchor hardest positive and hardest negative, averaged over N."""
    _check_minable(emb.ids)
    x, f, dist = _prepare(emb, cfg)
    n = len(emb)
    pos, neg = pair_masks(emb.ids)
    anchors = np.arange(n)
    hp = np.argmax(np.where(pos, dist, -np.inf), axis=1)
    hn = np.argmin(np.where(neg, dist, np.inf), axis=1)
    z = dist[anchors, hp] - dist[anchors, hn] + cfg.alpha
    w = (z > 0).astype(np.float64) / n
    value = np.maximum(z, 0.0).mean()
    mined = _records(POSITIVE, anchors, hp, dist) + _records(NEGATIVE, anchors, hn, dist)
    return _finish(
        x, f, dist, cfg,
        np.concatenate([anchors, anchors]), np.concatenate([hp, hn]),
        np.concatenate([w, -w]), value, mined,
    )


def msml_loss(emb: EmbeddingBatch, cfg: MarginConfig) -> LossOutput:
    """Margin sample mining loss.

    One hinge term per batch: the largest positive-pair distance minus the
    smallest negative-pair distance anywhere in the batch, plus alpha.
    The gradient therefore touches at most four rows.
    """
    _check_minable(emb.ids)
    x, f, dist = _prepare(emb, cfg)
    (pi, pj), (ni, nj) = hardest_pairs(dist, emb.ids)
    z = dist[pi, pj] - dist[ni, nj] + cfg.alpha
    w = hinge_grad(z)
    mined = [
        MinedPair(POSITIVE, pi, pj, float(dist[pi, pj])),
        MinedPair(NEGATIVE, ni, nj, float(dist[ni, nj])),
    ]
    return _finish(x, f, dist, cfg, [pi, ni], [pj, nj], [w, -w], hinge(z), mined)


# -- classification ----------------------------------------------------------

def classification_loss(logits, labels) -> ClassificationOutput:
    """Mean softmax cross-entropy; ``labels`` are class indices."""
    logits = as_matrix(logits)
    labels = np.asarray(labels, dtype=np.intp)
    n, c = logits.shape
    if labels.shape != (n,):
        raise ShapeMismatch(f"{labels.shape} labels for {n} rows")
    if labels.size and (labels.min() < 0 or labels.max() >= c):
        raise LabelOutOfRange(f"labels must lie in [0, {c})")
    shifted = logits - logits.max(axis=1, keepdims=True)
    log_z = np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    log_p = shifted - log_z
    rows = np.arange(n)
    value = -log_p[rows, labels].mean()
    grad = np.exp(log_p)
    grad[rows, labels] -= 1.0
    return ClassificationOutput(float(value), grad / n)


def combined_loss(metric: LossOutput, cls: ClassificationOutput, w_cls: float = 1.0) -> LossOutput:
    """``metric + w_cls * cls``; the classification gradient is kept on the
    logits (``grad_logits``) for the model's classifier head."""
    return LossOutput(
        metric.value + w_cls * cls.value,
        metric.grad,
        metric.mined,
        grad_logits=w_cls * cls.grad,
    )


METRIC_LOSSES = ("tri", "quad", "quad_prime", "trihard", "msml")
LOSS_KINDS = ("cls",) + METRIC_LOSSES
