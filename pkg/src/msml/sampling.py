"""Identity-balanced PK batches and random triplet/quadruplet sampling."""

from __future__ import annotations

from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    InsufficientIdentities,
    InsufficientSamplesPerIdentity,
    KTooSmall,
    NeedThreeIdentities,
    ShapeMismatch,
)


@dataclass(frozen=True)
class LabeledDataset:
    """Feature rows with per-row identity labels and optional cameras."""

    features: np.ndarray
    ids: np.ndarray
    cameras: Optional[np.ndarray] = None

    def __post_init__(self):
        features = np.asarray(self.features, dtype=np.float64)
        ids = np.asarray(self.ids)
        if features.ndim != 2:
            raise ShapeMismatch(f"features must be 2-D, got {features.shape}")
        if ids.shape != (features.shape[0],):
            raise ShapeMismatch(f"{ids.shape[0]} ids for {features.shape[0]} rows")
        object.__setattr__(self, "features", features)
        object.__setattr__(self, "ids", ids)
        if self.cameras is not None:
            cameras = np.asarray(self.cameras)
            if cameras.shape != ids.shape:
                raise ShapeMismatch("cameras must have one entry per row")
            object.__setattr__(self, "cameras", cameras)

    def __len__(self):
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def identities(self) -> np.ndarray:
        return np.unique(self.ids)

    def subset(self, rows) -> "LabeledDataset":
        rows = np.asarray(rows, dtype=np.intp)
        cams = None if self.cameras is None else self.cameras[rows]
        return LabeledDataset(self.features[rows], self.ids[rows], cams)

    def rows_by_identity(self) -> dict:
        """Map identity -> ascending array of row indices."""
        order = np.argsort(self.ids, kind="stable")
        uniq, starts = np.unique(self.ids[order], return_index=True)
        groups = np.split(order, starts[1:])
        return {u.item(): g for u, g in zip(uniq, groups)}


@dataclass(frozen=True)
class PkBatch:
    indices: np.ndarray
    p: int
    k: int

    def __len__(self):
        return len(self.indices)


class Triplet(NamedTuple):
    a: int
    pos: int
    neg: int


class Quadruplet(NamedTuple):
    a: int
    pos: int
    neg: int
    other: int


def check_pk_batch(batch: PkBatch, ids) -> None:
    """Raise ``AssertionError`` unless ``batch`` holds p identities x k rows each."""
    ids = np.asarray(ids)
    assert len(batch.indices) == batch.p * batch.k, "batch size != p * k"
    assert len(set(batch.indices.tolist())) == len(batch.indices), "duplicate rows"
    uniq, counts = np.unique(ids[batch.indices], return_counts=True)
    assert len(uniq) == batch.p, f"expected {batch.p} identities, got {len(uniq)}"
    assert np.all(counts == batch.k), f"identity multiplicities {counts.tolist()}"


def pk_sample(ds: LabeledDataset, p: int, k: int, rng: np.random.Generator) -> PkBatch:
    """Draw p identities, then k distinct rows of each, without replacement.

    Identities with fewer than k rows are never eligible.  Indices come out
    grouped by identity in the order the identities were drawn.
    """
    if k < 2:
        raise KTooSmall(f"k must be >= 2 so every anchor has a positive, got {k}")
    groups = ds.rows_by_identity()
    if len(groups) < p:
        raise InsufficientIdentities(f"dataset has {len(groups)} identities, p={p}")
    eligible = [ident for ident, rows in groups.items() if len(rows) >= k]
    if len(eligible) < p:
        raise InsufficientSamplesPerIdentity(
            f"only {len(eligible)} identities have >= {k} samples, p={p}"
        )
    chosen = rng.choice(len(eligible), size=p, replace=False)
    parts = [rng.choice(groups[eligible[c]], size=k, replace=False) for c in chosen]
    return PkBatch(np.concatenate(parts).astype(np.intp), p, k)


def _positions_by_identity(labels):
    labels = np.asarray(labels)
    uniq, inverse = np.unique(labels, return_inverse=True)
    members = [np.flatnonzero(inverse == u) for u in range(len(uniq))]
    return inverse, members


def sample_triplets(batch: PkBatch, labels, rng: np.random.Generator) -> list[Triplet]:
    """One random triplet per anchor; indices are positions within the batch.

    ``labels`` are the dataset-wide identity labels (indexed by
    ``batch.indices``).
    """
    inverse, members = _positions_by_identity(np.asarray(labels)[batch.indices])
    n = len(batch.indices)
    out = []
    for a in range(n):
        same = members[inverse[a]]
        same = same[same != a]
        others = np.flatnonzero(inverse != inverse[a])
        out.append(Triplet(a, int(rng.choice(same)), int(rng.choice(others))))
    return out


def sample_quadruplets(batch: PkBatch, labels, rng: np.random.Generator) -> list[Quadruplet]:
    """One random quadruplet per anchor spanning exactly three identities."""
    inverse, members = _positions_by_identity(np.asarray(labels)[batch.indices])
    if len(members) < 3:
        raise NeedThreeIdentities(f"batch has {len(members)} identities")
    n = len(batch.indices)
    out = []
    for a in range(n):
        same = members[inverse[a]]
        same = same[same != a]
        pos = int(rng.choice(same))
        candidates = [c for c in range(len(members)) if c != inverse[a]]
        first, second = rng.choice(candidates, size=2, replace=False)
        neg = int(rng.choice(members[first]))
        other = int(rng.choice(members[second]))
        out.append(Quadruplet(a, pos, neg, other))
    return out
