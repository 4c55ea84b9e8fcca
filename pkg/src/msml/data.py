"""Synthetic clustered data, the feature-file format, and identity-disjoint splits.

Feature file format (UTF-8, comma separated)::

    # comment lines start with '#'
    id,camera,f0,f1,...,f{D-1}
    3,1,0.25,-1.5e-3,...

The ``camera`` column is optional; when present its cells may be empty.
Either every camera cell is empty (no camera labels) or none is.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from .errors import (
    InconsistentDimension,
    InsufficientIdentities,
    InsufficientSamplesPerIdentity,
    NonFiniteFeature,
    ParseError,
)
from .sampling import LabeledDataset


@dataclass(frozen=True)
class SyntheticSpec:
    num_ids: int = 32
    samples_per_id: int = 8
    input_dim: int = 16
    centroid_scale: float = 1.0
    within_spread: float = 0.1
    seed: int = 0

    def __post_init__(self):
        if self.num_ids < 2:
            raise ValueError("num_ids must be >= 2")
        if self.samples_per_id < 2:
            raise ValueError("samples_per_id must be >= 2")
        if self.input_dim < 1:
            raise ValueError("input_dim must be >= 1")
        if not self.within_spread > 0:
            raise ValueError("within_spread must be > 0")


def gen_synthetic(spec: SyntheticSpec) -> LabeledDataset:
    """Gaussian blobs around uniformly drawn identity centroids."""
    rng = np.random.default_rng(spec.seed)
    centroids = rng.uniform(
        -spec.centroid_scale, spec.centroid_scale, size=(spec.num_ids, spec.input_dim)
    )
    ids = np.repeat(np.arange(spec.num_ids), spec.samples_per_id)
    noise = rng.normal(0.0, spec.within_spread, size=(len(ids), spec.input_dim))
    return LabeledDataset(centroids[ids] + noise, ids)


def _parse_int(token, line, column, what):
    try:
        return int(token)
    except ValueError:
        raise ParseError(f"{what} {token!r} is not an integer", line, column) from None


def load_features(path) -> LabeledDataset:
    with open(path, encoding="utf-8") as fh:
        lines = fh.read().splitlines()

    header = None
    has_camera = False
    dim = 0
    ids, cams, rows = [], [], []
    for lineno, raw in enumerate(lines, start=1):
        text = raw.strip()
        if not text or text.startswith("#"):
            continue
        cells = [c.strip() for c in text.split(",")]
        if header is None:
            header = cells
            if header[0] != "id":
                raise ParseError("header must start with 'id'", lineno, 1)
            has_camera = len(header) > 1 and header[1] == "camera"
            fcols = header[2:] if has_camera else header[1:]
            expected = [f"f{i}" for i in range(len(fcols))]
            if not fcols:
                raise ParseError("header declares no feature columns", lineno)
            for col, (got, want) in enumerate(zip(fcols, expected)):
                if got != want:
                    offset = 3 if has_camera else 2
                    raise ParseError(
                        f"expected column {want!r}, found {got!r}", lineno, col + offset
                    )
            dim = len(fcols)
            continue

        if len(cells) != len(header):
            raise InconsistentDimension(
                f"row has {len(cells)} columns, header has {len(header)}", lineno
            )
        ids.append(_parse_int(cells[0], lineno, 1, "id"))
        first = 1
        if has_camera:
            cams.append(None if cells[1] == "" else _parse_int(cells[1], lineno, 2, "camera"))
            first = 2
        values = []
        for col, token in enumerate(cells[first:], start=first + 1):
            try:
                value = float(token)
            except ValueError:
                raise ParseError(f"cannot parse {token!r} as a number", lineno, col) from None
            if not math.isfinite(value):
                raise NonFiniteFeature(f"non-finite feature {token!r}", lineno, col)
            values.append(value)
        rows.append(values)

    if header is None:
        raise ParseError("file has no header line")
    features = np.array(rows, dtype=np.float64).reshape(len(rows), dim)
    cameras = None
    if has_camera and cams:
        missing = [c is None for c in cams]
        if all(missing):
            cameras = None
        elif any(missing):
            raise ParseError("camera column is only partially filled")
        else:
            cameras = np.array(cams, dtype=np.int64)
    return LabeledDataset(features, np.array(ids, dtype=np.int64), cameras)


def save_features(ds: LabeledDataset, path) -> None:
    header = ["id"]
    if ds.cameras is not None:
        header.append("camera")
    header += [f"f{i}" for i in range(ds.dim)]
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(",".join(header) + "\n")
        for r in range(len(ds)):
            cells = [str(int(ds.ids[r]))]
            if ds.cameras is not None:
                cells.append(str(int(ds.cameras[r])))
            cells += [repr(float(v)) for v in ds.features[r]]
            fh.write(",".join(cells) + "\n")


class SplitIndices(NamedTuple):
    train: np.ndarray
    query: np.ndarray
    gallery: np.ndarray


class Split(NamedTuple):
    train: LabeledDataset
    query: LabeledDataset
    gallery: LabeledDataset


def split_indices(
    ds: LabeledDataset, train_frac: float, rng: np.random.Generator
) -> SplitIndices:
    """Row indices of an identity-disjoint train / query / gallery split.

    Each test identity contributes one randomly chosen row to the query
    set and the remainder to the gallery.
    """
    groups = ds.rows_by_identity()
    identities = list(groups)
    n_train = int(round(train_frac * len(identities)))
    if n_train < 1 or n_train >= len(identities):
        raise InsufficientIdentities(
            f"train_frac={train_frac} leaves an empty side with {len(identities)} identities"
        )
    order = rng.permutation(len(identities))
    train_ids = sorted(identities[i] for i in order[:n_train])
    test_ids = sorted(identities[i] for i in order[n_train:])

    short = [t for t in test_ids if len(groups[t]) < 2]
    if short:
        raise InsufficientSamplesPerIdentity(f"test identities {short} have < 2 samples")

    train = np.sort(np.concatenate([groups[t] for t in train_ids]))
    query, gallery = [], []
    for t in test_ids:
        rows = groups[t]
        pick = int(rng.integers(len(rows)))
        query.append(rows[pick])
        gallery.extend(np.delete(rows, pick).tolist())
    return SplitIndices(
        train.astype(np.intp),
        np.array(query, dtype=np.intp),
        np.sort(np.array(gallery, dtype=np.intp)),
    )


def split(ds: LabeledDataset, train_frac: float, rng: np.random.Generator) -> Split:
    idx = split_indices(ds, train_frac, rng)
    return Split(ds.subset(idx.train), ds.subset(idx.query), ds.subset(idx.gallery))
