"""Retrieval evaluation: ranking, CMC, AP/mAP and distance-distribution reports."""

from __future__ import annotations

import csv
import json
from fractions import Fraction
from dataclasses import dataclass, field
from typing import Iterable, Optional

import numpy as np

from .distance import pairwise_distances
from .errors import (
    EmptyGalleryAfterExclusion,
    NoPositivePairs,
    QueryWithoutMatch,
    ShapeMismatch,
    SingleIdentityBatch,
)
from .losses import EmbeddingBatch, pair_masks
from .linalg import as_matrix, as_vector

REPORT_SCHEMA_VERSION = 1


@dataclass(frozen=True)
class Protocol:
    """Query/gallery protocol.

    With ``camera_exclusion`` on and camera labels present, gallery items
    that share both identity and camera with the query are dropped from its
    ranking.  Without camera labels nothing is excluded.
    """

    camera_exclusion: bool = True
    max_rank: int = 50
    bins: int = 50


@dataclass
class EvalReport:
    cmc: np.ndarray
    map: float
    per_query_ap: list
    pos_hist: np.ndarray
    neg_hist: np.ndarray
    bin_edges: np.ndarray
    max_pos: float
    min_neg: float
    num_query: int = 0
    num_gallery: int = 0
    meta: dict = field(default_factory=dict)

    @property
    def demarcation(self) -> float:
        return self.min_neg - self.max_pos

    def rank(self, i: int) -> float:
        """Rank-i accuracy (1-based)."""
        return float(self.cmc[i - 1])

    def to_dict(self) -> dict:
        return {
            "schema_version": REPORT_SCHEMA_VERSION,
            "rank_1": self.rank(1),
            "rank_5": self.rank(5),
            "rank_10": self.rank(10),
            "mAP": float(self.map),
            "demarcation": float(self.demarcation),
            "max_pos": float(self.max_pos),
            "min_neg": float(self.min_neg),
            "num_query": self.num_query,
            "num_gallery": self.num_gallery,
            "cmc": [float(c) for c in self.cmc],
            "per_query_ap": [float(a) for a in self.per_query_ap],
            "meta": self.meta,
        }


def rank_gallery(query, gallery, exclusions: Iterable[int] = ()) -> np.ndarray:
    """Gallery indices by ascending distance to ``query``; ties go to the smaller index."""
    q = as_vector(query)
    g = as_matrix(gallery.features if isinstance(gallery, EmbeddingBatch) else gallery)
    if g.shape[1] != q.shape[0]:
        raise ShapeMismatch(f"query dim {q.shape[0]} vs gallery dim {g.shape[1]}")
    diff = g - q
    d = np.sqrt(np.einsum("ij,ij->i", diff, diff))
    keep = np.ones(len(g), dtype=bool)
    excl = np.fromiter(exclusions, dtype=np.intp)
    keep[excl] = False
    if not keep.any():
        raise EmptyGalleryAfterExclusion("every gallery item was excluded")
    order = np.argsort(d, kind="stable")
    return order[keep[order]]


def cmc(relevance: Iterable, max_rank: int) -> np.ndarray:
    """Entry ``i-1`` is the fraction of queries whose first hit is at rank <= i."""
    hits = np.zeros(max_rank, dtype=np.float64)
    count = 0
    for q, flags in enumerate(relevance):
        flags = np.asarray(flags, dtype=bool)
        if not flags.any():
            raise QueryWithoutMatch(f"query {q} has no relevant gallery item")
        first = int(np.argmax(flags))
        if first < max_rank:
            hits[first] += 1
        count += 1
    if count == 0:
        raise QueryWithoutMatch("no queries")
    return np.cumsum(hits) / count


def average_precision(flags) -> float:
    """Mean of precision@k over the relevant positions k.

    Accumulated as an exact rational and rounded once, so e.g. hits at
    ranks 1 and 3 give exactly ``5/6``.
    """
    flags = np.asarray(flags, dtype=bool)
    positions = np.flatnonzero(flags)
    if positions.size == 0:
        raise QueryWithoutMatch("no relevant item in ranking")
    total = sum(Fraction(h, int(pos) + 1) for h, pos in enumerate(positions, start=1))
    return float(total / positions.size)


def distance_histogram(emb: EmbeddingBatch, bins: int = 50, hist_range=None):
    """Histogram unordered pairs (i < j) by distance, split by identity match.

    Returns ``(pos_hist, neg_hist, bin_edges)``; by default the bins span
    ``[0, largest observed distance]``.
    """
    ids = np.asarray(emb.ids)
    if len(np.unique(ids)) < 2:
        raise SingleIdentityBatch("need at least two identities for negative pairs")
    dist = pairwise_distances(emb.features)
    pos, neg = pair_masks(ids)
    upper = np.triu(np.ones_like(pos), k=1)
    pos_d = dist[pos & upper]
    neg_d = dist[neg & upper]
    if pos_d.size == 0:
        raise NoPositivePairs("no identity appears twice")
    if hist_range is None:
        top = float(dist.max())
        hist_range = (0.0, top if top > 0 else 1.0)
    pos_hist, edges = np.histogram(pos_d, bins=bins, range=hist_range)
    neg_hist, _ = np.histogram(neg_d, bins=edges)
    return pos_hist, neg_hist, edges


def _exclusions(q_id, q_cam, gallery: EmbeddingBatch, protocol: Protocol):
    if not protocol.camera_exclusion or q_cam is None or gallery.cameras is None:
        return np.empty(0, dtype=np.intp)
    return np.flatnonzero((gallery.ids == q_id) & (np.asarray(gallery.cameras) == q_cam))


def evaluate(query: EmbeddingBatch, gallery: EmbeddingBatch, protocol: Protocol = Protocol()) -> EvalReport:
    """Rank the gallery for every query and aggregate CMC, mAP and the
    pair-distance statistics of the combined query + gallery set."""
    if query.features.shape[1] != gallery.features.shape[1]:
        raise ShapeMismatch("query and gallery dimensions differ")
    relevance, aps = [], []
    for qi in range(len(query)):
        q_cam = None if query.cameras is None else query.cameras[qi]
        excl = _exclusions(query.ids[qi], q_cam, gallery, protocol)
        order = rank_gallery(query.features[qi], gallery.features, excl)
        flags = gallery.ids[order] == query.ids[qi]
        if not flags.any():
            raise QueryWithoutMatch(f"query {qi} (id {query.ids[qi]}) has no valid gallery match")
        relevance.append(flags)
        aps.append(average_precision(flags))

    union = EmbeddingBatch(
        np.vstack([query.features, gallery.features]),
        np.concatenate([query.ids, gallery.ids]),
    )
    pos_hist, neg_hist, edges = distance_histogram(union, protocol.bins)
    dist = pairwise_distances(union.features)
    pos, neg = pair_masks(union.ids)
    return EvalReport(
        cmc=cmc(relevance, protocol.max_rank),
        map=float(np.mean(aps)),
        per_query_ap=aps,
        pos_hist=pos_hist,
        neg_hist=neg_hist,
        bin_edges=edges,
        max_pos=float(dist[pos].max()),
        min_neg=float(dist[neg].min()),
        num_query=len(query),
        num_gallery=len(gallery),
    )


def evaluate_model(model, query_ds, gallery_ds, protocol: Protocol = Protocol()) -> EvalReport:
    """Embed two ``LabeledDataset`` objects with ``model`` and evaluate."""
    q = EmbeddingBatch(model.embed(query_ds.features), query_ds.ids, query_ds.cameras)
    g = EmbeddingBatch(model.embed(gallery_ds.features), gallery_ds.ids, gallery_ds.cameras)
    return evaluate(q, g, protocol)


def write_report(report: EvalReport, path, meta: Optional[dict] = None) -> None:
    doc = report.to_dict()
    if meta:
        doc["meta"] = {**doc["meta"], **meta}
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


def write_histogram_csv(report: EvalReport, path) -> None:
    with open(path, "w", encoding="utf-8", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["bin_left", "bin_right", "pos_count", "neg_count"])
        for left, right, pc, nc in zip(
            report.bin_edges[:-1], report.bin_edges[1:], report.pos_hist, report.neg_hist
        ):
            w.writerow([repr(float(left)), repr(float(right)), int(pc), int(nc)])
