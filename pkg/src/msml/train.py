"""Training loop: PK sampling, forward, loss, backward, Adam."""

from __future__ import annotations

import dataclasses
import logging
import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np

from . import losses as L
from .distance import pairwise_distances
from .errors import NonFiniteError, NonFiniteLoss
from .model import AdamState, LrSchedule, MlpModel, adam_step, backward, forward, lr_at
from .sampling import LabeledDataset, pk_sample, sample_quadruplets, sample_triplets

log = logging.getLogger(__name__)


@dataclass(frozen=True)
class TrainConfig:
    loss: str = "msml"
    margins: L.MarginConfig = L.MarginConfig()
    w_cls: float = 1.0
    p: int = 8
    k: int = 4
    epochs: int = 200
    schedule: LrSchedule = LrSchedule()
    hidden: tuple = (64, 64)
    emb_dim: int = 32
    normalize: bool = True

    def __post_init__(self):
        if self.loss not in L.LOSS_KINDS:
            raise ValueError(f"unknown loss {self.loss!r}; choose from {', '.join(L.LOSS_KINDS)}")
        if self.epochs < 0:
            raise ValueError("epochs must be >= 0")
        if self.w_cls < 0:
            raise ValueError("w_cls must be >= 0")


@dataclass
class BatchRecord:
    epoch: int
    batch: int
    lr: float
    loss: float
    metric_loss: float
    cls_loss: float
    max_pos: float
    min_neg: float

    @property
    def demarcation(self) -> float:
        return self.min_neg - self.max_pos


@dataclass
class History:
    batches: list = field(default_factory=list)

    def epoch_rows(self) -> list:
        """One ``(epoch, mean_loss, mean_demarcation, lr)`` tuple per epoch."""
        rows = []
        by_epoch = {}
        for rec in self.batches:
            by_epoch.setdefault(rec.epoch, []).append(rec)
        for epoch in sorted(by_epoch):
            recs = by_epoch[epoch]
            rows.append((
                epoch,
                float(np.mean([r.loss for r in recs])),
                float(np.mean([r.demarcation for r in recs])),
                recs[0].lr,
            ))
        return rows

    def last_epoch(self) -> list:
        if not self.batches:
            return []
        last = self.batches[-1].epoch
        return [r for r in self.batches if r.epoch == last]


def batch_extremes(dist: np.ndarray, ids) -> tuple[float, float]:
    """(max positive-pair distance, min negative-pair distance)."""
    pos, neg = L.pair_masks(ids)
    max_pos = float(dist[pos].max()) if pos.any() else 0.0
    min_neg = float(dist[neg].min()) if neg.any() else math.inf
    return max_pos, min_neg


def metric_loss(kind: str, emb: L.EmbeddingBatch, cfg: L.MarginConfig, batch, labels, rng) -> L.LossOutput:
    if kind == "tri":
        return L.triplet_loss(emb, sample_triplets(batch, labels, rng), cfg)
    if kind == "quad":
        return L.quadruplet_loss(emb, sample_quadruplets(batch, labels, rng), cfg)
    if kind == "quad_prime":
        return L.quad_prime_loss(emb, sample_quadruplets(batch, labels, rng), cfg)
    if kind == "trihard":
        return L.trihard_loss(emb, cfg)
    if kind == "msml":
        return L.msml_loss(emb, cfg)
    raise ValueError(f"{kind!r} is not a metric loss")


def build_model(ds: LabeledDataset, config: TrainConfig, rng: np.random.Generator) -> MlpModel:
    class_ids = [int(c) for c in ds.identities()]
    dims = [ds.dim, *config.hidden, config.emb_dim]
    return MlpModel.init(dims, len(class_ids), rng, normalize=config.normalize, class_ids=class_ids)


def train(
    ds: LabeledDataset,
    config: TrainConfig,
    rng: np.random.Generator,
    model: Optional[MlpModel] = None,
) -> tuple[MlpModel, History]:
    """Train an embedding model; returns the model and per-batch history.

    The model owns the l2 normalization, so metric losses are evaluated with
    ``normalize_inputs=False`` on its (already normalized) output.
    """
    if config.loss == "quad":
        L.check_quadruplet_margins(config.margins)
    if model is None:
        model = build_model(ds, config, rng)
    history = History()
    if config.epochs == 0:
        return model, history

    class_of = {c: i for i, c in enumerate(model.class_ids)}
    labels = np.array([class_of[int(i)] for i in ds.ids], dtype=np.intp)
    loss_cfg = dataclasses.replace(config.margins, normalize_inputs=False)
    params = model.parameters()
    state = AdamState.for_params(params)
    batch_size = config.p * config.k
    per_epoch = math.ceil(len(ds) / batch_size)
    use_cls = config.loss == "cls" or config.w_cls > 0

    for epoch in range(config.epochs):
        lr = lr_at(config.schedule, epoch)
        for b in range(per_epoch):
            batch = pk_sample(ds, config.p, config.k, rng)
            x = ds.features[batch.indices]
            ids = ds.ids[batch.indices]
            try:
                emb, logits, cache = forward(model, x)
                eb = L.EmbeddingBatch(emb, ids)
                if config.loss == "cls":
                    metric = L.LossOutput(0.0, np.zeros_like(emb), [])
                else:
                    metric = metric_loss(config.loss, eb, loss_cfg, batch, ds.ids, rng)
                if use_cls:
                    cls = L.classification_loss(logits, labels[batch.indices])
                    weight = 1.0 if config.loss == "cls" else config.w_cls
                    total = L.combined_loss(metric, cls, weight)
                    cls_value = cls.value
                else:
                    total, cls_value = metric, 0.0
                grads = backward(model, cache, total.grad, total.grad_logits)
            except NonFiniteError as exc:
                raise NonFiniteLoss(f"non-finite values at epoch {epoch}, batch {b}, lr={lr}: {exc}") from exc
            if not math.isfinite(total.value) or not all(np.all(np.isfinite(g)) for g in grads):
                raise NonFiniteLoss(
                    f"non-finite loss or gradient at epoch {epoch}, batch {b}: "
                    f"loss={total.value}, metric={metric.value}, cls={cls_value}, lr={lr}"
                )
            max_pos, min_neg = batch_extremes(pairwise_distances(emb), ids)
            history.batches.append(
                BatchRecord(epoch, b, lr, total.value, metric.value, cls_value, max_pos, min_neg)
            )
            adam_step(state, params, grads, lr)
        if log.isEnabledFor(logging.DEBUG):
            recs = history.last_epoch()
            log.debug("epoch %d lr %.1e loss %.4f", epoch, lr, np.mean([r.loss for r in recs]))
    return model, history
