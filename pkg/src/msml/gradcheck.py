"""Finite-difference checks of every analytic gradient in the package.

Random cases are rejected until they sit away from non-smooth points:
all pairwise distances > 1e-3, distinct pair distances separated by
> 1e-4 (so mining cannot flip under the probe step) and every hinge
argument at least 1e-4 from zero (alpha is nudged by 1e-3 otherwise).
"""

from __future__ import annotations

import dataclasses
from dataclasses import dataclass
from typing import Optional

import numpy as np

from . import losses as L
from .distance import pairwise_distances
from .linalg import normalize_rows
from .model import MlpModel, backward, forward
from .sampling import PkBatch, sample_quadruplets, sample_triplets

STEP = 1e-5
TOLERANCE = 1e-4
MIN_DIST = 1e-3
MIN_GAP = 1e-4
MIN_HINGE = 1e-4


@dataclass
class GradcheckResult:
    name: str
    max_rel_err: float
    tolerance: float = TOLERANCE

    @property
    def passed(self) -> bool:
        return self.max_rel_err < self.tolerance


def numeric_grad(fn, x: np.ndarray, h: float = STEP) -> np.ndarray:
    x = np.array(x, dtype=np.float64)
    g = np.zeros_like(x)
    xf, gf = x.reshape(-1), g.reshape(-1)
    for t in range(xf.size):
        old = xf[t]
        xf[t] = old + h
        up = fn(x)
        xf[t] = old - h
        down = fn(x)
        xf[t] = old
        gf[t] = (up - down) / (2 * h)
    return g


def relative_error(analytic, numeric) -> float:
    a = np.concatenate([np.ravel(v) for v in analytic]) if isinstance(analytic, list) else np.ravel(analytic)
    n = np.concatenate([np.ravel(v) for v in numeric]) if isinstance(numeric, list) else np.ravel(numeric)
    scale = max(np.linalg.norm(a), np.linalg.norm(n), 1e-8)
    return float(np.linalg.norm(a - n) / scale)


def sample_tuples(kind, ids, rng):
    if kind not in ("tri", "quad", "quad_prime"):
        return None
    batch = PkBatch(np.arange(len(ids)), len(np.unique(ids)), 0)
    if kind == "tri":
        return sample_triplets(batch, ids, rng)
    return sample_quadruplets(batch, ids, rng)


def evaluate_loss(kind, emb: L.EmbeddingBatch, tuples, cfg: L.MarginConfig) -> L.LossOutput:
    if kind == "tri":
        return L.triplet_loss(emb, tuples, cfg)
    if kind == "quad":
        return L.quadruplet_loss(emb, tuples, cfg)
    if kind == "quad_prime":
        return L.quad_prime_loss(emb, tuples, cfg)
    if kind == "trihard":
        return L.trihard_loss(emb, cfg)
    if kind == "msml":
        return L.msml_loss(emb, cfg)
    raise ValueError(kind)


def hinge_arguments(kind, dist, ids, tuples, cfg) -> np.ndarray:
    """Every hinge argument the loss evaluates, computed straight from ``dist``."""
    if kind in ("trihard", "msml"):
        pos, neg = L.pair_masks(ids)
        if kind == "msml":
            return np.array([dist[pos].max() - dist[neg].min() + cfg.alpha])
        hp = np.where(pos, dist, -np.inf).max(axis=1)
        hn = np.where(neg, dist, np.inf).min(axis=1)
        return hp - hn + cfg.alpha
    t = np.asarray([tuple(x) for x in tuples])
    if kind == "tri":
        return dist[t[:, 0], t[:, 1]] - dist[t[:, 0], t[:, 2]] + cfg.alpha
    if kind == "quad":
        return np.concatenate([
            dist[t[:, 0], t[:, 1]] - dist[t[:, 0], t[:, 2]] + cfg.alpha,
            dist[t[:, 0], t[:, 1]] - dist[t[:, 3], t[:, 2]] + cfg.beta,
        ])
    return dist[t[:, 0], t[:, 1]] - dist[t[:, 3], t[:, 2]] + cfg.alpha


def well_separated(dist: np.ndarray) -> bool:
    iu = np.triu_indices(dist.shape[0], k=1)
    d = np.sort(dist[iu])
    return d[0] > MIN_DIST and (d.size < 2 or np.diff(d).min() > MIN_GAP)


def _nudge_margins(kind, dist, ids, tuples, cfg):
    for _ in range(20):
        if np.abs(hinge_arguments(kind, dist, ids, tuples, cfg)).min() >= MIN_HINGE:
            return cfg
        cfg = dataclasses.replace(cfg, alpha=cfg.alpha + 1e-3, beta=cfg.beta + 1e-3)
    return None


def make_case(kind, rng, n_ids=3, per_id=3, dim=4, normalize=True, cfg=None):
    """A well-conditioned random ``(EmbeddingBatch, tuples, cfg)``."""
    cfg = cfg or L.MarginConfig(normalize_inputs=normalize)
    for _ in range(1000):
        ids = np.repeat(np.arange(n_ids), per_id)
        x = rng.normal(size=(len(ids), dim))
        f = normalize_rows(x) if cfg.normalize_inputs else x
        dist = pairwise_distances(f)
        if not well_separated(dist):
            continue
        tuples = sample_tuples(kind, ids, rng)
        nudged = _nudge_margins(kind, dist, ids, tuples, cfg)
        if nudged is not None:
            return L.EmbeddingBatch(x, ids), tuples, nudged
    raise RuntimeError("could not draw a well-conditioned case")


def check_loss(kind, rng, normalize=True, corrupt=False) -> float:
    emb, tuples, cfg = make_case(kind, rng, normalize=normalize)
    out = evaluate_loss(kind, emb, tuples, cfg)
    numeric = numeric_grad(
        lambda x: evaluate_loss(kind, L.EmbeddingBatch(x, emb.ids), tuples, cfg).value,
        emb.features,
    )
    analytic = out.grad * (1.5 if corrupt else 1.0)
    return relative_error(analytic, numeric)


def check_classification(rng, corrupt=False) -> float:
    logits = rng.normal(size=(6, 3)) * 2
    labels = rng.integers(3, size=6)
    out = L.classification_loss(logits, labels)
    numeric = numeric_grad(lambda z: L.classification_loss(z, labels).value, logits)
    return relative_error(out.grad * (1.5 if corrupt else 1.0), numeric)


def end_to_end_value(model, kind, x, ids, tuples, cfg, w_cls, labels):
    emb, logits, cache = forward(model, x)
    eb = L.EmbeddingBatch(emb, ids)
    if kind == "cls":
        metric = L.LossOutput(0.0, np.zeros_like(emb), [])
    else:
        metric = evaluate_loss(kind, eb, tuples, cfg)
    if w_cls > 0:
        total = L.combined_loss(metric, L.classification_loss(logits, labels), w_cls)
    else:
        total = metric
    return total, cache


def check_end_to_end(kind, rng, w_cls=0.0, corrupt=False, dims=(4, 5, 3), n=8) -> float:
    """Loss composed with the model (through l2 normalization) vs finite
    differences over every model parameter."""
    n_ids = 2 if kind != "quad" and kind != "quad_prime" else 4
    per_id = n // n_ids
    ids = np.repeat(np.arange(n_ids), per_id)
    cfg = L.MarginConfig(normalize_inputs=False)
    for _ in range(1000):
        model = MlpModel.init(list(dims), n_ids, rng, normalize=True)
        x = rng.normal(size=(len(ids), dims[0]))
        emb = forward(model, x)[0]
        dist = pairwise_distances(emb)
        if not well_separated(dist):
            continue
        tuples = sample_tuples(kind, ids, rng)
        use_cfg = cfg if kind == "cls" else _nudge_margins(kind, dist, ids, tuples, cfg)
        if use_cfg is not None:
            break
    else:
        raise RuntimeError("could not draw a well-conditioned model")

    total, cache = end_to_end_value(model, kind, x, ids, tuples, use_cfg, w_cls, ids)
    analytic = backward(model, cache, total.grad, total.grad_logits)
    params = model.parameters()
    numeric = []
    for p in params:
        def fn(v, p=p):
            saved = p.copy()
            p[...] = v
            value = end_to_end_value(model, kind, x, ids, tuples, use_cfg, w_cls, ids)[0].value
            p[...] = saved
            return value
        numeric.append(numeric_grad(fn, p.copy()))
    if corrupt:
        analytic = [g * 1.5 for g in analytic]
    return relative_error(analytic, numeric)


def run_gradchecks(seed: int = 0, trials: int = 3, corrupt: Optional[str] = None) -> list:
    """Run every check ``trials`` times; report the worst relative error.

    ``corrupt`` names one check whose analytic gradient is deliberately
    scaled by 1.5 (negative control).
    """
    rng = np.random.default_rng(seed)
    checks = []
    for kind in L.METRIC_LOSSES:
        checks.append((kind, lambda r, c, k=kind: check_loss(k, r, True, c)))
        checks.append((f"{kind}/raw", lambda r, c, k=kind: check_loss(k, r, False, c)))
    checks.append(("cls", check_classification))
    for kind in L.LOSS_KINDS:
        checks.append((f"model+{kind}", lambda r, c, k=kind: check_end_to_end(k, r, 0.0 if k != "cls" else 1.0, c)))
    for kind in ("tri", "msml"):
        checks.append((f"model+{kind}+cls", lambda r, c, k=kind: check_end_to_end(k, r, 1.0, c)))

    results = []
    for name, fn in checks:
        worst = max(fn(rng, name == corrupt) for _ in range(trials))
        results.append(GradcheckResult(name, worst))
    return results
