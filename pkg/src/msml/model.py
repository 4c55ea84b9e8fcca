"""Small MLP embedding network with manual backprop, Adam, and a step LR schedule."""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import CacheMismatch, CheckpointError, ShapeMismatch
from .linalg import as_matrix, normalize_rows, normalize_rows_backward

CHECKPOINT_FORMAT = "msml-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass
class MlpModel:
    """Rectifier MLP ``F -> H -> ... -> D_emb`` plus a linear classifier head.

    ``weights[l]`` has shape ``(in, out)`` so a layer computes ``h @ W + b``.
    The last layer is linear; its output is the embedding (before the
    optional l2 normalization) and also feeds the classifier head.
    """

    weights: list
    biases: list
    head_w: np.ndarray
    head_b: np.ndarray
    normalize: bool = True
    class_ids: list = field(default_factory=list)

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatch("need one bias per weight matrix and at least one layer")
        for l, (w, b) in enumerate(zip(self.weights, self.biases)):
            if b.shape != (w.shape[1],):
                raise ShapeMismatch(f"layer {l}: bias {b.shape} for weight {w.shape}")
            if l and self.weights[l - 1].shape[1] != w.shape[0]:
                raise ShapeMismatch(f"layer {l} input {w.shape[0]} does not chain")
        if self.head_w.shape[0] != self.emb_dim or self.head_b.shape != (self.head_w.shape[1],):
            raise ShapeMismatch("classifier head does not match embedding dim")

    @classmethod
    def init(
        cls,
        dims: Sequence[int],
        num_classes: int,
        rng: np.random.Generator,
        normalize: bool = True,
        class_ids: Optional[list] = None,
    ) -> "MlpModel":
        """Uniform(-1/sqrt(fan_in), 1/sqrt(fan_in)) weights and biases.

        ``dims`` lists every width from the input to the embedding, e.g.
        ``[16, 64, 64, 32]``.
        """
        if len(dims) < 2:
            raise ValueError("dims needs at least an input and an output width")

        def layer(fan_in, fan_out):
            bound = 1.0 / np.sqrt(fan_in)
            return (
                rng.uniform(-bound, bound, size=(fan_in, fan_out)),
                rng.uniform(-bound, bound, size=fan_out),
            )

        ws, bs = [], []
        for fan_in, fan_out in zip(dims[:-1], dims[1:]):
            w, b = layer(fan_in, fan_out)
            ws.append(w)
            bs.append(b)
        hw, hb = layer(dims[-1], num_classes)
        return cls(ws, bs, hw, hb, normalize, list(class_ids or []))

    @property
    def input_dim(self) -> int:
        return self.weights[0].shape[0]

    @property
    def emb_dim(self) -> int:
        return self.weights[-1].shape[1]

    @property
    def num_classes(self) -> int:
        return self.head_w.shape[1]

    def parameters(self) -> list:
        """Parameter arrays in a fixed order; Adam updates them in place."""
        params = []
        for w, b in zip(self.weights, self.biases):
            params += [w, b]
        return params + [self.head_w, self.head_b]

    def parameter_names(self) -> list:
        names = []
        for l in range(len(self.weights)):
            names += [f"layer{l}.weight", f"layer{l}.bias"]
        return names + ["head.weight", "head.bias"]

    def copy(self) -> "MlpModel":
        return MlpModel(
            [w.copy() for w in self.weights],
            [b.copy() for b in self.biases],
            self.head_w.copy(),
            self.head_b.copy(),
            self.normalize,
            list(self.class_ids),
        )

    def embed(self, x) -> np.ndarray:
        return forward(self, x)[0]


@dataclass
class ForwardCache:
    signature: tuple
    activations: list  # input of each layer
    pre_embedding: np.ndarray


def _signature(model: MlpModel) -> tuple:
    return tuple(p.shape for p in model.parameters()) + (model.normalize,)


def forward(model: MlpModel, x):
    """Return ``(embeddings, logits, cache)``.

    Logits are computed from the pre-normalization embedding.
    """
    h = as_matrix(x)
    if h.shape[1] != model.input_dim:
        raise ShapeMismatch(f"input has {h.shape[1]} columns, model expects {model.input_dim}")
    activations = []
    last = len(model.weights) - 1
    for l, (w, b) in enumerate(zip(model.weights, model.biases)):
        activations.append(h)
        h = h @ w + b
        if l < last:
            h = np.maximum(h, 0.0)
    z = h
    emb = normalize_rows(z) if model.normalize else z
    logits = z @ model.head_w + model.head_b
    return emb, logits, ForwardCache(_signature(model), activations, z)


def backward(model: MlpModel, cache: ForwardCache, grad_embeddings, grad_logits=None) -> list:
    """Parameter gradients, in the order of ``model.parameters()``."""
    if cache.signature != _signature(model):
        raise CacheMismatch("cache was produced by a model with different shapes")
    z = cache.pre_embedding
    g = np.asarray(grad_embeddings, dtype=np.float64)
    if g.shape != z.shape:
        raise CacheMismatch(f"grad_embeddings {g.shape} vs embeddings {z.shape}")
    g = normalize_rows_backward(z, g) if model.normalize else g.copy()

    if grad_logits is None:
        g_hw = np.zeros_like(model.head_w)
        g_hb = np.zeros_like(model.head_b)
    else:
        gl = np.asarray(grad_logits, dtype=np.float64)
        if gl.shape != (z.shape[0], model.num_classes):
            raise CacheMismatch(f"grad_logits {gl.shape} vs logits {(z.shape[0], model.num_classes)}")
        g_hw = z.T @ gl
        g_hb = gl.sum(axis=0)
        g = g + gl @ model.head_w.T

    grads = []
    for l in range(len(model.weights) - 1, -1, -1):
        a = cache.activations[l]
        grads.append(g.sum(axis=0))
        grads.append(a.T @ g)
        if l > 0:
            # a is the rectifier output of the previous layer
            g = (g @ model.weights[l].T) * (a > 0)
    grads.reverse()
    return grads + [g_hw, g_hb]


@dataclass
class AdamState:
    m: list
    v: list
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8

    @classmethod
    def for_params(cls, params, **kwargs) -> "AdamState":
        return cls([np.zeros_like(p) for p in params], [np.zeros_like(p) for p in params], **kwargs)


def adam_step(state: AdamState, params: list, grads: list, lr: float) -> None:
    """Bias-corrected Adam update, applied to ``params`` in place."""
    if len(params) != len(grads) or len(params) != len(state.m):
        raise ShapeMismatch("params, grads and optimizer state differ in length")
    for p, g, m in zip(params, grads, state.m):
        if p.shape != g.shape or p.shape != m.shape:
            raise ShapeMismatch(f"parameter {p.shape}, gradient {g.shape}, moment {m.shape}")
    state.step += 1
    b1, b2 = state.beta1, state.beta2
    c1 = 1.0 - b1 ** state.step
    c2 = 1.0 - b2 ** state.step
    for p, g, m, v in zip(params, grads, state.m, state.v):
        m *= b1
        m += (1.0 - b1) * g
        v *= b2
        v += (1.0 - b2) * g * g
        p -= lr * (m / c1) / (np.sqrt(v / c2) + state.eps)


@dataclass(frozen=True)
class LrSchedule:
    """Piecewise-constant learning rate: ``base_lr`` until the first step epoch."""

    base_lr: float = 1e-3
    steps: tuple = ((50, 1e-4), (200, 1e-5))

    def __post_init__(self):
        epochs = [e for e, _ in self.steps]
        if any(b <= a for a, b in zip(epochs, epochs[1:])):
            raise ValueError("schedule epochs must be strictly increasing")
        if self.base_lr < 0 or any(lr <= 0 for _, lr in self.steps):
            raise ValueError("learning rates must be positive")


def lr_at(schedule: LrSchedule, epoch: int) -> float:
    lr = schedule.base_lr
    for start, step_lr in schedule.steps:
        if epoch >= start:
            lr = step_lr
    return lr


# -- checkpoints -------------------------------------------------------------

def save_checkpoint(model: MlpModel, path, meta: Optional[dict] = None) -> None:
    tensors = [
        {"name": name, "shape": list(p.shape), "data": [float(v) for v in p.ravel()]}
        for name, p in zip(model.parameter_names(), model.parameters())
    ]
    doc = {
        "format": CHECKPOINT_FORMAT,
        "schema_version": CHECKPOINT_VERSION,
        "activation": "relu",
        "normalize": model.normalize,
        "num_layers": len(model.weights),
        "class_ids": [int(c) for c in model.class_ids],
        "meta": meta or {},
        "tensors": tensors,
    }
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh)
        fh.write("\n")


def load_checkpoint(path) -> MlpModel:
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    if not isinstance(doc, dict) or doc.get("format") != CHECKPOINT_FORMAT:
        raise CheckpointError(f"{path} is not a {CHECKPOINT_FORMAT} file")
    if doc.get("schema_version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {doc.get('schema_version')}")
    try:
        arrays = {}
        for t in doc["tensors"]:
            arr = np.array(t["data"], dtype=np.float64).reshape(t["shape"])
            if not np.all(np.isfinite(arr)):
                raise CheckpointError(f"tensor {t['name']} has non-finite values")
            arrays[t["name"]] = arr
        n = int(doc["num_layers"])
        return MlpModel(
            [arrays[f"layer{l}.weight"] for l in range(n)],
            [arrays[f"layer{l}.bias"] for l in range(n)],
            arrays["head.weight"],
            arrays["head.bias"],
            bool(doc["normalize"]),
            list(doc.get("class_ids", [])),
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise CheckpointError(f"malformed checkpoint {path}: {exc}") from exc


def read_checkpoint_meta(path) -> dict:
    with open(path, encoding="utf-8") as fh:
        return json.load(fh).get("meta", {})
