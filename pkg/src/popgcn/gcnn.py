"""Chebyshev-filter graph convolutional network in plain numpy.

Every layer computes

    H' = act( sum_k T_k(L) H theta_k + b )

with ReLU between layers and a row-wise softmax at the output.  Gradients are
derived by hand (reverse mode, layer by layer) and the network is trained
full-batch with Adam.

Forward evaluates the filter as ``sum_k T_k(L) (H theta_k)`` by Clenshaw's
recurrence, which needs sparse products at the layer's output width instead of
its input width.  The backward pass reuses one Chebyshev sweep of the output
gradient for both the weight and the input gradients.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from typing import NamedTuple

import numpy as np

from .errors import FormatError, InvalidInputError, NonFiniteError, ReportIOError, ShapeMismatchError
from .graph_core import (
    DEFAULT_LAMBDA_MAX,
    ScaledLaplacian,
    WeightedGraph,
    as_array,
    chebyshev_apply,
    chebyshev_sum,
    graph_operator,
)

LOG_FLOOR = 1e-12
ADAM_BETA1 = 0.9
ADAM_BETA2 = 0.999
ADAM_EPS = 1e-8
CHECKPOINT_FORMAT = "popgcn-checkpoint"
CHECKPOINT_VERSION = 1


@dataclass(frozen=True)
class GcnnConfig:
    layer_widths: tuple = (16, 16, 16)
    chebyshev_order: int = 3
    learning_rate: float = 0.005
    unit_dropout: float = 0.3
    epochs: int = 200
    weight_decay: float = 5e-4
    seed: int = 0
    num_classes: int = 2
    lambda_max: float = DEFAULT_LAMBDA_MAX

    def __post_init__(self):
        object.__setattr__(self, "layer_widths", tuple(int(w) for w in self.layer_widths))
        if not self.layer_widths or min(self.layer_widths) < 1:
            raise InvalidInputError("layer_widths must be a non-empty list of positive counts")
        if self.chebyshev_order < 0:
            raise InvalidInputError("chebyshev_order must be non-negative")
        if not self.learning_rate > 0:
            raise InvalidInputError("learning_rate must be positive")
        if not 0 <= self.unit_dropout < 1:
            raise InvalidInputError("unit_dropout must lie in [0, 1)")
        if self.epochs < 1:
            raise InvalidInputError("epochs must be at least 1")
        if self.weight_decay < 0:
            raise InvalidInputError("weight_decay must be non-negative")
        if self.num_classes < 2:
            raise InvalidInputError("num_classes must be at least 2")
        if not self.lambda_max > 0:
            raise InvalidInputError("lambda_max must be positive")

    def replace(self, **changes):
        d = asdict(self)
        d.update(changes)
        return GcnnConfig(**d)

    def to_dict(self):
        d = asdict(self)
        d["layer_widths"] = list(self.layer_widths)
        return d


@dataclass(eq=False)
class GcnnParams:
    """Per-layer filter weights of shape ``(K+1, in, out)`` and biases."""

    weights: list
    biases: list

    def __post_init__(self):
        if len(self.weights) != len(self.biases) or not self.weights:
            raise ShapeMismatchError("need one bias per weight tensor")
        for layer, (w, b) in enumerate(zip(self.weights, self.biases)):
            if w.ndim != 3 or b.shape != (w.shape[2],):
                raise ShapeMismatchError(f"layer {layer}: bad parameter shapes {w.shape}, {b.shape}")
            if layer and w.shape[1] != self.weights[layer - 1].shape[2]:
                raise ShapeMismatchError(f"layer {layer}: input width does not chain")

    @property
    def shapes(self):
        return [w.shape for w in self.weights]

    def copy(self):
        return GcnnParams([w.copy() for w in self.weights], [b.copy() for b in self.biases])

    def arrays(self):
        return list(self.weights) + list(self.biases)

    def equals(self, other):
        return all(np.array_equal(a, b) for a, b in zip(self.arrays(), other.arrays()))


@dataclass(eq=False)
class TrainMask:
    """Boolean node mask plus integer labels (only masked entries matter)."""

    node_mask: np.ndarray
    labels: np.ndarray

    def __post_init__(self):
        self.node_mask = np.asarray(self.node_mask, dtype=bool)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.node_mask.shape != self.labels.shape or self.node_mask.ndim != 1:
            raise ShapeMismatchError("node_mask and labels must be 1-D and equally long")
        if np.any(self.labels[self.node_mask] < 0):
            raise InvalidInputError("masked nodes must carry a class label")

    @classmethod
    def from_labels(cls, labels, mask=None):
        """Mask defaults to every node with a non-negative label."""
        labels = np.asarray(labels, dtype=np.int64)
        if mask is None:
            mask = labels >= 0
        return cls(np.asarray(mask, dtype=bool), labels)

    @property
    def count(self):
        return int(self.node_mask.sum())


class ForwardCache(NamedTuple):
    operator: "SpectralFilter"
    inputs: list
    dropout_masks: list
    preactivations: list
    probabilities: np.ndarray


class TrainingCurve(NamedTuple):
    loss: np.ndarray
    accuracy: np.ndarray


def init_params(in_dim, cfg, rng):
    """Glorot-uniform filter slices, zero biases."""
    k1 = cfg.chebyshev_order + 1
    dims = [in_dim, *cfg.layer_widths, cfg.num_classes]
    weights, biases = [], []
    for fan_in, fan_out in zip(dims[:-1], dims[1:]):
        limit = np.sqrt(6.0 / (fan_in + fan_out))
        weights.append(rng.uniform(-limit, limit, size=(k1, fan_in, fan_out)))
        biases.append(np.zeros(fan_out))
    return GcnnParams(weights, biases)


DENSE_DENSITY = 0.03
DENSE_MAX_NODES = 4096


class SpectralFilter:
    """A scaled Laplacian prepared for repeated filtering at a fixed order.

    Graphs denser than ``DENSE_DENSITY`` (and not too large) get the
    polynomials ``T_1 .. T_K`` precomputed as one dense stack so that a whole
    filter costs a single matrix product; sparse graphs keep the three-term
    recurrence on the CSR matrix.
    """

    def __init__(self, op, order):
        self.laplacian = op
        self.order = int(order)
        self.num_nodes = op.num_nodes
        n = op.num_nodes
        nnz = op.matrix.nnz
        self.dense = self.order >= 1 and n <= DENSE_MAX_NODES and nnz > DENSE_DENSITY * n * n
        if self.dense:
            eye = np.eye(n)
            polys = chebyshev_apply(op, eye, self.order)[1:]
            self._hcat = np.hstack(polys)
            self._vcat = np.vstack(polys)

    def combine(self, y, n_out):
        """``sum_k T_k Y_k`` where ``Y_k`` are the column blocks of ``y``."""
        if not self.order:
            return y.copy()
        if self.dense:
            n = self.num_nodes
            rest = y[:, n_out:].reshape(n, self.order, n_out).transpose(1, 0, 2).reshape(-1, n_out)
            return y[:, :n_out] + self._hcat @ rest
        blocks = [y[:, k * n_out:(k + 1) * n_out] for k in range(self.order + 1)]
        return chebyshev_sum(self.laplacian, blocks)

    def sweep(self, g):
        """``[T_0 G | T_1 G | ... | T_K G]`` side by side."""
        if not self.order:
            return g
        if self.dense:
            n, n_out = g.shape
            rest = (self._vcat @ g).reshape(self.order, n, n_out).transpose(1, 0, 2).reshape(n, -1)
            return np.hstack([g, rest])
        return np.hstack(chebyshev_apply(self.laplacian, g, self.order))


def prepare_filter(g, cfg):
    """Accepts a WeightedGraph, ScaledLaplacian or an already prepared filter."""
    if isinstance(g, SpectralFilter):
        if g.order != cfg.chebyshev_order:
            raise InvalidInputError("prepared filter order differs from the config")
        return g
    if isinstance(g, WeightedGraph):
        g = graph_operator(g, cfg.lambda_max)
    if isinstance(g, ScaledLaplacian):
        return SpectralFilter(g, cfg.chebyshev_order)
    raise InvalidInputError("expected a WeightedGraph or ScaledLaplacian")


def _softmax(z):
    z = z - z.max(axis=1, keepdims=True)
    e = np.exp(z)
    return e / e.sum(axis=1, keepdims=True)


def _stack(theta):
    # (K+1, in, out) -> (in, (K+1) * out)
    k1, n_in, n_out = theta.shape
    return theta.transpose(1, 0, 2).reshape(n_in, k1 * n_out)


def forward(params, g, x, cfg, mode="eval", rng=None):
    """Run the network; returns ``(probabilities, cache)``.

    In ``"train"`` mode each layer input is dropped with probability
    ``cfg.unit_dropout`` and rescaled by ``1 / (1 - p)``; ``rng`` supplies the
    masks.
    """
    if mode not in ("train", "eval"):
        raise InvalidInputError(f"mode must be 'train' or 'eval', got {mode!r}")
    op = prepare_filter(g, cfg)
    h = as_array(x)
    if h.ndim != 2 or h.shape[0] != op.num_nodes:
        raise ShapeMismatchError(f"features have shape {h.shape} but the graph has {op.num_nodes} nodes")
    if h.shape[1] != params.weights[0].shape[1]:
        raise ShapeMismatchError(f"features have {h.shape[1]} columns, first layer expects {params.weights[0].shape[1]}")
    drop = cfg.unit_dropout if mode == "train" else 0.0
    if drop and rng is None:
        raise InvalidInputError("train mode with dropout needs a random generator")
    n_layers = len(params.weights)
    inputs, masks, pres = [], [], []
    for layer, (theta, bias) in enumerate(zip(params.weights, params.biases)):
        if drop:
            m = (rng.random(h.shape) >= drop) / (1.0 - drop)
            h = h * m
        else:
            m = None
        if theta.shape[0] != op.order + 1:
            raise ShapeMismatchError(f"layer {layer}: {theta.shape[0]} filter slices for order {op.order}")
        with np.errstate(over="ignore", invalid="ignore"):
            pre = op.combine(h @ _stack(theta), theta.shape[2]) + bias
        if not np.all(np.isfinite(pre)):
            raise NonFiniteError(f"non-finite activation in layer {layer}", layer=layer)
        inputs.append(h)
        masks.append(m)
        pres.append(pre)
        h = np.maximum(pre, 0.0) if layer < n_layers - 1 else _softmax(pre)
    return h, ForwardCache(op, inputs, masks, pres, h)


def loss(probabilities, mask, params, weight_decay):
    """Masked mean cross-entropy plus ``weight_decay / 2 * ||theta||^2``."""
    if mask.count == 0:
        raise InvalidInputError("loss needs at least one masked node")
    p = probabilities[mask.node_mask, mask.labels[mask.node_mask]]
    data = float(np.mean(-np.log(np.maximum(p, LOG_FLOOR))))
    reg = 0.5 * weight_decay * sum(float(np.sum(w * w)) for w in params.weights)
    return data + reg


def backward(params, cache, mask, weight_decay, data_weight=1.0):
    """Gradients of :func:`loss` for the forward pass recorded in ``cache``.

    ``data_weight`` scales the cross-entropy term (0 leaves only weight decay).
    """
    if mask.count == 0:
        raise InvalidInputError("loss needs at least one masked node")
    probs = cache.probabilities
    idx = np.flatnonzero(mask.node_mask)
    lab = mask.labels[idx]
    g = np.zeros_like(probs)
    # d(-log p_y)/dz = p - onehot, except where the log floor is active
    live = probs[idx, lab] >= LOG_FLOOR
    rows, lab = idx[live], lab[live]
    g[rows] = probs[rows]
    g[rows, lab] -= 1.0
    g *= data_weight / idx.size

    op = cache.operator
    n_layers = len(params.weights)
    gw = [None] * n_layers
    gb = [None] * n_layers
    for layer in reversed(range(n_layers)):
        theta = params.weights[layer]
        k1, n_in, n_out = theta.shape
        sweep = op.sweep(g)
        gw[layer] = (cache.inputs[layer].T @ sweep).reshape(n_in, k1, n_out).transpose(1, 0, 2)
        gw[layer] = gw[layer] + weight_decay * theta
        gb[layer] = g.sum(axis=0)
        if layer == 0:
            break
        dh = sweep @ _stack(theta).T
        if cache.dropout_masks[layer] is not None:
            dh = dh * cache.dropout_masks[layer]
        g = dh * (cache.preactivations[layer - 1] > 0)
    return GcnnParams(gw, gb)


def gradients(params, g, x, cfg, mask, mode="eval", rng=None, data_weight=1.0):
    """Forward then backward; returns the gradient as a GcnnParams."""
    _, cache = forward(params, g, x, cfg, mode, rng)
    return backward(params, cache, mask, cfg.weight_decay, data_weight)


def value_and_gradients(params, g, x, cfg, mask, mode="eval", rng=None):
    probs, cache = forward(params, g, x, cfg, mode, rng)
    return loss(probs, mask, params, cfg.weight_decay), backward(params, cache, mask, cfg.weight_decay), probs


def _rngs(seed):
    init_ss, drop_ss = np.random.SeedSequence(seed).spawn(2)
    return np.random.default_rng(init_ss), np.random.default_rng(drop_ss)


def train(g, x, mask, cfg, init=None):
    """Full-batch Adam for ``cfg.epochs`` epochs.

    Returns ``(params, TrainingCurve)``; the curve holds the train-mode loss
    and training-mask accuracy of every epoch.  Deterministic in
    ``(cfg.seed, inputs)``.
    """
    x = as_array(x)
    op = prepare_filter(g, cfg)
    if mask.count == 0:
        raise InvalidInputError("training mask is empty")
    present = np.unique(mask.labels[mask.node_mask])
    if present.min() < 0 or present.max() >= cfg.num_classes:
        raise InvalidInputError("training labels outside [0, num_classes)")
    if present.size < cfg.num_classes:
        raise InvalidInputError("training mask must contain every class")
    init_rng, drop_rng = _rngs(cfg.seed)
    params = init_params(x.shape[1], cfg, init_rng) if init is None else init.copy()
    arrays = params.arrays()
    m = [np.zeros_like(a) for a in arrays]
    v = [np.zeros_like(a) for a in arrays]
    losses = np.empty(cfg.epochs)
    accs = np.empty(cfg.epochs)
    idx = np.flatnonzero(mask.node_mask)
    lab = mask.labels[idx]
    mode = "train" if cfg.unit_dropout > 0 else "eval"
    for epoch in range(cfg.epochs):
        try:
            value, grads, probs = value_and_gradients(params, op, x, cfg, mask, mode, drop_rng)
        except NonFiniteError as exc:
            raise NonFiniteError(f"epoch {epoch}: {exc}", layer=exc.layer, epoch=epoch) from exc
        if not np.isfinite(value):
            raise NonFiniteError(f"non-finite loss at epoch {epoch}", epoch=epoch)
        losses[epoch] = value
        accs[epoch] = np.mean(np.argmax(probs[idx], axis=1) == lab)
        t = epoch + 1
        c1 = 1.0 - ADAM_BETA1 ** t
        c2 = 1.0 - ADAM_BETA2 ** t
        for a, da, ma, va in zip(arrays, grads.arrays(), m, v):
            ma *= ADAM_BETA1
            ma += (1.0 - ADAM_BETA1) * da
            va *= ADAM_BETA2
            va += (1.0 - ADAM_BETA2) * (da * da)
            a -= cfg.learning_rate * (ma / c1) / (np.sqrt(va / c2) + ADAM_EPS)
    return params, TrainingCurve(losses, accs)


def predict_proba(params, g, x, cfg):
    return forward(params, g, x, cfg, "eval")[0]


def accuracy(probabilities, labels, node_mask=None):
    labels = np.asarray(labels)
    if node_mask is None:
        node_mask = labels >= 0
    node_mask = np.asarray(node_mask, dtype=bool)
    return float(np.mean(np.argmax(probabilities[node_mask], axis=1) == labels[node_mask]))


def save_checkpoint(params, cfg, path):
    """JSON checkpoint: config echo, layer shapes and row-major flat arrays."""
    doc = {
        "format": CHECKPOINT_FORMAT,
        "format_version": CHECKPOINT_VERSION,
        "config": cfg.to_dict(),
        "layers": [
            {"weight_shape": list(w.shape), "weight": w.ravel().tolist(), "bias": b.tolist()}
            for w, b in zip(params.weights, params.biases)
        ],
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh)
    except OSError as exc:
        raise ReportIOError(f"cannot write checkpoint {path}: {exc}", path=path) from exc


def load_checkpoint(path):
    try:
        with open(path, encoding="utf-8") as fh:
            doc = json.load(fh)
    except OSError as exc:
        raise ReportIOError(f"cannot read checkpoint {path}: {exc}", path=path) from exc
    except json.JSONDecodeError as exc:
        raise FormatError(f"{path}: not valid JSON") from exc
    if doc.get("format") != CHECKPOINT_FORMAT or doc.get("format_version") != CHECKPOINT_VERSION:
        raise FormatError(f"{path}: unsupported checkpoint format")
    weights = [np.array(l["weight"], dtype=np.float64).reshape(l["weight_shape"]) for l in doc["layers"]]
    biases = [np.array(l["bias"], dtype=np.float64) for l in doc["layers"]]
    return GcnnParams(weights, biases), GcnnConfig(**doc["config"])
