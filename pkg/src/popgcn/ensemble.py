"""Bootstrapped graph ensembles: edge dropout, member training, consensus.

Member seeds
------------
Every random draw for member ``p`` comes from :func:`derive_seed`, which takes
the first 64-bit word of ``numpy.random.SeedSequence([base, p, stream])``.
Graph draws use ``base = EnsembleConfig.master_seed`` and stream 0; parameter
initialization and dropout use ``base = GcnnConfig.seed`` and stream 1.  The
single-model baseline in the harness is therefore identical to member 0 of a
one-member ensemble with ``edge_drop_p = 0``.
"""

from __future__ import annotations

import json
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass

import numpy as np

from .errors import InvalidInputError, PopGcnError, ReportIOError, ShapeMismatchError
from .gcnn import predict_proba, train
from .graph_core import WeightedGraph

GRAPH_STREAM = 0
PARAM_STREAM = 1
MANIFEST_VERSION = 1

#: Edge-drop presets: a light setting for reliable graphs and a heavier one.
EDGE_DROP_PRESETS = {"light": 0.25, "heavy": 0.35}


@dataclass(frozen=True)
class EnsembleConfig:
    ensemble_size: int = 20
    edge_drop_p: float = 0.3
    master_seed: int = 0
    consensus: str = "mean"

    def __post_init__(self):
        if self.ensemble_size < 1:
            raise InvalidInputError("ensemble_size must be at least 1")
        if not 0 <= self.edge_drop_p <= 1:
            raise InvalidInputError("edge_drop_p must lie in [0, 1]")
        if self.consensus not in ("mean", "max"):
            raise InvalidInputError(f"consensus must be 'mean' or 'max', got {self.consensus!r}")
        if self.master_seed < 0:
            raise InvalidInputError("master_seed must be non-negative")

    @classmethod
    def preset(cls, name, **kw):
        return cls(edge_drop_p=EDGE_DROP_PRESETS[name], **kw)

    def to_dict(self):
        return asdict(self)


@dataclass(eq=False)
class PredictionSet:
    member_probabilities: list
    fused_probabilities: np.ndarray
    predicted_labels: np.ndarray


class MemberError(PopGcnError):
    """A member failed to train; ``member`` holds its index."""

    def __init__(self, member, cause):
        super().__init__(f"ensemble member {member}: {cause}")
        self.member = member
        self.category = getattr(cause, "category", "error")


def derive_seed(base, index, stream=GRAPH_STREAM):
    if base < 0 or index < 0:
        raise InvalidInputError("seeds and member indices must be non-negative")
    state = np.random.SeedSequence([int(base), int(index), int(stream)]).generate_state(1, np.uint64)
    return int(state[0])


def member_param_seed(gcnn_seed, index):
    return derive_seed(gcnn_seed, index, PARAM_STREAM)


def edge_dropout(g, p, seed):
    """Keep each undirected edge independently with probability ``1 - p``."""
    p = float(p)
    if not 0 <= p <= 1:
        raise InvalidInputError(f"drop probability must lie in [0, 1], got {p}")
    keep = np.random.default_rng(seed).random(g.num_edges) >= p
    return WeightedGraph(g.num_nodes, g.rows[keep], g.cols[keep], g.weights[keep])


def build_ensemble(g, cfg):
    return [
        edge_dropout(g, cfg.edge_drop_p, derive_seed(cfg.master_seed, p, GRAPH_STREAM))
        for p in range(cfg.ensemble_size)
    ]


def _train_member(args):
    index, graph, x, mask, gcnn_cfg = args
    try:
        params, _ = train(graph, x, mask, gcnn_cfg)
    except PopGcnError as exc:
        raise MemberError(index, exc) from exc
    return params


def _member_jobs(graphs, x, mask, gcnn_cfg):
    return [
        (p, graph, x, mask, gcnn_cfg.replace(seed=member_param_seed(gcnn_cfg.seed, p)))
        for p, graph in enumerate(graphs)
    ]


def train_ensemble(g, x, mask, gcnn_cfg, ens_cfg, workers=1, graphs=None):
    """Train one G-CNN per member graph; returns parameters in member order.

    ``workers > 1`` trains members in a process pool.  Results do not depend on
    the worker count.
    """
    if graphs is None:
        graphs = build_ensemble(g, ens_cfg)
    jobs = _member_jobs(graphs, x, mask, gcnn_cfg)
    if workers > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            return list(pool.map(_train_member, jobs))
    return [_train_member(job) for job in jobs]


def consensus(members, rule="mean"):
    """Fuse member probability matrices.

    ``mean`` averages entrywise; ``max`` takes the entrywise maximum and
    renormalizes rows.  Labels are row-wise argmax, lower class on ties.  Both
    rules are exactly invariant to member order.
    """
    members = [np.asarray(m, dtype=np.float64) for m in members]
    if not members:
        raise InvalidInputError("consensus needs at least one member")
    shape = members[0].shape
    if len(shape) != 2 or any(m.shape != shape for m in members):
        raise ShapeMismatchError("member probability matrices must share one N x C shape")
    stack = np.stack(members)
    if rule == "mean":
        # summing in sorted order makes the result independent of member order
        fused = np.sort(stack, axis=0).sum(axis=0) / len(members)
    elif rule == "max":
        raw = stack.max(axis=0)
        fused = raw / raw.sum(axis=1, keepdims=True)
    else:
        raise InvalidInputError(f"unknown consensus rule {rule!r}")
    return PredictionSet(members, fused, np.argmax(fused, axis=1))


def ensemble_predict(params_list, graphs, x, gcnn_cfg, rule="mean"):
    """Each member predicts on its own graph; outputs are fused by ``rule``."""
    if len(params_list) != len(graphs):
        raise ShapeMismatchError("one graph per trained member is required")
    probs = [predict_proba(params, graph, x, gcnn_cfg) for params, graph in zip(params_list, graphs)]
    return consensus(probs, rule)


def run_ensemble(g, x, mask, gcnn_cfg, ens_cfg, workers=1):
    """Build, train and fuse in one call; returns ``(PredictionSet, params, graphs)``."""
    graphs = build_ensemble(g, ens_cfg)
    params = train_ensemble(g, x, mask, gcnn_cfg, ens_cfg, workers=workers, graphs=graphs)
    return ensemble_predict(params, graphs, x, gcnn_cfg, ens_cfg.consensus), params, graphs


def write_ensemble_manifest(path, ens_cfg, gcnn_cfg, checkpoint_paths):
    doc = {
        "manifest_version": MANIFEST_VERSION,
        "master_seed": ens_cfg.master_seed,
        "ensemble_size": ens_cfg.ensemble_size,
        "edge_drop_p": ens_cfg.edge_drop_p,
        "consensus": ens_cfg.consensus,
        "members": [
            {
                "index": p,
                "graph_seed": derive_seed(ens_cfg.master_seed, p, GRAPH_STREAM),
                "param_seed": member_param_seed(gcnn_cfg.seed, p),
                "checkpoint": str(ckpt),
            }
            for p, ckpt in enumerate(checkpoint_paths)
        ],
    }
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
    except OSError as exc:
        raise ReportIOError(f"cannot write manifest {path}: {exc}", path=path) from exc
    return doc


def read_ensemble_manifest(path):
    try:
        with open(path, encoding="utf-8") as fh:
            return json.load(fh)
    except OSError as exc:
        raise ReportIOError(f"cannot read manifest {path}: {exc}", path=path) from exc
