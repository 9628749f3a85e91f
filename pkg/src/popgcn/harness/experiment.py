"""Cross-validated experiments over graph variants and model kinds.

A fold runs: standardize on training rows, RFE on training rows, build the
graph variant on the reduced features, train a single G-CNN or an edge-dropout
ensemble on the training mask, score the held-out rows.
"""

from __future__ import annotations

import time
from dataclasses import asdict, dataclass, field

import numpy as np

from ..ensemble import EnsembleConfig, build_ensemble, consensus, derive_seed, edge_dropout, member_param_seed, train_ensemble
from ..errors import InvalidInputError, PopGcnError
from ..features import RfeConfig, rfe_select, standardize
from ..gcnn import GcnnConfig, TrainMask, accuracy, predict_proba, train
from ..graph_core import as_array
from ..population_graph import SimilarityConfig, build_population_graph, naive_graph
from .cv import stratified_kfold

GRAPH_KINDS = ("population", "naive", "noisy")
MODEL_KINDS = ("single", "ensemble")
REPORT_SCHEMA_VERSION = 1


class FoldError(PopGcnError):
    """Failure inside one cross-validation fold; keeps the cause's category."""

    def __init__(self, fold, cause):
        super().__init__(f"fold {fold}: {cause}")
        self.fold = fold
        self.category = getattr(cause, "category", "error")


@dataclass(frozen=True)
class ExperimentConfig:
    gcnn: GcnnConfig = field(default_factory=GcnnConfig)
    ensemble: EnsembleConfig = field(default_factory=EnsembleConfig)
    similarity: SimilarityConfig = field(default_factory=SimilarityConfig)
    k_folds: int = 10
    split_seed: int = 0
    noisy_drop: float = 0.3
    noisy_seed: int = 0
    rfe_target: int | None = None
    rfe_eliminate_fraction: float = 0.1
    rfe_regularization: float = 1e-2
    rfe_max_rounds: int = 200
    workers: int = 1

    def to_dict(self):
        d = asdict(self)
        d["gcnn"] = self.gcnn.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        d = dict(d)
        d["gcnn"] = GcnnConfig(**d["gcnn"])
        d["ensemble"] = EnsembleConfig(**d["ensemble"])
        d["similarity"] = SimilarityConfig(**d["similarity"])
        return cls(**d)

    def replace(self, **changes):
        d = {f: getattr(self, f) for f in self.__dataclass_fields__}
        d.update(changes)
        return ExperimentConfig(**d)


@dataclass(eq=False)
class RunReport:
    graph_kind: str
    model_kind: str
    config: dict
    fold_accuracies: list
    mean_accuracy: float
    member_accuracies: list
    consensus_accuracies: list
    wall_clock: float
    seeds: dict
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def deterministic_dict(self):
        """Everything except the wall-clock time."""
        d = self.to_dict()
        d.pop("wall_clock")
        return d


@dataclass(eq=False)
class FoldData:
    index: int
    train_mask: np.ndarray
    test_mask: np.ndarray
    selected: np.ndarray
    features: np.ndarray
    population: object


def rfe_target_for(dim, cfg):
    if cfg.rfe_target is not None:
        return min(cfg.rfe_target, dim)
    return max(1, min(2000, dim // 2))


def prepare_fold(x, labels, phenotypes, train_mask, test_mask, cfg, index=0):
    """Fold-local standardization, RFE and population graph.

    Only rows in ``train_mask`` influence the statistics and selection.
    """
    train_labels = np.where(train_mask, labels, -1)
    xs, _ = standardize(x, train_mask)
    target = rfe_target_for(xs.shape[1], cfg)
    rfe_cfg = RfeConfig(target, cfg.rfe_eliminate_fraction, "l2_linear", cfg.rfe_regularization, cfg.rfe_max_rounds)
    selected, xr = rfe_select(xs, train_labels, rfe_cfg)
    pop = build_population_graph(xr, phenotypes, cfg.similarity)
    return FoldData(index, train_mask, test_mask, selected, xr, pop)


def prepare_folds(features, labels, phenotypes, cfg, split=None):
    x = as_array(features)
    labels = np.asarray(labels, dtype=np.int64)
    if x.shape[0] != labels.size or labels.size != len(phenotypes):
        raise InvalidInputError("features, labels and phenotypes must describe the same subjects")
    if split is None:
        split = stratified_kfold(labels, cfg.k_folds, cfg.split_seed)
    return [
        prepare_fold(x, labels, phenotypes, split.train_mask(f), split.test_mask(f), cfg, f)
        for f in range(split.k)
    ], split


def fold_graph(fold, graph_kind, cfg):
    if graph_kind == "population":
        return fold.population
    if graph_kind == "naive":
        return naive_graph(fold.population.num_nodes)
    if graph_kind == "noisy":
        return edge_dropout(fold.population, cfg.noisy_drop, derive_seed(cfg.noisy_seed, fold.index))
    raise InvalidInputError(f"unknown graph kind {graph_kind!r}")


def single_config(cfg):
    """Config of the single-model baseline: identical to ensemble member 0."""
    return cfg.gcnn.replace(seed=member_param_seed(cfg.gcnn.seed, 0))


def _run_fold(fold, labels, graph_kind, model_kind, cfg):
    graph = fold_graph(fold, graph_kind, cfg)
    mask = TrainMask(fold.train_mask, np.where(fold.train_mask, labels, 0))
    if model_kind == "single":
        gcfg = single_config(cfg)
        params, _ = train(graph, fold.features, mask, gcfg)
        probs = predict_proba(params, graph, fold.features, gcfg)
        acc = accuracy(probs, labels, fold.test_mask)
        return acc, [acc]
    if model_kind == "ensemble":
        probs = ensemble_member_probabilities(graph, fold.features, mask, cfg.gcnn, cfg.ensemble, cfg.workers)
        members = [accuracy(p, labels, fold.test_mask) for p in probs]
        fused = consensus(probs, cfg.ensemble.consensus)
        acc = float(np.mean(fused.predicted_labels[fold.test_mask] == labels[fold.test_mask]))
        return acc, members
    raise InvalidInputError(f"unknown model kind {model_kind!r}")


def ensemble_member_probabilities(graph, x, mask, gcnn_cfg, ens_cfg, workers=1):
    """Train every member on its dropped-out graph and return eval probabilities."""
    graphs = build_ensemble(graph, ens_cfg)
    params = train_ensemble(graph, x, mask, gcnn_cfg, ens_cfg, workers=workers, graphs=graphs)
    return [predict_proba(p, g, x, gcnn_cfg) for p, g in zip(params, graphs)]


def run_experiment(graph_kind, model_kind, features, labels, phenotypes, cfg, folds=None, split=None):
    """One cell of the graph-kind x model-kind matrix, cross-validated."""
    if graph_kind not in GRAPH_KINDS:
        raise InvalidInputError(f"graph_kind must be one of {GRAPH_KINDS}")
    if model_kind not in MODEL_KINDS:
        raise InvalidInputError(f"model_kind must be one of {MODEL_KINDS}")
    start = time.perf_counter()
    labels = np.asarray(labels, dtype=np.int64)
    if folds is None:
        folds, split = prepare_folds(features, labels, phenotypes, cfg, split)
    fold_accs, member_accs = [], []
    for fold in folds:
        try:
            acc, members = _run_fold(fold, labels, graph_kind, model_kind, cfg)
        except PopGcnError as exc:
            raise FoldError(fold.index, exc) from exc
        fold_accs.append(float(acc))
        member_accs.append([float(a) for a in members])
    return RunReport(
        graph_kind=graph_kind,
        model_kind=model_kind,
        config=cfg.to_dict(),
        fold_accuracies=fold_accs,
        mean_accuracy=float(np.mean(fold_accs)),
        member_accuracies=member_accs,
        consensus_accuracies=list(fold_accs) if model_kind == "ensemble" else [],
        wall_clock=time.perf_counter() - start,
        seeds={
            "split_seed": cfg.split_seed,
            "gcnn_seed": cfg.gcnn.seed,
            "master_seed": cfg.ensemble.master_seed,
            "noisy_seed": cfg.noisy_seed,
        },
    )


def run_table(features, labels, phenotypes, cfg, graph_kinds=GRAPH_KINDS, model_kinds=MODEL_KINDS):
    """Every (graph kind, model kind) cell on one shared set of folds."""
    folds, split = prepare_folds(features, labels, phenotypes, cfg)
    return [
        run_experiment(gk, mk, features, labels, phenotypes, cfg, folds=folds, split=split)
        for gk in graph_kinds
        for mk in model_kinds
    ]


@dataclass(eq=False)
class SweepReport:
    ensemble_sizes: list
    edge_drop_ps: list
    accuracy: list
    baseline_accuracy: float
    fold: int
    config: dict
    wall_clock: float
    schema_version: int = REPORT_SCHEMA_VERSION

    def to_dict(self):
        return asdict(self)

    @classmethod
    def from_dict(cls, d):
        return cls(**d)

    def cells(self):
        for i, size in enumerate(self.ensemble_sizes):
            for j, p in enumerate(self.edge_drop_ps):
                yield size, p, self.accuracy[i][j]


def sweep(ensemble_sizes, edge_drop_ps, features, labels, phenotypes, cfg, fold=0, fold_data=None):
    """Ensemble size x edge-drop grid on one fixed train/test split.

    ``accuracy[i][j]`` belongs to ``ensemble_sizes[i]`` and ``edge_drop_ps[j]``.
    Member seeds do not depend on the ensemble size, so smaller ensembles
    are prefixes of the largest one and are scored without retraining.
    """
    ensemble_sizes = [int(s) for s in ensemble_sizes]
    edge_drop_ps = [float(p) for p in edge_drop_ps]
    if not ensemble_sizes or not edge_drop_ps:
        raise InvalidInputError("sweep grids must be non-empty")
    start = time.perf_counter()
    labels = np.asarray(labels, dtype=np.int64)
    if fold_data is None:
        split = stratified_kfold(labels, cfg.k_folds, cfg.split_seed)
        x = as_array(features)
        fold_data = prepare_fold(x, labels, phenotypes, split.train_mask(fold), split.test_mask(fold), cfg, fold)
    mask = TrainMask(fold_data.train_mask, np.where(fold_data.train_mask, labels, 0))
    test = fold_data.test_mask
    largest = max(ensemble_sizes)

    gcfg = single_config(cfg)
    params, _ = train(fold_data.population, fold_data.features, mask, gcfg)
    base = accuracy(predict_proba(params, fold_data.population, fold_data.features, gcfg), labels, test)

    grid = [[None] * len(edge_drop_ps) for _ in ensemble_sizes]
    for j, p in enumerate(edge_drop_ps):
        ens = EnsembleConfig(largest, p, cfg.ensemble.master_seed, cfg.ensemble.consensus)
        probs = ensemble_member_probabilities(fold_data.population, fold_data.features, mask, cfg.gcnn, ens, cfg.workers)
        for i, size in enumerate(ensemble_sizes):
            fused = consensus(probs[:size], ens.consensus)
            grid[i][j] = float(np.mean(fused.predicted_labels[test] == labels[test]))
    return SweepReport(ensemble_sizes, edge_drop_ps, grid, float(base), fold, cfg.to_dict(),
                       time.perf_counter() - start)
