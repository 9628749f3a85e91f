"""Bootstrapped ensembles of Chebyshev graph CNNs over population graphs."""

from .ensemble import EnsembleConfig, PredictionSet, build_ensemble, consensus, edge_dropout, run_ensemble, train_ensemble
from .errors import (
    ConvergenceError,
    FormatError,
    InvalidInputError,
    NonFiniteError,
    PopGcnError,
    ReportIOError,
    ShapeMismatchError,
)
from .features import RfeConfig, RoiTimeSeries, connectivity_matrix, connectivity_vector, rfe_select, standardize
from .gcnn import GcnnConfig, GcnnParams, TrainMask, forward, predict_proba, train
from .graph_core import FeatureMatrix, ScaledLaplacian, WeightedGraph, graph_operator, normalized_laplacian
from .population_graph import PhenotypeRecord, SimilarityConfig, build_population_graph, naive_graph, noisy_graph

__version__ = "0.1.0"
