"""Connectivity features from ROI time series, standardization and RFE."""

from __future__ import annotations

import csv
import math
import os
from dataclasses import dataclass

import numpy as np
from scipy.optimize import minimize
from scipy.special import logsumexp

from .errors import ConvergenceError, FormatError, InvalidInputError, ReportIOError, ShapeMismatchError
from .graph_core import FeatureMatrix, as_array

FISHER_EPS = 1e-7


@dataclass(frozen=True, eq=False)
class RoiTimeSeries:
    subject_id: str
    series: np.ndarray

    def __post_init__(self):
        s = np.asarray(self.series, dtype=np.float64)
        if s.ndim != 2 or s.shape[0] < 2 or s.shape[1] < 3:
            raise InvalidInputError(f"{self.subject_id}: need at least 2 ROIs and 3 time points, got {s.shape}")
        if not np.all(np.isfinite(s)):
            raise InvalidInputError(f"{self.subject_id}: time series contains non-finite values")
        object.__setattr__(self, "series", s)


@dataclass(frozen=True)
class RfeConfig:
    target_dim: int
    eliminate_fraction: float = 0.1
    ranking_model: str = "l2_linear"
    regularization: float = 1e-2
    max_rounds: int = 200

    def __post_init__(self):
        if self.target_dim < 1:
            raise InvalidInputError("target_dim must be at least 1")
        if not 0 < self.eliminate_fraction < 1:
            raise InvalidInputError("eliminate_fraction must lie in (0, 1)")
        if self.ranking_model != "l2_linear":
            raise InvalidInputError(f"unknown ranking_model {self.ranking_model!r}")
        if self.regularization < 0:
            raise InvalidInputError("regularization must be non-negative")
        if self.max_rounds < 1:
            raise InvalidInputError("max_rounds must be at least 1")


def num_connectivity_features(num_rois):
    return num_rois * (num_rois - 1) // 2


def connectivity_vector(ts):
    """Fisher-z Pearson correlations over the strict upper triangle (row-major)."""
    s = ts.series if isinstance(ts, RoiTimeSeries) else RoiTimeSeries("?", ts).series
    centered = s - s.mean(axis=1, keepdims=True)
    ss = np.einsum("ij,ij->i", centered, centered)
    bad = np.flatnonzero(ss == 0)
    if bad.size:
        name = ts.subject_id if isinstance(ts, RoiTimeSeries) else "series"
        raise InvalidInputError(f"{name}: ROI {int(bad[0])} has zero variance")
    normed = centered / np.sqrt(ss)[:, None]
    corr = normed @ normed.T
    iu = np.triu_indices(s.shape[0], k=1)
    r = np.clip(corr[iu], -1.0 + FISHER_EPS, 1.0 - FISHER_EPS)
    return np.arctanh(r)


def connectivity_matrix(series_list):
    """Stack :func:`connectivity_vector` over subjects into a FeatureMatrix."""
    series_list = list(series_list)
    rows = np.vstack([connectivity_vector(ts) for ts in series_list])
    ids = tuple(ts.subject_id for ts in series_list)
    return FeatureMatrix(rows, row_ids=ids)


@dataclass(frozen=True, eq=False)
class Standardizer:
    mean: np.ndarray
    scale: np.ndarray

    def apply(self, x):
        if isinstance(x, FeatureMatrix):
            return FeatureMatrix((x.values - self.mean) / self.scale, x.columns, x.row_ids)
        return (as_array(x) - self.mean) / self.scale


def standardize(x, fit_mask=None):
    """Zero-mean, unit-variance columns using statistics of ``fit_mask`` rows.

    Constant columns get scale 1.  Returns ``(transformed, Standardizer)``; the
    standardizer can be reused on other data.
    """
    v = as_array(x)
    fit = v if fit_mask is None else v[np.asarray(fit_mask, dtype=bool)]
    if fit.shape[0] == 0:
        raise InvalidInputError("no rows to fit standardization on")
    mean = fit.mean(axis=0)
    scale = fit.std(axis=0)
    scale[scale == 0] = 1.0
    st = Standardizer(mean, scale)
    return st.apply(x), st


def _fit_l2_softmax(x, y, num_classes, reg, round_index):
    """Multinomial logistic regression, L2 on weights only, by L-BFGS.

    Returns the ``(num_classes, d)`` weight matrix.
    """
    n, d = x.shape
    onehot = np.zeros((n, num_classes))
    onehot[np.arange(n), y] = 1.0

    def objective(theta):
        w = theta[: num_classes * d].reshape(num_classes, d)
        b = theta[num_classes * d:]
        logits = x @ w.T + b
        lse = logsumexp(logits, axis=1)
        loss = np.mean(lse - np.sum(onehot * logits, axis=1)) + 0.5 * reg * np.sum(w * w)
        p = np.exp(logits - lse[:, None])
        g = (p - onehot) / n
        gw = g.T @ x + reg * w
        gb = g.sum(axis=0)
        return loss, np.concatenate([gw.ravel(), gb])

    theta0 = np.zeros(num_classes * (d + 1))
    res = minimize(objective, theta0, jac=True, method="L-BFGS-B",
                   options={"maxiter": 2000, "gtol": 1e-8})
    if not res.success and np.max(np.abs(res.jac)) > 1e-4:
        raise ConvergenceError(f"RFE round {round_index}: ranking model did not converge ({res.message})",
                               round_index=round_index)
    return res.x[: num_classes * d].reshape(num_classes, d)


def _labeled_rows(labels, n):
    labels = np.asarray(labels)
    if labels.shape != (n,):
        raise ShapeMismatchError(f"labels must have length {n}, got shape {labels.shape}")
    labels = labels.astype(np.int64)
    return labels >= 0, labels


def rfe_select(x, labels, cfg):
    """Recursive feature elimination with an L2-regularized linear ranker.

    ``labels`` has one entry per row of ``x``; negative entries mark rows that
    are ignored while fitting (unlabeled or held out).  Each round drops the
    ``ceil(eliminate_fraction * current)`` features with the smallest summed
    absolute coefficient, ties going against the higher index, never going
    below ``cfg.target_dim``.  If ``max_rounds`` runs out the last round cuts
    straight to the target.

    Returns ``(selected_indices, reduced)`` with indices sorted ascending.
    """
    v = as_array(x)
    n, dim = v.shape
    mask, y = _labeled_rows(labels, n)
    if cfg.target_dim > dim:
        raise InvalidInputError(f"target_dim {cfg.target_dim} exceeds input dimension {dim}")
    selected = np.arange(dim)
    if cfg.target_dim == dim:
        return selected, _reduce(x, selected)

    classes, y_fit = np.unique(y[mask], return_inverse=True)
    if classes.size < 2:
        raise InvalidInputError("RFE needs labeled rows from at least two classes")
    counts = np.bincount(y_fit)
    if counts.min() < 2:
        raise InvalidInputError("RFE needs at least two labeled rows per class")
    xf = v[mask]

    for round_index in range(cfg.max_rounds):
        current = selected.size
        if current == cfg.target_dim:
            break
        if round_index == cfg.max_rounds - 1:
            n_drop = current - cfg.target_dim
        else:
            n_drop = min(math.ceil(cfg.eliminate_fraction * current), current - cfg.target_dim)
        w = _fit_l2_softmax(xf[:, selected], y_fit, classes.size, cfg.regularization, round_index)
        score = np.abs(w).sum(axis=0)
        # ascending score, higher index first among ties
        order = np.lexsort((-selected, score))
        keep = np.sort(order[n_drop:])
        selected = selected[keep]
    return selected, _reduce(x, selected)


def _reduce(x, idx):
    if isinstance(x, FeatureMatrix):
        return x.select_columns(idx)
    return as_array(x)[:, idx]


def read_timeseries_manifest(path):
    """Load ``subject_id,path`` manifest; series paths resolve relative to it."""
    base = os.path.dirname(os.path.abspath(path))
    out = []
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != ("subject_id", "path"):
                raise FormatError(f"{path}: expected header subject_id,path")
            for row in reader:
                p = row["path"]
                full = p if os.path.isabs(p) else os.path.join(base, p)
                series = np.loadtxt(full, delimiter=",", ndmin=2)
                out.append(RoiTimeSeries(row["subject_id"], series))
    except OSError as exc:
        raise ReportIOError(f"cannot read time series: {exc}", path=path) from exc
    except ValueError as exc:
        if isinstance(exc, InvalidInputError):
            raise
        raise FormatError(f"{path}: malformed time series file ({exc})") from exc
    return out


def write_timeseries_manifest(series_list, directory, manifest_name="manifest.csv"):
    os.makedirs(directory, exist_ok=True)
    manifest = os.path.join(directory, manifest_name)
    try:
        with open(manifest, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("subject_id", "path"))
            for ts in series_list:
                name = f"{ts.subject_id}.csv"
                np.savetxt(os.path.join(directory, name), ts.series, delimiter=",", fmt="%.17g")
                w.writerow((ts.subject_id, name))
    except OSError as exc:
        raise ReportIOError(f"cannot write time series: {exc}", path=directory) from exc
    return manifest


def write_features_csv(fm, path):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(("subject_id",) + tuple(fm.columns))
            for sid, row in zip(fm.row_ids, fm.values):
                w.writerow((sid,) + tuple(repr(float(v)) for v in row))
    except OSError as exc:
        raise ReportIOError(f"cannot write features to {path}: {exc}", path=path) from exc


def read_features_csv(path):
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader, None)
            if not header or header[0] != "subject_id":
                raise FormatError(f"{path}: first column must be subject_id")
            ids, rows = [], []
            for lineno, row in enumerate(reader, start=2):
                if len(row) != len(header):
                    raise FormatError(f"{path}:{lineno}: expected {len(header)} fields")
                ids.append(row[0])
                rows.append([float(v) for v in row[1:]])
    except OSError as exc:
        raise ReportIOError(f"cannot read features from {path}: {exc}", path=path) from exc
    values = np.array(rows, dtype=np.float64).reshape(len(rows), len(header) - 1)
    return FeatureMatrix(values, tuple(header[1:]), tuple(ids))
