"""Population graphs built from phenotype metadata and connectivity features.

Each subject is a node.  Two subjects are joined with weight

    score(sex, site) * max(<x_a, x_b>, 0)

where the phenotype score multiplies ``lambda1`` for a matching sex and
``lambda2`` for a matching acquisition site.
"""

from __future__ import annotations

import csv
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .errors import FormatError, InvalidInputError, ReportIOError, ShapeMismatchError
from .graph_core import WeightedGraph, as_array

SEXES = ("M", "F")
UNLABELED = None


@dataclass(frozen=True)
class PhenotypeRecord:
    subject_id: str
    sex: str
    site: str
    label: Optional[int] = None

    def __post_init__(self):
        if self.sex not in SEXES:
            raise InvalidInputError(f"sex must be one of {SEXES}, got {self.sex!r}")
        if self.label is not None and self.label not in (0, 1):
            raise InvalidInputError(f"label must be 0, 1 or unknown, got {self.label!r}")


@dataclass(frozen=True)
class SimilarityConfig:
    lambda1: float = 2.0
    lambda2: float = 2.0
    edge_threshold: float = 0.0
    combine_rule: str = "multiply"

    def __post_init__(self):
        if not self.lambda1 > 1 or not self.lambda2 > 1:
            raise InvalidInputError("lambda1 and lambda2 must both exceed 1")
        if not self.edge_threshold >= 0:
            raise InvalidInputError("edge_threshold must be non-negative")
        if self.combine_rule != "multiply":
            raise InvalidInputError(f"unknown combine_rule {self.combine_rule!r}")


def sex_site_score(a, b, cfg):
    s_sex = cfg.lambda1 if a.sex == b.sex else 1.0
    s_site = cfg.lambda2 if a.site == b.site else 1.0
    return float(s_sex * s_site)


def linear_kernel(x, y):
    x = np.asarray(x, dtype=np.float64)
    y = np.asarray(y, dtype=np.float64)
    if x.shape != y.shape:
        raise ShapeMismatchError(f"feature vectors differ in shape: {x.shape} vs {y.shape}")
    return float(np.dot(x, y))


def phenotype_score_matrix(phenotypes, cfg):
    """Dense ``N x N`` matrix of :func:`sex_site_score` values."""
    sex = np.array([p.sex for p in phenotypes])
    site = np.array([p.site for p in phenotypes])
    same_sex = sex[:, None] == sex[None, :]
    same_site = site[:, None] == site[None, :]
    return np.where(same_sex, cfg.lambda1, 1.0) * np.where(same_site, cfg.lambda2, 1.0)


def build_population_graph(features, phenotypes, cfg=SimilarityConfig()):
    x = as_array(features)
    phenotypes = list(phenotypes)
    if x.ndim != 2 or x.shape[0] != len(phenotypes):
        raise ShapeMismatchError(
            f"{x.shape[0] if x.ndim else 0} feature rows but {len(phenotypes)} phenotype records"
        )
    n = x.shape[0]
    kernel = np.maximum(x @ x.T, 0.0)
    w = phenotype_score_matrix(phenotypes, cfg) * kernel
    i, j = np.triu_indices(n, k=1)
    wij = w[i, j]
    keep = wij > cfg.edge_threshold
    return WeightedGraph(n, i[keep], j[keep], wij[keep])


def naive_graph(n):
    """Edgeless graph: every node only sees its own features."""
    n = int(n)
    if n < 1:
        raise InvalidInputError("naive graph needs at least one node")
    return WeightedGraph.empty(n)


def noisy_graph(g, drop_fraction, seed):
    """``g`` with a random ``drop_fraction`` of its edges removed."""
    from .ensemble import edge_dropout

    return edge_dropout(g, drop_fraction, seed)


PHENOTYPE_HEADER = ("subject_id", "sex", "site", "label")


def write_phenotypes_csv(records, path):
    try:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(PHENOTYPE_HEADER)
            for r in records:
                w.writerow((r.subject_id, r.sex, r.site, "?" if r.label is None else r.label))
    except OSError as exc:
        raise ReportIOError(f"cannot write phenotypes to {path}: {exc}", path=path) from exc


def read_phenotypes_csv(path):
    records = []
    seen = set()
    try:
        with open(path, newline="", encoding="utf-8") as fh:
            reader = csv.DictReader(fh)
            if tuple(reader.fieldnames or ()) != PHENOTYPE_HEADER:
                raise FormatError(f"{path}: expected header {','.join(PHENOTYPE_HEADER)}")
            for lineno, row in enumerate(reader, start=2):
                sid = row["subject_id"]
                if sid in seen:
                    raise FormatError(f"{path}:{lineno}: duplicate subject_id {sid!r}")
                seen.add(sid)
                raw = row["label"].strip()
                if raw == "?":
                    label = None
                elif raw in ("0", "1"):
                    label = int(raw)
                else:
                    raise FormatError(f"{path}:{lineno}: label must be 0, 1 or ?")
                try:
                    records.append(PhenotypeRecord(sid, row["sex"], row["site"], label))
                except InvalidInputError as exc:
                    raise FormatError(f"{path}:{lineno}: {exc}") from exc
    except OSError as exc:
        raise ReportIOError(f"cannot read phenotypes from {path}: {exc}", path=path) from exc
    return records
