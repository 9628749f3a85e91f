"""Stratified k-fold splits."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from ..errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class FoldSplit:
    """``folds[i]`` is the fold of subject ``i``; -1 marks unlabeled subjects."""

    folds: np.ndarray
    k: int

    def test_mask(self, fold):
        return self.folds == fold

    def train_mask(self, fold):
        return (self.folds >= 0) & (self.folds != fold)

    def fold_sizes(self):
        return np.bincount(self.folds[self.folds >= 0], minlength=self.k)


def stratified_kfold(labels, k=10, seed=0):
    """Shuffle each class, then deal the concatenated classes round-robin.

    Per-fold class counts differ from proportional by less than one and fold
    sizes differ by at most one.  Negative labels are left out (fold -1).
    """
    labels = np.asarray(labels, dtype=np.int64)
    k = int(k)
    if k < 2:
        raise InvalidInputError("k must be at least 2")
    labeled = np.flatnonzero(labels >= 0)
    classes, counts = np.unique(labels[labeled], return_counts=True)
    if classes.size == 0:
        raise InvalidInputError("no labeled subjects to split")
    if counts.min() < k:
        small = int(classes[np.argmin(counts)])
        raise InvalidInputError(f"class {small} has {counts.min()} members, fewer than k={k}")
    rng = np.random.default_rng(seed)
    order = np.concatenate([rng.permutation(labeled[labels[labeled] == c]) for c in classes])
    folds = np.full(labels.shape, -1, dtype=np.int64)
    folds[order] = np.arange(order.size) % k
    return FoldSplit(folds, k)
