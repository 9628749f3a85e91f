"""
Edge-dropout ensembles
======================

Each member sees the population graph with a random 30% of its edges
removed and starts from its own initialization.  The members' class
probabilities are averaged.  Member 0's seed on the full graph gives the
matched single model.
"""

import numpy as np

from popgcn.ensemble import EnsembleConfig, build_ensemble, run_ensemble
from popgcn.features import connectivity_matrix
from popgcn.gcnn import GcnnConfig, TrainMask, accuracy, predict_proba, train
from popgcn.harness.cv import stratified_kfold
from popgcn.harness.experiment import ExperimentConfig, prepare_fold, single_config
from popgcn.harness.synthetic import SyntheticSpec, generate_synthetic_cohort

series, phenotypes = generate_synthetic_cohort(SyntheticSpec(num_subjects=120, num_sites=4, seed=2))
features = connectivity_matrix(series)
labels = np.array([p.label for p in phenotypes])
split = stratified_kfold(labels, k=5, seed=0)
tr, te = split.train_mask(0), split.test_mask(0)

cfg = ExperimentConfig(gcnn=GcnnConfig(epochs=100, seed=2), ensemble=EnsembleConfig(8, 0.3, master_seed=2))
fold = prepare_fold(features.values, labels, phenotypes, tr, te, cfg)
mask = TrainMask(tr, np.where(tr, labels, 0))

# the member graphs are subgraphs with roughly 70% of the edges
graphs = build_ensemble(fold.population, cfg.ensemble)
print("edges kept:", [g.num_edges for g in graphs], "of", fold.population.num_edges)

pred, params, _ = run_ensemble(fold.population, fold.features, mask, cfg.gcnn, cfg.ensemble)
ens_acc = np.mean(pred.predicted_labels[te] == labels[te])

scfg = single_config(cfg)
single, _ = train(fold.population, fold.features, mask, scfg)
single_acc = accuracy(predict_proba(single, fold.population, fold.features, scfg), labels, te)
print(f"single {single_acc:.3f}   ensemble of {len(params)} {ens_acc:.3f}")

# P = 1 and p = 0 collapses to the single model
degenerate, _, _ = run_ensemble(fold.population, fold.features, mask, cfg.gcnn, EnsembleConfig(1, 0.0, 2))
same = np.array_equal(degenerate.predicted_labels,
                      predict_proba(single, fold.population, fold.features, scfg).argmax(axis=1))
print("degenerate ensemble matches the single model:", same)
