"""Command-line front end.

Subcommands mirror the library: ``gen``, ``features``, ``graph``, ``train``,
``ensemble``, ``experiment``, ``sweep`` and ``report``.  Flags are named after
the config fields they set.  Every command writes its resolved configuration
into its output and prints a one-line JSON summary on stdout.  Failures print
``{"error": <category>, "message": ...}`` on stderr and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from dataclasses import asdict

import numpy as np

from ..ensemble import EnsembleConfig, member_param_seed, run_ensemble, write_ensemble_manifest
from ..errors import InvalidInputError, PopGcnError, ReportIOError
from ..features import (
    RfeConfig,
    connectivity_matrix,
    read_features_csv,
    read_timeseries_manifest,
    rfe_select,
    standardize,
    write_features_csv,
    write_timeseries_manifest,
)
from ..gcnn import GcnnConfig, TrainMask, accuracy, predict_proba, save_checkpoint, train
from ..graph_core import FeatureMatrix, read_graph_csv, write_graph_csv
from ..population_graph import SimilarityConfig, build_population_graph, read_phenotypes_csv, write_phenotypes_csv
from .experiment import GRAPH_KINDS, MODEL_KINDS, ExperimentConfig, run_table, sweep
from .report import read_report, write_report
from .synthetic import SyntheticSpec, generate_synthetic_cohort

EXIT_CODES = {
    "error": 1,
    "invalid_input": 2,
    "shape_mismatch": 3,
    "format": 4,
    "non_finite": 5,
    "convergence": 6,
    "io": 7,
}


def _int_list(text):
    try:
        return [int(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from exc


def _float_list(text):
    try:
        return [float(v) for v in text.split(",") if v.strip()]
    except ValueError as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from exc


def _str_list(text):
    return [v.strip() for v in text.split(",") if v.strip()]


def _add_gcnn(p):
    d = GcnnConfig()
    p.add_argument("--layer-widths", type=_int_list, default=list(d.layer_widths))
    p.add_argument("--chebyshev-order", type=int, default=d.chebyshev_order)
    p.add_argument("--learning-rate", type=float, default=d.learning_rate)
    p.add_argument("--unit-dropout", type=float, default=d.unit_dropout)
    p.add_argument("--epochs", type=int, default=d.epochs)
    p.add_argument("--weight-decay", type=float, default=d.weight_decay)
    p.add_argument("--seed", type=int, default=d.seed)
    p.add_argument("--lambda-max", type=float, default=d.lambda_max)


def _add_ensemble(p):
    d = EnsembleConfig()
    p.add_argument("--ensemble-size", type=int, default=d.ensemble_size)
    p.add_argument("--edge-drop-p", type=float, default=d.edge_drop_p)
    p.add_argument("--master-seed", type=int, default=d.master_seed)
    p.add_argument("--consensus", choices=("mean", "max"), default=d.consensus)
    p.add_argument("--workers", type=int, default=1)


def _add_similarity(p):
    d = SimilarityConfig()
    p.add_argument("--lambda1", type=float, default=d.lambda1)
    p.add_argument("--lambda2", type=float, default=d.lambda2)
    p.add_argument("--edge-threshold", type=float, default=d.edge_threshold)


def _add_inputs(p):
    p.add_argument("--features", required=True, help="features CSV (subject_id,f0,...)")
    p.add_argument("--phenotypes", required=True, help="phenotype CSV (subject_id,sex,site,label)")


def _gcnn_cfg(a):
    return GcnnConfig(
        layer_widths=tuple(a.layer_widths),
        chebyshev_order=a.chebyshev_order,
        learning_rate=a.learning_rate,
        unit_dropout=a.unit_dropout,
        epochs=a.epochs,
        weight_decay=a.weight_decay,
        seed=a.seed,
        lambda_max=a.lambda_max,
    )


def _ensemble_cfg(a, size=None, p=None):
    return EnsembleConfig(
        a.ensemble_size if size is None else size,
        a.edge_drop_p if p is None else p,
        a.master_seed,
        a.consensus,
    )


def _similarity_cfg(a):
    return SimilarityConfig(a.lambda1, a.lambda2, a.edge_threshold)


def _aligned_inputs(a):
    """Features and phenotypes in feature-row order, plus labels (-1 = unknown)."""
    fm = read_features_csv(a.features)
    records = {r.subject_id: r for r in read_phenotypes_csv(a.phenotypes)}
    missing = [sid for sid in fm.row_ids if sid not in records]
    if missing:
        raise InvalidInputError(f"no phenotype record for subject(s) {missing[:5]}")
    phen = [records[sid] for sid in fm.row_ids]
    labels = np.array([-1 if r.label is None else r.label for r in phen], dtype=np.int64)
    return fm, phen, labels


def _write_json(path, doc):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            json.dump(doc, fh, indent=2)
            fh.write("\n")
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}", path=path) from exc


def _write_predictions(path, row_ids, probs, labels):
    try:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("subject_id," + ",".join(f"p{c}" for c in range(probs.shape[1])) + ",predicted\n")
            for sid, row, lab in zip(row_ids, probs, labels):
                fh.write(sid + "," + ",".join(repr(float(v)) for v in row) + f",{int(lab)}\n")
    except OSError as exc:
        raise ReportIOError(f"cannot write {path}: {exc}", path=path) from exc


def cmd_gen(a):
    spec = SyntheticSpec(
        num_subjects=a.num_subjects,
        num_sites=a.num_sites,
        num_rois=a.num_rois,
        time_len=a.time_len,
        class_effect=a.class_effect,
        site_effect=a.site_effect,
        sex_effect=a.sex_effect,
        noise_sd=a.noise_sd,
        class_balance=a.class_balance,
        seed=a.seed,
        site_confound=a.site_confound,
    )
    series, records = generate_synthetic_cohort(spec)
    os.makedirs(a.out, exist_ok=True)
    manifest = write_timeseries_manifest(series, os.path.join(a.out, "timeseries"))
    write_phenotypes_csv(records, os.path.join(a.out, "phenotypes.csv"))
    _write_json(os.path.join(a.out, "cohort.json"), {"synthetic_spec": spec.to_dict(), "manifest": manifest})
    return {"command": "gen", "config": spec.to_dict(), "subjects": len(series), "manifest": manifest}


def cmd_features(a):
    series = read_timeseries_manifest(a.manifest)
    fm = connectivity_matrix(series)
    config = {"rfe": None}
    if a.rfe_target is not None:
        if a.phenotypes is None:
            raise InvalidInputError("--rfe-target needs --phenotypes for the labels")
        records = {r.subject_id: r for r in read_phenotypes_csv(a.phenotypes)}
        labels = np.array([-1 if records[s].label is None else records[s].label for s in fm.row_ids])
        train_rows = labels >= 0
        xs, _ = standardize(fm.values, train_rows)
        rfe = RfeConfig(a.rfe_target, a.eliminate_fraction, "l2_linear", a.regularization, a.max_rounds)
        selected, xr = rfe_select(FeatureMatrix(xs, fm.columns, fm.row_ids), labels, rfe)
        fm = xr
        config["rfe"] = {"target_dim": rfe.target_dim, "eliminate_fraction": rfe.eliminate_fraction,
                         "regularization": rfe.regularization, "max_rounds": rfe.max_rounds}
    write_features_csv(fm, a.out)
    return {"command": "features", "config": config, "subjects": fm.shape[0], "dimension": fm.shape[1]}


def cmd_graph(a):
    fm, phen, _ = _aligned_inputs(a)
    cfg = _similarity_cfg(a)
    g = build_population_graph(fm, phen, cfg)
    write_graph_csv(g, a.out)
    return {"command": "graph", "config": {"similarity": asdict(cfg)}, "nodes": g.num_nodes, "edges": g.num_edges}


def _graph_for(a, fm, phen):
    if a.graph:
        return read_graph_csv(a.graph, num_nodes=fm.shape[0])
    return build_population_graph(fm, phen, _similarity_cfg(a))


def _train_mask(labels):
    known = labels >= 0
    return TrainMask(known, np.where(known, labels, 0))


def cmd_train(a):
    fm, phen, labels = _aligned_inputs(a)
    g = _graph_for(a, fm, phen)
    cfg = _gcnn_cfg(a)
    params, curve = train(g, fm, _train_mask(labels), cfg)
    probs = predict_proba(params, g, fm, cfg)
    save_checkpoint(params, cfg, a.out)
    if a.predictions:
        _write_predictions(a.predictions, fm.row_ids, probs, np.argmax(probs, axis=1))
    return {
        "command": "train",
        "config": {"gcnn": cfg.to_dict(), "similarity": asdict(_similarity_cfg(a)), "graph": a.graph},
        "final_loss": float(curve.loss[-1]),
        "train_accuracy": accuracy(probs, labels),
    }


def cmd_ensemble(a):
    fm, phen, labels = _aligned_inputs(a)
    g = _graph_for(a, fm, phen)
    gcfg = _gcnn_cfg(a)
    ecfg = _ensemble_cfg(a)
    pred, params, _ = run_ensemble(g, fm, _train_mask(labels), gcfg, ecfg, workers=a.workers)
    os.makedirs(a.out, exist_ok=True)
    paths = []
    for p, member in enumerate(params):
        path = os.path.join(a.out, f"member{p:03d}.json")
        save_checkpoint(member, gcfg.replace(seed=member_param_seed(gcfg.seed, p)), path)
        paths.append(path)
    write_ensemble_manifest(os.path.join(a.out, "manifest.json"), ecfg, gcfg, paths)
    _write_predictions(os.path.join(a.out, "predictions.csv"), fm.row_ids, pred.fused_probabilities,
                       pred.predicted_labels)
    known = labels >= 0
    return {
        "command": "ensemble",
        "config": {"gcnn": gcfg.to_dict(), "ensemble": ecfg.to_dict(), "similarity": asdict(_similarity_cfg(a))},
        "train_accuracy": float(np.mean(pred.predicted_labels[known] == labels[known])),
    }


def _experiment_cfg(a):
    return ExperimentConfig(
        gcnn=_gcnn_cfg(a),
        ensemble=_ensemble_cfg(a),
        similarity=_similarity_cfg(a),
        k_folds=a.k_folds,
        split_seed=a.split_seed,
        noisy_drop=a.noisy_drop,
        noisy_seed=a.noisy_seed,
        rfe_target=a.rfe_target,
        rfe_eliminate_fraction=a.eliminate_fraction,
        rfe_regularization=a.regularization,
        rfe_max_rounds=a.max_rounds,
        workers=a.workers,
    )


def _labeled_only(fm, phen, labels):
    keep = labels >= 0
    fm = FeatureMatrix(fm.values[keep], fm.columns, tuple(np.array(fm.row_ids, dtype=object)[keep]))
    return fm, [p for p, k in zip(phen, keep) if k], labels[keep]


def cmd_experiment(a):
    fm, phen, labels = _labeled_only(*_aligned_inputs(a))
    cfg = _experiment_cfg(a)
    for gk in a.graph_kinds:
        if gk not in GRAPH_KINDS:
            raise InvalidInputError(f"unknown graph kind {gk!r}")
    for mk in a.model_kinds:
        if mk not in MODEL_KINDS:
            raise InvalidInputError(f"unknown model kind {mk!r}")
    reports = run_table(fm, labels, phen, cfg, a.graph_kinds, a.model_kinds)
    write_report(reports, a.out, a.format)
    return {
        "command": "experiment",
        "config": cfg.to_dict(),
        "mean_accuracy": {f"{r.graph_kind}/{r.model_kind}": r.mean_accuracy for r in reports},
    }


def cmd_sweep(a):
    fm, phen, labels = _labeled_only(*_aligned_inputs(a))
    cfg = _experiment_cfg(a)
    rep = sweep(a.ensemble_sizes, a.edge_drop_ps, fm, labels, phen, cfg, fold=a.fold)
    write_report(rep, a.out, a.format)
    return {"command": "sweep", "config": cfg.to_dict(), "baseline_accuracy": rep.baseline_accuracy,
            "accuracy": rep.accuracy}


def cmd_report(a):
    rep = read_report(a.input)
    write_report(rep, a.out, a.format)
    return {"command": "report", "config": {"input": a.input, "format": a.format}, "out": a.out}


def build_parser():
    parser = argparse.ArgumentParser(prog="popgcn", description="Population-graph G-CNN ensembles.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("gen", help="synthetic cohort -> time-series manifest and phenotype CSV")
    d = SyntheticSpec()
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--num-subjects", type=int, default=d.num_subjects)
    p.add_argument("--num-sites", type=int, default=d.num_sites)
    p.add_argument("--num-rois", type=int, default=d.num_rois)
    p.add_argument("--time-len", type=int, default=d.time_len)
    p.add_argument("--class-effect", type=float, default=d.class_effect)
    p.add_argument("--site-effect", type=float, default=d.site_effect)
    p.add_argument("--sex-effect", type=float, default=d.sex_effect)
    p.add_argument("--noise-sd", type=float, default=d.noise_sd)
    p.add_argument("--class-balance", type=float, default=d.class_balance)
    p.add_argument("--site-confound", type=float, default=d.site_confound)
    p.add_argument("--seed", type=int, default=d.seed)
    p.set_defaults(func=cmd_gen)

    p = sub.add_parser("features", help="time series -> connectivity features (optionally RFE)")
    p.add_argument("--manifest", required=True)
    p.add_argument("--phenotypes")
    p.add_argument("--out", required=True)
    _add_rfe(p)
    p.set_defaults(func=cmd_features)

    p = sub.add_parser("graph", help="features + phenotypes -> population graph CSV")
    _add_inputs(p)
    _add_similarity(p)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_graph)

    p = sub.add_parser("train", help="train one G-CNN on the labeled subjects")
    _add_inputs(p)
    p.add_argument("--graph", help="graph CSV; built from features and phenotypes if omitted")
    _add_similarity(p)
    _add_gcnn(p)
    p.add_argument("--out", required=True, help="checkpoint JSON")
    p.add_argument("--predictions", help="optional predictions CSV")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("ensemble", help="train an edge-dropout ensemble")
    _add_inputs(p)
    p.add_argument("--graph")
    _add_similarity(p)
    _add_gcnn(p)
    _add_ensemble(p)
    p.add_argument("--out", required=True, help="output directory")
    p.set_defaults(func=cmd_ensemble)

    for name, helptext in (("experiment", "cross-validated graph x model matrix"),
                           ("sweep", "ensemble size x edge-drop grid on one split")):
        p = sub.add_parser(name, help=helptext)
        _add_inputs(p)
        _add_similarity(p)
        _add_gcnn(p)
        _add_ensemble(p)
        _add_rfe(p)
        p.add_argument("--k-folds", type=int, default=10)
        p.add_argument("--split-seed", type=int, default=0)
        p.add_argument("--noisy-drop", type=float, default=0.3)
        p.add_argument("--noisy-seed", type=int, default=0)
        p.add_argument("--out", required=True)
        p.add_argument("--format", choices=("json", "csv"), default="json")
        if name == "experiment":
            p.add_argument("--graph-kinds", type=_str_list, default=list(GRAPH_KINDS))
            p.add_argument("--model-kinds", type=_str_list, default=list(MODEL_KINDS))
            p.set_defaults(func=cmd_experiment)
        else:
            p.add_argument("--ensemble-sizes", type=_int_list, default=[5, 10, 20])
            p.add_argument("--edge-drop-ps", type=_float_list, default=[0.1, 0.2, 0.3])
            p.add_argument("--fold", type=int, default=0)
            p.set_defaults(func=cmd_sweep)

    p = sub.add_parser("report", help="convert a JSON report to JSON or CSV")
    p.add_argument("--input", required=True)
    p.add_argument("--out", required=True)
    p.add_argument("--format", choices=("json", "csv"), default="csv")
    p.set_defaults(func=cmd_report)
    return parser


def _add_rfe(p):
    p.add_argument("--rfe-target", type=int, default=None)
    p.add_argument("--eliminate-fraction", type=float, default=0.1)
    p.add_argument("--regularization", type=float, default=1e-2)
    p.add_argument("--max-rounds", type=int, default=200)


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        summary = args.func(args)
    except PopGcnError as exc:
        print(json.dumps({"error": exc.category, "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES.get(exc.category, 1)
    except (KeyError, ValueError) as exc:
        print(json.dumps({"error": "invalid_input", "message": str(exc)}), file=sys.stderr)
        return EXIT_CODES["invalid_input"]
    print(json.dumps(summary))
    return 0


if __name__ == "__main__":
    sys.exit(main())
