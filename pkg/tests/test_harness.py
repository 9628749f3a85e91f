import csv
import json

import numpy as np
import pytest

from popgcn.ensemble import EnsembleConfig
from popgcn.errors import FormatError, InvalidInputError, NonFiniteError
from popgcn.features import connectivity_matrix
from popgcn.gcnn import GcnnConfig, TrainMask, train
from popgcn.harness.cli import main
from popgcn.harness.cv import stratified_kfold
from popgcn.harness.experiment import (
    ExperimentConfig,
    FoldError,
    RunReport,
    prepare_fold,
    prepare_folds,
    rfe_target_for,
    run_experiment,
    run_table,
    single_config,
    sweep,
)
from popgcn.harness.report import read_report, write_report
from popgcn.harness.synthetic import SyntheticSpec, generate_synthetic_cohort, null_spec

FAST = GcnnConfig(layer_widths=(8, 8), epochs=30)


@pytest.fixture(scope="module")
def cohort():
    series, phen = generate_synthetic_cohort(SyntheticSpec(num_subjects=60, num_sites=3, num_rois=8, seed=1))
    x = connectivity_matrix(series)
    labels = np.array([p.label for p in phen])
    return x, labels, phen


def fast_cfg(**kw):
    base = dict(gcnn=FAST, ensemble=EnsembleConfig(3, 0.3, 2), k_folds=3)
    base.update(kw)
    return ExperimentConfig(**base)


class TestStratifiedKfold:
    def test_balanced_toy(self):
        split = stratified_kfold(np.repeat([0, 1], 5), k=5, seed=3)
        for f in range(5):
            assert sorted(np.repeat([0, 1], 5)[split.test_mask(f)]) == [0, 1]

    def test_leave_one_out(self):
        split = stratified_kfold(np.repeat([0, 1], 4), k=4)
        assert split.fold_sizes().tolist() == [2, 2, 2, 2]
        split = stratified_kfold(np.array([0, 1, 0, 1]), k=2)
        assert set(split.fold_sizes().tolist()) == {2}

    def test_singleton_folds(self):
        labels = np.array([0, 1] * 3)
        with pytest.raises(InvalidInputError):
            stratified_kfold(labels, k=6)
        split = stratified_kfold(np.array([0] * 6 + [1] * 6), k=6)
        assert split.fold_sizes().tolist() == [2] * 6

    def test_abide_sizes(self):
        labels = np.array([0] * 403 + [1] * 469)
        split = stratified_kfold(labels, k=10, seed=0)
        assert set(split.fold_sizes().tolist()) <= {87, 88}
        assert split.fold_sizes().sum() == 872

    @pytest.mark.parametrize("seed", range(10))
    def test_stratification(self, seed):
        rng = np.random.default_rng(seed)
        labels = rng.integers(0, 2, size=int(rng.integers(40, 200)))
        labels[:20] = [0, 1] * 10
        k = int(rng.integers(2, 11))
        split = stratified_kfold(labels, k, seed)
        assert np.all(split.folds >= 0)
        for f in range(k):
            test = split.test_mask(f)
            for c in (0, 1):
                expected = np.sum(labels == c) / k
                assert abs(np.sum(labels[test] == c) - expected) < 1
        assert split.fold_sizes().max() - split.fold_sizes().min() <= 1

    def test_unlabeled_left_out(self):
        labels = np.array([0, 1, -1, 0, 1, 0, 1, -1])
        split = stratified_kfold(labels, k=2)
        assert split.folds[2] == -1 and split.folds[7] == -1
        assert not split.train_mask(0)[2]

    def test_deterministic(self):
        labels = np.repeat([0, 1], 20)
        assert np.array_equal(stratified_kfold(labels, 4, 9).folds, stratified_kfold(labels, 4, 9).folds)


class TestSynthetic:
    def test_same_seed_same_cohort(self):
        a_series, a_phen = generate_synthetic_cohort(SyntheticSpec(num_subjects=20, num_sites=2, seed=4))
        b_series, b_phen = generate_synthetic_cohort(SyntheticSpec(num_subjects=20, num_sites=2, seed=4))
        assert a_phen == b_phen
        assert all(np.array_equal(a.series, b.series) for a, b in zip(a_series, b_series))

    def test_shapes_and_metadata(self):
        spec = SyntheticSpec(num_subjects=40, num_sites=4, num_rois=6, time_len=30)
        series, phen = generate_synthetic_cohort(spec)
        assert len(series) == len(phen) == 40
        assert all(s.series.shape == (6, 30) for s in series)
        assert {p.site for p in phen} <= {f"site{k}" for k in range(4)}
        assert [s.subject_id for s in series] == [p.subject_id for p in phen]

    @pytest.mark.parametrize("kw", [{"num_subjects": 10, "num_sites": 5}, {"noise_sd": 0.0}, {"class_balance": 1.0},
                                    {"class_effect": float("nan")}])
    def test_invalid(self, kw):
        with pytest.raises(InvalidInputError):
            SyntheticSpec(**kw)

    def test_class_signal_in_features(self):
        series, phen = generate_synthetic_cohort(SyntheticSpec(class_effect=0.5, seed=2))
        x = connectivity_matrix(series).values
        y = np.array([p.label for p in phen])
        gap = np.abs(x[y == 1].mean(axis=0) - x[y == 0].mean(axis=0)).max()
        assert gap > 0.3

    def test_null_cohort_is_chance_for_a_linear_oracle(self):
        from sklearn.linear_model import LogisticRegression
        from sklearn.model_selection import cross_val_score

        accs = []
        for seed in range(20):
            series, phen = generate_synthetic_cohort(null_spec(seed=seed))
            x = connectivity_matrix(series).values
            y = np.array([p.label for p in phen])
            accs.append(cross_val_score(LogisticRegression(C=0.1, max_iter=2000), x, y, cv=5).mean())
        assert 0.40 <= np.mean(accs) <= 0.60

    def test_large_effect_is_easy(self):
        from sklearn.linear_model import LogisticRegression
        from sklearn.model_selection import cross_val_score

        spec = SyntheticSpec(class_effect=1.0, seed=1)
        assert spec.class_effect >= 5 * spec.noise_sd
        series, phen = generate_synthetic_cohort(spec)
        x = connectivity_matrix(series)
        y = np.array([p.label for p in phen])
        assert cross_val_score(LogisticRegression(max_iter=2000), x.values, y, cv=5).mean() >= 0.95
        report = run_experiment("population", "single", x, y, phen, ExperimentConfig(k_folds=5))
        assert report.mean_accuracy >= 0.9


class TestExperiment:
    def test_mean_is_fold_mean(self, cohort):
        x, labels, phen = cohort
        rep = run_experiment("population", "single", x, labels, phen, fast_cfg())
        assert len(rep.fold_accuracies) == 3
        assert abs(rep.mean_accuracy - np.mean(rep.fold_accuracies)) <= 1e-12
        assert rep.config["gcnn"]["epochs"] == 30

    def test_degenerate_ensemble_matches_single(self, cohort):
        x, labels, phen = cohort
        folds, split = prepare_folds(x, labels, phen, fast_cfg())
        cfg = fast_cfg(ensemble=EnsembleConfig(1, 0.0, 5))
        a = run_experiment("population", "single", x, labels, phen, cfg, folds=folds, split=split)
        b = run_experiment("population", "ensemble", x, labels, phen, cfg, folds=folds, split=split)
        assert a.fold_accuracies == b.fold_accuracies

    def test_deterministic_across_runs_and_workers(self, cohort):
        x, labels, phen = cohort
        a = run_table(x, labels, phen, fast_cfg())
        b = run_table(x, labels, phen, fast_cfg(workers=2))
        for ra, rb in zip(a, b):
            da, db = ra.deterministic_dict(), rb.deterministic_dict()
            da["config"].pop("workers")
            db["config"].pop("workers")
            assert json.dumps(da) == json.dumps(db)

    def test_held_out_labels_never_leak(self, cohort):
        x, labels, phen = cohort
        cfg = fast_cfg()
        split = stratified_kfold(labels, 3, 0)
        train_mask, test_mask = split.train_mask(1), split.test_mask(1)
        flipped = labels.copy()
        flipped[test_mask] = 1 - flipped[test_mask]
        a = prepare_fold(x.values, labels, phen, train_mask, test_mask, cfg)
        b = prepare_fold(x.values, flipped, phen, train_mask, test_mask, cfg)
        assert a.selected.tobytes() == b.selected.tobytes()
        assert a.features.tobytes() == b.features.tobytes()
        assert a.population == b.population
        gcfg = single_config(cfg)
        pa, _ = train(a.population, a.features, TrainMask(train_mask, np.where(train_mask, labels, 0)), gcfg)
        pb, _ = train(b.population, b.features, TrainMask(train_mask, np.where(train_mask, flipped, 0)), gcfg)
        assert pa.equals(pb)

    def test_rfe_target_rule(self):
        cfg = ExperimentConfig()
        assert rfe_target_for(6105, cfg) == 2000
        assert rfe_target_for(190, cfg) == 95
        assert rfe_target_for(190, cfg.replace(rfe_target=50)) == 50

    def test_fold_errors_carry_context(self, cohort):
        x, labels, phen = cohort
        cfg = fast_cfg(gcnn=FAST.replace(learning_rate=1e300))
        with pytest.raises(FoldError) as info:
            run_experiment("population", "single", x, labels, phen, cfg)
        assert info.value.fold == 0 and info.value.category == "non_finite"
        assert isinstance(info.value.__cause__, NonFiniteError)

    def test_unknown_kinds(self, cohort):
        x, labels, phen = cohort
        with pytest.raises(InvalidInputError):
            run_experiment("random", "single", x, labels, phen, fast_cfg())
        with pytest.raises(InvalidInputError):
            run_experiment("population", "forest", x, labels, phen, fast_cfg())

    def test_config_round_trip(self):
        cfg = fast_cfg(rfe_target=7)
        assert ExperimentConfig.from_dict(json.loads(json.dumps(cfg.to_dict()))) == cfg


class TestSweep:
    def test_shape_and_baseline(self, cohort):
        x, labels, phen = cohort
        rep = sweep([1, 2, 3], [0.0, 0.3], x, labels, phen, fast_cfg())
        assert len(rep.accuracy) == 3 and all(len(row) == 2 for row in rep.accuracy)
        assert rep.accuracy[0][0] == rep.baseline_accuracy
        assert len(list(rep.cells())) == 6

    def test_empty_grid(self, cohort):
        x, labels, phen = cohort
        with pytest.raises(InvalidInputError):
            sweep([], [0.1], x, labels, phen, fast_cfg())


@pytest.fixture(scope="module")
def table(cohort):
    x, labels, phen = cohort
    return run_table(x, labels, phen, fast_cfg(gcnn=FAST.replace(epochs=5)))


class TestReport:
    def test_json_round_trip(self, table, tmp_path):
        write_report(table, tmp_path / "r.json")
        back = read_report(tmp_path / "r.json")
        assert [r.to_dict() for r in back] == [r.to_dict() for r in table]
        doc = json.loads((tmp_path / "r.json").read_text())
        assert doc["schema_version"] == 1

    def test_single_report_round_trip(self, table, tmp_path):
        write_report(table[0], tmp_path / "r.json")
        assert read_report(tmp_path / "r.json").to_dict() == table[0].to_dict()

    def test_csv_rows(self, table, tmp_path):
        write_report(table, tmp_path / "r.csv", "csv")
        with open(tmp_path / "r.csv", newline="") as fh:
            rows = list(csv.DictReader(fh))
        assert len(rows) == 3 * 2 * 3
        for row in rows:
            r = next(t for t in table if (t.graph_kind, t.model_kind) == (row["graph_kind"], row["model_kind"]))
            assert float(row["accuracy"]) == r.fold_accuracies[int(row["fold"])]

    def test_precision(self, tmp_path):
        rep = RunReport("population", "single", {}, [0.7086], 0.7086, [[0.7086]], [], 0.0, {})
        write_report(rep, tmp_path / "r.csv", "csv")
        assert "0.7086" in (tmp_path / "r.csv").read_text()

    def test_bad_schema(self, tmp_path):
        (tmp_path / "r.json").write_text('{"schema_version": 99}')
        with pytest.raises(FormatError):
            read_report(tmp_path / "r.json")

    def test_io_error_has_path(self, table, tmp_path):
        target = tmp_path / "missing" / "r.json"
        with pytest.raises(OSError) as info:
            write_report(table, target)
        assert info.value.path == target


class TestCli:
    def test_pipeline(self, tmp_path, capsys):
        out = tmp_path / "cohort"
        assert main(["gen", "--out", str(out), "--num-subjects", "40", "--num-sites", "2", "--num-rois", "6",
                     "--seed", "3"]) == 0
        feats = tmp_path / "f.csv"
        assert main(["features", "--manifest", str(out / "timeseries" / "manifest.csv"), "--out", str(feats)]) == 0
        phen = str(out / "phenotypes.csv")
        graph = tmp_path / "g.csv"
        assert main(["graph", "--features", str(feats), "--phenotypes", phen, "--out", str(graph),
                     "--lambda1", "3", "--lambda2", "4"]) == 0
        assert main(["train", "--features", str(feats), "--phenotypes", phen, "--graph", str(graph),
                     "--epochs", "5", "--out", str(tmp_path / "ck.json")]) == 0
        assert main(["ensemble", "--features", str(feats), "--phenotypes", phen, "--epochs", "5",
                     "--ensemble-size", "2", "--edge-drop-p", "0.2", "--out", str(tmp_path / "ens")]) == 0
        manifest = json.loads((tmp_path / "ens" / "manifest.json").read_text())
        assert manifest["ensemble_size"] == 2 and manifest["edge_drop_p"] == 0.2
        report = tmp_path / "exp.json"
        assert main(["experiment", "--features", str(feats), "--phenotypes", phen, "--epochs", "5",
                     "--ensemble-size", "2", "--k-folds", "2", "--seed", "4", "--out", str(report)]) == 0
        assert read_report(report)[0].config["gcnn"]["seed"] == 4
        assert main(["report", "--input", str(report), "--out", str(tmp_path / "exp.csv")]) == 0
        assert len((tmp_path / "exp.csv").read_text().strip().splitlines()) == 1 + 6 * 2
        assert main(["sweep", "--features", str(feats), "--phenotypes", phen, "--epochs", "5",
                     "--ensemble-sizes", "1,2", "--edge-drop-ps", "0,0.5", "--k-folds", "2",
                     "--out", str(tmp_path / "sw.json")]) == 0
        summary = json.loads(capsys.readouterr().out.strip().splitlines()[-1])
        assert summary["command"] == "sweep" and len(summary["accuracy"]) == 2

    def test_error_category_and_exit_code(self, tmp_path, capsys):
        code = main(["report", "--input", str(tmp_path / "nope.json"), "--out", str(tmp_path / "x.csv")])
        assert code == 7
        assert json.loads(capsys.readouterr().err)["error"] == "io"

    def test_invalid_config_exit_code(self, tmp_path, capsys):
        code = main(["gen", "--out", str(tmp_path), "--noise-sd", "0"])
        assert code == 2
        assert json.loads(capsys.readouterr().err)["error"] == "invalid_input"
