import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.stats import binom

from popgcn.ensemble import (
    EDGE_DROP_PRESETS,
    EnsembleConfig,
    MemberError,
    build_ensemble,
    consensus,
    derive_seed,
    edge_dropout,
    ensemble_predict,
    member_param_seed,
    read_ensemble_manifest,
    run_ensemble,
    train_ensemble,
    write_ensemble_manifest,
)
from popgcn.errors import InvalidInputError, ShapeMismatchError
from popgcn.gcnn import GcnnConfig, TrainMask, predict_proba, train
from popgcn.graph_core import WeightedGraph


def ring_with_chords(n, extra, seed=0):
    """Connected graph with exactly ``n + extra`` edges."""
    rng = np.random.default_rng(seed)
    pairs = {(i, (i + 1) % n) for i in range(n)}
    pairs = {(min(a, b), max(a, b)) for a, b in pairs}
    while len(pairs) < n + extra:
        a, b = rng.choice(n, 2, replace=False)
        pairs.add((int(min(a, b)), int(max(a, b))))
    return WeightedGraph.from_edges(n, [(a, b, float(rng.uniform(0.5, 2))) for a, b in pairs])


def small_problem(seed=0, n=16):
    rng = np.random.default_rng(seed)
    labels = np.repeat([0, 1], n // 2)
    x = np.column_stack([labels + rng.normal(scale=0.8, size=n), rng.normal(size=n)])
    mask = TrainMask(rng.random(n) < 0.75, labels)
    mask.node_mask[[0, n - 1]] = True
    return ring_with_chords(n, n, seed), x, mask, labels


class TestEdgeDropout:
    @pytest.mark.parametrize("p", [0.1, 0.3])
    def test_binomial_bounds(self, p):
        g = ring_with_chords(200, 800)
        assert g.num_edges == 1000
        lo, hi = binom.interval(0.9999, g.num_edges, 1 - p)
        counts = np.array([edge_dropout(g, p, s).num_edges for s in range(200)])
        assert counts.min() >= lo and counts.max() <= hi
        expected = g.num_edges * (1 - p)
        assert abs(counts.mean() - expected) <= 20

    @settings(max_examples=100, deadline=None)
    @given(st.integers(0, 2**63 - 1), st.floats(0, 1))
    def test_subgraph(self, seed, p):
        g = ring_with_chords(30, 40)
        h = edge_dropout(g, p, seed)
        assert h.num_nodes == g.num_nodes
        assert h.edge_set() <= g.edge_set()
        weights = {(i, j): w for i, j, w in g.edges()}
        assert all(weights[(i, j)] == w for i, j, w in h.edges())
        dense = h.to_dense()
        np.testing.assert_array_equal(dense, dense.T)

    def test_extremes(self):
        g = ring_with_chords(20, 10)
        assert edge_dropout(g, 0.0, 3) == g
        assert edge_dropout(g, 1.0, 3).num_edges == 0

    def test_deterministic(self):
        g = ring_with_chords(20, 30)
        assert edge_dropout(g, 0.3, 42) == edge_dropout(g, 0.3, 42)

    @pytest.mark.parametrize("p", [-0.1, 1.5])
    def test_invalid_p(self, p):
        with pytest.raises(InvalidInputError):
            edge_dropout(ring_with_chords(5, 0), p, 0)


class TestBuild:
    def test_members_distinct(self):
        g = ring_with_chords(200, 800)
        for master in range(50):
            sets = [frozenset(m.edge_set()) for m in build_ensemble(g, EnsembleConfig(20, 0.3, master))]
            assert len(set(sets)) == 20

    def test_reproducible_and_seeded(self):
        g = ring_with_chords(40, 60)
        a = build_ensemble(g, EnsembleConfig(5, 0.3, 7))
        b = build_ensemble(g, EnsembleConfig(5, 0.3, 7))
        c = build_ensemble(g, EnsembleConfig(5, 0.3, 8))
        assert all(x == y for x, y in zip(a, b))
        assert any(x != y for x, y in zip(a, c))

    def test_prefix_property(self):
        g = ring_with_chords(40, 60)
        small = build_ensemble(g, EnsembleConfig(3, 0.3, 1))
        large = build_ensemble(g, EnsembleConfig(10, 0.3, 1))
        assert all(x == y for x, y in zip(small, large))

    def test_degenerate(self):
        g = ring_with_chords(10, 5)
        assert build_ensemble(g, EnsembleConfig(1, 0.0)) == [g]

    def test_seed_derivation(self):
        assert derive_seed(3, 4) == int(np.random.SeedSequence([3, 4, 0]).generate_state(1, np.uint64)[0])
        assert derive_seed(3, 4, 1) == member_param_seed(3, 4)
        assert derive_seed(3, 4) != derive_seed(3, 5)

    def test_presets(self):
        assert EnsembleConfig.preset("light").edge_drop_p == EDGE_DROP_PRESETS["light"] == 0.25
        assert EnsembleConfig.preset("heavy").edge_drop_p == 0.35

    @pytest.mark.parametrize("kw", [{"ensemble_size": 0}, {"edge_drop_p": 1.1}, {"consensus": "vote"}])
    def test_invalid_config(self, kw):
        with pytest.raises(InvalidInputError):
            EnsembleConfig(**kw)


class TestConsensus:
    def test_mean_example(self):
        out = consensus([np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])], "mean")
        np.testing.assert_allclose(out.fused_probabilities, [[0.4, 0.6]], atol=1e-15)
        assert out.predicted_labels.tolist() == [1]

    def test_max_example(self):
        out = consensus([np.array([[0.6, 0.4]]), np.array([[0.2, 0.8]])], "max")
        np.testing.assert_allclose(out.fused_probabilities, [[3 / 7, 4 / 7]], atol=1e-15)
        assert out.predicted_labels.tolist() == [1]

    def test_ties_go_to_lower_class(self):
        out = consensus([np.array([[0.5, 0.5]])])
        assert out.predicted_labels.tolist() == [0]

    def test_identical_members(self):
        p = np.random.default_rng(0).dirichlet([1, 1, 1], size=5)
        for rule in ("mean", "max"):
            out = consensus([p, p, p], rule)
            np.testing.assert_allclose(out.fused_probabilities, p, atol=1e-15)

    @settings(max_examples=50, deadline=None)
    @given(st.integers(0, 2**32 - 1), st.integers(1, 12))
    def test_order_invariance_and_simplex(self, seed, size):
        rng = np.random.default_rng(seed)
        members = list(rng.dirichlet(np.ones(3), size=(size, 6)))
        perm = rng.permutation(size)
        for rule in ("mean", "max"):
            a = consensus(members, rule)
            b = consensus([members[k] for k in perm], rule)
            np.testing.assert_array_equal(a.fused_probabilities, b.fused_probabilities)
            np.testing.assert_allclose(a.fused_probabilities.sum(axis=1), 1.0, atol=1e-9)

    def test_errors(self):
        with pytest.raises(InvalidInputError):
            consensus([])
        with pytest.raises(ShapeMismatchError):
            consensus([np.ones((2, 2)) / 2, np.ones((3, 2)) / 2])


class TestTraining:
    cfg = GcnnConfig(layer_widths=(8, 8), epochs=40, seed=3)

    def test_degenerate_equals_single(self):
        g, x, mask, _ = small_problem()
        pred, params, _ = run_ensemble(g, x, mask, self.cfg, EnsembleConfig(1, 0.0, 11))
        single_cfg = self.cfg.replace(seed=member_param_seed(self.cfg.seed, 0))
        single, _ = train(g, x, mask, single_cfg)
        assert params[0].equals(single)
        np.testing.assert_array_equal(pred.predicted_labels, predict_proba(single, g, x, single_cfg).argmax(axis=1))

    def test_workers_do_not_change_results(self):
        g, x, mask, _ = small_problem(1)
        ens = EnsembleConfig(3, 0.3, 5)
        serial = train_ensemble(g, x, mask, self.cfg, ens, workers=1)
        pooled = train_ensemble(g, x, mask, self.cfg, ens, workers=2)
        assert all(a.equals(b) for a, b in zip(serial, pooled))

    def test_rerun_identical(self):
        g, x, mask, _ = small_problem(2)
        ens = EnsembleConfig(3, 0.3, 5)
        a, _, _ = run_ensemble(g, x, mask, self.cfg, ens)
        b, _, _ = run_ensemble(g, x, mask, self.cfg, ens)
        np.testing.assert_array_equal(a.fused_probabilities, b.fused_probabilities)

    def test_member_error_has_index(self):
        g, x, mask, _ = small_problem(3)
        x = x.copy()
        x[0, 0] = np.nan
        with pytest.raises(MemberError) as info:
            train_ensemble(g, x, mask, self.cfg, EnsembleConfig(2, 0.3))
        assert info.value.member == 0 and info.value.category == "non_finite"

    def test_predict_needs_one_graph_per_member(self):
        g, x, mask, _ = small_problem(4)
        params = train_ensemble(g, x, mask, self.cfg, EnsembleConfig(2, 0.3))
        with pytest.raises(ShapeMismatchError):
            ensemble_predict(params, [g], x, self.cfg)


class TestManifest:
    def test_round_trip(self, tmp_path):
        ens = EnsembleConfig(3, 0.25, 9)
        doc = write_ensemble_manifest(tmp_path / "m.json", ens, GcnnConfig(seed=4), ["a", "b", "c"])
        back = read_ensemble_manifest(tmp_path / "m.json")
        assert back == doc
        assert back["members"][1]["graph_seed"] == derive_seed(9, 1)
        assert back["members"][2]["param_seed"] == member_param_seed(4, 2)
