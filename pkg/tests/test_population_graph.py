import numpy as np
import pytest

from popgcn.errors import FormatError, InvalidInputError, ShapeMismatchError
from popgcn.population_graph import (
    PhenotypeRecord,
    SimilarityConfig,
    build_population_graph,
    linear_kernel,
    naive_graph,
    noisy_graph,
    read_phenotypes_csv,
    sex_site_score,
    write_phenotypes_csv,
)


def brute_force_weights(x, phen, cfg):
    n = len(phen)
    out = {}
    for a in range(n):
        for b in range(a + 1, n):
            score = 1.0
            if phen[a].sex == phen[b].sex:
                score *= cfg.lambda1
            if phen[a].site == phen[b].site:
                score *= cfg.lambda2
            w = score * max(float(np.dot(x[a], x[b])), 0.0)
            if w > cfg.edge_threshold:
                out[(a, b)] = w
    return out


@pytest.fixture
def toy():
    phen = [
        PhenotypeRecord("a", "M", "s1", 0),
        PhenotypeRecord("b", "M", "s2", 1),
        PhenotypeRecord("c", "F", "s1", None),
        PhenotypeRecord("d", "F", "s2", 1),
    ]
    x = np.array([[1.0, 0.5], [0.8, 1.0], [1.0, -0.2], [-0.5, 1.0]])
    return x, phen


class TestScores:
    def test_sex_site_combinations(self, toy):
        _, phen = toy
        cfg = SimilarityConfig(lambda1=3.0, lambda2=5.0)
        assert sex_site_score(phen[0], phen[0], cfg) == 15.0
        assert sex_site_score(phen[0], phen[1], cfg) == 3.0
        assert sex_site_score(phen[0], phen[2], cfg) == 5.0
        assert sex_site_score(phen[0], phen[3], cfg) == 1.0

    def test_linear_kernel(self):
        assert linear_kernel([1, 2], [3, 4]) == 11.0
        with pytest.raises(ShapeMismatchError):
            linear_kernel([1, 2], [1, 2, 3])

    @pytest.mark.parametrize("l1,l2", [(1.0, 2.0), (2.0, 0.5)])
    def test_lambdas_must_exceed_one(self, l1, l2):
        with pytest.raises(InvalidInputError):
            SimilarityConfig(lambda1=l1, lambda2=l2)


class TestBuild:
    def test_toy_matches_brute_force(self, toy):
        x, phen = toy
        cfg = SimilarityConfig()
        g = build_population_graph(x, phen, cfg)
        expected = brute_force_weights(x, phen, cfg)
        got = {(i, j): w for i, j, w in g.edges()}
        assert got.keys() == expected.keys()
        for key, w in expected.items():
            assert got[key] == pytest.approx(w, rel=1e-15)

    @pytest.mark.parametrize("seed", range(5))
    def test_random_matches_brute_force(self, seed):
        rng = np.random.default_rng(seed)
        n = 25
        phen = [PhenotypeRecord(str(i), "MF"[rng.integers(2)], f"s{rng.integers(3)}") for i in range(n)]
        x = rng.normal(size=(n, 6))
        cfg = SimilarityConfig(lambda1=1.5, lambda2=4.0, edge_threshold=0.5)
        g = build_population_graph(x, phen, cfg)
        expected = brute_force_weights(x, phen, cfg)
        assert g.edge_set() == set(expected)
        np.testing.assert_allclose([w for *_, w in g.edges()], [expected[k] for k in sorted(expected)], rtol=1e-13)

    def test_negative_similarity_gives_no_edge(self):
        phen = [PhenotypeRecord("a", "M", "s"), PhenotypeRecord("b", "M", "s")]
        g = build_population_graph(np.array([[1.0], [-1.0]]), phen)
        assert g.num_edges == 0

    def test_row_count_checked(self, toy):
        x, phen = toy
        with pytest.raises(ShapeMismatchError):
            build_population_graph(x[:3], phen)

    def test_naive_and_noisy(self, toy):
        x, phen = toy
        assert naive_graph(4).num_edges == 0
        g = build_population_graph(x, phen)
        assert noisy_graph(g, 0.0, 1) == g
        assert noisy_graph(g, 1.0, 1).num_edges == 0


class TestPhenotypeCsv:
    def test_round_trip(self, toy, tmp_path):
        _, phen = toy
        path = tmp_path / "p.csv"
        write_phenotypes_csv(phen, path)
        assert read_phenotypes_csv(path) == phen

    def test_bad_label(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("subject_id,sex,site,label\na,M,s,2\n")
        with pytest.raises(InvalidInputError):
            read_phenotypes_csv(path)

    def test_duplicate_id(self, tmp_path):
        path = tmp_path / "p.csv"
        path.write_text("subject_id,sex,site,label\na,M,s,1\na,F,s,0\n")
        with pytest.raises(FormatError):
            read_phenotypes_csv(path)

    def test_bad_sex(self):
        with pytest.raises(InvalidInputError):
            PhenotypeRecord("a", "X", "s")
