import itertools
import math
from datetime import date

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillnet.corpus import CooccurrenceMatrix, MappedAdvert
from skillnet.errors import ConnectivityError, DegenerateError
from skillnet.metrics import (
    assign_adverts,
    betweenness,
    closeness,
    cluster_medians,
    cluster_mentions_and_salary,
    cluster_report,
    containment,
    coverage_matrix,
    crosswalk,
    crosswalk_json,
    eigenvector_subset,
    label_prompt,
    restrict_cooccurrence,
    semantic_similarity,
    thematic_entropy,
)
from skillnet.stability import Partition

from conftest import graph_from_edges, random_connected_graph


def star(leaves, weights=None):
    weights = weights or [1.0] * leaves
    return graph_from_edges(leaves + 1, [(0, i + 1, w) for i, w in enumerate(weights)])


def with_int_lengths(rng, n):
    edges = random_connected_graph(rng, n)
    lengths = [float(rng.integers(1, 4)) for _ in edges]
    return graph_from_edges(n, edges, lengths=lengths), edges, lengths


def floyd(n, edges, lengths):
    d = np.full((n, n), np.inf)
    np.fill_diagonal(d, 0)
    for (i, j, _), l in zip(edges, lengths):
        d[i, j] = d[j, i] = min(d[i, j], l)
    for k in range(n):
        d = np.minimum(d, d[:, [k]] + d[[k], :])
    return d


def betweenness_by_enumeration(n, edges, lengths):
    # list every simple path, keep the shortest ones per pair
    adj = {i: {} for i in range(n)}
    for (i, j, _), l in zip(edges, lengths):
        adj[i][j] = adj[j][i] = l
    score = np.zeros(n)
    for s, t in itertools.combinations(range(n), 2):
        paths = []

        def walk(node, seen, length):
            if node == t:
                paths.append((length, seen))
                return
            for nxt, l in adj[node].items():
                if nxt not in seen:
                    walk(nxt, seen + (nxt,), length + l)

        walk(s, (s,), 0.0)
        best = min(p[0] for p in paths)
        shortest = [p[1] for p in paths if p[0] == best]
        for path in shortest:
            for v in path[1:-1]:
                score[v] += 1 / len(shortest)
    return score / ((n - 1) * (n - 2) / 2) if n > 2 else score


class TestCentrality:
    def test_path(self, path3):
        assert np.allclose(closeness(path3), [2 / 3, 1, 2 / 3])
        assert np.allclose(betweenness(path3), [0, 1, 0])

    def test_star(self):
        assert np.allclose(closeness(star(3)), [1, 3 / 5, 3 / 5, 3 / 5])

    def test_four_cycle(self):
        g = graph_from_edges(4, [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 3, 1)])
        assert np.allclose(betweenness(g), 1 / 6)
        assert np.allclose(betweenness(g), betweenness_by_enumeration(4, [(0, 1, 1), (1, 2, 1), (2, 3, 1), (0, 3, 1)], [1] * 4))

    def test_complete(self):
        g = graph_from_edges(5, [(i, j, 1.0) for i, j in itertools.combinations(range(5), 2)])
        assert np.all(betweenness(g) == 0)

    def test_uses_lengths_not_weights(self):
        g = graph_from_edges(3, [(0, 1, 0.9), (1, 2, 0.9), (0, 2, 0.1)], lengths=[1.0, 5.0, 1.0])
        assert np.allclose(closeness(g), [2 / 3, 1, 2 / 3])
        assert np.allclose(closeness(g, "unit"), [1, 1, 1])

    def test_disconnected(self):
        g = graph_from_edges(4, [(0, 1, 1.0), (2, 3, 1.0)])
        with pytest.raises(ConnectivityError):
            closeness(g)
        with pytest.raises(ConnectivityError):
            betweenness(g)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(3, 7))
    def test_against_oracles(self, seed, n):
        rng = np.random.default_rng(seed)
        g, edges, lengths = with_int_lengths(rng, n)
        d = floyd(n, edges, lengths)
        assert np.allclose(closeness(g), (n - 1) / d.sum(axis=1))
        assert np.allclose(betweenness(g), betweenness_by_enumeration(n, edges, lengths))


class TestEigenvectorSubset:
    def test_sizes(self):
        rng = np.random.default_rng(0)
        for size, expected in ((25, 20), (300, 30), (12, 12)):
            g = graph_from_edges(size, random_connected_graph(rng, size, p=0.05))
            assert len(eigenvector_subset(g, np.zeros(size, dtype=int), 0)) == expected

    def test_hub_first(self):
        g = star(6)
        assert eigenvector_subset(g, np.zeros(7, dtype=int), 0)[0] == "n0"

    def test_only_own_cluster(self, barbell):
        p = Partition([0] * 4 + [1] * 4)
        picked = eigenvector_subset(barbell, p, 1)
        assert sorted(picked) == ["n4", "n5", "n6", "n7"]
        # the bridge end is the best connected node of the clique
        assert picked[0] == "n4"


class TestPrompt:
    def test_listing(self):
        text = label_prompt(["Management", "Auditing"])
        assert "The list is: ['Management', 'Auditing']." in text
        assert text.startswith("This is a list of the most representative skills")

    def test_single(self):
        assert label_prompt(["Nursing"]).endswith("The list is: ['Nursing'].")

    def test_escaping(self):
        text = label_prompt(["Children's Care", "a\\b"])
        assert "['Children\\'s Care', 'a\\\\b']" in text

    def test_empty(self):
        with pytest.raises(ValueError):
            label_prompt([])
        with pytest.raises(ValueError):
            label_prompt("Management")


class TestContainment:
    def test_hand_case(self):
        # node 0: internal weight 2, external 6
        g = graph_from_edges(4, [(0, 1, 2.0), (0, 2, 3.0), (0, 3, 3.0)])
        c = containment(g, [0, 0, 1, 1])
        assert c[0] == pytest.approx(0.25)
        assert c[1] == 1.0 and c[2] == 0.0

    def test_isolated(self, caplog):
        g = graph_from_edges(3, [(0, 1, 1.0)])
        c = containment(g, [0, 0, 1])
        assert np.isnan(c[2]) and "isolated" in caplog.text
        assert cluster_medians(c, [0, 0, 1]) == [1.0, None]


class TestCoverage:
    def test_hand(self):
        k = CooccurrenceMatrix(("a", "b", "c"), np.array([[4, 2, 1], [2, 3, 0], [1, 0, 2]]), 5)
        u = np.array([[4, 0], [3, 0], [0, 2]], dtype=float)
        b = u.T @ k.counts @ u
        expected = b / np.sqrt(np.outer(np.diag(b), np.diag(b)))
        out = coverage_matrix(k, [0, 0, 1])
        assert np.allclose(out, expected)
        assert np.all(np.diag(out) == 1.0)

    def test_block_diagonal(self):
        k = CooccurrenceMatrix(("a", "b", "c"), np.array([[4, 2, 0], [2, 3, 0], [0, 0, 2]]), 5)
        out = coverage_matrix(k, [0, 0, 1])
        assert out[0, 1] == 0 and out[1, 0] == 0

    def test_unmentioned_cluster(self):
        k = CooccurrenceMatrix(("a", "b"), np.array([[2, 0], [0, 0]]), 2)
        with pytest.raises(DegenerateError):
            coverage_matrix(k, [0, 1])

    def test_restrict(self):
        k = CooccurrenceMatrix(("a", "b", "c"), np.arange(9).reshape(3, 3), 1)
        sub = restrict_cooccurrence(k, ["c", "a"])
        assert np.array_equal(sub.counts, [[8, 6], [2, 0]])
        with pytest.raises(KeyError):
            restrict_cooccurrence(k, ["zz"])


class TestSemantic:
    def test_identical_and_orthogonal(self):
        emb = {"a": np.array([1.0, 1, 0]), "b": np.array([2.0, 2, 0]), "x": np.eye(3)[0], "y": np.eye(3)[1], "z": np.eye(3)[2]}
        names = ["a", "b", "x", "y", "z"]
        p = [0, 0, 1, 1, 1]
        assert semantic_similarity(emb, names, p, 0) == pytest.approx(1.0)
        assert semantic_similarity(emb, names, p, 1) == pytest.approx(0.0)

    def test_single_and_missing(self):
        emb = {"a": np.ones(2)}
        assert semantic_similarity(emb, ["a", "b"], [0, 1], 0) is None
        with pytest.raises(KeyError, match="'b'"):
            semantic_similarity(emb, ["a", "b"], [0, 1], 1)


def advert(i, skills, salary=None):
    return MappedAdvert(str(i), date(2016, 1, 1), tuple(skills), None, salary)


class TestAdverts:
    def test_assign(self):
        names = ["a", "b", "c"]
        p = [1, 5, 1]
        out = assign_adverts([advert(0, "ab"), advert(1, ""), advert(2, "ac"), advert(3, "q")], names, p)
        assert out == [frozenset({1, 5}), frozenset(), frozenset({1}), frozenset()]

    def test_mentions_and_salary(self):
        names = ["a", "b", "c"]
        p = [0, 0, 1]
        stats = cluster_mentions_and_salary([advert(0, "ab", 20000), advert(1, "a", 40000)], names, p)
        assert stats[0].n_mentions == 3
        assert stats[0].average_mentions == 1.5
        assert stats[0].average_salary == 30000
        assert stats[1].n_mentions == 0 and stats[1].average_salary is None

    def test_unsalaried(self):
        stats = cluster_mentions_and_salary([advert(0, "a"), advert(1, "a", 10.0)], ["a"], [0])
        assert stats[0].average_salary == 10.0 and stats[0].n_adverts == 2


class TestTaxonomy:
    def test_entropy(self):
        names = [f"s{i}" for i in range(64)]
        cats = {s: f"cat{i % 32}" for i, s in enumerate(names)}
        assert thematic_entropy(names, np.zeros(64, dtype=int), cats, 0) == pytest.approx(5.0)
        same = {s: "one" for s in names}
        assert thematic_entropy(names, np.zeros(64, dtype=int), same, 0) == 0.0
        with pytest.raises(KeyError, match="s0"):
            thematic_entropy(names, np.zeros(64, dtype=int), {}, 0)

    def test_crosswalk(self):
        names = ["a", "b", "c", "d"]
        cols, table = crosswalk(names, [0, 0, 1, 1], {"a": "X", "b": "X", "c": "Y", "d": "Y"})
        assert cols == ["X", "Y"] and np.array_equal(table, [[2, 0], [0, 2]])
        cols, table = crosswalk(names, [0, 0, 0, 0], {"a": "X", "b": "Y", "c": "X", "d": "Y"})
        assert np.array_equal(table, [[2, 2]])
        out = crosswalk_json(cols, table)
        assert sum(l["value"] for l in out["links"]) == 4

    @given(st.lists(st.tuples(st.integers(0, 4), st.integers(0, 5)), min_size=1, max_size=40))
    def test_marginals(self, rows):
        names = [f"s{i}" for i in range(len(rows))]
        labels = Partition([r[0] for r in rows]).labels
        cats = {s: f"c{r[1]}" for s, r in zip(names, rows)}
        cols, table = crosswalk(names, labels, cats)
        assert np.array_equal(table.sum(axis=1), np.bincount(labels))
        assert table.sum(axis=0).tolist() == [sum(1 for r in rows if f"c{r[1]}" == c) for c in cols]


def test_cluster_report(barbell, tmp_path):
    p = Partition([0] * 4 + [1] * 4)
    names = barbell.node_names
    adverts = [advert(0, names[:2], 100.0), advert(1, names[4:], None)]
    report = cluster_report(barbell, p, adverts, categories={s: "X" for s in names})
    assert report.n_skills == 8 and report.n_adverts == 2
    assert [c.n_skills for c in report.clusters] == [4, 4]
    assert report.clusters[0].average_mentions == 1.0 and report.clusters[1].average_mentions == 2.0
    assert report.clusters[0].entropy == 0.0 and report.clusters[0].semantic_similarity is None
    report.write(tmp_path / "r.json", tmp_path / "r.csv")
    assert (tmp_path / "r.csv").read_text().count("\n") == 3
