import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from skillnet.errors import ConnectivityError
from skillnet.stability import (
    Partition,
    ScaleScan,
    block_nvi,
    build_operators,
    hierarchy_links,
    log_grid,
    louvain,
    mean_pairwise_nvi,
    nvi,
    nvi_matrix,
    optimize_partition,
    propagator,
    quality_matrix,
    save_scan,
    scan_scales,
    select_robust_scales,
    stability_score,
)
from skillnet.synthbench import brute_force_stability

from conftest import graph_from_edges, random_connected_graph


def taylor_expm(a, terms=20):
    out = np.eye(len(a))
    term = np.eye(len(a))
    for k in range(1, terms):
        term = term @ a / k
        out = out + term
    return out


def entropy_nvi(a, b):
    # direct contingency-table definition, natural logs
    n = len(a)
    joint = {}
    for x, y in zip(a, b):
        joint[(x, y)] = joint.get((x, y), 0) + 1
    pa = {x: sum(1 for v in a if v == x) / n for x in set(a)}
    pb = {y: sum(1 for v in b if v == y) / n for y in set(b)}
    h_joint = -sum(c / n * math.log(c / n) for c in joint.values())
    if h_joint == 0:
        return 0.0
    mi = sum(c / n * math.log((c / n) / (pa[x] * pb[y])) for (x, y), c in joint.items())
    return (h_joint - mi) / h_joint


class TestPartition:
    def test_canonical(self):
        assert Partition([5, 5, 2, 9]) == Partition([0, 0, 1, 2])
        p = Partition([3, 1, 3])
        assert p.labels.tolist() == [0, 1, 0]
        assert p.n_clusters == 2
        assert p.sizes().tolist() == [2, 1]
        assert p.members(0).tolist() == [0, 2]
        assert np.array_equal(p.indicator(), [[1, 0], [0, 1], [1, 0]])
        with pytest.raises(ValueError):
            p.labels[0] = 1


class TestOperators:
    def test_path(self, path3):
        ops = build_operators(path3)
        assert np.allclose(ops.transition, [[0, 1, 0], [0.5, 0, 0.5], [0, 1, 0]])
        assert np.allclose(ops.stationary, [0.25, 0.5, 0.25])
        assert np.allclose(ops.rate.sum(axis=1), 0, atol=1e-12)

    def test_disconnected(self):
        with pytest.raises(ConnectivityError):
            build_operators(graph_from_edges(3, [(0, 1, 1.0)]))

    def test_propagator_zero_and_negative(self, path3):
        ops = build_operators(path3)
        assert np.array_equal(propagator(ops, 0.0), np.eye(3))
        with pytest.raises(ValueError):
            propagator(ops, -1.0)

    @settings(max_examples=25, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 12), st.sampled_from([0.05, 0.3, 1.0]))
    def test_taylor_and_invariants(self, seed, n, r):
        rng = np.random.default_rng(seed)
        ops = build_operators(graph_from_edges(n, random_connected_graph(rng, n)))
        p = propagator(ops, r)
        assert np.abs(p - taylor_expm(r * ops.rate)).max() < 1e-8
        assert np.abs(p.sum(axis=1) - 1).max() < 1e-10
        assert np.abs(ops.stationary @ p - ops.stationary).max() < 1e-10
        assert np.abs(ops.stationary @ ops.transition - ops.stationary).max() < 1e-10
        assert np.abs(propagator(ops, 0.7) @ p - propagator(ops, 0.7 + r)).max() < 1e-8


class TestScore:
    def test_path_singletons(self, path3):
        ops = build_operators(path3)
        assert stability_score(ops, 0.0, Partition([0, 1, 2])) == pytest.approx(5 / 8, abs=1e-12)

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 9), st.sampled_from([0.0, 0.1, 1.0, 10.0]))
    def test_bounds(self, seed, n, r):
        rng = np.random.default_rng(seed)
        ops = build_operators(graph_from_edges(n, random_connected_graph(rng, n)))
        assert abs(stability_score(ops, r, Partition(np.zeros(n)))) < 1e-12
        labels = rng.integers(0, 3, n)
        s = stability_score(ops, r, Partition(labels))
        assert s <= 1 - np.sum(ops.stationary**2) + 1e-12
        perm = rng.permutation(3)
        assert stability_score(ops, r, Partition(perm[labels])) == pytest.approx(s, abs=1e-14)

    def test_barbell_two_cliques(self, barbell):
        ops = build_operators(barbell)
        best, score = brute_force_stability(ops, 1.0)
        assert best == Partition([0] * 4 + [1] * 4)
        assert stability_score(ops, 1.0, best) == pytest.approx(score, abs=1e-12)

    def test_dimension_mismatch(self, path3):
        with pytest.raises(ValueError):
            stability_score(build_operators(path3), 1.0, Partition([0, 1]))


class TestOptimizer:
    def test_barbell(self, barbell):
        res = optimize_partition(build_operators(barbell), 1.0, n_runs=10, seed=0)
        assert res.partition == Partition([0] * 4 + [1] * 4)
        assert res.run_nvi == 0.0

    def test_large_scale_coarse(self, barbell):
        ops = build_operators(barbell)
        res = optimize_partition(ops, 1e4, n_runs=5)
        assert res.partition.n_clusters <= 2
        assert res.score >= -1e-15

    def test_deterministic(self, barbell):
        ops = build_operators(barbell)
        a = optimize_partition(ops, 0.4, n_runs=7, seed=11)
        b = optimize_partition(ops, 0.4, n_runs=7, seed=11)
        assert a.partition == b.partition and a.score == b.score and a.run_nvi == b.run_nvi

    @settings(max_examples=30, deadline=None)
    @given(st.integers(0, 10**6), st.integers(2, 8), st.sampled_from([0.05, 0.5, 2.0, 20.0]))
    def test_never_beats_oracle_or_baseline(self, seed, n, r):
        rng = np.random.default_rng(seed)
        ops = build_operators(graph_from_edges(n, random_connected_graph(rng, n)))
        res = optimize_partition(ops, r, n_runs=5, seed=seed)
        _, best = brute_force_stability(ops, r)
        assert res.score <= best + 1e-12
        assert res.score >= -1e-15

    def test_louvain_negative_entries(self):
        f = np.array([[1.0, -2.0], [-2.0, 1.0]])
        assert Partition(louvain(f, np.random.default_rng(0))) == Partition([0, 1])


class TestNVI:
    def test_identical(self):
        assert nvi([0, 0, 1, 1], [1, 1, 0, 0]) == 0.0

    def test_singletons_vs_whole(self):
        assert nvi([0, 1, 2, 3], [0, 0, 0, 0]) == pytest.approx(1.0)

    def test_crossed(self):
        assert nvi([0, 0, 1, 1], [0, 1, 0, 1]) == pytest.approx(1.0)

    def test_both_whole(self):
        assert nvi([0, 0, 0], [0, 0, 0]) == 0.0

    def test_mismatch(self):
        with pytest.raises(ValueError):
            nvi([0, 1], [0, 1, 1])

    @given(st.lists(st.tuples(st.integers(0, 3), st.integers(0, 3)), min_size=1, max_size=30))
    def test_matches_entropy_definition(self, pairs):
        a = [x for x, _ in pairs]
        b = [y for _, y in pairs]
        v = nvi(a, b)
        assert v == pytest.approx(entropy_nvi(a, b), abs=1e-12)
        assert v == nvi(b, a)
        assert 0.0 <= v <= 1.0
        assert (v == 0.0) == (Partition(a) == Partition(b))

    def test_mean_pairwise(self):
        ps = [[0, 0, 1, 1], [0, 0, 1, 1], [0, 1, 0, 1]]
        expected = (0 + 1 + 1) / 3
        assert mean_pairwise_nvi(ps) == pytest.approx(expected)
        assert mean_pairwise_nvi(ps[:1]) == 0.0


def fake_scan(mat, clusters=None, run_nvi=None):
    n = len(mat)
    clusters = clusters or [3] * n
    parts = [Partition(np.arange(12) % c) for c in clusters]
    return ScaleScan(
        scales=np.logspace(-1, 1, n),
        partitions=parts,
        stability=np.zeros(n),
        run_nvi=np.zeros(n) if run_nvi is None else np.asarray(run_nvi),
        nvi=np.asarray(mat, dtype=float),
    )


class TestRobust:
    def test_two_blocks(self):
        n = 21
        mat = np.full((n, n), 0.8)
        mat[2:9, 2:9] = 0.0
        mat[12:19, 12:19] = 0.0
        np.fill_diagonal(mat, 0.0)
        picks = select_robust_scales(fake_scan(mat), window=2)
        assert len(picks) == 2
        assert 2 <= picks[0].index <= 8 or 2 <= picks[1].index <= 8
        assert any(12 <= p.index <= 18 for p in picks)

    def test_flat_warns(self, caplog):
        mat = np.full((10, 10), 0.5)
        np.fill_diagonal(mat, 0.5)
        assert select_robust_scales(fake_scan(mat), window=2) == []
        assert "flat" in caplog.text

    def test_threshold_and_short(self):
        n = 15
        mat = np.full((n, n), 0.8)
        mat[4:11, 4:11] = 0.0
        assert select_robust_scales(fake_scan(mat, run_nvi=[0.5] * n), window=2) == []
        with pytest.raises(ValueError):
            select_robust_scales(fake_scan(mat[:3, :3]), window=5)

    def test_block_nvi_window(self):
        mat = np.arange(25, dtype=float).reshape(5, 5)
        b = block_nvi(mat, 1)
        assert b[0] == pytest.approx(mat[:2, :2].mean())
        assert b[2] == pytest.approx(mat[1:4, 1:4].mean())


class TestHierarchy:
    def test_nested(self):
        fine = Partition([0, 0, 1, 1, 2, 2, 3, 3])
        coarse = Partition([0, 0, 0, 0, 1, 1, 1, 1])
        links = hierarchy_links([fine, coarse])
        assert links.score == 1.0
        assert all((row > 0).sum() == 1 for row in links.flows[0])

    def test_split_cluster(self):
        fine = Partition([0, 0, 0, 0, 1, 1])
        coarse = Partition([0, 0, 1, 1, 1, 1])
        links = hierarchy_links([fine, coarse])
        assert links.flows[0][0].tolist() == [2, 2]
        assert links.score == 0.5

    def test_identity(self):
        p = Partition([0, 1, 2, 0])
        assert np.array_equal(hierarchy_links([p, p]).flows[0], np.diag([2, 1, 1]))

    def test_json(self):
        links = hierarchy_links([Partition([0, 1, 1]), Partition([0, 0, 0])])
        out = links.to_json(["fine", "coarse"])
        assert out["quasi_hierarchy"] == 1.0
        assert {"source": "fine:1", "target": "coarse:0", "value": 2} in out["links"]

    def test_mismatch(self):
        with pytest.raises(ValueError):
            hierarchy_links([Partition([0, 1]), Partition([0, 0, 1])])


class TestScan:
    def test_single_scale(self, barbell):
        scan = scan_scales(build_operators(barbell), [1.0], n_runs=3)
        assert scan.nvi.shape == (1, 1) and scan.nvi[0, 0] == 0.0

    def test_grid_checks(self, barbell):
        ops = build_operators(barbell)
        with pytest.raises(ValueError):
            scan_scales(ops, [])
        with pytest.raises(ValueError):
            scan_scales(ops, [1.0, 0.5])

    def test_monotone_counts_and_save(self, barbell, tmp_path):
        ops = build_operators(barbell)
        scan = scan_scales(ops, log_grid(-2, 2, 12), n_runs=5)
        counts = scan.n_clusters
        assert counts[-1] <= counts[0]
        assert np.all(np.diag(scan.nvi) == 0)
        robust = select_robust_scales(scan, window=2)
        save_scan(scan, robust, [f"n{i}" for i in range(8)], tmp_path)
        for name in ("scan_summary.csv", "nvi_matrix.csv", "scan_partitions.csv", "partitions.csv", "robust_scales.json"):
            assert (tmp_path / name).exists()

    def test_workers_do_not_change_result(self, barbell):
        ops = build_operators(barbell)
        grid = log_grid(-1, 1, 4)
        a = scan_scales(ops, grid, n_runs=3, seed=2, workers=1)
        b = scan_scales(ops, grid, n_runs=3, seed=2, workers=2)
        assert a.partitions == b.partitions
        assert np.array_equal(a.stability, b.stability)

    def test_nvi_matrix_band(self):
        p = Partition([0, 0, 1])
        q = Partition([0, 1, 1])
        m = nvi_matrix([p, p, q])
        assert m[0, 1] == 0.0 and m[1, 2] > 0 and np.array_equal(m, m.T)


def test_mixed_walk_gives_single_cluster(path3):
    ops = build_operators(path3)
    assert not quality_matrix(ops, 1e4).any()
    assert optimize_partition(ops, 1e4, n_runs=2).partition.n_clusters == 1
