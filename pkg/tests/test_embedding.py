import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from skillnet.corpus import CooccurrenceMatrix
from skillnet.embedding import (
    EmbeddingMatrix,
    correspondence_analysis,
    cosine_similarity,
    load_embedding,
    save_embedding,
)
from skillnet.errors import DegenerateError


def cooc(counts):
    counts = np.asarray(counts)
    return CooccurrenceMatrix(tuple(f"s{i}" for i in range(len(counts))), counts, int(counts.max()))


def ca_oracle(k):
    # textbook CA, written out independently: chi-square residuals and their SVD
    n = k / k.sum()
    r = n.sum(1)
    c = n.sum(0)
    s = np.diag(r**-0.5) @ (n - np.outer(r, c)) @ np.diag(c**-0.5)
    u, d, _ = np.linalg.svd(s)
    return np.diag(r**-0.5) @ u * d, d**2 / np.sum(d**2)


def test_independence_has_no_inertia():
    v = np.array([1, 2, 3, 4])
    emb = correspondence_analysis(cooc(np.outer(v, v)), 3)
    assert np.allclose(emb.vectors, 0.0, atol=1e-12)


def test_blocks_split_by_first_axis():
    k = np.zeros((6, 6), dtype=np.int64)
    k[:3, :3] = [[5, 2, 1], [2, 4, 3], [1, 3, 6]]
    k[3:, 3:] = [[7, 1, 2], [1, 3, 1], [2, 1, 4]]
    emb = correspondence_analysis(cooc(k), 5)
    first = emb.vectors[:, 0]
    assert np.all(np.sign(first[:3]) == np.sign(first[0]))
    assert np.all(np.sign(first[3:]) == -np.sign(first[0]))
    coords, frac = ca_oracle(k.astype(float))
    # agree with the oracle up to a sign per component
    for j in range(5):
        a, b = emb.vectors[:, j], coords[:, j]
        if abs(frac[j]) > 1e-12:
            assert np.allclose(a, b, atol=1e-9) or np.allclose(a, -b, atol=1e-9)
    assert np.allclose(emb.inertia_fractions, frac[:5], atol=1e-12)


def test_truncates_to_rank_bound():
    k = np.array([[3, 1, 0], [1, 2, 1], [0, 1, 4]])
    emb = correspondence_analysis(cooc(k), 100)
    assert emb.n_components == 2


def test_fractions_sum_to_one_at_full_rank():
    rng = np.random.default_rng(1)
    x = rng.integers(0, 9, size=(7, 7))
    k = x + x.T + np.diag(rng.integers(1, 5, 7))
    emb = correspondence_analysis(cooc(k), 6)
    f = emb.inertia_fractions
    assert abs(f.sum() - 1.0) < 1e-9
    assert np.all(f >= 0) and np.all(np.diff(f) <= 1e-15)


def test_zero_row_named():
    k = np.array([[2, 1, 0], [1, 2, 0], [0, 0, 0]])
    with pytest.raises(DegenerateError, match="s2"):
        correspondence_analysis(cooc(k), 2)


def test_bad_components():
    with pytest.raises(ValueError):
        correspondence_analysis(cooc(np.eye(3, dtype=int)), 0)


def test_diagonal_toggle_changes_embedding():
    k = np.array([[9, 2, 1], [2, 5, 3], [1, 3, 8]])
    with_d = correspondence_analysis(cooc(k), 2, include_diagonal=True)
    without = correspondence_analysis(cooc(k), 2, include_diagonal=False)
    assert not np.allclose(np.abs(with_d.vectors), np.abs(without.vectors))


sym_counts = arrays(np.int64, (5, 5), elements=st.integers(0, 20)).map(lambda a: a + a.T + np.eye(5, dtype=np.int64))


@settings(max_examples=40, deadline=None)
@given(sym_counts, st.floats(0.1, 50.0))
def test_scale_invariance(k, alpha):
    # axes are only unique up to sign (or rotation for repeated singular
    # values), so compare the full-rank row geometry instead
    a = correspondence_analysis(cooc(k), 4)
    b = correspondence_analysis(CooccurrenceMatrix(a.skill_names, k * alpha, 1), 4)
    assert np.allclose(a.vectors @ a.vectors.T, b.vectors @ b.vectors.T, atol=1e-8)
    assert np.allclose(a.inertia_fractions, b.inertia_fractions, atol=1e-10)


def test_cosine_examples():
    emb = EmbeddingMatrix(("a", "b", "c", "d"), np.array([[1.0, 0], [2.0, 0], [0, 3.0], [-1.0, 0]]), np.ones(2))
    s = cosine_similarity(emb).values
    assert s[0, 1] == pytest.approx(1.0)
    assert s[0, 2] == pytest.approx(0.0)
    assert s[0, 3] == pytest.approx(-1.0)
    assert np.all(np.diag(s) == 1.0)


def test_cosine_zero_row():
    emb = EmbeddingMatrix(("a", "b"), np.array([[1.0, 0], [0.0, 0]]), np.ones(2))
    with pytest.raises(DegenerateError, match="'b'"):
        cosine_similarity(emb)


@settings(max_examples=40, deadline=None)
@given(arrays(np.float64, (6, 3), elements=st.floats(-10, 10)).filter(lambda a: np.all(np.linalg.norm(a, axis=1) > 1e-3)))
def test_cosine_properties(x):
    s = cosine_similarity(EmbeddingMatrix(tuple("abcdef"), x, np.ones(3))).values
    assert np.array_equal(s, s.T)
    assert np.all(np.abs(s) <= 1 + 1e-12)


def test_roundtrip(tmp_path):
    k = np.array([[4, 1, 2], [1, 3, 1], [2, 1, 5]])
    emb = correspondence_analysis(cooc(k), 2)
    save_embedding(emb, tmp_path / "e.csv", tmp_path / "i.csv")
    back = load_embedding(tmp_path / "e.csv", tmp_path / "i.csv")
    assert back.skill_names == emb.skill_names
    assert np.array_equal(back.vectors, emb.vectors)
    assert np.array_equal(back.inertia_fractions, emb.inertia_fractions)
