"""Correspondence analysis of the co-occurrence matrix and cosine similarity
between the resulting skill vectors."""

from __future__ import annotations

import csv
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .corpus import CooccurrenceMatrix
from .errors import DegenerateError


@dataclass
class EmbeddingMatrix:
    skill_names: tuple[str, ...]
    vectors: np.ndarray
    inertia_fractions: np.ndarray

    @property
    def n_components(self) -> int:
        return self.vectors.shape[1]


@dataclass
class SimilarityMatrix:
    skill_names: tuple[str, ...]
    values: np.ndarray


def correspondence_analysis(
    k: CooccurrenceMatrix, n_components: int = 100, include_diagonal: bool = True
) -> EmbeddingMatrix:
    """Row principal coordinates from a correspondence analysis of ``k``.

    Parameters
    ----------
    k : CooccurrenceMatrix
        Non-negative counts; every skill must have a positive row sum.
    n_components : int
        Number of leading components kept, truncated to ``N - 1``.
    include_diagonal : bool
        Whether the per-skill mention counts on the diagonal enter the
        analysis.

    Returns
    -------
    EmbeddingMatrix
        ``vectors`` holds one row per skill; ``inertia_fractions`` the
        share of total inertia carried by each returned component.
    """
    if n_components < 1:
        raise ValueError(f"n_components must be >= 1, got {n_components}")
    x = np.asarray(k.counts, dtype=np.float64).copy()
    if not include_diagonal:
        np.fill_diagonal(x, 0.0)
    if x.min() < 0:
        raise ValueError("co-occurrence counts must be non-negative")
    row_sums = x.sum(axis=1)
    empty = np.flatnonzero(row_sums <= 0)
    if empty.size:
        raise DegenerateError(f"skill {k.skill_names[empty[0]]!r} has no co-occurrence mass")

    p = x / x.sum()
    r = p.sum(axis=1)
    c = p.sum(axis=0)
    expected = np.outer(r, c)
    z = (p - expected) / np.sqrt(expected)

    u, sv, _ = np.linalg.svd(z, full_matrices=False)
    total = float(np.sum(sv**2))
    d = min(n_components, max(len(r) - 1, 1))
    u, sv = u[:, :d], sv[:d]

    # fix the sign of each axis so the output is reproducible
    pivot = np.argmax(np.abs(u), axis=0)
    signs = np.sign(u[pivot, np.arange(d)])
    signs[signs == 0] = 1.0
    u = u * signs

    coords = u * sv / np.sqrt(r)[:, None]
    fractions = sv**2 / total if total > 0 else np.zeros(d)
    return EmbeddingMatrix(tuple(k.skill_names), coords, fractions)


def cosine_similarity(emb: EmbeddingMatrix) -> SimilarityMatrix:
    norms = np.linalg.norm(emb.vectors, axis=1)
    zero = np.flatnonzero(norms == 0)
    if zero.size:
        raise DegenerateError(f"skill {emb.skill_names[zero[0]]!r} has a zero embedding vector")
    unit = emb.vectors / norms[:, None]
    s = unit @ unit.T
    s = 0.5 * (s + s.T)
    np.clip(s, -1.0, 1.0, out=s)
    np.fill_diagonal(s, 1.0)
    return SimilarityMatrix(tuple(emb.skill_names), s)


def save_embedding(emb: EmbeddingMatrix, vectors_path: Path, inertia_path: Path) -> None:
    with open(vectors_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill"] + [f"v{i + 1}" for i in range(emb.n_components)])
        for name, row in zip(emb.skill_names, emb.vectors):
            w.writerow([name] + [repr(float(v)) for v in row])
    with open(inertia_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["component", "inertia_fraction"])
        for i, f in enumerate(emb.inertia_fractions):
            w.writerow([i + 1, repr(float(f))])


def load_embedding(vectors_path: Path, inertia_path: Path) -> EmbeddingMatrix:
    names, rows = load_vectors_csv(vectors_path)
    with open(inertia_path, newline="", encoding="utf-8") as fh:
        fractions = [float(r["inertia_fraction"]) for r in csv.DictReader(fh)]
    return EmbeddingMatrix(tuple(names), rows, np.array(fractions))


def load_vectors_csv(path: Path) -> tuple[list[str], np.ndarray]:
    """Read a ``skill,v1..vD`` CSV into names and a matrix."""
    names = []
    rows = []
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        next(reader)
        for row in reader:
            names.append(row[0])
            rows.append([float(v) for v in row[1:]])
    return names, np.array(rows, dtype=np.float64).reshape(len(names), -1)
