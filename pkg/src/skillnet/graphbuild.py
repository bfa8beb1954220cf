"""Distance transform and CkNN sparsification of the skill similarity graph."""

from __future__ import annotations

import csv
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy import sparse
from scipy.sparse.csgraph import connected_components

from .embedding import SimilarityMatrix
from .errors import DegenerateError

log = logging.getLogger(__name__)


@dataclass
class DistanceMatrix:
    """Symmetric distances in ``[0, 1]``.

    ``d_max`` is the normalising constant used by :func:`to_distances`; it
    lets similarities be recovered as ``1 - d * d_max``. It is ``None`` for
    distances that did not come from a similarity matrix.
    """

    skill_names: tuple[str, ...]
    values: np.ndarray
    d_max: float | None = None

    def similarity(self) -> np.ndarray | None:
        if self.d_max is None:
            return None
        return 1.0 - self.values * self.d_max


@dataclass
class SkillGraph:
    """Undirected weighted graph; each edge is stored once with ``i < j``."""

    node_names: tuple[str, ...]
    edge_i: np.ndarray
    edge_j: np.ndarray
    weight: np.ndarray
    length: np.ndarray

    @property
    def n_nodes(self) -> int:
        return len(self.node_names)

    @property
    def n_edges(self) -> int:
        return len(self.edge_i)

    def adjacency(self, attr: str = "weight") -> sparse.csr_matrix:
        if attr == "weight":
            vals = self.weight
        elif attr == "length":
            vals = self.length
        elif attr == "unit":
            vals = np.ones(self.n_edges)
        else:
            raise ValueError(f"unknown edge attribute {attr!r}")
        n = self.n_nodes
        rows = np.concatenate([self.edge_i, self.edge_j])
        cols = np.concatenate([self.edge_j, self.edge_i])
        return sparse.csr_matrix((np.concatenate([vals, vals]), (rows, cols)), shape=(n, n))

    def subgraph(self, nodes: Sequence[int]) -> "SkillGraph":
        """Induced subgraph; nodes are renumbered in the given order."""
        nodes = np.asarray(nodes, dtype=np.int64)
        remap = np.full(self.n_nodes, -1, dtype=np.int64)
        remap[nodes] = np.arange(len(nodes))
        a, b = remap[self.edge_i], remap[self.edge_j]
        keep = (a >= 0) & (b >= 0)
        a, b = a[keep], b[keep]
        lo, hi = np.minimum(a, b), np.maximum(a, b)
        order = np.lexsort((hi, lo))
        return SkillGraph(
            tuple(self.node_names[i] for i in nodes),
            lo[order],
            hi[order],
            self.weight[keep][order],
            self.length[keep][order],
        )

    def to_networkx(self):
        import networkx as nx

        g = nx.Graph()
        g.add_nodes_from(range(self.n_nodes))
        for i, j, w, d in zip(self.edge_i.tolist(), self.edge_j.tolist(), self.weight.tolist(), self.length.tolist()):
            g.add_edge(i, j, weight=w, length=d)
        return g


def to_distances(s: SimilarityMatrix) -> DistanceMatrix:
    raw = 1.0 - np.asarray(s.values, dtype=np.float64)
    np.fill_diagonal(raw, 0.0)
    d_max = float(raw.max())
    if d_max <= 0:
        raise DegenerateError("all embeddings are identical; distances are all zero")
    d = raw / d_max
    d = 0.5 * (d + d.T)
    np.clip(d, 0.0, 1.0, out=d)
    return DistanceMatrix(tuple(s.skill_names), d, d_max)


def kth_neighbor_distance(d: np.ndarray, k: int) -> np.ndarray:
    """Distance from each node to its k-th nearest other node."""
    n = d.shape[0]
    masked = np.array(d, dtype=np.float64, copy=True)
    masked[np.arange(n), np.arange(n)] = np.inf
    return np.partition(masked, k - 1, axis=1)[:, k - 1]


def cknn_sparsify(d: DistanceMatrix, k: int = 15, delta: float = 1.0) -> SkillGraph:
    """Continuous k-nearest-neighbour graph.

    Nodes ``i`` and ``j`` are joined when ``d_ij < delta * sqrt(d_i^k d_j^k)``.
    Edges carry the similarity recovered from ``d`` as weight (unit weight
    when the distances have no similarity origin) and ``d_ij`` as length.
    Edges whose similarity is not positive cannot act as diffusion weights
    and are left out.
    """
    values = np.asarray(d.values, dtype=np.float64)
    n = values.shape[0]
    if not 1 <= k <= n - 1:
        raise ValueError(f"k must be in [1, {n - 1}], got {k}")
    if not delta > 0:
        raise ValueError(f"delta must be positive, got {delta}")
    dk = kth_neighbor_distance(values, k)
    if np.isinf(delta):
        threshold = np.full((n, n), np.inf)
    else:
        threshold = delta * np.sqrt(np.outer(dk, dk))
    iu, ju = np.triu_indices(n, k=1)
    keep = values[iu, ju] < threshold[iu, ju]
    ei, ej = iu[keep], ju[keep]
    lengths = values[ei, ej]
    sim = d.similarity()
    weights = np.ones(len(ei)) if sim is None else sim[ei, ej]
    positive = weights > 0
    if not positive.all():
        log.warning("dropping %d CkNN edges with non-positive similarity", int((~positive).sum()))
    return SkillGraph(tuple(d.skill_names), ei[positive], ej[positive], weights[positive], lengths[positive])


def components(g: SkillGraph) -> list[np.ndarray]:
    """Connected components, each as a sorted array of node indices."""
    _, labels = connected_components(g.adjacency("unit"), directed=False)
    return [np.flatnonzero(labels == c) for c in range(labels.max() + 1)] if g.n_nodes else []


def largest_component(g: SkillGraph) -> tuple[SkillGraph, list[str]]:
    """Induced subgraph on the largest connected component.

    Ties in size go to the component holding the lexicographically
    smallest skill name. Also returns the names of the dropped skills.
    """
    comps = components(g)
    if len(comps) <= 1:
        return g, []
    best = min(comps, key=lambda c: (-len(c), min(g.node_names[i] for i in c)))
    dropped_mask = np.ones(g.n_nodes, dtype=bool)
    dropped_mask[best] = False
    dropped = [g.node_names[i] for i in np.flatnonzero(dropped_mask)]
    return g.subgraph(best), dropped


def sparsification_report(n_nodes: int, g: SkillGraph) -> dict:
    candidates = n_nodes * (n_nodes - 1) // 2
    return {
        "n_nodes": n_nodes,
        "candidate_edges": candidates,
        "kept_edges": g.n_edges,
        "kept_fraction": g.n_edges / candidates if candidates else 0.0,
    }


def save_graph(g: SkillGraph, edges_path: Path, nodes_path: Path) -> None:
    with open(edges_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill_i", "skill_j", "similarity", "distance"])
        for i, j, s, d in zip(g.edge_i.tolist(), g.edge_j.tolist(), g.weight.tolist(), g.length.tolist()):
            w.writerow([g.node_names[i], g.node_names[j], repr(s), repr(d)])
    with open(nodes_path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "skill"])
        for idx, name in enumerate(g.node_names):
            w.writerow([idx, name])


def load_graph(edges_path: Path, nodes_path: Path) -> SkillGraph:
    with open(nodes_path, newline="", encoding="utf-8") as fh:
        names = [r["skill"] for r in sorted(csv.DictReader(fh), key=lambda r: int(r["index"]))]
    index = {s: i for i, s in enumerate(names)}
    ei, ej, ws, ds = [], [], [], []
    with open(edges_path, newline="", encoding="utf-8") as fh:
        for r in csv.DictReader(fh):
            ei.append(index[r["skill_i"]])
            ej.append(index[r["skill_j"]])
            ws.append(float(r["similarity"]))
            ds.append(float(r["distance"]))
    return SkillGraph(
        tuple(names),
        np.array(ei, dtype=np.int64),
        np.array(ej, dtype=np.int64),
        np.array(ws, dtype=np.float64),
        np.array(ds, dtype=np.float64),
    )


def write_dot(g: SkillGraph, path: Path) -> None:
    def q(s):
        return '"' + s.replace("\\", "\\\\").replace('"', '\\"') + '"'

    with open(path, "w", encoding="utf-8") as fh:
        fh.write("graph skills {\n")
        for name in g.node_names:
            fh.write(f"  {q(name)};\n")
        for i, j, w in zip(g.edge_i.tolist(), g.edge_j.tolist(), g.weight.tolist()):
            fh.write(f"  {q(g.node_names[i])} -- {q(g.node_names[j])} [weight={w:.6g}];\n")
        fh.write("}\n")
