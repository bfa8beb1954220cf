"""Per-skill and per-cluster descriptive statistics of a clustered skill graph."""

from __future__ import annotations

import csv
import json
import logging
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Iterable, Mapping, Sequence

import numpy as np

from .corpus import CooccurrenceMatrix, MappedAdvert
from .errors import ConnectivityError, DegenerateError
from .graphbuild import SkillGraph, components
from .stability import Partition

log = logging.getLogger(__name__)

PATH_LENGTHS = ("distance", "unit")


def _labels(p) -> np.ndarray:
    return p.labels if isinstance(p, Partition) else np.asarray(p)


def _require_connected(g: SkillGraph) -> None:
    if g.n_nodes > 1 and len(components(g)) > 1:
        raise ConnectivityError("centralities need a connected graph; take the largest component first")


def _nx_graph(g: SkillGraph, lengths: str):
    if lengths not in PATH_LENGTHS:
        raise ValueError(f"lengths must be one of {PATH_LENGTHS}, got {lengths!r}")
    nxg = g.to_networkx()
    if lengths == "unit":
        for _, _, data in nxg.edges(data=True):
            data["length"] = 1.0
    return nxg


# ---------------------------------------------------------------------------
# centralities


def closeness(g: SkillGraph, lengths: str = "distance") -> np.ndarray:
    """Closeness centrality ``(n - 1) / sum_j dist(i, j)``.

    Parameters
    ----------
    g : SkillGraph
        Connected graph.
    lengths : {"distance", "unit"}
        Edge lengths used for shortest paths: the stored distances, or one
        per edge (hop counts).
    """
    import networkx as nx

    _require_connected(g)
    nxg = _nx_graph(g, lengths)
    c = nx.closeness_centrality(nxg, distance="length")
    return np.array([c[i] for i in range(g.n_nodes)], dtype=np.float64)


def betweenness(g: SkillGraph, lengths: str = "distance") -> np.ndarray:
    """Shortest-path betweenness normalised by ``(n - 1)(n - 2) / 2``.

    A pair with several shortest paths credits each intermediate node with
    the fraction of those paths passing through it.
    """
    import networkx as nx

    _require_connected(g)
    nxg = _nx_graph(g, lengths)
    b = nx.betweenness_centrality(nxg, weight="length", normalized=True)
    return np.array([b[i] for i in range(g.n_nodes)], dtype=np.float64)


def _leading_eigenvector(a: np.ndarray, tol: float = 1e-12, max_iter: int = 10_000) -> np.ndarray:
    # power iteration on A + I; the shift keeps bipartite pieces from oscillating
    n = a.shape[0]
    m = a + np.eye(n)
    x = np.full(n, 1.0 / math.sqrt(n))
    for _ in range(max_iter):
        y = m @ x
        y /= np.linalg.norm(y)
        if np.abs(y - x).max() < tol:
            return y
        x = y
    log.warning("power iteration did not converge in %d steps", max_iter)
    return x


def eigenvector_subset(g: SkillGraph, p, cluster: int, fraction: float = 0.10, minimum: int = 20) -> list[str]:
    """Most central skills of one cluster, for labelling.

    Eigenvector centrality is computed on the similarity-weighted subgraph
    induced by the cluster, restricted to its largest connected component;
    members outside that component follow in input order. Returns the top
    ``max(ceil(fraction * size), minimum)`` skills, or the whole cluster if
    it is smaller, in descending centrality.
    """
    labels = _labels(p)
    members = np.flatnonzero(labels == cluster)
    if members.size == 0:
        raise ValueError(f"cluster {cluster} is empty")
    sub = g.subgraph(members)
    comps = components(sub)
    main = min(comps, key=lambda c: (-len(c), c[0]))
    a = sub.adjacency("weight").toarray()[np.ix_(main, main)]
    cent = _leading_eigenvector(a)
    ranked = [int(main[i]) for i in np.lexsort((np.arange(len(main)), -np.round(cent, 12)))]
    in_main = np.zeros(len(members), dtype=bool)
    in_main[main] = True
    ranked += [int(i) for i in np.flatnonzero(~in_main)]
    count = min(len(members), max(math.ceil(fraction * len(members)), minimum))
    return [sub.node_names[i] for i in ranked[:count]]


def _quote(skill: str) -> str:
    return "'" + skill.replace("\\", "\\\\").replace("'", "\\'") + "'"


def label_prompt(skills: Sequence[str]) -> str:
    """Prompt asking a language model to name a cluster from its core skills.

    Skills are single-quoted; backslashes and apostrophes inside a name are
    backslash-escaped.
    """
    if isinstance(skills, str) or len(skills) == 0:
        raise ValueError("label_prompt needs a non-empty list of skills")
    listing = "[" + ", ".join(_quote(s) for s in skills) + "]"
    return (
        "This is a list of the most representative skills extracted from a skill cluster "
        "and they are ordered by their eigenvector centralities in descending order. "
        "Please summarise the following list in one word or phrase such that it captures "
        f"the semantic meaning of each skill. The list is: {listing}."
    )


# ---------------------------------------------------------------------------
# cluster structure


def containment(g: SkillGraph, p) -> np.ndarray:
    """Share of each node's weighted degree that stays inside its cluster.

    Isolated nodes get NaN and are reported in a warning.
    """
    labels = _labels(p)
    if len(labels) != g.n_nodes:
        raise ValueError("partition does not cover the graph")
    w = g.weight
    same = labels[g.edge_i] == labels[g.edge_j]
    n = g.n_nodes
    total = np.bincount(g.edge_i, w, n) + np.bincount(g.edge_j, w, n)
    inner = np.bincount(g.edge_i[same], w[same], n) + np.bincount(g.edge_j[same], w[same], n)
    out = np.full(n, np.nan)
    ok = total > 0
    if not ok.all():
        log.warning("%d isolated nodes excluded from containment", int((~ok).sum()))
    out[ok] = np.clip(inner[ok] / total[ok], 0.0, 1.0)
    return out


def cluster_medians(values: np.ndarray, p) -> list[float | None]:
    """Median of ``values`` over each cluster, ignoring NaN; None when empty."""
    labels = _labels(p)
    out = []
    for c in range(int(labels.max()) + 1 if len(labels) else 0):
        v = values[labels == c]
        v = v[~np.isnan(v)]
        out.append(float(np.median(v)) if v.size else None)
    return out


def coverage_matrix(k: CooccurrenceMatrix, p) -> np.ndarray:
    """Cluster co-mention matrix ``B = U^T K U`` normalised to unit diagonal.

    ``U[i, c]`` is the mention count of skill ``i`` when it lies in cluster
    ``c``. Returns ``B_ij / sqrt(B_ii B_jj)``.
    """
    labels = _labels(p)
    if len(labels) != k.n_skills:
        raise ValueError("partition does not cover the co-occurrence vocabulary")
    c = int(labels.max()) + 1
    u = np.zeros((k.n_skills, c))
    u[np.arange(k.n_skills), labels] = k.mentions
    counts = np.asarray(k.counts, dtype=np.float64)
    b = u.T @ counts @ u
    d = np.diag(b).copy()
    bad = np.flatnonzero(d <= 0)
    if bad.size:
        raise DegenerateError(f"cluster {bad[0]} has no mentions; its coverage row is undefined")
    scale = np.sqrt(d)
    out = b / np.outer(scale, scale)
    out = 0.5 * (out + out.T)
    np.fill_diagonal(out, 1.0)
    return out


def restrict_cooccurrence(k: CooccurrenceMatrix, names: Sequence[str]) -> CooccurrenceMatrix:
    """Rows and columns of ``k`` for ``names``, in that order."""
    index = {s: i for i, s in enumerate(k.skill_names)}
    missing = [s for s in names if s not in index]
    if missing:
        raise KeyError(f"skill {missing[0]!r} is not in the co-occurrence matrix")
    idx = np.array([index[s] for s in names], dtype=np.int64)
    return CooccurrenceMatrix(tuple(names), np.asarray(k.counts)[np.ix_(idx, idx)], k.n_adverts)


def semantic_similarity(
    emb: Mapping[str, np.ndarray], names: Sequence[str], p, cluster: int
) -> float | None:
    """Median pairwise cosine similarity of the cluster's text embeddings.

    Returns None for a single-skill cluster.
    """
    labels = _labels(p)
    members = [names[i] for i in np.flatnonzero(labels == cluster)]
    for s in members:
        if s not in emb:
            raise KeyError(f"no semantic embedding for skill {s!r}")
    if len(members) < 2:
        return None
    x = np.array([emb[s] for s in members], dtype=np.float64)
    norms = np.linalg.norm(x, axis=1)
    if np.any(norms == 0):
        raise DegenerateError(f"skill {members[int(np.argmin(norms))]!r} has a zero embedding")
    x = x / norms[:, None]
    iu = np.triu_indices(len(members), k=1)
    return float(np.median((x @ x.T)[iu]))


# ---------------------------------------------------------------------------
# adverts


def assign_adverts(adverts: Iterable, names: Sequence[str], p) -> list[frozenset[int]]:
    """Clusters touched by each advert's skills.

    Skills outside ``names`` (for example those dropped with small graph
    components) are ignored.
    """
    labels = _labels(p)
    where = {s: int(labels[i]) for i, s in enumerate(names)}
    out = []
    for a in adverts:
        skills = a.skills if isinstance(a, MappedAdvert) else a
        out.append(frozenset(where[s] for s in skills if s in where))
    return out


@dataclass
class MentionStats:
    n_mentions: int
    average_mentions: float
    average_salary: float | None
    n_adverts: int


def cluster_mentions_and_salary(adverts: Sequence[MappedAdvert], names: Sequence[str], p) -> list[MentionStats]:
    """Mentions per advert and mean salary of the adverts touching each cluster.

    ``average_mentions`` divides a cluster's skill mentions by the total
    number of adverts; ``average_salary`` averages the salaried adverts
    assigned to the cluster and is None when there are none.
    """
    labels = _labels(p)
    c = int(labels.max()) + 1
    where = {s: int(labels[i]) for i, s in enumerate(names)}
    mentions = np.zeros(c, dtype=np.int64)
    assigned = np.zeros(c, dtype=np.int64)
    pay_sum = np.zeros(c)
    pay_n = np.zeros(c, dtype=np.int64)
    for a in adverts:
        hit = [where[s] for s in a.skills if s in where]
        np.add.at(mentions, hit, 1)
        touched = list(set(hit))
        assigned[touched] += 1
        if a.salary is not None:
            pay_sum[touched] += a.salary
            pay_n[touched] += 1
    total = len(adverts)
    return [
        MentionStats(
            int(mentions[j]),
            float(mentions[j] / total) if total else 0.0,
            float(pay_sum[j] / pay_n[j]) if pay_n[j] else None,
            int(assigned[j]),
        )
        for j in range(c)
    ]


# ---------------------------------------------------------------------------
# taxonomy comparison


def _categories_of(names: Sequence[str], cats: Mapping[str, str]) -> list[str]:
    out = []
    for s in names:
        if s not in cats:
            raise KeyError(f"skill {s!r} has no taxonomy category")
        out.append(cats[s])
    return out


def thematic_entropy(names: Sequence[str], p, cats: Mapping[str, str], cluster: int) -> float:
    """Shannon entropy in bits of the cluster's taxonomy-category mix."""
    labels = _labels(p)
    members = [names[i] for i in np.flatnonzero(labels == cluster)]
    counts = np.array(list(Counter(_categories_of(members, cats)).values()), dtype=np.float64)
    if counts.size == 0:
        return 0.0
    q = counts / counts.sum()
    return float(max(-np.sum(q * np.log2(q)), 0.0)) + 0.0


def crosswalk(names: Sequence[str], p, cats: Mapping[str, str]) -> tuple[list[str], np.ndarray]:
    """Skill counts by (cluster, category); categories sorted by name."""
    labels = _labels(p)
    skill_cats = _categories_of(names, cats)
    columns = sorted(set(skill_cats))
    col = {c: j for j, c in enumerate(columns)}
    table = np.zeros((int(labels.max()) + 1, len(columns)), dtype=np.int64)
    for lab, cat in zip(labels.tolist(), skill_cats):
        table[lab, col[cat]] += 1
    return columns, table


def crosswalk_json(columns: Sequence[str], table: np.ndarray) -> dict:
    links = [
        {"source": f"cluster:{a}", "target": f"category:{columns[b]}", "value": int(table[a, b])}
        for a, b in zip(*np.nonzero(table))
    ]
    return {"clusters": list(range(table.shape[0])), "categories": list(columns), "links": links}


def load_categories(path: str | Path) -> dict[str, str]:
    """Read a ``skill,category`` CSV."""
    with open(path, newline="", encoding="utf-8") as fh:
        return {row["skill"]: row["category"] for row in csv.DictReader(fh)}


def load_semantic_embeddings(path: str | Path) -> dict[str, np.ndarray]:
    from .embedding import load_vectors_csv

    names, rows = load_vectors_csv(Path(path))
    if rows.size and np.any(np.linalg.norm(rows, axis=1) == 0):
        raise DegenerateError("semantic embeddings contain a zero vector")
    return dict(zip(names, rows))


# ---------------------------------------------------------------------------
# report


@dataclass
class ClusterSummary:
    cluster: int
    n_skills: int
    n_mentions: int
    average_mentions: float
    semantic_similarity: float | None
    containment: float | None
    closeness: float | None
    average_salary: float | None
    entropy: float | None
    label_skills: list[str] = field(default_factory=list)
    label_prompt: str = ""


@dataclass
class ClusterReport:
    clusters: list[ClusterSummary]
    n_adverts: int

    @property
    def n_skills(self) -> int:
        return sum(c.n_skills for c in self.clusters)

    def to_json(self) -> dict:
        return {"n_adverts": self.n_adverts, "n_skills": self.n_skills, "clusters": [asdict(c) for c in self.clusters]}

    def write(self, json_path: Path, csv_path: Path) -> None:
        with open(json_path, "w", encoding="utf-8") as fh:
            json.dump(self.to_json(), fh, indent=2, ensure_ascii=False)
            fh.write("\n")
        cols = [
            "cluster",
            "n_skills",
            "n_mentions",
            "average_mentions",
            "semantic_similarity",
            "containment",
            "closeness",
            "average_salary",
            "entropy",
            "label_skills",
        ]
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh)
            w.writerow(cols)
            for c in self.clusters:
                row = asdict(c)
                row["label_skills"] = "|".join(c.label_skills)
                w.writerow(["" if row[k] is None else (repr(row[k]) if isinstance(row[k], float) else row[k]) for k in cols])


def cluster_report(
    g: SkillGraph,
    p,
    adverts: Sequence[MappedAdvert],
    semantic: Mapping[str, np.ndarray] | None = None,
    categories: Mapping[str, str] | None = None,
    lengths: str = "distance",
) -> ClusterReport:
    """Summary row per cluster of ``p`` over the nodes of ``g``."""
    labels = _labels(p)
    names = g.node_names
    c = int(labels.max()) + 1
    cont = cluster_medians(containment(g, labels), labels)
    close = cluster_medians(closeness(g, lengths), labels)
    stats = cluster_mentions_and_salary(adverts, names, labels)
    rows = []
    for j in range(c):
        core = eigenvector_subset(g, labels, j)
        rows.append(
            ClusterSummary(
                cluster=j,
                n_skills=int(np.sum(labels == j)),
                n_mentions=stats[j].n_mentions,
                average_mentions=stats[j].average_mentions,
                semantic_similarity=None if semantic is None else semantic_similarity(semantic, names, labels, j),
                containment=cont[j],
                closeness=close[j],
                average_salary=stats[j].average_salary,
                entropy=None if categories is None else thematic_entropy(names, labels, categories, j),
                label_skills=core,
                label_prompt=label_prompt(core),
            )
        )
    return ClusterReport(rows, len(adverts))
