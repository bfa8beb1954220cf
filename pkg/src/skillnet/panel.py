"""Regional skill-demand profiles and comparisons between two time periods."""

from __future__ import annotations

import csv
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np
from scipy.cluster.hierarchy import leaves_list, linkage
from scipy.spatial.distance import pdist

from .corpus import MappedAdvert, build_cooccurrence, vocabulary_of
from .embedding import correspondence_analysis, cosine_similarity
from .graphbuild import SkillGraph, cknn_sparsify, largest_component, to_distances
from .metrics import closeness, cluster_mentions_and_salary, containment
from .stability import Partition

log = logging.getLogger(__name__)


@dataclass
class RegionProfile:
    region: str
    percentages: np.ndarray  # one entry per cluster
    n_adverts: int


def region_profiles(
    regions: Sequence[str | None],
    cluster_sets: Sequence[frozenset],
    n_clusters: int,
    all_regions: Sequence[str] | None = None,
) -> list[RegionProfile]:
    """Share of each region's adverts touching each cluster, in percent.

    An advert touching several clusters counts towards each of them, so a
    profile need not sum to 100. Adverts without a region are skipped.
    Regions listed in ``all_regions`` that have no adverts are left out
    with a warning. Profiles come sorted by region code.
    """
    if len(regions) != len(cluster_sets):
        raise ValueError("regions and cluster_sets differ in length")
    counts: dict[str, np.ndarray] = {}
    totals: dict[str, int] = {}
    for reg, clusters in zip(regions, cluster_sets):
        if reg is None:
            continue
        row = counts.setdefault(reg, np.zeros(n_clusters, dtype=np.int64))
        totals[reg] = totals.get(reg, 0) + 1
        for c in clusters:
            row[c] += 1
    empty = sorted(set(all_regions or ()) - set(totals))
    if empty:
        log.warning("regions without adverts omitted: %s", ", ".join(empty))
    return [RegionProfile(r, 100.0 * counts[r] / totals[r], totals[r]) for r in sorted(totals)]


def zscores(profiles: Sequence[RegionProfile]) -> np.ndarray:
    """Column-wise z-scores of the region x cluster percentages.

    Uses the sample standard deviation. Columns without variance become
    zeros, with a warning.
    """
    if len(profiles) < 2:
        raise ValueError("z-scores need at least two regions")
    x = np.array([p.percentages for p in profiles], dtype=np.float64)
    mean = x.mean(axis=0)
    sd = x.std(axis=0, ddof=1)
    flat = sd <= 1e-12 * np.maximum(np.abs(mean), 1.0)
    if flat.any():
        log.warning("%d clusters have identical percentages in every region; z-scores set to 0", int(flat.sum()))
    z = np.zeros_like(x)
    z[:, ~flat] = (x[:, ~flat] - mean[~flat]) / sd[~flat]
    return z


@dataclass
class Dendrogram:
    """Agglomerative merge tree in scipy's linkage convention.

    Row ``t`` of ``merges`` joins clusters ``a`` and ``b`` (ids below ``n``
    are leaves, id ``n + t`` is the cluster formed at step ``t``) at
    ``height`` into a cluster of ``size`` leaves.
    """

    merges: np.ndarray
    leaves: list[int]
    labels: list[str] | None = None

    def to_json(self) -> dict:
        return {
            "labels": self.labels,
            "leaf_order": self.leaves,
            "merges": [
                {"a": int(a), "b": int(b), "height": float(h), "size": int(s)} for a, b, h, s in self.merges.tolist()
            ],
        }


def hier_cluster(matrix: np.ndarray, labels: Sequence[str] | None = None) -> Dendrogram:
    """Average-linkage clustering of the rows under Euclidean distance."""
    x = np.asarray(matrix, dtype=np.float64)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError("hierarchical clustering needs at least two rows")
    # condensed distances up front; a square input would be mistaken for a distance matrix
    z = linkage(pdist(x, "euclidean"), method="average")
    return Dendrogram(z, [int(i) for i in leaves_list(z)], None if labels is None else list(labels))


# ---------------------------------------------------------------------------
# two-period comparison


def build_period_graph(
    adverts: Sequence[MappedAdvert],
    n_components: int = 100,
    include_diagonal: bool = True,
    k: int = 15,
    delta: float = 1.0,
) -> tuple[SkillGraph, list[str]]:
    """Co-occurrence, embedding and CkNN graph built from ``adverts`` alone.

    Returns the largest component and the skills dropped with the others.
    """
    vocab = vocabulary_of(adverts)
    counts = build_cooccurrence(adverts, vocab)
    emb = correspondence_analysis(counts, n_components, include_diagonal)
    g = cknn_sparsify(to_distances(cosine_similarity(emb)), min(k, len(vocab) - 1), delta)
    return largest_component(g)


@dataclass
class PeriodMetrics:
    average_mentions: np.ndarray
    median_closeness: np.ndarray  # NaN when no cluster member is in the period graph
    median_containment: np.ndarray
    skills_per_advert: float
    n_adverts: int
    n_missing: np.ndarray  # members absent from the period graph, per cluster


@dataclass
class PeriodComparison:
    a: PeriodMetrics
    b: PeriodMetrics

    METRICS = ("average_mentions", "median_closeness", "median_containment")

    def delta(self, metric: str) -> np.ndarray:
        return getattr(self.b, metric) - getattr(self.a, metric)

    def relative_delta(self, metric: str) -> np.ndarray:
        va, vb = getattr(self.a, metric), getattr(self.b, metric)
        out = np.full(len(va), np.nan)
        ok = va > 0
        out[ok] = (vb[ok] - va[ok]) / va[ok]
        return out

    def rows(self) -> list[dict]:
        out = []
        for c in range(len(self.a.average_mentions)):
            row = {"cluster": c}
            for m in self.METRICS:
                row[f"{m}_a"] = _num(getattr(self.a, m)[c])
                row[f"{m}_b"] = _num(getattr(self.b, m)[c])
                row[f"{m}_delta"] = _num(self.delta(m)[c])
                row[f"{m}_relative"] = _num(self.relative_delta(m)[c])
            row["missing_a"] = int(self.a.n_missing[c])
            row["missing_b"] = int(self.b.n_missing[c])
            out.append(row)
        return out

    def write(self, csv_path: Path, json_path: Path | None = None) -> None:
        rows = self.rows()
        with open(csv_path, "w", newline="", encoding="utf-8") as fh:
            w = csv.DictWriter(fh, fieldnames=list(rows[0]) if rows else ["cluster"])
            w.writeheader()
            for row in rows:
                w.writerow({k: "" if v is None else v for k, v in row.items()})
        if json_path is not None:
            summary = {
                "skills_per_advert": [self.a.skills_per_advert, self.b.skills_per_advert],
                "n_adverts": [self.a.n_adverts, self.b.n_adverts],
                "clusters": rows,
            }
            with open(json_path, "w", encoding="utf-8") as fh:
                json.dump(summary, fh, indent=2)
                fh.write("\n")


def _num(x):
    x = float(x)
    return None if np.isnan(x) else x


def _period_metrics(adverts, names, labels, n_clusters, graph_kw, lengths) -> PeriodMetrics:
    stats = cluster_mentions_and_salary(adverts, names, labels)
    g, _ = build_period_graph(adverts, **graph_kw)
    pos = {s: i for i, s in enumerate(g.node_names)}
    # cluster of each period-graph node under the fixed partition; -1 if unclustered
    name_pos = {s: i for i, s in enumerate(names)}
    sub = np.array([labels[name_pos[s]] if s in name_pos else -1 for s in g.node_names], dtype=np.int64)
    node_close = closeness(g, lengths)
    # containment is measured against the fixed partition; unclustered nodes form their own group
    node_cont = containment(g, np.where(sub >= 0, sub, n_clusters))
    med_close = np.full(n_clusters, np.nan)
    med_cont = np.full(n_clusters, np.nan)
    missing = np.zeros(n_clusters, dtype=np.int64)
    for c in range(n_clusters):
        members = [names[i] for i in np.flatnonzero(labels == c)]
        idx = [pos[s] for s in members if s in pos]
        missing[c] = len(members) - len(idx)
        if idx:
            med_close[c] = np.median(node_close[idx])
            vals = node_cont[idx]
            vals = vals[~np.isnan(vals)]
            if vals.size:
                med_cont[c] = np.median(vals)
    if missing.any():
        log.info("%d clustered skills absent from a period graph", int(missing.sum()))
    spa = float(np.mean([len(a.skills) for a in adverts])) if adverts else 0.0
    return PeriodMetrics(
        np.array([s.average_mentions for s in stats]), med_close, med_cont, spa, len(adverts), missing
    )


def compare_periods(
    adverts_a: Sequence[MappedAdvert],
    adverts_b: Sequence[MappedAdvert],
    names: Sequence[str],
    p,
    n_components: int = 100,
    include_diagonal: bool = True,
    k: int = 15,
    delta: float = 1.0,
    lengths: str = "distance",
) -> PeriodComparison:
    """Cluster metrics of a fixed partition on graphs rebuilt per period.

    Each period gets its own co-occurrence matrix, embedding and CkNN graph
    (largest component) with the given parameters; average mentions, median
    closeness and median containment are then taken per cluster of ``p``.
    """
    labels = p.labels if isinstance(p, Partition) else np.asarray(p)
    names = list(names)
    n_clusters = int(labels.max()) + 1
    kw = dict(n_components=n_components, include_diagonal=include_diagonal, k=k, delta=delta)
    return PeriodComparison(
        _period_metrics(adverts_a, names, labels, n_clusters, kw, lengths),
        _period_metrics(adverts_b, names, labels, n_clusters, kw, lengths),
    )


def split_periods(adverts: Sequence[MappedAdvert], periods) -> list[list[MappedAdvert]]:
    """Adverts first posted within each inclusive ``(start, end)`` ISO date range."""
    from datetime import date

    spans = [(date.fromisoformat(a), date.fromisoformat(b)) for a, b in periods]
    return [[a for a in adverts if lo <= a.first_posted <= hi] for lo, hi in spans]


def write_profiles(profiles: Sequence[RegionProfile], path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region", "cluster", "percentage", "n_adverts"])
        for prof in profiles:
            for c, v in enumerate(prof.percentages.tolist()):
                w.writerow([prof.region, c, repr(v), prof.n_adverts])


def write_zscores(profiles: Sequence[RegionProfile], z: np.ndarray, path: Path) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["region"] + [f"cluster_{c}" for c in range(z.shape[1])])
        for prof, row in zip(profiles, z):
            w.writerow([prof.region] + [repr(float(v)) for v in row])
