"""Markov Stability: diffusion operators, the stability objective, a
Louvain-style optimiser for it, and the multiscale scan with NVI-based
selection of robust scales."""

from __future__ import annotations

import csv
import json
import logging
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numba
import numpy as np
from scipy.linalg import expm
from scipy.signal import find_peaks

from .errors import ConnectivityError
from .graphbuild import SkillGraph, components

log = logging.getLogger(__name__)

# Minimum gain for a node move, relative to max |f|; guards against cycling
# on round-off.
_MOVE_EPS = 1e-11
# below this |F_ij| / (pi_i pi_j) everywhere the walk has mixed to working
# precision and F carries only round-off
_MIXED_TOL = 1e-8


# ---------------------------------------------------------------------------
# partitions


class Partition:
    """Hard assignment of ``n_nodes`` nodes to clusters ``0..c-1``.

    Labels are canonicalised by order of first appearance, so two
    partitions that differ only by a relabelling compare equal.
    """

    __slots__ = ("labels",)

    def __init__(self, labels):
        labels = np.asarray(labels)
        if labels.ndim != 1:
            raise ValueError("labels must be one-dimensional")
        _, first, inverse = np.unique(labels, return_index=True, return_inverse=True)
        rank = np.empty(len(first), dtype=np.int64)
        rank[np.argsort(first, kind="stable")] = np.arange(len(first))
        self.labels = rank[inverse].astype(np.int64)
        self.labels.setflags(write=False)

    @property
    def n_nodes(self) -> int:
        return len(self.labels)

    @property
    def n_clusters(self) -> int:
        return int(self.labels.max()) + 1 if len(self.labels) else 0

    def cluster_of(self, node: int) -> int:
        return int(self.labels[node])

    def members(self, cluster: int) -> np.ndarray:
        return np.flatnonzero(self.labels == cluster)

    def sizes(self) -> np.ndarray:
        return np.bincount(self.labels, minlength=self.n_clusters)

    def indicator(self) -> np.ndarray:
        h = np.zeros((self.n_nodes, self.n_clusters))
        h[np.arange(self.n_nodes), self.labels] = 1.0
        return h

    def key(self) -> bytes:
        return self.labels.tobytes()

    def __eq__(self, other):
        return isinstance(other, Partition) and np.array_equal(self.labels, other.labels)

    def __hash__(self):
        return hash(self.key())

    def __repr__(self):
        return f"Partition(n_nodes={self.n_nodes}, n_clusters={self.n_clusters})"


# ---------------------------------------------------------------------------
# diffusion


@dataclass
class DiffusionOperators:
    adjacency: np.ndarray
    degree: np.ndarray
    transition: np.ndarray  # M = D^+ A
    rate: np.ndarray  # Q = M - I
    stationary: np.ndarray  # pi

    @property
    def n_nodes(self) -> int:
        return len(self.degree)


def build_operators(g: SkillGraph, weight: str = "weight") -> DiffusionOperators:
    """Random-walk operators of a connected graph.

    ``weight`` selects the edge attribute used as adjacency ("weight" for
    similarities, "unit" for an unweighted walk).
    """
    if g.n_nodes == 0:
        raise ConnectivityError("graph has no nodes")
    if len(components(g)) > 1:
        raise ConnectivityError("graph is disconnected; restrict it to its largest component first")
    a = g.adjacency(weight).toarray()
    deg = a.sum(axis=1)
    inv = np.divide(1.0, deg, out=np.zeros_like(deg), where=deg > 0)
    m = inv[:, None] * a
    # a lone node has nowhere to go, so the walk stays put
    m[deg == 0, deg == 0] = 1.0
    q = m - np.eye(len(deg))
    pi = deg / deg.sum() if deg.sum() > 0 else np.full(len(deg), 1.0 / len(deg))
    return DiffusionOperators(a, deg, m, q, pi)


def propagator(ops: DiffusionOperators, r: float) -> np.ndarray:
    """Transition matrix ``exp(r Q)`` of the continuous-time walk."""
    if r < 0:
        raise ValueError(f"Markov scale must be non-negative, got {r}")
    if r == 0:
        return np.eye(ops.n_nodes)
    return expm(r * ops.rate)


def quality_matrix(ops: DiffusionOperators, r: float) -> np.ndarray:
    """Symmetrised ``Pi P(r) - pi^T pi``; its block sums give the stability.

    Once the walk has mixed, i.e. every entry is below ``1e-8`` relative to
    ``pi_i pi_j``, the matrix is returned as exact zeros.
    """
    pi = ops.stationary
    base = np.outer(pi, pi)
    f = pi[:, None] * propagator(ops, r) - base
    f = 0.5 * (f + f.T)
    if np.all(np.abs(f) < _MIXED_TOL * base):
        f[:] = 0.0
    return f


def score_from_quality(f: np.ndarray, labels: np.ndarray) -> float:
    labels = np.asarray(labels)
    c = int(labels.max()) + 1
    h = np.zeros((len(labels), c))
    h[np.arange(len(labels)), labels] = 1.0
    return float(np.trace(h.T @ f @ h))


def stability_score(ops: DiffusionOperators, r: float, partition: Partition) -> float:
    """Markov Stability ``Tr[H^T (Pi P(r) - pi^T pi) H]`` of a partition."""
    if partition.n_nodes != ops.n_nodes:
        raise ValueError(f"partition covers {partition.n_nodes} nodes, graph has {ops.n_nodes}")
    return score_from_quality(quality_matrix(ops, r), partition.labels)


# ---------------------------------------------------------------------------
# optimiser


@numba.njit(cache=True)
def _move_nodes(f, labels, order, eps):
    """Greedy local moves on quality matrix ``f`` until no move helps.

    ``labels`` are updated in place; cluster ids live in ``0..n-1`` so an
    empty cluster is always available. Returns whether anything moved.
    """
    n = f.shape[0]
    s = np.zeros((n, n))
    for i in range(n):
        for j in range(n):
            s[i, labels[j]] += f[i, j]
    size = np.zeros(n, dtype=np.int64)
    for j in range(n):
        size[labels[j]] += 1

    moved_any = False
    for _sweep in range(10000):
        moved = False
        for idx in range(n):
            i = order[idx]
            a = labels[i]
            own = s[i, a] - f[i, i]
            best = a
            best_gain = 0.0
            seen_empty = False
            for c in range(n):
                if c == a:
                    continue
                if size[c] == 0:
                    if seen_empty:
                        continue
                    seen_empty = True
                gain = s[i, c] - own
                if gain > best_gain + eps:
                    best = c
                    best_gain = gain
            if best != a:
                for j in range(n):
                    fji = f[j, i]
                    s[j, a] -= fji
                    s[j, best] += fji
                size[a] -= 1
                size[best] += 1
                labels[i] = best
                moved = True
                moved_any = True
        if not moved:
            break
    return moved_any


def _contiguous(labels: np.ndarray) -> np.ndarray:
    return np.unique(labels, return_inverse=True)[1].astype(np.int64)


def louvain(f: np.ndarray, rng: np.random.Generator, init: np.ndarray | None = None) -> np.ndarray:
    """Maximise ``sum_{i,j same cluster} f_ij`` by local moves and aggregation.

    ``f`` must be symmetric; it may contain negative entries. Node sweep
    orders come from ``rng``. After the multilevel pass the flattened
    partition is refined by node moves on the original matrix, and the
    whole procedure repeats while that refinement still finds gains.
    """
    f = np.ascontiguousarray(f, dtype=np.float64)
    n = f.shape[0]
    eps = _MOVE_EPS * float(np.abs(f).max()) if n else 0.0
    membership = np.arange(n, dtype=np.int64) if init is None else _contiguous(np.asarray(init))
    for _outer in range(100):
        level_f = f
        if init is not None or _outer > 0:
            h = np.zeros((n, membership.max() + 1))
            h[np.arange(n), membership] = 1.0
            level_f = np.ascontiguousarray(h.T @ f @ h)
        while level_f.shape[0] > 1:
            m = level_f.shape[0]
            labels = np.arange(m, dtype=np.int64)
            order = rng.permutation(m).astype(np.int64)
            if not _move_nodes(level_f, labels, order, eps):
                break
            labels = _contiguous(labels)
            membership = labels[membership]
            h = np.zeros((m, labels.max() + 1))
            h[np.arange(m), labels] = 1.0
            level_f = np.ascontiguousarray(h.T @ level_f @ h)

        refined = membership.copy()
        order = rng.permutation(n).astype(np.int64)
        if not _move_nodes(f, refined, order, eps):
            break
        membership = _contiguous(refined)
    return membership


@dataclass
class OptimizeResult:
    partition: Partition
    score: float
    run_nvi: float
    n_runs: int


def optimize_partition(
    ops: DiffusionOperators,
    r: float,
    n_runs: int = 50,
    seed: int | np.random.SeedSequence = 0,
    n_nvi_runs: int | None = None,
    quality: np.ndarray | None = None,
) -> OptimizeResult:
    """Best of ``n_runs`` seeded optimiser runs at Markov scale ``r``.

    ``run_nvi`` is the mean pairwise NVI between the partitions of the first
    ``n_nvi_runs`` runs (all runs by default); low values mean the optimiser
    lands on the same partition regardless of sweep order.
    """
    if n_runs < 1:
        raise ValueError(f"n_runs must be >= 1, got {n_runs}")
    f = quality_matrix(ops, r) if quality is None else quality
    if not f.any():
        # every partition scores zero; report the single-cluster limit
        labels = np.zeros(f.shape[0], dtype=np.int64)
        return OptimizeResult(Partition(labels), 0.0, 0.0, n_runs)
    rng = np.random.default_rng(seed)
    best_labels, best_score = None, -np.inf
    found = []
    for _ in range(n_runs):
        labels = louvain(f, rng)
        score = score_from_quality(f, labels)
        found.append(labels)
        if score > best_score:
            best_labels, best_score = labels, score
    k = n_runs if n_nvi_runs is None else max(1, min(n_nvi_runs, n_runs))
    return OptimizeResult(Partition(best_labels), best_score, mean_pairwise_nvi(found[:k]), n_runs)


# ---------------------------------------------------------------------------
# partition comparison


def nvi(p1: Partition | Sequence[int], p2: Partition | Sequence[int]) -> float:
    """Normalised variation of information, in ``[0, 1]``.

    Conditional entropies over the joint label distribution divided by the
    joint entropy (natural logs); 0 when the joint entropy is 0.
    """
    a = p1.labels if isinstance(p1, Partition) else np.asarray(p1)
    b = p2.labels if isinstance(p2, Partition) else np.asarray(p2)
    if a.shape != b.shape:
        raise ValueError("partitions cover different node sets")
    n = len(a)
    if n == 0:
        return 0.0
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    nb = ib.max() + 1
    joint, counts = np.unique(ia * nb + ib, return_counts=True)
    na = np.bincount(ia)
    nbc = np.bincount(ib)
    ra, rb = joint // nb, joint % nb
    pij = counts / n
    # fsum is order independent, which keeps nvi(a, b) == nvi(b, a) exactly
    h_joint = -math.fsum(pij * np.log(pij))
    if h_joint <= 0:
        return 0.0
    h_ab = -math.fsum(pij * np.log(counts / nbc[rb]))
    h_ba = -math.fsum(pij * np.log(counts / na[ra]))
    vi = h_ab + h_ba
    # + 0.0 turns a negative zero into 0.0
    return float(min(max(vi / h_joint, 0.0), 1.0)) + 0.0


def mean_pairwise_nvi(partitions: Sequence) -> float:
    """Mean NVI over all unordered pairs; identical partitions are pooled."""
    if len(partitions) < 2:
        return 0.0
    groups: dict[bytes, list] = {}
    for p in partitions:
        labels = Partition(p.labels if isinstance(p, Partition) else p).labels
        groups.setdefault(labels.tobytes(), [labels, 0])[1] += 1
    uniq = list(groups.values())
    total = 0.0
    for x in range(len(uniq)):
        for y in range(x + 1, len(uniq)):
            total += uniq[x][1] * uniq[y][1] * nvi(uniq[x][0], uniq[y][0])
    m = len(partitions)
    return total / (m * (m - 1) / 2)


def nvi_matrix(partitions: Sequence[Partition]) -> np.ndarray:
    n = len(partitions)
    out = np.zeros((n, n))
    for i in range(n):
        for j in range(i + 1, n):
            out[i, j] = out[j, i] = 0.0 if partitions[i] == partitions[j] else nvi(partitions[i], partitions[j])
    return out


# ---------------------------------------------------------------------------
# scale scan


def log_grid(log_min: float, log_max: float, n_scales: int) -> np.ndarray:
    """``n_scales`` Markov scales evenly spaced in ``log10``."""
    if n_scales < 1:
        raise ValueError("n_scales must be >= 1")
    if n_scales > 1 and not log_max > log_min:
        raise ValueError("log_max must exceed log_min")
    return np.logspace(log_min, log_max, n_scales)


@dataclass
class ScaleScan:
    scales: np.ndarray
    partitions: list[Partition]
    stability: np.ndarray
    run_nvi: np.ndarray
    nvi: np.ndarray
    block_nvi: np.ndarray | None = None
    selected: list[int] = field(default_factory=list)

    @property
    def log_scales(self) -> np.ndarray:
        return np.log10(self.scales)

    @property
    def n_clusters(self) -> np.ndarray:
        return np.array([p.n_clusters for p in self.partitions])


def _scan_one(args):
    ops, r, n_runs, seed, n_nvi_runs = args
    res = optimize_partition(ops, r, n_runs=n_runs, seed=seed, n_nvi_runs=n_nvi_runs)
    return res.partition.labels.copy(), res.score, res.run_nvi


def scan_scales(
    ops: DiffusionOperators,
    scales: Sequence[float],
    n_runs: int = 50,
    seed: int = 0,
    n_nvi_runs: int | None = None,
    workers: int = 1,
) -> ScaleScan:
    """Optimise the stability at every scale of ``scales``.

    Each scale gets its own seed stream derived from ``(seed, index)`` so the
    result does not depend on ``workers``.
    """
    scales = np.asarray(scales, dtype=np.float64)
    if scales.size == 0:
        raise ValueError("scale grid is empty")
    if np.any(np.diff(scales) <= 0):
        raise ValueError("scales must be strictly increasing")
    jobs = [(ops, float(r), n_runs, np.random.SeedSequence([seed, t]), n_nvi_runs) for t, r in enumerate(scales)]
    if workers > 1:
        with ProcessPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(_scan_one, jobs))
    else:
        results = [_scan_one(j) for j in jobs]
    partitions = [Partition(lab) for lab, _, _ in results]
    return ScaleScan(
        scales=scales,
        partitions=partitions,
        stability=np.array([s for _, s, _ in results]),
        run_nvi=np.array([v for _, _, v in results]),
        nvi=nvi_matrix(partitions),
    )


def relaxation_time(ops: DiffusionOperators) -> float:
    """Slowest relaxation time ``1 / lambda_2`` of the random walk."""
    sq = np.sqrt(ops.degree)
    sym = ops.adjacency / np.outer(sq, sq)
    lam = 1.0 - np.linalg.eigvalsh(sym)[::-1]
    return 1.0 / lam[1] if len(lam) > 1 and lam[1] > 0 else 1.0


def auto_scale_range(
    ops: DiffusionOperators,
    min_clusters: int,
    max_clusters: int,
    seed: int = 0,
    n_runs: int = 3,
    bounds: tuple[float, float] | None = None,
    steps: int = 14,
) -> tuple[float, float]:
    """``log10`` scale bounds whose partitions bracket a cluster-count range.

    Bisects for the first scale with fewer than ``max_clusters`` clusters
    and the first with at most ``min_clusters``. The default search window
    runs from ``1e-3 / N`` to twenty relaxation times, beyond which the
    stability is lost in round-off.
    """
    max_clusters = min(max_clusters, ops.n_nodes)
    if bounds is None:
        bounds = (-3.0 - np.log10(ops.n_nodes), float(np.log10(20.0 * relaxation_time(ops))))

    def count(s):
        return optimize_partition(ops, 10.0**s, n_runs=n_runs, seed=seed).partition.n_clusters

    def bisect(pred):
        lo, hi = bounds
        if pred(lo):
            return lo
        if not pred(hi):
            return hi
        for _ in range(steps):
            mid = 0.5 * (lo + hi)
            if pred(mid):
                hi = mid
            else:
                lo = mid
        return hi

    # first scale where the count drops below max_clusters, minus one step
    s_lo = bisect(lambda s: count(s) < max_clusters)
    s_hi = bisect(lambda s: count(s) <= min_clusters)
    if s_hi <= s_lo:
        s_hi = s_lo + 1.0
    return s_lo, s_hi


# ---------------------------------------------------------------------------
# robust scale selection


@dataclass
class RobustScale:
    index: int
    scale: float
    partition: Partition
    block_nvi: float
    depth: float


def block_nvi(nvi_mat: np.ndarray, window: int) -> np.ndarray:
    """Mean of the cross-scale NVI block centred on each scale index."""
    n = nvi_mat.shape[0]
    out = np.empty(n)
    for t in range(n):
        lo, hi = max(0, t - window), min(n, t + window + 1)
        out[t] = nvi_mat[lo:hi, lo:hi].mean()
    return out


def select_robust_scales(
    scan: ScaleScan,
    window: int = 5,
    max_partitions: int = 5,
    nvi_threshold: float = 0.1,
    min_clusters: int = 2,
) -> list[RobustScale]:
    """Robust scales: interior local minima of the block NVI.

    Minima must also have across-run NVI below ``nvi_threshold`` and at
    least ``min_clusters`` clusters. Flat stretches count as one minimum,
    reported at their midpoint. Results are ranked by minimum depth
    (prominence) and truncated to ``max_partitions``; ``scan.block_nvi``
    and ``scan.selected`` are filled in.
    """
    if window < 1:
        raise ValueError("window must be >= 1")
    n = len(scan.scales)
    if n < window:
        raise ValueError(f"scan has {n} scales, fewer than the window {window}")
    block = block_nvi(scan.nvi, window)
    scan.block_nvi = block
    peaks, props = find_peaks(-block, plateau_size=1, prominence=0.0)
    if len(peaks) == 0:
        log.warning("block NVI landscape is flat; no robust scales")
    chosen = []
    for t, depth in zip(peaks.tolist(), props["prominences"].tolist()):
        if depth <= 0 or scan.run_nvi[t] >= nvi_threshold:
            continue
        if scan.partitions[t].n_clusters < min_clusters:
            continue
        chosen.append(RobustScale(t, float(scan.scales[t]), scan.partitions[t], float(block[t]), float(depth)))
    chosen.sort(key=lambda rs: (-rs.depth, rs.index))
    chosen = chosen[:max_partitions]
    scan.selected = [rs.index for rs in chosen]
    return chosen


# ---------------------------------------------------------------------------
# cross-scale structure


@dataclass
class HierarchyLinks:
    flows: list[np.ndarray]  # flows[k][a, b]: nodes of cluster a (fine) in cluster b (coarse)
    pair_scores: list[float]
    score: float
    threshold: float = 0.9

    def to_json(self, labels: Sequence[str] | None = None) -> dict:
        levels = labels or [f"level{i}" for i in range(len(self.flows) + 1)]
        links = []
        for k, mat in enumerate(self.flows):
            for a, b in zip(*np.nonzero(mat)):
                links.append(
                    {"source": f"{levels[k]}:{a}", "target": f"{levels[k + 1]}:{b}", "value": int(mat[a, b])}
                )
        return {
            "levels": list(levels),
            "links": links,
            "pair_scores": self.pair_scores,
            "quasi_hierarchy": self.score,
            "threshold": self.threshold,
        }


def hierarchy_links(partitions: Sequence[Partition], threshold: float = 0.9) -> HierarchyLinks:
    """Node flows between consecutive partitions ordered fine to coarse.

    The quasi-hierarchy score is the fraction of fine clusters sending at
    least ``threshold`` of their nodes into a single coarse cluster, pooled
    over all consecutive pairs.
    """
    flows, pair_scores = [], []
    good = total = 0
    for fine, coarse in zip(partitions[:-1], partitions[1:]):
        if fine.n_nodes != coarse.n_nodes:
            raise ValueError("partitions cover different node sets")
        mat = np.zeros((fine.n_clusters, coarse.n_clusters), dtype=np.int64)
        np.add.at(mat, (fine.labels, coarse.labels), 1)
        ok = mat.max(axis=1) >= threshold * mat.sum(axis=1)
        flows.append(mat)
        pair_scores.append(float(ok.mean()))
        good += int(ok.sum())
        total += len(ok)
    return HierarchyLinks(flows, pair_scores, good / total if total else 1.0, threshold)


# ---------------------------------------------------------------------------
# persistence


def save_scan(scan: ScaleScan, robust: Sequence[RobustScale], names: Sequence[str], outdir: Path) -> None:
    outdir = Path(outdir)
    selected = {rs.index for rs in robust}
    with open(outdir / "scan_summary.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "scale", "log10_scale", "n_clusters", "stability", "run_nvi", "block_nvi", "selected"])
        for t, r in enumerate(scan.scales):
            bn = "" if scan.block_nvi is None else repr(float(scan.block_nvi[t]))
            w.writerow(
                [
                    t,
                    repr(float(r)),
                    repr(float(np.log10(r))),
                    scan.partitions[t].n_clusters,
                    repr(float(scan.stability[t])),
                    repr(float(scan.run_nvi[t])),
                    bn,
                    int(t in selected),
                ]
            )
    np.savetxt(outdir / "nvi_matrix.csv", scan.nvi, delimiter=",", fmt="%.17g")
    with open(outdir / "scan_partitions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill"] + [f"scale_{t}" for t in range(len(scan.scales))])
        for i, name in enumerate(names):
            w.writerow([name] + [int(p.labels[i]) for p in scan.partitions])
    ordered = sorted(robust, key=lambda rs: rs.index)
    with open(outdir / "partitions.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill"] + [f"MS{rs.partition.n_clusters}@{rs.index}" for rs in ordered])
        for i, name in enumerate(names):
            w.writerow([name] + [int(rs.partition.labels[i]) for rs in ordered])
    with open(outdir / "robust_scales.json", "w", encoding="utf-8") as fh:
        json.dump(
            [
                {
                    "rank": k,
                    "index": rs.index,
                    "scale": rs.scale,
                    "n_clusters": rs.partition.n_clusters,
                    "block_nvi": rs.block_nvi,
                    "depth": rs.depth,
                    "run_nvi": float(scan.run_nvi[rs.index]),
                }
                for k, rs in enumerate(robust)
            ],
            fh,
            indent=2,
        )
