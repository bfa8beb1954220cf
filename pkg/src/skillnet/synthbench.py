"""Synthetic advert corpora with planted skill clusters, and exact oracles
for checking the clustering on small graphs."""

from __future__ import annotations

import csv
import json
from dataclasses import asdict, dataclass, field
from datetime import date, timedelta
from pathlib import Path
from typing import Sequence

import numpy as np

from .stability import DiffusionOperators, Partition, quality_matrix

DROP_SKILLS = ("Dental Insurance", "Working abroad", "Temporary Placement", "Luxury")

_REGIONS = ("UKC1", "UKD1", "UKE4", "UKF1", "UKG3", "UKH1", "UKI3", "UKI4", "UKI5", "UKI6", "UKI7", "UKJ1")
_LONDON = ("UKI3", "UKI4", "UKI5", "UKI6", "UKI7")


@dataclass
class PlantedSpec:
    """Parameters of the planted-cluster advert generator.

    ``groups`` lists the number of planted groups per level, coarse to fine;
    every level must refine the previous one. A skill sharing an advert's
    finest home group is drawn with weight ``p_in``, one sharing only a
    coarser group with the matching entry of ``p_levels`` (aligned with
    ``groups[:-1]``), and any other skill with ``p_out``.

    ``affinity_sigma`` multiplies every weight outside the home's parent
    group by an independent log-normal factor (mean one), so each skill has
    its own mix of foreign groups. Without it strongly nested groups larger than the CkNN ``k``
    end up in separate graph components. ``popularity_sigma`` scales each
    skill's weights by a log-normal factor, giving rare, noisily-profiled
    skills.
    """

    n_skills: int = 300
    groups: tuple[int, ...] = (21,)
    n_adverts: int = 50_000
    p_in: float = 1.0
    p_out: float = 0.02
    p_levels: tuple[float, ...] = ()
    affinity_sigma: float = 0.0
    popularity_sigma: float = 0.0
    mean_skills: float = 9.0
    dispersion: float | None = 5.0
    salary_means: tuple[float, ...] | None = None
    salary_cv: float = 0.25
    region_weights: tuple[float, ...] | None = None
    periods: tuple[tuple[str, str], ...] = (("2016-04-01", "2016-12-31"), ("2022-01-01", "2022-12-31"))
    duplicate_fraction: float = 0.02
    noise_skill_rate: float = 0.05
    embedding_dim: int = 16
    embedding_noise: float = 0.6
    category_noise: float = 0.15
    seed: int = 0

    def validate(self) -> None:
        if self.n_skills < 2:
            raise ValueError("need at least two skills")
        if not 0 <= self.p_out <= self.p_in:
            raise ValueError("need 0 <= p_out <= p_in")
        if any(not self.p_out <= p <= self.p_in for p in self.p_levels):
            raise ValueError("coarse-level weights must lie between p_out and p_in")
        if len(self.p_levels) not in (0, len(self.groups) - 1):
            raise ValueError("p_levels must have one entry per coarse level")
        for coarse, fine in zip(self.groups[:-1], self.groups[1:]):
            if fine % coarse:
                raise ValueError(f"level with {fine} groups does not refine level with {coarse}")
        if self.affinity_sigma < 0 or self.popularity_sigma < 0:
            raise ValueError("log-normal spreads must be non-negative")
        if self.groups[-1] > self.n_skills:
            raise ValueError("more planted groups than skills")
        if self.mean_skills > self.n_skills or self.mean_skills < 1:
            raise ValueError(f"mean skills per advert {self.mean_skills} infeasible for {self.n_skills} skills")
        if self.salary_means is not None and len(self.salary_means) != self.groups[-1]:
            raise ValueError("salary_means needs one entry per finest group")


@dataclass
class SyntheticCorpus:
    adverts: list[dict]
    truth: dict[int, np.ndarray]  # level -> label per taxonomy skill
    skill_names: list[str]
    lexicon: list[tuple[str, str, str, str]]
    regions: list[tuple[str, str, float]]
    categories: dict[str, str]
    embeddings: np.ndarray
    spec: PlantedSpec = field(repr=False, default=None)


def three_level_spec(seed: int = 5, n_adverts: int = 20_000) -> PlantedSpec:
    """128 skills nested as 2 / 4 / 16 groups, tuned so the default CkNN
    graph stays connected while every level remains visible."""
    return PlantedSpec(
        n_skills=128,
        groups=(2, 4, 16),
        n_adverts=n_adverts,
        p_in=1.0,
        p_levels=(0.05, 0.1),
        p_out=0.02,
        affinity_sigma=1.5,
        seed=seed,
    )


def skill_name(i: int) -> str:
    return f"skill_{i:04d}"


def planted_labels(spec: PlantedSpec) -> dict[int, np.ndarray]:
    """Ground-truth group of every skill at each level (0 = coarsest)."""
    fine = spec.groups[-1]
    sizes = [len(c) for c in np.array_split(np.arange(spec.n_skills), fine)]
    finest = np.repeat(np.arange(fine), sizes)
    out = {}
    for level, g in enumerate(spec.groups):
        out[level] = finest // (fine // g)
    return out


def _draw_sizes(rng, spec, n):
    mean = spec.mean_skills - 1.0
    if spec.dispersion is None:
        extra = rng.poisson(mean, size=n)
    else:
        prob = spec.dispersion / (spec.dispersion + mean)
        extra = rng.negative_binomial(spec.dispersion, prob, size=n)
    return 1 + extra


def generate_corpus(spec: PlantedSpec) -> SyntheticCorpus:
    """Draw a synthetic corpus; identical specs give identical corpora."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    truth = planted_labels(spec)
    n, fine = spec.n_skills, spec.groups[-1]
    finest = truth[len(spec.groups) - 1]
    names = [skill_name(i) for i in range(n)]

    # per home group skill weights
    weights = np.full((fine, n), spec.p_out)
    coarse_weights = list(spec.p_levels)
    for level, w in enumerate(coarse_weights):
        lab = truth[level]
        for h in range(fine):
            home = lab[np.flatnonzero(finest == h)[0]]
            weights[h, lab == home] = np.maximum(weights[h, lab == home], w)
    if spec.affinity_sigma > 0:
        sig = spec.affinity_sigma
        noise = rng.lognormal(-0.5 * sig**2, sig, size=weights.shape)
        # weights inside the parent group stay exact so nesting is preserved
        if len(spec.groups) > 1:
            parent = truth[len(spec.groups) - 2]
            for h in range(fine):
                noise[h, parent == parent[np.flatnonzero(finest == h)[0]]] = 1.0
        weights *= noise
    for h in range(fine):
        weights[h, finest == h] = spec.p_in
    if spec.popularity_sigma > 0:
        weights = weights * rng.lognormal(0.0, spec.popularity_sigma, size=n)
    with np.errstate(divide="ignore"):
        logw = np.log(weights)

    homes = rng.integers(0, fine, size=spec.n_adverts)
    sizes = _draw_sizes(rng, spec, spec.n_adverts)
    sizes = np.minimum(sizes, (weights[homes] > 0).sum(axis=1))
    chosen: list[np.ndarray] = []
    batch = 4096
    for start in range(0, spec.n_adverts, batch):
        stop = min(start + batch, spec.n_adverts)
        keys = logw[homes[start:stop]] + rng.gumbel(size=(stop - start, n))
        order = np.argsort(-keys, axis=1, kind="stable")
        for row, k in zip(order, sizes[start:stop]):
            chosen.append(np.sort(row[:k]))

    # salaries, regions, dates
    if spec.salary_means is None:
        salary_means = np.linspace(24_000, 45_000, fine)[rng.permutation(fine)]
    else:
        salary_means = np.asarray(spec.salary_means, dtype=float)
    sigma = np.sqrt(np.log1p(spec.salary_cv**2))
    salaries = salary_means[homes] * np.exp(rng.normal(-0.5 * sigma**2, sigma, size=spec.n_adverts))

    base = np.ones(len(_REGIONS)) if spec.region_weights is None else np.asarray(spec.region_weights, float)
    if len(base) != len(_REGIONS):
        raise ValueError(f"region_weights needs {len(_REGIONS)} entries")
    tilt = np.exp(rng.normal(0.0, 0.6, size=(fine, len(_REGIONS))))
    region_p = base * tilt
    region_p /= region_p.sum(axis=1, keepdims=True)
    u = rng.random(spec.n_adverts)
    region_idx = (u[:, None] > np.cumsum(region_p[homes], axis=1)).sum(axis=1)
    region_idx = np.minimum(region_idx, len(_REGIONS) - 1)
    use_city = rng.random(spec.n_adverts) < 0.5

    spans = [(date.fromisoformat(a), date.fromisoformat(b)) for a, b in spec.periods]
    period_of = rng.integers(0, len(spans), size=spec.n_adverts)
    offsets = rng.random(spec.n_adverts)

    noise_draw = rng.random(spec.n_adverts) < spec.noise_skill_rate
    noise_pick = rng.integers(0, len(DROP_SKILLS) + 1, size=spec.n_adverts)
    synonym_flip = rng.random(spec.n_adverts) < 0.3

    adverts = []
    region_counts = np.zeros(len(_REGIONS))
    for a in range(spec.n_adverts):
        lo, hi = spans[period_of[a]]
        posted = lo + timedelta(days=int(offsets[a] * ((hi - lo).days + 1)))
        raw = [names[i] if not (synonym_flip[a] and i % 3 == 0) else f"{names[i]} (alt)" for i in chosen[a]]
        if noise_draw[a]:
            raw.append(DROP_SKILLS[noise_pick[a]] if noise_pick[a] < len(DROP_SKILLS) else "unlisted skill")
        region = _REGIONS[region_idx[a]]
        region_counts[region_idx[a]] += 1
        location = "London" if region in _LONDON and use_city[a] else f"{region} area"
        adverts.append(
            {
                "id": f"ad{a:07d}",
                "date": posted.isoformat(),
                "location": location,
                "salary": round(float(salaries[a]), 2),
                "skills": raw,
            }
        )
    n_dup = int(round(spec.duplicate_fraction * spec.n_adverts))
    for a in rng.choice(spec.n_adverts, size=n_dup, replace=False) if n_dup else []:
        dup = dict(adverts[a])
        dup["date"] = (date.fromisoformat(dup["date"]) + timedelta(days=7)).isoformat()
        adverts.append(dup)

    # lexicon with synonyms and drop entries; category labels with noise
    cat_level = len(spec.groups) - 1
    cats = truth[cat_level].copy()
    flip = rng.random(n) < spec.category_noise
    cats[flip] = rng.integers(0, spec.groups[cat_level], size=int(flip.sum()))
    categories = {names[i]: f"category_{cats[i]:02d}" for i in range(n)}
    lexicon = []
    for i, name in enumerate(names):
        lexicon.append((name, name, categories[name], "keep"))
        if i % 3 == 0:
            lexicon.append((f"{name} (alt)", name, categories[name], "keep"))
    for s in DROP_SKILLS:
        lexicon.append((s, "", "", "drop"))

    london_w = region_counts[[_REGIONS.index(r) for r in _LONDON]]
    london_w = london_w / london_w.sum() if london_w.sum() else np.full(len(_LONDON), 1 / len(_LONDON))
    region_rows = [(f"{r} area", r, 1.0) for r in _REGIONS]
    # round so the weights still sum to one exactly enough
    rounded = np.round(london_w, 12)
    rounded[-1] = 1.0 - rounded[:-1].sum()
    region_rows += [("London", r, float(w)) for r, w in zip(_LONDON, rounded)]

    # semantic embeddings: nested centroids plus noise
    dim = spec.embedding_dim
    emb = np.zeros((n, dim))
    for level, g in enumerate(spec.groups):
        centres = rng.normal(0.0, 1.0, size=(g, dim))
        emb += centres[truth[level]]
    emb += rng.normal(0.0, spec.embedding_noise * np.sqrt(len(spec.groups)), size=(n, dim))

    return SyntheticCorpus(adverts, truth, names, lexicon, region_rows, categories, emb, spec)


def write_corpus(corpus: SyntheticCorpus, outdir: str | Path) -> dict[str, Path]:
    """Write the corpus in the formats the ingestion stage reads."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    paths = {
        "adverts": outdir / "adverts.jsonl",
        "lexicon": outdir / "lexicon.csv",
        "regions": outdir / "regions.csv",
        "categories": outdir / "categories.csv",
        "embeddings": outdir / "embeddings.csv",
        "ground_truth": outdir / "ground_truth.csv",
    }
    with open(paths["adverts"], "w", encoding="utf-8") as fh:
        for adv in corpus.adverts:
            fh.write(json.dumps(adv, ensure_ascii=False) + "\n")
    with open(paths["lexicon"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["raw_skill", "taxonomy_skill", "category", "action"])
        w.writerows(corpus.lexicon)
    with open(paths["regions"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["location", "region", "weight"])
        w.writerows([(loc, reg, repr(wt)) for loc, reg, wt in corpus.regions])
    with open(paths["categories"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill", "category"])
        w.writerows(sorted(corpus.categories.items()))
    with open(paths["embeddings"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill"] + [f"v{i + 1}" for i in range(corpus.embeddings.shape[1])])
        for name, row in zip(corpus.skill_names, corpus.embeddings):
            w.writerow([name] + [f"{v:.10g}" for v in row])
    with open(paths["ground_truth"], "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill", "level", "cluster"])
        for level, labels in corpus.truth.items():
            for name, lab in zip(corpus.skill_names, labels):
                w.writerow([name, level, int(lab)])
    if corpus.spec is not None:
        with open(outdir / "planted_spec.json", "w", encoding="utf-8") as fh:
            json.dump(asdict(corpus.spec), fh, indent=2)
    return paths


def load_ground_truth(path: str | Path) -> dict[int, dict[str, int]]:
    out: dict[int, dict[str, int]] = {}
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            out.setdefault(int(row["level"]), {})[row["skill"]] = int(row["cluster"])
    return out


# ---------------------------------------------------------------------------
# oracles


def set_partitions(n: int) -> np.ndarray:
    """All set partitions of ``n`` items as restricted growth strings."""
    if n == 0:
        return np.zeros((1, 0), dtype=np.int64)
    rows = np.zeros((1, 1), dtype=np.int64)
    for _ in range(1, n):
        top = rows.max(axis=1)
        parts = []
        for v in range(int(top.max()) + 2):
            ok = top + 1 >= v
            sub = rows[ok]
            parts.append(np.hstack([sub, np.full((len(sub), 1), v, dtype=np.int64)]))
        rows = np.vstack(parts)
        rows = rows[np.lexsort(rows.T[::-1])]
    return rows


def brute_force_stability(ops: DiffusionOperators, r: float, max_n: int = 10) -> tuple[Partition, float]:
    """Exact stability maximiser by enumerating every set partition."""
    n = ops.n_nodes
    if n > max_n:
        raise ValueError(f"refusing to enumerate partitions of {n} > {max_n} nodes")
    f = quality_matrix(ops, r)
    rgs = set_partitions(n)
    scores = np.zeros(len(rgs))
    for i in range(n):
        for j in range(n):
            scores += f[i, j] * (rgs[:, i] == rgs[:, j])
    best = int(np.argmax(scores))
    return Partition(rgs[best]), float(scores[best])


def ari(p1: Partition | Sequence[int], p2: Partition | Sequence[int]) -> float:
    """Adjusted Rand index between two partitions of the same nodes."""
    a = np.asarray(p1.labels if isinstance(p1, Partition) else p1)
    b = np.asarray(p2.labels if isinstance(p2, Partition) else p2)
    if a.shape != b.shape:
        raise ValueError("partitions cover different node sets")
    _, ia = np.unique(a, return_inverse=True)
    _, ib = np.unique(b, return_inverse=True)
    table = np.zeros((ia.max() + 1, ib.max() + 1), dtype=np.int64)
    np.add.at(table, (ia, ib), 1)

    def comb2(x):
        x = np.asarray(x, dtype=np.float64)
        return float(np.sum(x * (x - 1) / 2))

    n = len(a)
    index = comb2(table)
    sa, sb = comb2(table.sum(axis=1)), comb2(table.sum(axis=0))
    total = n * (n - 1) / 2
    expected = sa * sb / total if total else 0.0
    maximum = 0.5 * (sa + sb)
    if maximum == expected:
        return 1.0 if np.array_equal(Partition(a).labels, Partition(b).labels) else 0.0
    return (index - expected) / (maximum - expected)
