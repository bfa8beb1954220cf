"""Command-line driver: one subcommand per pipeline stage plus ``all``.

Every stage writes into the configured output directory. Files are first
written to a staging directory and then renamed into place, and
``manifest.json`` records, per stage, the hash of the configuration that
produced the outputs together with hashes of its inputs and outputs.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import logging
import os
import shutil
import sys
from collections import Counter
from pathlib import Path
from typing import Callable

import numpy as np

from . import __version__
from .config import PipelineConfig, load_config
from .errors import MissingArtifactError, SkillnetError, StaleCacheError

log = logging.getLogger("skillnet")

STAGES = ("ingest", "embed", "graph", "cluster", "metrics", "panel")
UPSTREAM = {
    "ingest": (),
    "embed": ("ingest",),
    "graph": ("embed",),
    "cluster": ("graph",),
    "metrics": ("cluster", "ingest"),
    "panel": ("metrics", "ingest"),
}
# config fields each stage reads directly
STAGE_KEYS = {
    "ingest": ("adverts", "lexicon", "regions", "adverts_format", "stride", "seed"),
    "embed": ("n_components", "include_diagonal"),
    "graph": ("cknn_k", "cknn_delta"),
    "cluster": (
        "log_scale_min",
        "log_scale_max",
        "scale_padding",
        "n_scales",
        "min_clusters",
        "max_clusters",
        "n_runs",
        "n_nvi_runs",
        "window",
        "nvi_threshold",
        "max_partitions",
        "seed",
    ),
    "metrics": ("embeddings", "categories", "path_lengths", "report_partition"),
    "panel": ("periods",),
}
OUTPUTS = {
    "ingest": ("adverts_mapped.jsonl", "cooccurrence.csv", "vocabulary.csv", "ingest_report.json"),
    "embed": ("embedding.csv", "inertia.csv"),
    "graph": ("edges.csv", "nodes.csv", "graph.dot", "graph_report.json"),
    "cluster": (
        "scan_summary.csv",
        "nvi_matrix.csv",
        "scan_partitions.csv",
        "partitions.csv",
        "robust_scales.json",
        "hierarchy.json",
    ),
    "metrics": ("cluster_report.json", "cluster_report.csv", "node_metrics.csv", "coverage.csv", "crosswalk.json"),
    "panel": ("region_profiles.csv", "region_zscores.csv", "dendrogram_regions.json", "dendrogram_clusters.json"),
}
# outputs that are produced only when their inputs are available
OPTIONAL = {"crosswalk.json", "period_comparison.csv", "period_comparison.json", "dendrogram_clusters.json"}


def stage_keys(stage: str) -> list[str]:
    """Config fields that affect ``stage``, including those of its ancestors."""
    keys, todo, seen = set(), [stage], set()
    while todo:
        s = todo.pop()
        if s in seen:
            continue
        seen.add(s)
        keys.update(STAGE_KEYS[s])
        todo.extend(UPSTREAM[s])
    return sorted(keys)


def file_hash(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def _versions() -> dict:
    import networkx
    import scipy

    return {"skillnet": __version__, "numpy": np.__version__, "scipy": scipy.__version__, "networkx": networkx.__version__}


class Workspace:
    """Output directory with its manifest."""

    def __init__(self, cfg: PipelineConfig):
        self.cfg = cfg
        self.root = Path(cfg.output_dir)
        self.root.mkdir(parents=True, exist_ok=True)
        self.manifest_path = self.root / "manifest.json"

    def manifest(self) -> dict:
        if not self.manifest_path.exists():
            return {}
        with open(self.manifest_path, encoding="utf-8") as fh:
            return json.load(fh)

    def write_manifest(self, manifest: dict) -> None:
        tmp = self.manifest_path.with_suffix(".json.tmp")
        with open(tmp, "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
        os.replace(tmp, self.manifest_path)

    def __truediv__(self, name: str) -> Path:
        return self.root / name

    def require(self, stage: str, name: str) -> Path:
        path = self.root / name
        if not path.exists():
            raise MissingArtifactError(path, stage)
        return path


def _external_inputs(cfg: PipelineConfig, stage: str) -> dict[str, Path]:
    names = {"ingest": ("adverts", "lexicon", "regions"), "metrics": ("embeddings", "categories")}.get(stage, ())
    out = {}
    for n in names:
        p = cfg.path(n)
        if p is not None:
            if not p.exists():
                raise FileNotFoundError(f"{n} input {p} does not exist")
            out[n] = p
    return out


def _input_hashes(ws: Workspace, stage: str, manifest: dict) -> dict[str, str]:
    hashes = {f"input:{k}": file_hash(p) for k, p in _external_inputs(ws.cfg, stage).items()}
    for up in UPSTREAM[stage]:
        entry = manifest.get(up)
        if entry is None:
            raise MissingArtifactError(ws.root / OUTPUTS[up][0], up)
        for name in OUTPUTS[up]:
            if name in OPTIONAL and name not in entry["outputs"]:
                continue
            path = ws.require(up, name)
            hashes[f"{up}:{name}"] = file_hash(path)
        if entry["config_hash"] != ws.cfg.digest(stage_keys(up)):
            raise StaleCacheError(
                f"`{up}` artifacts were built with a different configuration; rerun `{up}` or pass --force"
            )
    return hashes


def run_stage(ws: Workspace, stage: str, force: bool = False, threads: int = 1) -> bool:
    """Run one stage unless its cached outputs are current; True if it ran."""
    manifest = ws.manifest()
    cfg_hash = ws.cfg.digest(stage_keys(stage))
    try:
        inputs = _input_hashes(ws, stage, manifest)
    except StaleCacheError:
        if not force:
            raise
        inputs = _input_hashes_unchecked(ws, stage, manifest)
    entry = manifest.get(stage)
    if entry is not None and not force:
        outputs_ok = all(
            (ws / name).exists() and file_hash(ws / name) == h for name, h in entry["outputs"].items()
        )
        if entry["config_hash"] != cfg_hash and outputs_ok:
            raise StaleCacheError(
                f"cached `{stage}` artifacts in {ws.root} came from a different configuration; pass --force to rebuild"
            )
        if outputs_ok and entry["inputs"] == inputs:
            log.info("%s: up to date", stage)
            return False

    staging = ws.root / f".staging-{stage}"
    if staging.exists():
        shutil.rmtree(staging)
    staging.mkdir()
    try:
        STAGE_FUNCS[stage](ws, staging, threads)
        written = sorted(p.name for p in staging.iterdir() if p.is_file())
        subdirs = sorted(p.name for p in staging.iterdir() if p.is_dir())
        outputs = {}
        for name in written:
            outputs[name] = file_hash(staging / name)
        for d in subdirs:
            for f in sorted((staging / d).rglob("*")):
                if f.is_file():
                    outputs[str(f.relative_to(staging))] = file_hash(f)
        for d in subdirs:
            target = ws.root / d
            if target.exists():
                shutil.rmtree(target)
            os.replace(staging / d, target)
        for name in written:
            os.replace(staging / name, ws.root / name)
    finally:
        shutil.rmtree(staging, ignore_errors=True)

    manifest = ws.manifest()
    manifest[stage] = {"config_hash": cfg_hash, "inputs": inputs, "outputs": outputs, "versions": _versions()}
    # downstream entries no longer describe the current upstream outputs
    for later in STAGES[STAGES.index(stage) + 1 :]:
        if stage in _ancestors(later):
            manifest.pop(later, None)
    ws.write_manifest(manifest)
    log.info("%s: wrote %d files", stage, len(outputs))
    return True


def _ancestors(stage: str) -> set[str]:
    out, todo = set(), list(UPSTREAM[stage])
    while todo:
        s = todo.pop()
        if s not in out:
            out.add(s)
            todo.extend(UPSTREAM[s])
    return out


def _input_hashes_unchecked(ws: Workspace, stage: str, manifest: dict) -> dict[str, str]:
    hashes = {f"input:{k}": file_hash(p) for k, p in _external_inputs(ws.cfg, stage).items()}
    for up in UPSTREAM[stage]:
        for name in OUTPUTS[up]:
            path = ws.root / name
            if path.exists():
                hashes[f"{up}:{name}"] = file_hash(path)
            elif name not in OPTIONAL:
                raise MissingArtifactError(path, up)
    return hashes


# ---------------------------------------------------------------------------
# stages


def _load_mapped(ws: Workspace):
    from .corpus import MappedAdvert

    with open(ws.require("ingest", "adverts_mapped.jsonl"), encoding="utf-8") as fh:
        return [MappedAdvert.from_json(line) for line in fh if line.strip()]


def _stage_ingest(ws: Workspace, out: Path, threads: int) -> None:
    from .corpus import (
        MappedAdvert,
        build_cooccurrence,
        deduplicate,
        load_lexicon,
        load_region_table,
        parse_adverts,
        map_skills,
        resolve_region,
        save_cooccurrence,
        subsample,
        vocabulary_of,
    )

    cfg = ws.cfg
    if cfg.adverts is None or cfg.lexicon is None:
        raise SkillnetError("config must name the adverts and lexicon inputs")
    with open(cfg.adverts, "rb") as fh:
        records, malformed = parse_adverts(fh, cfg.adverts_format)
    unique = deduplicate(records)
    lexicon = load_lexicon(cfg.lexicon)
    table = load_region_table(cfg.regions) if cfg.regions else None
    unknown: Counter = Counter()
    mapped = []
    unresolved = 0
    for rec in unique:
        region = None if table is None else resolve_region(rec, table, cfg.seed)
        unresolved += region is None
        mapped.append(MappedAdvert(rec.advert_id, rec.first_posted, tuple(map_skills(rec, lexicon, unknown)), region, rec.salary))
    with open(out / "adverts_mapped.jsonl", "w", encoding="utf-8") as fh:
        for adv in mapped:
            fh.write(adv.to_json() + "\n")
    sample = [a for a in subsample(mapped, cfg.stride) if a.skills]
    vocab = vocabulary_of(sample)
    counts = build_cooccurrence(sample, vocab)
    save_cooccurrence(counts, out / "cooccurrence.csv", out / "vocabulary.csv")
    report = {
        "n_records": len(records),
        "n_malformed": malformed,
        "n_duplicates": len(records) - len(unique),
        "n_adverts": len(mapped),
        "n_sampled": len(sample),
        "stride": cfg.stride,
        "n_skills": len(vocab),
        "n_unresolved_region": unresolved,
        "unknown_skills": dict(sorted(unknown.items(), key=lambda kv: (-kv[1], kv[0]))[:50]),
        "n_unknown_mentions": sum(unknown.values()),
    }
    _write_json(out / "ingest_report.json", report)


def _load_counts(ws: Workspace):
    from .corpus import load_cooccurrence

    with open(ws.require("ingest", "ingest_report.json"), encoding="utf-8") as fh:
        n = json.load(fh)["n_sampled"]
    return load_cooccurrence(ws.require("ingest", "cooccurrence.csv"), ws.require("ingest", "vocabulary.csv"), n)


def _stage_embed(ws: Workspace, out: Path, threads: int) -> None:
    from .embedding import correspondence_analysis, save_embedding

    emb = correspondence_analysis(_load_counts(ws), ws.cfg.n_components, ws.cfg.include_diagonal)
    save_embedding(emb, out / "embedding.csv", out / "inertia.csv")


def _stage_graph(ws: Workspace, out: Path, threads: int) -> None:
    from .embedding import cosine_similarity, load_embedding
    from .graphbuild import cknn_sparsify, largest_component, save_graph, sparsification_report, to_distances, write_dot

    emb = load_embedding(ws.require("embed", "embedding.csv"), ws.require("embed", "inertia.csv"))
    full = cknn_sparsify(to_distances(cosine_similarity(emb)), ws.cfg.cknn_k, ws.cfg.cknn_delta)
    g, dropped = largest_component(full)
    if dropped:
        log.warning("%d skills outside the largest component dropped", len(dropped))
    save_graph(g, out / "edges.csv", out / "nodes.csv")
    write_dot(g, out / "graph.dot")
    report = sparsification_report(full.n_nodes, full)
    report.update({"lcc_nodes": g.n_nodes, "lcc_edges": g.n_edges, "dropped_skills": dropped})
    _write_json(out / "graph_report.json", report)


def _load_graph(ws: Workspace):
    from .graphbuild import load_graph

    return load_graph(ws.require("graph", "edges.csv"), ws.require("graph", "nodes.csv"))


def _stage_cluster(ws: Workspace, out: Path, threads: int) -> None:
    from .stability import (
        auto_scale_range,
        build_operators,
        hierarchy_links,
        log_grid,
        save_scan,
        scan_scales,
        select_robust_scales,
    )

    cfg = ws.cfg
    g = _load_graph(ws)
    ops = build_operators(g)
    if cfg.log_scale_min is None:
        lo, hi = auto_scale_range(ops, cfg.min_clusters, cfg.max_clusters, seed=cfg.seed)
        hi += cfg.scale_padding
    else:
        lo, hi = cfg.log_scale_min, cfg.log_scale_max
    log.info("scanning %d scales over 10^[%.3f, %.3f]", cfg.n_scales, lo, hi)
    scan = scan_scales(ops, log_grid(lo, hi, cfg.n_scales), cfg.n_runs, cfg.seed, cfg.n_nvi_runs, workers=threads)
    robust = select_robust_scales(scan, min(cfg.window, cfg.n_scales), cfg.max_partitions, cfg.nvi_threshold)
    save_scan(scan, robust, g.node_names, out)
    ordered = sorted(robust, key=lambda rs: -rs.partition.n_clusters)
    links = hierarchy_links([rs.partition for rs in ordered])
    _write_json(out / "hierarchy.json", links.to_json([f"MS{rs.partition.n_clusters}@{rs.index}" for rs in ordered]))


def load_partitions(path: Path) -> tuple[list[str], dict[str, np.ndarray]]:
    """Skill names and the label column of each partition in ``partitions.csv``."""
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        rows = list(reader)
    names = [r[0] for r in rows]
    cols = {h: np.array([int(r[k + 1]) for r in rows], dtype=np.int64) for k, h in enumerate(header[1:])}
    return names, cols


def _report_partition(ws: Workspace):
    from .stability import Partition

    with open(ws.require("cluster", "robust_scales.json"), encoding="utf-8") as fh:
        robust = json.load(fh)
    if not robust:
        raise SkillnetError("the scan selected no robust partition; widen the scale range or relax nvi_threshold")
    rank = ws.cfg.report_partition or 0
    if rank >= len(robust):
        raise SkillnetError(f"report_partition {rank} out of range; {len(robust)} robust partitions")
    pick = robust[rank]
    names, cols = load_partitions(ws.require("cluster", "partitions.csv"))
    column = f"MS{pick['n_clusters']}@{pick['index']}"
    return names, Partition(cols[column]), column


def _stage_metrics(ws: Workspace, out: Path, threads: int) -> None:
    from .metrics import (
        betweenness,
        closeness,
        cluster_report,
        containment,
        coverage_matrix,
        crosswalk,
        crosswalk_json,
        load_categories,
        load_semantic_embeddings,
        restrict_cooccurrence,
    )

    cfg = ws.cfg
    g = _load_graph(ws)
    names, part, column = _report_partition(ws)
    if tuple(names) != g.node_names:
        raise StaleCacheError("partitions.csv does not match the graph nodes; rerun `cluster`")
    adverts = _load_mapped(ws)
    semantic = load_semantic_embeddings(cfg.embeddings) if cfg.embeddings else None
    cats = load_categories(cfg.categories) if cfg.categories else None
    report = cluster_report(g, part, adverts, semantic, cats, cfg.path_lengths)
    report.write(out / "cluster_report.json", out / "cluster_report.csv")
    prompts = out / "prompts"
    prompts.mkdir()
    for c in report.clusters:
        (prompts / f"cluster_{c.cluster:03d}.txt").write_text(c.label_prompt + "\n", encoding="utf-8")

    close = closeness(g, cfg.path_lengths)
    betw = betweenness(g, cfg.path_lengths)
    cont = containment(g, part)
    with open(out / "node_metrics.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["skill", "cluster", "closeness", "betweenness", "containment"])
        for i, s in enumerate(names):
            w.writerow([s, int(part.labels[i]), repr(float(close[i])), repr(float(betw[i])), "" if np.isnan(cont[i]) else repr(float(cont[i]))])

    counts = restrict_cooccurrence(_load_counts(ws), names)
    cov = coverage_matrix(counts, part)
    np.savetxt(out / "coverage.csv", cov, delimiter=",", fmt="%.17g")
    if cats is not None:
        columns, table = crosswalk(names, part, cats)
        _write_json(out / "crosswalk.json", crosswalk_json(columns, table))
    _write_json(out / "report_partition.json", {"column": column, "n_clusters": part.n_clusters})


def _stage_panel(ws: Workspace, out: Path, threads: int) -> None:
    from .metrics import assign_adverts
    from .panel import compare_periods, hier_cluster, region_profiles, split_periods, write_profiles, write_zscores

    cfg = ws.cfg
    names, part, _ = _report_partition(ws)
    adverts = _load_mapped(ws)
    sets = assign_adverts(adverts, names, part)
    profiles = region_profiles([a.region for a in adverts], sets, part.n_clusters)
    write_profiles(profiles, out / "region_profiles.csv")
    if len(profiles) >= 2:
        from .panel import zscores

        z = zscores(profiles)
        write_zscores(profiles, z, out / "region_zscores.csv")
        regions = [p.region for p in profiles]
        pct = np.array([p.percentages for p in profiles])
        _write_json(out / "dendrogram_regions.json", hier_cluster(pct, regions).to_json())
        if part.n_clusters >= 2:
            clusters = [f"cluster_{c}" for c in range(part.n_clusters)]
            _write_json(out / "dendrogram_clusters.json", hier_cluster(z.T, clusters).to_json())
    else:
        log.warning("fewer than two regions with adverts; z-scores and dendrograms skipped")
        with open(out / "region_zscores.csv", "w", encoding="utf-8") as fh:
            fh.write("region\n")
        _write_json(out / "dendrogram_regions.json", {"labels": [p.region for p in profiles], "leaf_order": [], "merges": []})

    if len(cfg.periods) == 2:
        a, b = split_periods(adverts, cfg.periods)
        a = [x for x in a if x.skills]
        b = [x for x in b if x.skills]
        if len(a) > 1 and len(b) > 1:
            cmp = compare_periods(
                a, b, names, part, cfg.n_components, cfg.include_diagonal, cfg.cknn_k, cfg.cknn_delta, cfg.path_lengths
            )
            cmp.write(out / "period_comparison.csv", out / "period_comparison.json")
        else:
            log.warning("a comparison period has too few adverts; period comparison skipped")


def _write_json(path: Path, obj) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, indent=2, ensure_ascii=False, allow_nan=False, default=_json_default)
        fh.write("\n")


def _json_default(o):
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, Path):
        return str(o)
    raise TypeError(f"cannot serialise {type(o).__name__}")


STAGE_FUNCS: dict[str, Callable] = {
    "ingest": _stage_ingest,
    "embed": _stage_embed,
    "graph": _stage_graph,
    "cluster": _stage_cluster,
    "metrics": _stage_metrics,
    "panel": _stage_panel,
}


# ---------------------------------------------------------------------------
# synthetic corpora


def run_synth(outdir: Path, preset: str, seed: int, n_adverts: int | None) -> Path:
    """Write a synthetic corpus plus a ready-to-run ``config.yaml``."""
    import yaml

    from .synthbench import PlantedSpec, generate_corpus, three_level_spec, write_corpus

    if preset == "flat":
        spec = PlantedSpec(n_skills=300, groups=(21,), n_adverts=n_adverts or 50_000, p_out=0.05, seed=seed)
    elif preset == "hierarchy":
        spec = three_level_spec(seed=seed, n_adverts=n_adverts or 20_000)
    else:
        raise ValueError(f"unknown preset {preset!r}")
    outdir.mkdir(parents=True, exist_ok=True)
    paths = write_corpus(generate_corpus(spec), outdir)
    config = {
        "adverts": paths["adverts"].name,
        "lexicon": paths["lexicon"].name,
        "regions": paths["regions"].name,
        "embeddings": paths["embeddings"].name,
        "categories": paths["categories"].name,
        "output_dir": "out",
        "stride": 1,
        "min_clusters": 2,
        "max_clusters": 60,
        "n_runs": 20,
        "seed": seed,
        "periods": [list(p) for p in spec.periods],
    }
    if preset == "hierarchy":
        # the coarsest planted level only forms a plateau past the automatic bound
        config["scale_padding"] = 3.0
    cfg_path = outdir / "config.yaml"
    with open(cfg_path, "w", encoding="utf-8") as fh:
        yaml.safe_dump(config, fh, sort_keys=True)
    return cfg_path


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="skillnet", description="Skill co-occurrence network pipeline.")
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", type=Path, help="YAML config file")
    common.add_argument("--threads", type=int, help="worker processes for the scale scan")
    common.add_argument("--seed", type=int, help="override the config seed")
    common.add_argument("--stride", type=int, help="keep every N-th advert by date when building the network")
    common.add_argument("--force", action="store_true", help="rebuild even if cached artifacts exist")
    common.add_argument("--output-dir", type=Path, help="override the config output directory")
    common.add_argument("-v", "--verbose", action="count", default=0)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in STAGES + ("all",):
        sub.add_parser(name, parents=[common], help=f"run the {name} stage" if name != "all" else "run every stage")
    synth = sub.add_parser("synth", help="write a synthetic corpus and config")
    synth.add_argument("--out", type=Path, required=True)
    synth.add_argument("--preset", choices=("flat", "hierarchy"), default="flat")
    synth.add_argument("--seed", type=int, default=0)
    synth.add_argument("--n-adverts", type=int)
    synth.add_argument("-v", "--verbose", action="count", default=0)
    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.WARNING - 10 * min(args.verbose, 2), format="%(levelname)s %(name)s: %(message)s"
    )
    try:
        if args.command == "synth":
            path = run_synth(args.out, args.preset, args.seed, args.n_adverts)
            print(f"wrote synthetic corpus; run: skillnet all --config {path}")
            return 0
        overrides = {
            "seed": args.seed,
            "stride": args.stride,
            "threads": args.threads,
            "output_dir": None if args.output_dir is None else str(args.output_dir.resolve()),
        }
        cfg = load_config(args.config, overrides)
        ws = Workspace(cfg)
        stages = STAGES if args.command == "all" else (args.command,)
        for stage in stages:
            run_stage(ws, stage, force=args.force, threads=cfg.threads)
        return 0
    except (SkillnetError, ValueError, KeyError, FileNotFoundError) as exc:
        print(f"skillnet: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
