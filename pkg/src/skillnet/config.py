"""Pipeline configuration: defaults, YAML loading and environment overrides."""

from __future__ import annotations

import dataclasses
import hashlib
import json
import math
import os
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Mapping

import yaml

ENV_PREFIX = "SKILLNET_"


@dataclass
class PipelineConfig:
    """Every tunable of the pipeline.

    Paths are resolved relative to the config file's directory. Any field
    can be overridden by an environment variable ``SKILLNET_<FIELD>`` (upper
    case), which in turn is overridden by command-line flags.
    """

    # inputs
    adverts: str | None = None
    lexicon: str | None = None
    regions: str | None = None
    embeddings: str | None = None
    categories: str | None = None
    output_dir: str = "skillnet_out"
    adverts_format: str = "jsonl"
    # ingestion
    stride: int = 11
    # embedding and graph
    n_components: int = 100
    include_diagonal: bool = True
    cknn_k: int = 15
    cknn_delta: float = 1.0
    # scale scan
    log_scale_min: float | None = None
    log_scale_max: float | None = None
    # decades added past the automatic upper bound so the coarsest plateau is interior
    scale_padding: float = 0.0
    n_scales: int = 60
    min_clusters: int = 4
    max_clusters: int = 400
    n_runs: int = 50
    n_nvi_runs: int | None = None
    window: int = 5
    nvi_threshold: float = 0.1
    max_partitions: int = 5
    # metrics and panel
    path_lengths: str = "distance"
    report_partition: int | None = None
    periods: list = field(default_factory=lambda: [["2016-01-01", "2016-12-31"], ["2022-01-01", "2022-12-31"]])
    # runtime
    seed: int = 0
    threads: int = 1

    def validate(self) -> None:
        checks = [
            (self.stride >= 1, "stride must be >= 1"),
            (self.n_components >= 1, "n_components must be >= 1"),
            (self.cknn_k >= 1, "cknn_k must be >= 1"),
            (self.cknn_delta > 0, "cknn_delta must be positive"),
            (self.n_scales >= 1, "n_scales must be >= 1"),
            (math.isfinite(self.scale_padding) and self.scale_padding >= 0, "scale_padding must be >= 0"),
            (1 <= self.min_clusters <= self.max_clusters, "need 1 <= min_clusters <= max_clusters"),
            (self.n_runs >= 1, "n_runs must be >= 1"),
            (self.n_nvi_runs is None or self.n_nvi_runs >= 1, "n_nvi_runs must be >= 1"),
            (self.window >= 1, "window must be >= 1"),
            (0 < self.nvi_threshold <= 1, "nvi_threshold must lie in (0, 1]"),
            (self.max_partitions >= 1, "max_partitions must be >= 1"),
            (self.path_lengths in ("distance", "unit"), "path_lengths must be 'distance' or 'unit'"),
            (self.threads >= 1, "threads must be >= 1"),
            (self.adverts_format in ("jsonl", "csv"), "adverts_format must be 'jsonl' or 'csv'"),
        ]
        lo, hi = self.log_scale_min, self.log_scale_max
        if (lo is None) != (hi is None):
            checks.append((False, "give both log_scale_min and log_scale_max, or neither"))
        elif lo is not None:
            checks.append((math.isfinite(lo) and math.isfinite(hi) and lo < hi, "need log_scale_min < log_scale_max"))
        for ok, msg in checks:
            if not ok:
                raise ValueError(f"invalid config: {msg}")

    def path(self, name: str) -> Path | None:
        value = getattr(self, name)
        return None if value is None else Path(value)

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def digest(self, keys=None) -> str:
        """SHA-256 of the (selected) fields; ``threads`` never affects results."""
        d = self.to_dict()
        d.pop("threads")
        if keys is not None:
            d = {k: d[k] for k in keys}
        return hashlib.sha256(json.dumps(d, sort_keys=True).encode()).hexdigest()


_FIELDS = {f.name: f for f in dataclasses.fields(PipelineConfig)}
_PATH_FIELDS = ("adverts", "lexicon", "regions", "embeddings", "categories", "output_dir")


def _coerce(name: str, value: Any) -> Any:
    default = _FIELDS[name].default
    if not isinstance(value, str):
        return value
    if name == "periods":
        return json.loads(value)
    if value.lower() in ("none", "null", ""):
        return None
    if isinstance(default, bool):
        if value.lower() in ("1", "true", "yes", "on"):
            return True
        if value.lower() in ("0", "false", "no", "off"):
            return False
        raise ValueError(f"{name} expects a boolean, got {value!r}")
    if isinstance(default, int) or name in ("n_nvi_runs", "report_partition"):
        return int(value)
    if isinstance(default, float) or name in ("log_scale_min", "log_scale_max", "scale_padding"):
        return float(value)
    return value


def load_config(
    path: str | Path | None = None,
    overrides: Mapping[str, Any] | None = None,
    environ: Mapping[str, str] | None = None,
) -> PipelineConfig:
    """Defaults, then the YAML file, then ``SKILLNET_*`` variables, then overrides."""
    values: dict[str, Any] = {}
    base = Path.cwd()
    if path is not None:
        path = Path(path)
        with open(path, encoding="utf-8") as fh:
            loaded = yaml.safe_load(fh) or {}
        if not isinstance(loaded, dict):
            raise ValueError(f"{path}: config must be a mapping")
        unknown = set(loaded) - set(_FIELDS)
        if unknown:
            raise ValueError(f"{path}: unknown config keys {sorted(unknown)}")
        values.update(loaded)
        base = path.parent
    env = os.environ if environ is None else environ
    for name in _FIELDS:
        key = ENV_PREFIX + name.upper()
        if key in env:
            values[name] = _coerce(name, env[key])
    for name, value in (overrides or {}).items():
        if value is not None:
            values[name] = value
    for name in _PATH_FIELDS:
        v = values.get(name)
        if v is not None and not Path(v).is_absolute():
            values[name] = str((base / v).resolve())
    cfg = PipelineConfig(**values)
    if cfg.output_dir is not None and not Path(cfg.output_dir).is_absolute():
        cfg.output_dir = str((base / cfg.output_dir).resolve())
    cfg.validate()
    return cfg
