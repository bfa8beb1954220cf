"""Advert ingestion: parsing, deduplication, lexicon mapping, regions and
the skill co-occurrence matrix."""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
from collections import Counter
from dataclasses import dataclass, field
from datetime import date, datetime
from pathlib import Path
from typing import BinaryIO, Iterable, Sequence

import numpy as np
from scipy import sparse

from .errors import CorpusFormatError, LexiconError, RegionTableError, VocabularyError

log = logging.getLogger(__name__)

#: Returned by :func:`resolve_region` for locations missing from the table.
UNRESOLVED = None


@dataclass(frozen=True)
class AdvertRecord:
    advert_id: str
    first_posted: date
    raw_location: str = ""
    salary: float | None = None
    raw_skills: tuple[str, ...] = ()

    def __post_init__(self):
        if not self.advert_id:
            raise ValueError("advert_id must be non-empty")
        if self.salary is not None and not self.salary > 0:
            raise ValueError(f"salary must be positive, got {self.salary}")


@dataclass(frozen=True)
class MappedAdvert:
    """An advert after lexicon mapping and region resolution."""

    advert_id: str
    first_posted: date
    skills: tuple[str, ...]
    region: str | None = None
    salary: float | None = None

    def to_json(self) -> str:
        return json.dumps(
            {
                "id": self.advert_id,
                "date": self.first_posted.isoformat(),
                "region": self.region,
                "salary": self.salary,
                "skills": list(self.skills),
            },
            ensure_ascii=False,
        )

    @classmethod
    def from_json(cls, line: str) -> "MappedAdvert":
        obj = json.loads(line)
        return cls(
            advert_id=obj["id"],
            first_posted=date.fromisoformat(obj["date"]),
            skills=tuple(obj["skills"]),
            region=obj.get("region"),
            salary=obj.get("salary"),
        )


@dataclass(frozen=True)
class LexiconEntry:
    raw_skill: str
    taxonomy_skill: str
    category: str
    action: str  # "keep" or "drop"


@dataclass
class SkillLexicon:
    entries: list[LexiconEntry]
    index: dict[str, LexiconEntry] = field(init=False, repr=False)

    def __post_init__(self):
        self.index = {}
        for e in self.entries:
            if e.action not in ("keep", "drop"):
                raise LexiconError(f"action must be keep or drop, got {e.action!r} for {e.raw_skill!r}")
            if e.raw_skill in self.index:
                raise LexiconError(f"duplicate raw_skill {e.raw_skill!r}")
            if e.action == "keep" and not (e.taxonomy_skill and e.category):
                raise LexiconError(f"keep entry {e.raw_skill!r} needs taxonomy_skill and category")
            self.index[e.raw_skill] = e

    def categories(self) -> dict[str, str]:
        """Map each kept taxonomy skill to its category."""
        return {e.taxonomy_skill: e.category for e in self.entries if e.action == "keep"}


@dataclass
class RegionTable:
    regions: list[str]
    location_map: dict[str, list[tuple[str, float]]]

    def __post_init__(self):
        for loc, pairs in self.location_map.items():
            total = 0.0
            for region, w in pairs:
                if not 0 < w <= 1:
                    raise RegionTableError(f"weight {w} for {loc!r}/{region!r} outside (0, 1]")
                total += w
            if abs(total - 1.0) > 1e-9:
                raise RegionTableError(f"weights for {loc!r} sum to {total}, not 1")


@dataclass
class CooccurrenceMatrix:
    """Symmetric skill co-mention counts.

    ``counts[i, j]`` is the number of adverts mentioning both skills and
    ``counts[i, i]`` the number of adverts mentioning skill ``i``.
    """

    skill_names: tuple[str, ...]
    counts: np.ndarray
    n_adverts: int

    @property
    def n_skills(self) -> int:
        return len(self.skill_names)

    @property
    def mentions(self) -> np.ndarray:
        return np.diag(self.counts).copy()


# ---------------------------------------------------------------------------
# parsing


def _parse_date(value) -> date:
    if not isinstance(value, str) or not value:
        raise ValueError("missing date")
    return datetime.fromisoformat(value.strip()).date()


def _parse_salary(value) -> float | None:
    if value is None or value == "":
        return None
    salary = float(value)
    if not salary > 0:
        raise ValueError("non-positive salary")
    return salary


def _record_from_fields(obj: dict, skills) -> AdvertRecord:
    advert_id = obj.get("id")
    if not isinstance(advert_id, str) or not advert_id.strip():
        raise ValueError("missing id")
    location = obj.get("location") or ""
    if not isinstance(location, str):
        raise ValueError("location must be a string")
    if not isinstance(skills, list) or not all(isinstance(s, str) for s in skills):
        raise ValueError("skills must be a list of strings")
    return AdvertRecord(
        advert_id=advert_id.strip(),
        first_posted=_parse_date(obj.get("date")),
        raw_location=location.strip(),
        salary=_parse_salary(obj.get("salary")),
        raw_skills=tuple(s.strip() for s in skills if s.strip()),
    )


def _iter_jsonl(text: Iterable[str]):
    for line in text:
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            if not isinstance(obj, dict):
                raise ValueError("not an object")
            yield _record_from_fields(obj, obj.get("skills", []))
        except (ValueError, TypeError):
            yield None


def _iter_csv(text: Iterable[str]):
    for row in csv.DictReader(text):
        try:
            cell = row.get("skills") or ""
            skills = [s for s in cell.split(";")]
            yield _record_from_fields(row, skills)
        except (ValueError, TypeError):
            yield None


def parse_adverts(stream: BinaryIO, format: str = "jsonl") -> tuple[list[AdvertRecord], int]:
    """Parse a byte stream of adverts.

    Returns the well-formed records and the number of malformed rows that
    were skipped. Raises :class:`CorpusFormatError` when more than half of
    the rows are malformed.
    """
    if format not in ("jsonl", "csv"):
        raise ValueError(f"unknown advert format {format!r}")
    text = io.TextIOWrapper(stream, encoding="utf-8", newline="" if format == "csv" else None)
    rows = _iter_jsonl(text) if format == "jsonl" else _iter_csv(text)
    records = []
    malformed = 0
    for rec in rows:
        if rec is None:
            malformed += 1
        else:
            records.append(rec)
    text.detach()
    total = malformed + len(records)
    if total and malformed / total > 0.5:
        raise CorpusFormatError(f"{malformed} of {total} rows malformed; is the format {format!r} right?")
    if malformed:
        log.warning("skipped %d malformed advert rows", malformed)
    return records, malformed


def read_adverts(path: str | Path) -> tuple[list[AdvertRecord], int]:
    path = Path(path)
    fmt = "csv" if path.suffix.lower() == ".csv" else "jsonl"
    with open(path, "rb") as fh:
        return parse_adverts(fh, fmt)


def load_lexicon(path: str | Path) -> SkillLexicon:
    with open(path, newline="", encoding="utf-8") as fh:
        reader = csv.DictReader(fh)
        missing = {"raw_skill", "taxonomy_skill", "category", "action"} - set(reader.fieldnames or ())
        if missing:
            raise LexiconError(f"lexicon missing columns {sorted(missing)}")
        entries = [
            LexiconEntry(
                row["raw_skill"].strip(),
                (row["taxonomy_skill"] or "").strip(),
                (row["category"] or "").strip(),
                row["action"].strip().lower(),
            )
            for row in reader
        ]
    return SkillLexicon(entries)


def load_region_table(path: str | Path) -> RegionTable:
    location_map: dict[str, list[tuple[str, float]]] = {}
    regions: list[str] = []
    with open(path, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            region = row["region"].strip()
            location_map.setdefault(row["location"].strip(), []).append((region, float(row["weight"])))
            if region not in regions:
                regions.append(region)
    return RegionTable(sorted(regions), location_map)


# ---------------------------------------------------------------------------
# record operations


def deduplicate(records: Sequence[AdvertRecord]) -> list[AdvertRecord]:
    """Keep the earliest posting of each advert id, ordered by date."""
    best: dict[str, tuple[date, int]] = {}
    for pos, rec in enumerate(records):
        prev = best.get(rec.advert_id)
        if prev is None or rec.first_posted < prev[0]:
            best[rec.advert_id] = (rec.first_posted, pos)
    keep = sorted(best.values())
    return [records[pos] for _, pos in keep]


def map_skills(record: AdvertRecord, lexicon: SkillLexicon, unknown: Counter | None = None) -> list[str]:
    """Translate raw skills to taxonomy skills, dropping flagged and unknown ones.

    Order of first appearance is kept; a taxonomy skill reached from several
    raw skills appears once. Unknown raw skills are tallied in ``unknown``.
    """
    out: list[str] = []
    seen = set()
    for raw in record.raw_skills:
        entry = lexicon.index.get(raw)
        if entry is None:
            if unknown is not None:
                unknown[raw] += 1
            continue
        if entry.action == "drop" or entry.taxonomy_skill in seen:
            continue
        seen.add(entry.taxonomy_skill)
        out.append(entry.taxonomy_skill)
    return out


def _uniform_from_key(seed: int, advert_id: str) -> float:
    digest = hashlib.sha256(f"{seed}\x1f{advert_id}".encode()).digest()
    return int.from_bytes(digest[:8], "big") / 2.0**64


def resolve_region(record: AdvertRecord, table: RegionTable, rng_seed: int = 0) -> str | None:
    """Region for an advert; multi-region locations are sampled by weight.

    The draw depends only on ``(rng_seed, advert_id)`` so repeated calls
    agree. Unknown locations give :data:`UNRESOLVED`.
    """
    pairs = table.location_map.get(record.raw_location)
    if not pairs:
        return UNRESOLVED
    if len(pairs) == 1:
        return pairs[0][0]
    u = _uniform_from_key(rng_seed, record.advert_id)
    acc = 0.0
    for region, w in pairs:
        acc += w
        if u < acc:
            return region
    return pairs[-1][0]


def subsample(records: Sequence, stride: int) -> list:
    """Every ``stride``-th record after a stable sort by posting date."""
    if stride < 1:
        raise ValueError(f"stride must be >= 1, got {stride}")

    def key(rec):
        return rec.first_posted

    return sorted(records, key=key)[::stride]


def build_cooccurrence(adverts: Iterable[Sequence[str]], vocabulary: Sequence[str]) -> CooccurrenceMatrix:
    """Accumulate per-advert co-mention counts over a fixed vocabulary.

    Each element of ``adverts`` is the skill list of one advert (a
    :class:`MappedAdvert` is accepted too). Repeated skills within one
    advert count once.
    """
    index = {s: i for i, s in enumerate(vocabulary)}
    rows: list[int] = []
    cols: list[int] = []
    n_adverts = 0
    for adv in adverts:
        skills = adv.skills if isinstance(adv, MappedAdvert) else adv
        ids = set()
        for s in skills:
            try:
                ids.add(index[s])
            except KeyError:
                raise VocabularyError(s) from None
        rows.extend([n_adverts] * len(ids))
        cols.extend(sorted(ids))
        n_adverts += 1
    n = len(vocabulary)
    x = sparse.csr_matrix(
        (np.ones(len(rows), dtype=np.int64), (rows, cols)), shape=(n_adverts, n), dtype=np.int64
    )
    counts = np.asarray((x.T @ x).todense(), dtype=np.int64)
    return CooccurrenceMatrix(tuple(vocabulary), counts, n_adverts)


def vocabulary_of(adverts: Iterable[MappedAdvert]) -> list[str]:
    """Sorted set of skills mentioned at least once."""
    return sorted({s for adv in adverts for s in adv.skills})


# ---------------------------------------------------------------------------
# persistence


def save_cooccurrence(k: CooccurrenceMatrix, triplets: Path, vocabulary: Path) -> None:
    i, j = np.nonzero(np.triu(k.counts))
    with open(triplets, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["i", "j", "count"])
        for a, b in zip(i.tolist(), j.tolist()):
            w.writerow([a, b, int(k.counts[a, b])])
    with open(vocabulary, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "skill"])
        for idx, name in enumerate(k.skill_names):
            w.writerow([idx, name])


def load_cooccurrence(triplets: Path, vocabulary: Path, n_adverts: int) -> CooccurrenceMatrix:
    with open(vocabulary, newline="", encoding="utf-8") as fh:
        names = [row["skill"] for row in sorted(csv.DictReader(fh), key=lambda r: int(r["index"]))]
    counts = np.zeros((len(names), len(names)), dtype=np.int64)
    with open(triplets, newline="", encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            a, b, c = int(row["i"]), int(row["j"]), int(row["count"])
            counts[a, b] = counts[b, a] = c
    return CooccurrenceMatrix(tuple(names), counts, n_adverts)
