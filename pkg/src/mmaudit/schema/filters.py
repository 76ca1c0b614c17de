"""Corpus loading, format filtering and near-duplicate removal.

Near-duplicates are scored by cosine similarity of character 3-gram counts
over lowercased, whitespace-collapsed text. Texts shorter than three
characters count as a single gram.
"""
from __future__ import annotations

import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Callable, Iterable

import numpy as np

from .. import kernels
from .report import AuditReport, SchemaError, parse_report

NGRAM = 3
DEFAULT_THRESHOLD = 0.95

FORMAT = "format"
DUPLICATE = "duplicate"

# extra semantic check on a parsed record: return a reason to reject, or None
ConsistencyCheck = Callable[[AuditReport], "str | None"]


def no_check(report: AuditReport) -> str | None:
    return None


@dataclass(frozen=True)
class Record:
    id: str
    line: str
    line_no: int
    tags: dict | None = None


@dataclass(frozen=True)
class Dropped:
    id: str
    line_no: int
    reason: str
    detail: str


@dataclass
class FilterReport:
    kept: list[str] = field(default_factory=list)
    dropped: list[Dropped] = field(default_factory=list)

    @property
    def counts(self) -> dict[str, int]:
        c = Counter(d.reason for d in self.dropped)
        return {"kept": len(self.kept), FORMAT: c.get(FORMAT, 0), DUPLICATE: c.get(DUPLICATE, 0)}

    def to_dict(self) -> dict:
        return {"kept": list(self.kept), "dropped": [asdict(d) for d in self.dropped], "counts": self.counts}


class CorpusError(ValueError):
    pass


def load_corpus(path: str | Path) -> list[Record]:
    """Plain text (one record per line) or JSON Lines with ``{id, line, tags?}``."""
    path = Path(path)
    text = path.read_text(encoding="utf-8")
    lines = text.splitlines()
    if path.suffix.lower() != ".jsonl":
        return [Record(id=str(i), line=ln, line_no=i) for i, ln in enumerate(lines, 1)]
    out = []
    for i, ln in enumerate(lines, 1):
        if not ln.strip():
            continue
        try:
            obj = json.loads(ln)
        except json.JSONDecodeError as e:
            raise CorpusError(f"{path}:{i}: invalid JSON ({e.msg})") from None
        if not isinstance(obj, dict) or "line" not in obj or not isinstance(obj["line"], str):
            raise CorpusError(f"{path}:{i}: expected an object with a string 'line'")
        out.append(Record(id=str(obj.get("id", i)), line=obj["line"], line_no=i, tags=obj.get("tags")))
    return out


def _format_pass(records, check) -> tuple[list[Record], list[Dropped]]:
    kept, dropped = [], []
    for r in records:
        try:
            parsed = parse_report(r.line)
        except SchemaError as e:
            dropped.append(Dropped(r.id, r.line_no, FORMAT, f"{type(e).__name__}: {e}"))
            continue
        reason = check(parsed)
        if reason:
            dropped.append(Dropped(r.id, r.line_no, FORMAT, f"check: {reason}"))
        else:
            kept.append(r)
    return kept, dropped


def validate_rules(records: Iterable[Record], check: ConsistencyCheck = no_check) -> FilterReport:
    kept, dropped = _format_pass(records, check)
    return FilterReport(kept=[r.id for r in kept], dropped=dropped)


def normalize(text: str) -> str:
    return " ".join(text.lower().split())


def ngrams(text: str, n: int = NGRAM) -> Counter:
    t = normalize(text)
    if not t:
        return Counter()
    if len(t) < n:
        return Counter([t])
    return Counter(t[i:i + n] for i in range(len(t) - n + 1))


def similarity(a: str, b: str) -> float:
    ga, gb = ngrams(a), ngrams(b)
    if not ga or not gb:
        return 1.0 if not ga and not gb else 0.0
    dot = sum(c * gb[g] for g, c in ga.items() if g in gb)
    na = sum(c * c for c in ga.values())
    nb = sum(c * c for c in gb.values())
    return min(1.0, max(0.0, dot / math.sqrt(na * nb)))


def encode_ngrams(texts: list[str]):
    vocab: dict[str, int] = {}
    rows = [ngrams(t) for t in texts]
    for row in rows:
        for g in row:
            vocab.setdefault(g, len(vocab))
    indptr = np.zeros(len(rows) + 1, dtype=np.int64)
    ids, counts = [], []
    for i, row in enumerate(rows):
        pairs = sorted((vocab[g], c) for g, c in row.items())
        ids.extend(p[0] for p in pairs)
        counts.extend(p[1] for p in pairs)
        indptr[i + 1] = len(ids)
    ids_a = np.asarray(ids, dtype=np.int64)
    counts_a = np.asarray(counts, dtype=np.float64)
    sq = np.array([float(sum(c * c for c in row.values())) for row in rows])
    return indptr, ids_a, counts_a, sq


def dedup_filter(records: list[Record], threshold: float = DEFAULT_THRESHOLD,
                 backend: str | None = None) -> FilterReport:
    """Greedy scan in input order against the records kept so far."""
    if not 0.0 < threshold <= 1.0:
        raise ValueError("threshold must lie in (0, 1]")
    records = list(records)
    report = FilterReport()
    if not records:
        return report
    dup_of, score = kernels.greedy_scan(*encode_ngrams([r.line for r in records]), threshold, backend=backend)
    for i, r in enumerate(records):
        j = int(dup_of[i])
        if j < 0:
            report.kept.append(r.id)
        else:
            report.dropped.append(Dropped(r.id, r.line_no, DUPLICATE,
                                          f"similarity {score[i]:.4f} with {records[j].id}"))
    return report


def filter_corpus(records: list[Record], threshold: float = DEFAULT_THRESHOLD,
                  check: ConsistencyCheck = no_check, backend: str | None = None) -> FilterReport:
    """Format filtering followed by near-duplicate removal among the survivors."""
    survivors, fmt_dropped = _format_pass(records, check)
    dd = dedup_filter(survivors, threshold, backend=backend)
    dropped = sorted(fmt_dropped + dd.dropped, key=lambda d: d.line_no)
    return FilterReport(kept=dd.kept, dropped=dropped)
