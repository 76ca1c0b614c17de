"""Per-edition sample counts and their arithmetic checks."""
from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from fractions import Fraction
from importlib import resources
from pathlib import Path

HEADER = ("edition", "total", "deceptive", "truthful")
TOTAL_ROW = "total"


class ManifestFormatError(ValueError):
    def __init__(self, message: str, row: int):
        super().__init__(f"row {row}: {message}")
        self.row = row


@dataclass(frozen=True)
class ManifestEntry:
    edition: str
    total: int
    deceptive: int
    truthful: int


@dataclass(frozen=True)
class Violation:
    edition: str
    kind: str       # "total mismatch" | "ratio violation" | "grand total mismatch"
    detail: str

    def __str__(self) -> str:
        return f"{self.edition}: {self.kind} ({self.detail})"


@dataclass
class ManifestResult:
    entries: list[ManifestEntry]
    totals: tuple[int, int, int]
    violations: list[Violation] = field(default_factory=list)
    warnings: list[str] = field(default_factory=list)

    @property
    def ok(self) -> bool:
        return not self.violations

    def to_dict(self) -> dict:
        return {
            "ok": self.ok,
            "totals": dict(zip(HEADER[1:], self.totals)),
            "violations": [{"edition": v.edition, "kind": v.kind, "detail": v.detail} for v in self.violations],
            "warnings": list(self.warnings),
        }


def parse_manifest(text: str) -> list[ManifestEntry]:
    """CSV with header ``edition,total,deceptive,truthful``; rows are numbered from 1 at the header."""
    rows = list(csv.reader(io.StringIO(text)))
    if not rows:
        return []
    header = tuple(c.strip().lower() for c in rows[0])
    if header != HEADER:
        raise ManifestFormatError(f"expected header {','.join(HEADER)}, got {','.join(rows[0])}", 1)
    out = []
    for i, row in enumerate(rows[1:], 2):
        if not row or all(not c.strip() for c in row):
            continue
        if len(row) != len(HEADER):
            raise ManifestFormatError(f"expected {len(HEADER)} columns, got {len(row)}", i)
        name = row[0].strip()
        if not name:
            raise ManifestFormatError("empty edition name", i)
        nums = []
        for col, cell in zip(HEADER[1:], row[1:]):
            try:
                v = int(cell.strip())
            except ValueError:
                raise ManifestFormatError(f"{col} is not an integer: {cell!r}", i) from None
            if v < 0:
                raise ManifestFormatError(f"{col} is negative", i)
            nums.append(v)
        out.append(ManifestEntry(name, *nums))
    return out


def load_manifest(path: str | Path) -> list[ManifestEntry]:
    return parse_manifest(Path(path).read_text(encoding="utf-8"))


def bundled_manifest_text() -> str:
    return resources.files("mmaudit.data").joinpath("t4_manifest.csv").read_text(encoding="utf-8")


def parse_ratio(text: str) -> tuple[int, int]:
    parts = text.split(":")
    try:
        a, b = (int(p) for p in parts)
    except ValueError:
        raise ValueError(f"ratio must look like 2:1, got {text!r}") from None
    if a <= 0 or b <= 0:
        raise ValueError("ratio terms must be positive")
    return a, b


def validate_manifest(entries: list[ManifestEntry], expect_ratio: tuple[int, int] | None = None,
                      expect_totals: tuple[int, int, int] | None = None) -> ManifestResult:
    """Check each row, the grand totals and (optionally) a deceptive:truthful ratio.

    Every violation is reported; nothing raises.
    """
    sums = (sum(e.total for e in entries), sum(e.deceptive for e in entries), sum(e.truthful for e in entries))
    res = ManifestResult(list(entries), sums)
    if not entries:
        res.warnings.append("manifest is empty; nothing to check")
        return res
    ratio = Fraction(*expect_ratio) if expect_ratio else None

    def check(name, total, dec, tru):
        if total != dec + tru:
            res.violations.append(Violation(name, "total mismatch", f"{dec} + {tru} != {total}"))
        if ratio is not None and dec * ratio.denominator != tru * ratio.numerator:
            res.violations.append(Violation(name, "ratio violation",
                                            f"{dec}:{tru} is not {ratio.numerator}:{ratio.denominator}"))

    for e in entries:
        check(e.edition, e.total, e.deceptive, e.truthful)
    if len(entries) > 1:
        check(TOTAL_ROW, *sums)
    if expect_totals is not None and tuple(expect_totals) != sums:
        res.violations.append(Violation(TOTAL_ROW, "grand total mismatch", f"{sums} != {tuple(expect_totals)}"))
    return res
