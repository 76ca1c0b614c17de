"""Error taxonomy for audited reports and summary statistics."""
from __future__ import annotations

import enum
import statistics
from collections import Counter
from dataclasses import dataclass
from typing import Iterable

from .report import AuditReport


class CueTag(str, enum.Enum):
    CORRECT = "Correct"
    COUNTERFACTUAL = "Counterfactual"
    NON_EXISTENT = "NonExistent"


class ReasoningTag(str, enum.Enum):
    CORRECT = "Correct"
    FALSE_CUE = "FalseCue"
    INCOHERENT = "Incoherent"
    SINGLE_CUE = "SingleCue"


def _key(s: str) -> str:
    return "".join(ch for ch in s.lower() if ch.isalnum())


_CUE_ALIASES = {_key(t.value): t for t in CueTag}
_REASON_ALIASES = {_key(t.value): t for t in ReasoningTag}


def parse_cue_tag(text: str) -> CueTag:
    """Accepts spelling variants such as ``Non-existent`` or ``non_existent``."""
    try:
        return _CUE_ALIASES[_key(text)]
    except KeyError:
        raise ValueError(f"unknown cue tag {text!r}") from None


def parse_reasoning_tag(text: str) -> ReasoningTag:
    try:
        return _REASON_ALIASES[_key(text)]
    except KeyError:
        raise ValueError(f"unknown reasoning tag {text!r}") from None


@dataclass(frozen=True)
class TaggedReport:
    video: CueTag
    audio: CueTag
    reasoning: ReasoningTag

    @classmethod
    def from_dict(cls, tags: dict) -> TaggedReport:
        missing = {"video", "audio", "reasoning"} - set(tags)
        if missing:
            raise ValueError(f"tags missing {sorted(missing)}")
        return cls(parse_cue_tag(tags["video"]), parse_cue_tag(tags["audio"]),
                   parse_reasoning_tag(tags["reasoning"]))


def _axis(values, members) -> dict:
    c = Counter(values)
    n = sum(c.values())
    return {m.value: {"count": c.get(m, 0), "fraction": c.get(m, 0) / n} for m in members}


def audit_stats(tagged: Iterable[TaggedReport]) -> dict:
    """Per-category counts and fractions; an empty input gives an empty dict."""
    tagged = list(tagged)
    if not tagged:
        return {}
    return {
        "n": len(tagged),
        "video": _axis([t.video for t in tagged], CueTag),
        "audio": _axis([t.audio for t in tagged], CueTag),
        "reasoning": _axis([t.reasoning for t in tagged], ReasoningTag),
    }


HIST_BIN = 10


def length_stats(reports: Iterable[AuditReport], bin_width: int = HIST_BIN) -> dict:
    """Word counts of the reasoning field; histogram keys are bin lower edges."""
    counts = [len(r.reasoning.split()) for r in reports]
    if not counts:
        return {}
    hist = Counter((c // bin_width) * bin_width for c in counts)
    return {
        "n": len(counts),
        "mean": statistics.fmean(counts),
        "median": statistics.median(counts),
        "min": min(counts),
        "max": max(counts),
        "bin_width": bin_width,
        "histogram": {str(k): hist[k] for k in sorted(hist)},
    }
