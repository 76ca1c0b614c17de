"""Grammar for the single-line audit record.

Canonical form::

    Video Cues: <text>; Audio Cues: <text>; Reasoning: <text>; Prediction: deceptive|truthful

Labels are optional and case-insensitive on input. When both cue fields are
labeled they may appear in either order; output always uses the order above.
Semicolons are delimiters only and there is no escape syntax.
"""
from __future__ import annotations

import enum
import re
from dataclasses import dataclass

N_FIELDS = 4
FIELDS = ("video_cues", "audio_cues", "reasoning", "prediction")
CANONICAL_LABELS = ("Video Cues", "Audio Cues", "Reasoning", "Prediction")

_LABELS = {
    "video cues": "video_cues",
    "visual cues": "video_cues",
    "audio cues": "audio_cues",
    "reasoning": "reasoning",
    "prediction": "prediction",
}
_LABEL_RE = re.compile(r"^\s*(video cues|visual cues|audio cues|reasoning|prediction)\s*:", re.IGNORECASE)


class Prediction(str, enum.Enum):
    DECEPTIVE = "deceptive"
    TRUTHFUL = "truthful"

    @classmethod
    def parse(cls, text: str) -> Prediction | None:
        try:
            return cls(text.strip().lower())
        except ValueError:
            return None


class SchemaError(ValueError):
    """Base class; ``segment`` is the 0-based index of the offending segment."""

    def __init__(self, message: str, segment: int):
        super().__init__(f"segment {segment}: {message}")
        self.segment = segment


class FieldCountError(SchemaError):
    pass


class InternalSemicolonError(SchemaError):
    pass


class EmptyFieldError(SchemaError):
    pass


class UnknownPredictionError(SchemaError):
    pass


class FieldOrderError(SchemaError):
    pass


class LineBreakError(SchemaError):
    pass


@dataclass(frozen=True)
class AuditReport:
    video_cues: str
    audio_cues: str
    reasoning: str
    prediction: Prediction
    raw_line: str = ""

    def serialize(self) -> str:
        values = (self.video_cues, self.audio_cues, self.reasoning, self.prediction.value)
        return "; ".join(f"{label}: {v}" for label, v in zip(CANONICAL_LABELS, values))

    def __str__(self) -> str:
        return self.serialize()


def _split_label(segment: str) -> tuple[str | None, str]:
    m = _LABEL_RE.match(segment)
    if m is None:
        return None, segment.strip()
    return _LABELS[m.group(1).lower()], segment[m.end():].strip()


def _semicolon_segment(segments: list[str]) -> int:
    # first unlabeled segment following a labeled one; otherwise the first surplus slot
    labeled = [_split_label(s)[0] is not None for s in segments]
    for i in range(1, len(segments) - 1):
        if labeled[i - 1] and not labeled[i]:
            return i
    return N_FIELDS - 1


def parse_report(line: str) -> AuditReport:
    raw = line
    line = line.rstrip("\r\n")
    brk = re.search(r"[\r\n]", line)
    if brk:
        raise LineBreakError("record spans more than one line", line.count(";", 0, brk.start()))
    segments = line.split(";")
    if len(segments) != N_FIELDS:
        if len(segments) > N_FIELDS and Prediction.parse(_split_label(segments[-1])[1]) is not None:
            raise InternalSemicolonError(
                f"{len(segments)} segments with a valid prediction last; a field contains ';'",
                _semicolon_segment(segments))
        raise FieldCountError(f"expected {N_FIELDS} segments, found {len(segments)}",
                              min(len(segments), N_FIELDS))

    parsed = [_split_label(s) for s in segments]
    labels = [lab for lab, _ in parsed]
    values = [v for _, v in parsed]

    for i, lab in enumerate(labels):
        if lab is None:
            continue
        allowed = {"video_cues", "audio_cues"} if i < 2 else {FIELDS[i]}
        if lab not in allowed:
            raise FieldOrderError(f"label for {lab!r} found in position {i}", i)
    if labels[0] is not None and labels[0] == labels[1]:
        raise FieldOrderError(f"duplicate label {labels[0]!r}", 1)
    if labels[0] == "audio_cues" or labels[1] == "video_cues":
        if None in labels[:2]:
            raise FieldOrderError("cue fields out of order need both labels", 0 if labels[0] is None else 1)
        values[0], values[1] = values[1], values[0]

    for i, v in enumerate(values):
        if not v:
            # report the position in the input, not the normalized one
            src = i if labels[0] != "audio_cues" or i > 1 else 1 - i
            raise EmptyFieldError(f"field {FIELDS[i]} is empty", src)
    pred = Prediction.parse(values[3])
    if pred is None:
        raise UnknownPredictionError(f"prediction {values[3]!r} is not one of deceptive/truthful", 3)
    return AuditReport(values[0], values[1], values[2], pred, raw_line=raw)


def is_valid(line: str) -> bool:
    try:
        parse_report(line)
    except SchemaError:
        return False
    return True
