"""Audit-record grammar, corpus filters, taxonomy statistics and manifest checks."""
from .report import (AuditReport, EmptyFieldError, FieldCountError, FieldOrderError, InternalSemicolonError,
                     LineBreakError, Prediction, SchemaError, UnknownPredictionError, parse_report)

__all__ = [
    "AuditReport", "EmptyFieldError", "FieldCountError", "FieldOrderError", "InternalSemicolonError",
    "LineBreakError", "Prediction", "SchemaError", "UnknownPredictionError", "parse_report",
]
