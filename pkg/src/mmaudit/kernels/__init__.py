"""Hot kernels with a numba path and a pure-numpy fallback.

The backend is chosen once per process from ``MMAUDIT_NUMBA`` (set to ``0``
to force numpy). Results are deterministic per backend; the two backends agree
to ~1e-12 on the training objective and exactly on dedup scores.
"""
from __future__ import annotations

import os

from . import fused_np
from .dedup_np import greedy_scan_np
from .layout import Layout

try:
    from . import fused_nb
    from .dedup_nb import greedy_scan_nb
except ImportError:  # numba missing
    fused_nb = None
    greedy_scan_nb = None

ENV_FLAG = "MMAUDIT_NUMBA"


def _numba_requested() -> bool:
    return os.environ.get(ENV_FLAG, "1").strip().lower() not in ("0", "false", "no", "off")


BACKEND = "numba" if (fused_nb is not None and _numba_requested()) else "numpy"


def loss_and_grad(theta, offsets, dims, Cv, Ca, y, use_sics, use_dmc, lam, alpha, stab_w, backend=None):
    backend = backend or BACKEND
    mod = fused_nb if backend == "numba" else fused_np
    return mod.loss_and_grad(theta, offsets, dims, Cv, Ca, y, bool(use_sics), bool(use_dmc),
                             float(lam), float(alpha), float(stab_w))


def greedy_scan(indptr, ids, counts, sq, threshold, backend=None):
    backend = backend or BACKEND
    fn = greedy_scan_nb if backend == "numba" else greedy_scan_np
    return fn(indptr, ids, counts, sq, float(threshold))


__all__ = ["BACKEND", "ENV_FLAG", "Layout", "greedy_scan", "loss_and_grad"]
