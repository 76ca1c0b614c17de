"""Numba greedy near-duplicate scan over sparse character n-gram count vectors.

Rows are CSR-encoded (``indptr``, sorted ``ids``, integer-valued ``counts``).
Cosine is ``dot / sqrt(|a|^2 * |b|^2)``: every term is an exact integer in
float64, so both backends produce bit-identical scores.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit


@njit(cache=True)
def _cosine_nb(indptr, ids, counts, sq, i, j):
    if sq[i] == 0.0 or sq[j] == 0.0:
        return 1.0 if sq[i] == sq[j] else 0.0
    a, a_end = indptr[i], indptr[i + 1]
    b, b_end = indptr[j], indptr[j + 1]
    dot = 0.0
    while a < a_end and b < b_end:
        if ids[a] == ids[b]:
            dot += counts[a] * counts[b]
            a += 1
            b += 1
        elif ids[a] < ids[b]:
            a += 1
        else:
            b += 1
    s = dot / math.sqrt(sq[i] * sq[j])
    return min(max(s, 0.0), 1.0)


@njit(cache=True)
def greedy_scan_nb(indptr, ids, counts, sq, threshold):
    n = indptr.shape[0] - 1
    kept = np.empty(n, dtype=np.int64)
    nk = 0
    dup_of = np.full(n, -1, dtype=np.int64)
    score = np.zeros(n)
    for i in range(n):
        for k in range(nk):
            j = kept[k]
            s = _cosine_nb(indptr, ids, counts, sq, i, j)
            if s >= threshold:
                dup_of[i] = j
                score[i] = s
                break
        if dup_of[i] < 0:
            kept[nk] = i
            nk += 1
    return dup_of, score
