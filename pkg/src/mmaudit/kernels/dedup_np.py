"""Pure-numpy greedy near-duplicate scan; see ``dedup_nb`` for the encoding."""
from __future__ import annotations

import numpy as np


def greedy_scan_np(indptr, ids, counts, sq, threshold):
    n = indptr.shape[0] - 1
    vocab = int(ids.max()) + 1 if ids.size else 1
    row_of = np.repeat(np.arange(n), np.diff(indptr))
    kept = np.zeros(n, dtype=bool)
    dup_of = np.full(n, -1, dtype=np.int64)
    score = np.zeros(n)
    dense = np.zeros(vocab)
    for i in range(n):
        cand = np.flatnonzero(kept)
        if cand.size:
            if sq[i] == 0.0:
                sims = np.where(sq[cand] == 0.0, 1.0, 0.0)
            else:
                lo, hi = indptr[i], indptr[i + 1]
                dense[ids[lo:hi]] = counts[lo:hi]
                dots = np.bincount(row_of, weights=dense[ids] * counts, minlength=n)[cand]
                dense[ids[lo:hi]] = 0.0
                with np.errstate(divide="ignore", invalid="ignore"):
                    sims = dots / np.sqrt(sq[i] * sq[cand])
                sims = np.where(sq[cand] == 0.0, 0.0, np.clip(sims, 0.0, 1.0))
            hit = np.flatnonzero(sims >= threshold)
            if hit.size:
                dup_of[i] = cand[hit[0]]
                score[i] = sims[hit[0]]
                continue
        kept[i] = True
    return dup_of, score
