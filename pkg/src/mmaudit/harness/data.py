"""Synthetic two-modality token sequences with class-conditional means."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

DECEPTIVE, TRUTHFUL = 0, 1


@dataclass(frozen=True)
class SyntheticSpec:
    n_samples: int = 256
    d_v: int = 8
    d_a: int = 8
    L_v: int = 5
    L_a: int = 5
    snr_v: float = 1.0
    snr_a: float = 0.25
    spike_frac: float = 0.0
    spike_gain: float = 1.0
    class_balance: float = 0.5
    mirror: bool = False
    seed: int = 0

    def __post_init__(self):
        if self.n_samples < 1:
            raise ValueError("n_samples must be positive")
        if min(self.d_v, self.d_a, self.L_v, self.L_a) < 1:
            raise ValueError("widths and lengths must be positive")
        if self.snr_v < 0 or self.snr_a < 0:
            raise ValueError("snr values must be nonnegative")
        if not 0.0 <= self.spike_frac <= 1.0:
            raise ValueError("spike_frac must lie in [0, 1]")
        if not 0.0 < self.class_balance < 1.0:
            raise ValueError("class_balance must lie in (0, 1)")
        if self.mirror and (self.d_v, self.L_v, self.snr_v) != (self.d_a, self.L_a, self.snr_a):
            raise ValueError("mirrored data needs identical modality shapes and snr")


@dataclass
class Dataset:
    h_v: np.ndarray  # (N, L_v, d_v)
    h_a: np.ndarray  # (N, L_a, d_a)
    y: np.ndarray    # (N,) int64, 0 = deceptive
    spike_v: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))
    spike_a: np.ndarray = field(default_factory=lambda: np.zeros(0, dtype=np.int64))

    def __len__(self) -> int:
        return int(self.y.shape[0])

    @property
    def Cv(self) -> np.ndarray:
        return self.h_v.mean(axis=1)

    @property
    def Ca(self) -> np.ndarray:
        return self.h_a.mean(axis=1)

    def subset(self, idx) -> Dataset:
        return Dataset(self.h_v[idx], self.h_a[idx], self.y[idx], self.spike_v, self.spike_a)


def _spike_dims(rng, d: int, frac: float) -> np.ndarray:
    if frac <= 0:
        return np.zeros(0, dtype=np.int64)
    k = max(1, int(round(frac * d)))
    return np.sort(rng.choice(d, size=k, replace=False)).astype(np.int64)


def _modality(rng, n, L, d, snr, sign, spike_dims, gain):
    u = rng.standard_normal(d)
    u /= np.linalg.norm(u)
    noise = rng.standard_normal((n, L, d))
    noise[:, :, spike_dims] *= gain
    return sign[:, None, None] * snr * u + noise


def gen_synthetic(spec: SyntheticSpec) -> Dataset:
    """Deceptive samples sit at ``+snr*u``, truthful at ``-snr*u`` (u a random unit vector)."""
    rng = np.random.default_rng(spec.seed)
    n = spec.n_samples
    n_dec = int(round(spec.class_balance * n))
    y = np.where(np.arange(n) < n_dec, DECEPTIVE, TRUTHFUL).astype(np.int64)
    y = y[rng.permutation(n)]
    sign = np.where(y == DECEPTIVE, 1.0, -1.0)

    spike_v = _spike_dims(rng, spec.d_v, spec.spike_frac)
    h_v = _modality(rng, n, spec.L_v, spec.d_v, spec.snr_v, sign, spike_v, spec.spike_gain)
    if spec.mirror:
        return Dataset(h_v, h_v.copy(), y, spike_v, spike_v.copy())
    spike_a = _spike_dims(rng, spec.d_a, spec.spike_frac)
    h_a = _modality(rng, n, spec.L_a, spec.d_a, spec.snr_a, sign, spike_a, spec.spike_gain)
    return Dataset(h_v, h_a, y, spike_v, spike_a)
