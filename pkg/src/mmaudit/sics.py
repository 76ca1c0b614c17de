"""Gated individuality/commonality feature refinement adapter.

Pipeline for one token sequence ``x`` (L x d):

    c   = mean over tokens of x
    dz  = W2 tanh(W1 c + b1) + b2              sample-adaptive residual
    g   = sigmoid(W_g dz + b_g)                scalar gate
    w   = tanh(g * b_global + (1 - g) * dz)
    w+  = W_plus w + b_plus,  w- = W_minus w + b_minus
    x'  = x * relu(w+) - x * relu(w-)          (w+- broadcast over rows)
    out = lam * x' + (1 - lam) * x
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field, fields

import numpy as np

from . import numerics as nx
from .numerics import Tensor

PARAM_NAMES = (
    "W1", "b1", "W2", "b2", "W_g", "b_g", "b_global",
    "W_plus", "b_plus", "W_minus", "b_minus",
)


@dataclass(frozen=True)
class SicsConfig:
    d: int
    hidden: int | None = None
    lam: float = 0.2
    seed: int = 0

    def __post_init__(self):
        if self.hidden is None:
            object.__setattr__(self, "hidden", self.d)
        if self.d < 1 or self.hidden < 1:
            raise ValueError("d and hidden must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError(f"lambda must lie in [0, 1], got {self.lam}")

    def shapes(self) -> dict[str, tuple[int, ...]]:
        d, h = self.d, self.hidden
        return {
            "W1": (h, d), "b1": (h,), "W2": (d, h), "b2": (d,),
            "W_g": (1, d), "b_g": (), "b_global": (d,),
            "W_plus": (d, d), "b_plus": (d,), "W_minus": (d, d), "b_minus": (d,),
        }


@dataclass
class SicsParams:
    W1: Tensor
    b1: Tensor
    W2: Tensor
    b2: Tensor
    W_g: Tensor
    b_g: Tensor
    b_global: Tensor
    W_plus: Tensor
    b_plus: Tensor
    W_minus: Tensor
    b_minus: Tensor

    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays: dict[str, np.ndarray], requires_grad: bool = True) -> SicsParams:
        return cls(**{k: Tensor(arrays[k], requires_grad=requires_grad) for k in PARAM_NAMES})

    def to_json(self) -> str:
        return params_to_json(self.tensors())

    @classmethod
    def from_json(cls, text: str) -> SicsParams:
        return cls(**params_from_json(text))


@dataclass
class SicsTrace:
    gate: float
    residual: np.ndarray
    w_plus: np.ndarray
    w_minus: np.ndarray
    refined: np.ndarray
    residual_t: Tensor | None = field(default=None, repr=False, compare=False)


def params_to_json(tensors: dict[str, Tensor]) -> str:
    """Flat checkpoint format: ``{name: {"shape": [...], "values": [...]}}``."""
    out = {}
    for name, t in tensors.items():
        data = t.data if isinstance(t, Tensor) else np.asarray(t, dtype=np.float64)
        out[name] = {"shape": list(data.shape), "values": data.reshape(-1).tolist()}
    return json.dumps(out)


def params_from_json(text: str, requires_grad: bool = True) -> dict[str, Tensor]:
    raw = json.loads(text)
    out = {}
    for name, entry in raw.items():
        arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
        out[name] = Tensor(arr, requires_grad=requires_grad)
    return out


def init_arrays(cfg: SicsConfig, rng: np.random.Generator) -> dict[str, np.ndarray]:
    """Uniform(+-1/sqrt(fan_in)) weights, zero biases and zero global prior."""
    out = {}
    for name, shape in cfg.shapes().items():
        if name.startswith("W"):
            bound = 1.0 / np.sqrt(shape[1])
            out[name] = rng.uniform(-bound, bound, size=shape)
        else:
            out[name] = np.zeros(shape)
    return out


def sics_init(cfg: SicsConfig) -> SicsParams:
    rng = np.random.default_rng(cfg.seed)
    return SicsParams.from_arrays(init_arrays(cfg, rng))


def context_pool(x: Tensor) -> Tensor:
    return nx.mean_axis(x)


def residual_net(c: Tensor, p: SicsParams) -> Tensor:
    if c.shape != (p.W1.shape[1],):
        raise nx.DimensionError(f"context has shape {c.shape}, expected ({p.W1.shape[1]},)")
    hidden = nx.tanh(nx.add(nx.matmul(p.W1, c), p.b1))
    return nx.add(nx.matmul(p.W2, hidden), p.b2)


def gate_fuse(dz: Tensor, p: SicsParams) -> tuple[Tensor, Tensor]:
    """Return (modulation vector w, scalar gate g)."""
    if dz.shape != p.b_global.shape:
        raise nx.DimensionError(f"residual has shape {dz.shape}, expected {p.b_global.shape}")
    g = nx.sigmoid(nx.add(nx.matmul(p.W_g, dz), _as_vec(p.b_g)))
    one_minus_g = nx.sub(Tensor(np.ones(1)), g)
    mixed = nx.add(nx.scale(g, p.b_global), nx.scale(one_minus_g, dz))
    return nx.tanh(mixed), g


def _as_vec(t: Tensor) -> Tensor:
    # b_g is stored as a 0-d tensor; lift it to shape (1,) through the tape
    return nx.scale(t, Tensor(np.ones(1)))


def polarity_weights(w: Tensor, p: SicsParams) -> tuple[Tensor, Tensor]:
    w_plus = nx.add(nx.matmul(p.W_plus, w), p.b_plus)
    w_minus = nx.add(nx.matmul(p.W_minus, w), p.b_minus)
    return w_plus, w_minus


def polarity_refine(x: Tensor, w: Tensor, p: SicsParams) -> Tensor:
    if w.shape != (x.shape[1],):
        raise nx.DimensionError(f"modulation vector {w.shape} does not match width {x.shape[1]}")
    w_plus, w_minus = polarity_weights(w, p)
    return apply_polarity(x, w_plus, w_minus)


def apply_polarity(x: Tensor, w_plus: Tensor, w_minus: Tensor) -> Tensor:
    return nx.sub(nx.mul(x, nx.relu(w_plus)), nx.mul(x, nx.relu(w_minus)))


def sics_forward(x: Tensor, p: SicsParams, cfg: SicsConfig) -> tuple[Tensor, SicsTrace]:
    if x.data.ndim != 2 or x.shape[1] != cfg.d:
        raise nx.DimensionError(f"input {x.shape} does not have width {cfg.d}")
    c = context_pool(x)
    dz = residual_net(c, p)
    w, g = gate_fuse(dz, p)
    w_plus, w_minus = polarity_weights(w, p)
    refined = apply_polarity(x, w_plus, w_minus)
    lam = cfg.lam
    out = nx.add(nx.scale(lam, refined), nx.scale(1.0 - lam, x))
    trace = SicsTrace(
        gate=g.item(),
        residual=dz.data.copy(),
        w_plus=w_plus.data.copy(),
        w_minus=w_minus.data.copy(),
        refined=refined.data.copy(),
        residual_t=dz,
    )
    return out, trace


def stability_penalty(dz: Tensor, weight: float) -> Tensor:
    """Optional squared-norm penalty on the residual (off by default)."""
    return nx.scale(weight, nx.sum_all(nx.mul(dz, dz)))
