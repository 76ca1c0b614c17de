"""Modality-consistency distillation.

Each modality's pooled tokens pass through its own projector into a shared
latent space. A fused head over both latents gives the teacher distribution
``q``; a single shared distillation head gives the unimodal students ``p_v``
and ``p_a``. The regularizer is ``KL(q || p_v) + KL(q || p_a)`` with ``q``
held constant.

Label index 0 is ``deceptive``, index 1 is ``truthful``.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import dataclass, field, fields

import numpy as np

from . import numerics as nx
from .numerics import Tensor

EPS = 1e-12
LABELS = ("deceptive", "truthful")


class _Params:
    def tensors(self) -> dict[str, Tensor]:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    @classmethod
    def from_arrays(cls, arrays, requires_grad: bool = True):
        return cls(**{f.name: Tensor(arrays[f.name], requires_grad=requires_grad) for f in fields(cls)})


@dataclass
class ProjectorParams(_Params):
    """Two-layer tanh map from pooled modality features to a width-p latent."""
    P1: Tensor
    c1: Tensor
    P2: Tensor
    c2: Tensor

    @staticmethod
    def shapes(d: int, p: int) -> dict[str, tuple[int, ...]]:
        return {"P1": (p, d), "c1": (p,), "P2": (p, p), "c2": (p,)}


@dataclass
class DistillHead(_Params):
    H: Tensor
    h: Tensor

    @staticmethod
    def shapes(p: int) -> dict[str, tuple[int, ...]]:
        return {"H": (2, p), "h": (2,)}


@dataclass
class FusedHead(_Params):
    """Teacher head over the concatenated latents ``[z_v | z_a]``."""
    F_v: Tensor
    F_a: Tensor
    f: Tensor

    @staticmethod
    def shapes(p: int) -> dict[str, tuple[int, ...]]:
        return {"F_v": (2, p), "F_a": (2, p), "f": (2,)}


def project(h_m: Tensor, proj: ProjectorParams) -> Tensor:
    pooled = nx.mean_axis(h_m)
    if pooled.shape[0] != proj.P1.shape[1]:
        raise nx.DimensionError(f"modality width {pooled.shape[0]} != projector input {proj.P1.shape[1]}")
    hidden = nx.tanh(nx.add(nx.matmul(proj.P1, pooled), proj.c1))
    return nx.add(nx.matmul(proj.P2, hidden), proj.c2)


def head_logits(z: Tensor, head: DistillHead) -> Tensor:
    return nx.add(nx.matmul(head.H, z), head.h)


def modality_predict(h_m: Tensor, proj: ProjectorParams, head: DistillHead) -> Tensor:
    return nx.softmax(head_logits(project(h_m, proj), head))


def teacher_logits(z_v: Tensor, z_a: Tensor, teacher: FusedHead) -> Tensor:
    return nx.add(nx.add(nx.matmul(teacher.F_v, z_v), nx.matmul(teacher.F_a, z_a)), teacher.f)


def teacher_predict(h_v: Tensor, h_a: Tensor, proj_v: ProjectorParams, proj_a: ProjectorParams,
                    teacher: FusedHead) -> Tensor:
    """Fused teacher distribution, detached from the tape."""
    q = nx.softmax(teacher_logits(project(h_v, proj_v), project(h_a, proj_a), teacher))
    return q.detach()


def check_distribution(p, tol: float = 1e-9) -> np.ndarray:
    arr = p.data if isinstance(p, Tensor) else np.asarray(p, dtype=np.float64)
    if arr.shape != (2,) or np.any(arr < 0) or abs(arr.sum() - 1.0) > tol:
        raise nx.ContractError(f"not a valid 2-class distribution: {arr.tolist()}")
    return arr


def kl_div(q, p: Tensor) -> Tensor:
    """KL(q || p) with an epsilon floor inside both logs, clamped at 0; ``q`` is a constant."""
    q_arr = check_distribution(q)
    check_distribution(p)
    if not isinstance(p, Tensor):
        p = Tensor(p)
    q_t = Tensor(q_arr)
    log_q = Tensor(np.log(q_arr + EPS))
    raw = nx.sub(nx.sum_all(nx.mul(q_t, log_q)), nx.sum_all(nx.mul(q_t, nx.log(p, EPS))))
    # the epsilon floor can push a near-zero divergence to about -1e-12; clamp it
    return nx.relu(raw)


def distill_loss(q, p_v: Tensor, p_a: Tensor) -> Tensor:
    return nx.add(kl_div(q, p_v), kl_div(q, p_a))


# ------------------------------------------------------------ gradient balance

@dataclass
class GradStep:
    step: int
    norm_v: float
    norm_a: float

    @property
    def ratio(self) -> float | None:
        return grad_ratio(self.norm_v, self.norm_a)


def grad_ratio(norm_v: float, norm_a: float) -> float | None:
    """``norm_v / norm_a``; None when the audio norm vanishes."""
    if norm_v < 0 or norm_a < 0:
        raise ValueError("gradient norms are nonnegative")
    if norm_a == 0:
        return None
    return norm_v / norm_a


def frobenius(grads) -> float:
    return math.sqrt(sum(float(np.sum(np.square(g))) for g in grads))


@dataclass
class GradTrace:
    steps: list[GradStep] = field(default_factory=list)

    def append(self, step: int, norm_v: float, norm_a: float) -> None:
        self.steps.append(GradStep(step, norm_v, norm_a))

    def balance(self, last: int = 50) -> float | None:
        """Time-averaged ``|ln r|`` over the final ``last`` steps.

        Steps with an absent ratio, or r = 0 where the log diverges, are skipped.
        """
        vals = [abs(math.log(r)) for r in (s.ratio for s in self.steps[-last:]) if r is not None and r > 0]
        if not vals:
            return None
        return sum(vals) / len(vals)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "norm_v", "norm_a", "ratio"])
        for s in self.steps:
            r = s.ratio
            w.writerow([s.step, repr(s.norm_v), repr(s.norm_a), "" if r is None else repr(r)])
        return buf.getvalue()
