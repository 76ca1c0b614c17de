"""Training loop for the combined objective ``loss_rep + alpha * loss_distill``.

``loss_rep`` is two-class cross-entropy of the fused teacher prediction; it
stands in for token-level report supervision, which needs a language model.
"""
from __future__ import annotations

import csv
import io
import math
from dataclasses import asdict, dataclass, field

import numpy as np

from .. import kernels
from ..dmc import GradTrace, frobenius
from .data import DECEPTIVE, Dataset
from .model import Model, ModelConfig
from .optim import AdamW


class TrainingDiverged(FloatingPointError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-3
    epochs: int = 1
    steps: int | None = None
    batch_size: int = 32
    alpha: float = 0.1
    lam: float = 0.2
    weight_decay: float = 0.01
    stab_weight: float = 0.0
    latent: int = 8
    hidden: int | None = None
    use_sics: bool = True
    use_dmc: bool = True
    seed: int = 0

    def __post_init__(self):
        if self.alpha < 0:
            raise ValueError("alpha must be nonnegative")
        if self.epochs < 1 or self.batch_size < 1 or (self.steps is not None and self.steps < 1):
            raise ValueError("epochs, steps and batch_size must be positive")
        if not 0.0 <= self.lam <= 1.0:
            raise ValueError("lambda must lie in [0, 1]")

    def model_config(self, data: Dataset, with_head: bool = True) -> ModelConfig:
        return ModelConfig(d_v=data.h_v.shape[2], d_a=data.h_a.shape[2], latent=self.latent,
                           hidden=self.hidden, use_sics=self.use_sics, with_head=with_head, lam=self.lam)


@dataclass(frozen=True)
class Metrics:
    tp: int
    fp: int
    tn: int
    fn: int

    @property
    def n(self) -> int:
        return self.tp + self.fp + self.tn + self.fn

    @property
    def accuracy(self) -> float:
        return (self.tp + self.tn) / self.n if self.n else 0.0

    @property
    def f1(self) -> float:
        # deceptive is the positive class; F1 is 0 when it never occurs
        denom = 2 * self.tp + self.fp + self.fn
        return 2 * self.tp / denom if denom else 0.0

    @classmethod
    def from_labels(cls, y_true, y_pred) -> Metrics:
        y_true = np.asarray(y_true)
        y_pred = np.asarray(y_pred)
        pos_t = y_true == DECEPTIVE
        pos_p = y_pred == DECEPTIVE
        return cls(tp=int(np.sum(pos_t & pos_p)), fp=int(np.sum(~pos_t & pos_p)),
                   tn=int(np.sum(~pos_t & ~pos_p)), fn=int(np.sum(pos_t & ~pos_p)))

    def to_dict(self) -> dict:
        return {"accuracy": self.accuracy, "f1": self.f1, **asdict(self)}


@dataclass
class StepRecord:
    step: int
    loss_rep: float
    loss_distill: float
    loss_stab: float
    total: float
    norm_v: float
    norm_a: float

    @property
    def ratio(self) -> float | None:
        return self.norm_v / self.norm_a if self.norm_a > 0 else None


@dataclass
class TrainTrace:
    steps: list[StepRecord] = field(default_factory=list)
    epochs: list[Metrics] = field(default_factory=list)

    @property
    def grad_trace(self) -> GradTrace:
        gt = GradTrace()
        for s in self.steps:
            gt.append(s.step, s.norm_v, s.norm_a)
        return gt

    def balance(self, last: int = 50) -> float | None:
        return self.grad_trace.balance(last)

    def to_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["step", "loss_rep", "loss_distill", "total", "norm_v", "norm_a", "ratio"])
        for s in self.steps:
            r = s.ratio
            w.writerow([s.step, repr(s.loss_rep), repr(s.loss_distill), repr(s.total),
                        repr(s.norm_v), repr(s.norm_a), "" if r is None else repr(r)])
        return buf.getvalue()


def evaluate(model: Model, data: Dataset) -> Metrics:
    if len(data) == 0:
        raise ValueError("cannot evaluate on an empty dataset")
    return Metrics.from_labels(data.y, model.predict(data.Cv, data.Ca))


def _projector_norms(model: Model, grad: np.ndarray) -> tuple[float, float]:
    lay = model.layout
    return (frobenius(grad[s] for s in lay.block_slices("proj_v")),
            frobenius(grad[s] for s in lay.block_slices("proj_a")))


def _divergence_dump(model: Model, grad: np.ndarray) -> str:
    lines = []
    for name in model.layout.shapes:
        sl = model.layout.slice(name)
        lines.append(f"{name}: theta[{np.nanmin(model.theta[sl]):.3g}, {np.nanmax(model.theta[sl]):.3g}] "
                     f"grad[{np.nanmin(grad[sl]):.3g}, {np.nanmax(grad[sl]):.3g}]")
    return "\n".join(lines)


def train_step(model: Model, opt: AdamW, Cv, Ca, y, cfg: TrainConfig, step: int = 0,
               backend: str | None = None) -> StepRecord:
    if cfg.use_dmc and not model.cfg.with_head:
        raise ValueError("distillation needs a model with a distillation head")
    grad, losses = kernels.loss_and_grad(model.theta, model.offsets, model.cfg.dims, Cv, Ca, y,
                                         cfg.use_sics, cfg.use_dmc, cfg.lam, cfg.alpha, cfg.stab_weight,
                                         backend=backend)
    loss_rep, loss_distill, loss_stab = (float(x) for x in losses)
    total = loss_rep + cfg.alpha * loss_distill + loss_stab
    if not (math.isfinite(total) and np.all(np.isfinite(grad))):
        raise TrainingDiverged(f"non-finite loss/gradient at step {step}\n{_divergence_dump(model, grad)}")
    norm_v, norm_a = _projector_norms(model, grad)
    opt.step(model.theta, grad)
    return StepRecord(step, loss_rep, loss_distill, loss_stab, total, norm_v, norm_a)


def train(data: Dataset, cfg: TrainConfig, model: Model | None = None, backend: str | None = None,
          with_head: bool = True) -> tuple[Model, TrainTrace]:
    if model is None:
        model = Model(cfg.model_config(data, with_head=with_head), seed=cfg.seed)
    opt = AdamW(model.layout.size, lr=cfg.lr, weight_decay=cfg.weight_decay)
    batch_rng = np.random.default_rng([cfg.seed, 100])
    Cv, Ca, y = data.Cv, data.Ca, data.y
    n = len(data)
    per_epoch = math.ceil(n / cfg.batch_size)
    total_steps = cfg.steps if cfg.steps is not None else cfg.epochs * per_epoch
    trace = TrainTrace()
    step = 0
    while step < total_steps:
        perm = batch_rng.permutation(n)
        for start in range(0, n, cfg.batch_size):
            idx = perm[start:start + cfg.batch_size]
            trace.steps.append(train_step(model, opt, Cv[idx], Ca[idx], y[idx], cfg, step, backend))
            step += 1
            if step >= total_steps:
                break
        trace.epochs.append(evaluate(model, data))
    return model, trace
