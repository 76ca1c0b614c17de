"""Finite-difference certification of every gradient path.

Suites (each run at initialization and again after a short training run):

``sics``     random linear readout of the adapter output
``dmc``      distillation loss alone, teacher targets frozen
``full``     combined objective on the tape
``kernel``   batched training kernel against the same central differences

The distillation targets are detached, so for the finite differences they are
frozen at the base point; that frozen-target objective is exactly what the
analytic gradients differentiate.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .. import dmc
from .. import numerics as nx
from .. import sics
from .. import kernels
from ..numerics import Tensor
from .data import SyntheticSpec, gen_synthetic
from .model import Model, ModelConfig, objective_tape, tape_blocks, teacher_probs_tape
from .train import TrainConfig, train


@dataclass
class CheckRow:
    suite: str
    stage: str
    param: str
    error: float


@dataclass
class CertReport:
    tol: float
    rows: list[CheckRow] = field(default_factory=list)

    @property
    def worst(self) -> CheckRow:
        return max(self.rows, key=lambda r: r.error)

    @property
    def passed(self) -> bool:
        return all(r.error <= self.tol for r in self.rows)

    def failures(self) -> list[CheckRow]:
        return [r for r in self.rows if r.error > self.tol]

    def summary(self) -> dict[tuple[str, str], CheckRow]:
        out = {}
        for r in self.rows:
            key = (r.suite, r.stage)
            if key not in out or r.error > out[key].error:
                out[key] = r
        return out


def _errors(analytic: dict, numeric: dict) -> dict[str, float]:
    return {k: float(nx.relative_error(analytic[k], numeric[k]).max(initial=0.0)) for k in numeric}


def _sics_suite(model: Model, x: np.ndarray, readout: np.ndarray, step: float) -> dict[str, float]:
    tensors = {k.split(".", 1)[1]: Tensor(v, requires_grad=True)
               for k, v in model.arrays().items() if k.startswith("sics_v.")}
    cfg = sics.SicsConfig(d=x.shape[1], hidden=tensors["W1"].shape[0], lam=model.cfg.lam)
    R = Tensor(readout)

    def f(params):
        out, _ = sics.sics_forward(Tensor(x), sics.SicsParams(**params), cfg)
        return nx.sum_all(nx.mul(out, R))

    return nx.grad_check_report(f, tensors, step)


def _dmc_suite(model: Model, hv_b, ha_b, step: float) -> dict[str, float]:
    keep = ("proj_v.", "proj_a.", "head.", "teacher.")
    tensors = {k: Tensor(v, requires_grad=True) for k, v in model.arrays().items() if k.startswith(keep)}
    blocks = tape_blocks(tensors)
    with nx.Tape():
        qs = [dmc.teacher_predict(Tensor(hv), Tensor(ha), blocks["proj_v"], blocks["proj_a"], blocks["teacher"])
              for hv, ha in zip(hv_b, ha_b)]
    student = {k: v for k, v in tensors.items() if not k.startswith("teacher.")}

    def f(params):
        b = tape_blocks(params)
        total = None
        for q, hv, ha in zip(qs, hv_b, ha_b):
            p_v = dmc.modality_predict(Tensor(hv), b["proj_v"], b["head"])
            p_a = dmc.modality_predict(Tensor(ha), b["proj_a"], b["head"])
            term = dmc.distill_loss(q, p_v, p_a)
            total = term if total is None else nx.add(total, term)
        return nx.scale(1.0 / len(qs), total)

    return nx.grad_check_report(f, student, step)


def _full_and_kernel(model: Model, hv_b, ha_b, y_b, alpha: float, step: float, backend):
    tensors = model.tape_params()
    lam = model.cfg.lam
    qs = teacher_probs_tape(tensors, hv_b, ha_b, lam)

    def f(params):
        return objective_tape(params, hv_b, ha_b, y_b, use_dmc=True, lam=lam, alpha=alpha, q_fixed=qs)[0]

    analytic = nx.analytic_grad(f, tensors)
    numeric = nx.numeric_grad(f, tensors, step)
    grad, _ = kernels.loss_and_grad(model.theta, model.offsets, model.cfg.dims, hv_b.mean(axis=1),
                                    ha_b.mean(axis=1), y_b, model.cfg.use_sics, True, lam, alpha, 0.0,
                                    backend=backend)
    kernel = {k: model.layout.view(grad, k) for k in model.layout.shapes}
    return _errors(analytic, numeric), _errors(kernel, numeric)


def gradcheck_suite(seed: int = 0, d: int = 6, L: int = 4, latent: int = 6, batch: int = 2,
                    train_steps: int = 100, alpha: float = 0.1, lam: float = 0.2,
                    tol: float = 1e-4, step: float = 1e-5, input_scale: float = 4.0,
                    backend: str | None = None) -> CertReport:
    """Run every suite at init and after ``train_steps`` kernel updates.

    Probe inputs are drawn at ``input_scale`` times unit variance. Near-unit
    inputs leave some adapter gradients around 1e-8, where central-difference
    roundoff alone exceeds the relative tolerance.
    """
    if d > 8 or L > 5:
        raise ValueError("certification runs at d <= 8, L <= 5")
    report = CertReport(tol=tol)
    spec = SyntheticSpec(n_samples=64, d_v=d, d_a=d, L_v=L, L_a=L, snr_v=0.5, snr_a=0.25, seed=seed)
    data = gen_synthetic(spec)
    cfg = TrainConfig(steps=train_steps, batch_size=16, alpha=alpha, lam=lam, latent=latent, seed=seed)
    model = Model(cfg.model_config(data), seed=seed)

    rng = np.random.default_rng([seed, 7])
    x = input_scale * rng.standard_normal((L, d))
    readout = rng.standard_normal((L, d))
    hv_b = input_scale * rng.standard_normal((batch, L, d))
    ha_b = input_scale * rng.standard_normal((batch, L, d))
    y_b = rng.integers(0, 2, size=batch)

    for stage in ("init", "trained"):
        if stage == "trained":
            model, _ = train(data, cfg, model=model, backend=backend)
        suites = {
            "sics": _sics_suite(model, x, readout, step),
            "dmc": _dmc_suite(model, hv_b, ha_b, step),
        }
        suites["full"], suites["kernel"] = _full_and_kernel(model, hv_b, ha_b, y_b, alpha, step, backend)
        for suite, errs in suites.items():
            for name, err in errs.items():
                report.rows.append(CheckRow(suite, stage, name, err))
    return report
