"""Ablation runner and adapter diagnostics.

Every variant sees the same synthetic data and seed, so differences between
rows come from the objective alone.
"""
from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from ..kernels import fused_np
from .data import Dataset, SyntheticSpec, gen_synthetic
from .model import Model
from .train import Metrics, TrainConfig, TrainTrace, train

# name -> (use_sics, use_dmc)
VARIANTS: dict[str, tuple[bool, bool]] = {
    "Base": (False, False),
    "+DMC": (False, True),
    "+SICS": (True, False),
    "Full": (True, True),
}


@dataclass
class RunResult:
    variant: str
    seed: int
    metrics: Metrics
    balance: float | None
    trace: TrainTrace = field(repr=False)
    model: Model = field(repr=False)

    def summary(self) -> dict:
        return {"seed": self.seed, "metrics": self.metrics.to_dict(), "balance_B": self.balance}


@dataclass
class ExperimentResult:
    spec: SyntheticSpec
    cfg: TrainConfig
    seeds: list[int]
    runs: dict[str, list[RunResult]]

    def balance(self, variant: str) -> list[float | None]:
        return [r.balance for r in self.runs[variant]]

    def report(self) -> dict:
        out = {}
        for name, runs in self.runs.items():
            bs = [r.balance for r in runs if r.balance is not None]
            out[name] = {
                "runs": [r.summary() for r in runs],
                "mean_accuracy": float(np.mean([r.metrics.accuracy for r in runs])),
                "mean_f1": float(np.mean([r.metrics.f1 for r in runs])),
                "mean_balance_B": float(np.mean(bs)) if bs else None,
            }
        return out

    def to_json(self, config: dict | None = None) -> str:
        doc = {"variants": self.report(), "seeds": self.seeds}
        if config is not None:
            doc["config"] = config
        return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _run_one(name: str, flags: tuple[bool, bool], data: Dataset, cfg: TrainConfig, seed: int,
             backend: str | None) -> RunResult:
    use_sics, use_dmc = flags
    vcfg = replace(cfg, use_sics=use_sics, use_dmc=use_dmc, seed=seed)
    model, trace = train(data, vcfg, backend=backend, with_head=use_dmc)
    return RunResult(name, seed, trace.epochs[-1], trace.balance(), trace, model)


def run_experiment(spec: SyntheticSpec, cfg: TrainConfig, seeds, variants=None,
                   backend: str | None = None, workers: int = 1) -> ExperimentResult:
    """Train every variant on every seed; the data for seed ``s`` is ``spec`` reseeded to ``s``."""
    variants = VARIANTS if variants is None else {v: VARIANTS[v] for v in variants}
    seeds = [int(s) for s in seeds]
    if not seeds:
        raise ValueError("need at least one seed")
    datasets = {s: gen_synthetic(replace(spec, seed=s)) for s in seeds}
    jobs = [(name, flags, s) for name, flags in variants.items() for s in seeds]

    def go(job):
        name, flags, s = job
        return _run_one(name, flags, datasets[s], cfg, s, backend)

    if workers > 1:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            results = list(pool.map(go, jobs))
    else:
        results = [go(j) for j in jobs]
    runs: dict[str, list[RunResult]] = {name: [] for name in variants}
    for r in results:
        runs[r.variant].append(r)
    return ExperimentResult(spec, cfg, seeds, runs)


# ------------------------------------------------------------ adapter diagnostics

@dataclass
class ModalityStability:
    spiked: list[int]
    raw_std: list[float]
    refined_std: list[float]
    spiked_factor: float    # mean multiplier applied to spiked dims
    clean_factor: float     # same on the remaining dims

    @property
    def stabilized(self) -> bool:
        return bool(self.spiked) and all(r < s for r, s in zip(self.refined_std, self.raw_std))


def _factors(model: Model, data: Dataset) -> dict:
    if not model.cfg.use_sics:
        raise ValueError("model has no adapters")
    fw = fused_np.forward(model.theta, model.offsets, model.cfg.dims, data.Cv, data.Ca, True, model.cfg.lam)
    lam = model.cfg.lam
    return {
        "v": (lam * fw["mk_v"] + (1.0 - lam), fw["cache_v"]),
        "a": (lam * fw["mk_a"] + (1.0 - lam), fw["cache_a"]),
    }


def feature_stability(model: Model, data: Dataset) -> dict[str, ModalityStability]:
    """Per-dimension token std before and after the adapter, on the spiked dims.

    The adapter output for a token is ``x * (lam * mk + 1 - lam)`` with ``mk``
    fixed per sample, so refined tokens follow from the pooled pass.
    """
    out = {}
    for m, (fac, _) in _factors(model, data).items():
        h = data.h_v if m == "v" else data.h_a
        sp = [int(i) for i in (data.spike_v if m == "v" else data.spike_a)]
        d = h.shape[2]
        raw = h.reshape(-1, d)
        refined = (h * fac[:, None, :]).reshape(-1, d)
        clean = [j for j in range(d) if j not in sp]
        out[m] = ModalityStability(
            spiked=sp,
            raw_std=[float(raw[:, j].std()) for j in sp],
            refined_std=[float(refined[:, j].std()) for j in sp],
            spiked_factor=float(fac[:, sp].mean()) if sp else float("nan"),
            clean_factor=float(fac[:, clean].mean()) if clean else float("nan"),
        )
    return out


def gate_summary(model: Model, data: Dataset) -> dict[str, dict[str, float]]:
    """Distribution of the per-sample gate and mean polarity weights."""
    out = {}
    for m, (_, cache) in _factors(model, data).items():
        _, _, _, g, _, wp, wm = cache
        out[m] = {
            "gate_min": float(g.min()), "gate_mean": float(g.mean()), "gate_max": float(g.max()),
            "enhance_mean": float(np.maximum(wp, 0).mean()),
            "suppress_mean": float(np.maximum(wm, 0).mean()),
        }
    return out


def stability_report(model: Model, data: Dataset) -> dict:
    return {
        "stability": {m: asdict(s) for m, s in feature_stability(model, data).items()},
        "gate": gate_summary(model, data),
    }
