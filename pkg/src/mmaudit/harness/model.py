"""The desk-scale model: optional adapters, modality projectors, fused teacher
head and (training only) shared distillation head, all stored in one flat
parameter vector.
"""
from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .. import dmc
from .. import numerics as nx
from .. import sics
from ..kernels import fused_np
from ..kernels.layout import Layout, block_shapes
from ..numerics import Tensor

# stable per-block stream ids so a block's init never depends on which others exist
_BLOCK_STREAM = {"sics_v": 1, "sics_a": 2, "proj_v": 3, "proj_a": 4, "teacher": 5, "head": 6}


@dataclass(frozen=True)
class ModelConfig:
    d_v: int
    d_a: int
    latent: int = 8
    hidden: int | None = None
    use_sics: bool = True
    with_head: bool = True
    lam: float = 0.2

    @property
    def dims(self) -> np.ndarray:
        h_v = self.hidden or self.d_v
        h_a = self.hidden or self.d_a
        return np.array([self.d_v, self.d_a, h_v, h_a, self.latent], dtype=np.int64)


class Model:
    def __init__(self, cfg: ModelConfig, seed: int = 0, theta: np.ndarray | None = None):
        self.cfg = cfg
        d_v, d_a, h_v, h_a, p = (int(x) for x in cfg.dims)
        shapes = {}
        for block, fields in block_shapes(d_v, d_a, h_v, h_a, p).items():
            if block.startswith("sics") and not cfg.use_sics:
                continue
            if block == "head" and not cfg.with_head:
                continue
            for name, shape in fields.items():
                shapes[f"{block}.{name}"] = shape
        self.layout = Layout(shapes)
        if theta is None:
            theta = self._init(seed)
        elif theta.shape != (self.layout.size,):
            raise ValueError(f"theta has {theta.shape}, layout needs ({self.layout.size},)")
        self.theta = np.ascontiguousarray(theta, dtype=np.float64)

    def _init(self, seed: int) -> np.ndarray:
        theta = np.zeros(self.layout.size)
        blocks = sorted({n.split(".")[0] for n in self.layout.shapes}, key=_BLOCK_STREAM.get)
        for block in blocks:
            rng = np.random.default_rng([seed, _BLOCK_STREAM[block]])
            for name, shape in self.layout.shapes.items():
                if not name.startswith(block + "."):
                    continue
                field = name.split(".")[1]
                if field[0].isupper():
                    bound = 1.0 / np.sqrt(shape[1])
                    self.layout.view(theta, name)[...] = rng.uniform(-bound, bound, size=shape)
        return theta

    @property
    def offsets(self) -> np.ndarray:
        return self.layout.offsets

    def arrays(self) -> dict[str, np.ndarray]:
        return {n: self.layout.view(self.theta, n) for n in self.layout.shapes}

    def copy(self) -> Model:
        return Model(self.cfg, theta=self.theta.copy())

    def without_head(self) -> Model:
        """Same weights with the distillation head removed (inference form)."""
        cfg = ModelConfig(**{**self.cfg.__dict__, "with_head": False})
        out = Model(cfg)
        for name in out.layout.shapes:
            out.layout.view(out.theta, name)[...] = self.layout.view(self.theta, name)
        return out

    def tape_params(self) -> dict[str, Tensor]:
        return {n: Tensor(a, requires_grad=True) for n, a in self.arrays().items()}

    # ------------------------------------------------------------ inference
    def predict_proba(self, Cv: np.ndarray, Ca: np.ndarray) -> np.ndarray:
        fw = fused_np.forward(self.theta, self.offsets, self.cfg.dims, Cv, Ca, self.cfg.use_sics, self.cfg.lam)
        return fw["q"]

    def predict(self, Cv: np.ndarray, Ca: np.ndarray) -> np.ndarray:
        q = self.predict_proba(Cv, Ca)
        # ties go to index 0 (deceptive)
        return np.where(q[:, 1] > q[:, 0], 1, 0).astype(np.int64)

    # ------------------------------------------------------------ checkpoints
    def to_json(self) -> str:
        return sics.params_to_json(self.arrays())

    @classmethod
    def from_json(cls, text: str, cfg: ModelConfig) -> Model:
        raw = json.loads(text)
        model = cls(cfg, theta=None)
        for name, entry in raw.items():
            arr = np.array(entry["values"], dtype=np.float64).reshape(entry["shape"])
            model.layout.view(model.theta, name)[...] = arr
        return model


# ------------------------------------------------------------ tape reference path

def tape_blocks(tensors: dict[str, Tensor]) -> dict:
    def pick(prefix, cls):
        names = {k.split(".", 1)[1]: v for k, v in tensors.items() if k.startswith(prefix + ".")}
        return cls(**names) if names else None

    return {
        "sics_v": pick("sics_v", sics.SicsParams),
        "sics_a": pick("sics_a", sics.SicsParams),
        "proj_v": pick("proj_v", dmc.ProjectorParams),
        "proj_a": pick("proj_a", dmc.ProjectorParams),
        "teacher": pick("teacher", dmc.FusedHead),
        "head": pick("head", dmc.DistillHead),
    }


def _latents(blocks, hv, ha, lam):
    out = {}
    for m, x in (("v", hv), ("a", ha)):
        p = blocks[f"sics_{m}"]
        if p is not None:
            cfg = sics.SicsConfig(d=x.shape[1], hidden=p.W1.shape[0], lam=lam)
            x, trace = sics.sics_forward(x, p, cfg)
            out[f"dz_{m}"] = trace.residual_t
        out[f"z_{m}"] = dmc.project(x, blocks[f"proj_{m}"])
    return out


def teacher_probs_tape(tensors, hv_b, ha_b, lam: float) -> list[np.ndarray]:
    """Teacher distributions for each sample (as constants)."""
    blocks = tape_blocks(tensors)
    qs = []
    with nx.Tape():
        for hv, ha in zip(hv_b, ha_b):
            lat = _latents(blocks, Tensor(hv), Tensor(ha), lam)
            qs.append(nx.softmax(dmc.teacher_logits(lat["z_v"], lat["z_a"], blocks["teacher"])).data.copy())
    return qs


def objective_tape(tensors, hv_b, ha_b, y_b, *, use_dmc: bool, lam: float, alpha: float,
                   stab_w: float = 0.0, q_fixed=None):
    """Batch-mean objective built on the tape, one sample at a time.

    ``q_fixed`` pins the teacher targets of the distillation term to given
    constants; by default they are the detached teacher outputs at the
    current parameters.
    """
    blocks = tape_blocks(tensors)
    B = len(y_b)
    parts = {"loss_rep": 0.0, "loss_distill": 0.0, "loss_stab": 0.0}
    total = None
    for b in range(B):
        lat = _latents(blocks, Tensor(hv_b[b]), Tensor(ha_b[b]), lam)
        q_live = nx.softmax(dmc.teacher_logits(lat["z_v"], lat["z_a"], blocks["teacher"]))
        onehot = Tensor(np.eye(2)[y_b[b]])
        rep = nx.scale(-1.0, nx.log(nx.sum_all(nx.mul(q_live, onehot)), dmc.EPS))
        term = rep
        parts["loss_rep"] += rep.item() / B
        if use_dmc:
            q = q_live.detach() if q_fixed is None else Tensor(q_fixed[b])
            p_v = nx.softmax(dmc.head_logits(lat["z_v"], blocks["head"]))
            p_a = nx.softmax(dmc.head_logits(lat["z_a"], blocks["head"]))
            dist = dmc.distill_loss(q, p_v, p_a)
            parts["loss_distill"] += dist.item() / B
            term = nx.add(term, nx.scale(alpha, dist))
        if stab_w and "dz_v" in lat:
            pen = nx.add(sics.stability_penalty(lat["dz_v"], stab_w), sics.stability_penalty(lat["dz_a"], stab_w))
            parts["loss_stab"] += pen.item() / B
            term = nx.add(term, pen)
        total = term if total is None else nx.add(total, term)
    return nx.scale(1.0 / B, total), parts
