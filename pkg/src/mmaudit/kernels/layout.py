"""Fixed ordering of every trainable tensor inside one flat parameter vector.

Both kernel backends address parameters through the offsets produced here;
an absent block (adapter disabled, distillation head dropped) gets offset -1.
"""
from __future__ import annotations

import numpy as np

SICS_FIELDS = ("W1", "b1", "W2", "b2", "W_g", "b_g", "b_global",
               "W_plus", "b_plus", "W_minus", "b_minus")
PROJ_FIELDS = ("P1", "c1", "P2", "c2")
TEACHER_FIELDS = ("F_v", "F_a", "f")
HEAD_FIELDS = ("H", "h")

NAMES = (
    tuple(f"sics_v.{n}" for n in SICS_FIELDS)
    + tuple(f"sics_a.{n}" for n in SICS_FIELDS)
    + tuple(f"proj_v.{n}" for n in PROJ_FIELDS)
    + tuple(f"proj_a.{n}" for n in PROJ_FIELDS)
    + tuple(f"teacher.{n}" for n in TEACHER_FIELDS)
    + tuple(f"head.{n}" for n in HEAD_FIELDS)
)
INDEX = {n: i for i, n in enumerate(NAMES)}

SICS_V, SICS_A = INDEX["sics_v.W1"], INDEX["sics_a.W1"]
PROJ_V, PROJ_A = INDEX["proj_v.P1"], INDEX["proj_a.P1"]
TEACHER, HEAD = INDEX["teacher.F_v"], INDEX["head.H"]


def block_shapes(d_v: int, d_a: int, hidden_v: int, hidden_a: int, p: int) -> dict[str, dict[str, tuple]]:
    def sics(d, h):
        return {"W1": (h, d), "b1": (h,), "W2": (d, h), "b2": (d,), "W_g": (1, d), "b_g": (),
                "b_global": (d,), "W_plus": (d, d), "b_plus": (d,), "W_minus": (d, d), "b_minus": (d,)}

    def proj(d):
        return {"P1": (p, d), "c1": (p,), "P2": (p, p), "c2": (p,)}

    return {
        "sics_v": sics(d_v, hidden_v),
        "sics_a": sics(d_a, hidden_a),
        "proj_v": proj(d_v),
        "proj_a": proj(d_a),
        "teacher": {"F_v": (2, p), "F_a": (2, p), "f": (2,)},
        "head": {"H": (2, p), "h": (2,)},
    }


class Layout:
    def __init__(self, shapes: dict[str, tuple[int, ...]]):
        self.shapes = {n: shapes[n] for n in NAMES if n in shapes}
        self.offsets = np.full(len(NAMES), -1, dtype=np.int64)
        pos = 0
        for name, shape in self.shapes.items():
            self.offsets[INDEX[name]] = pos
            pos += int(np.prod(shape, dtype=np.int64))
        self.size = pos

    def __contains__(self, name: str) -> bool:
        return name in self.shapes

    def slice(self, name: str) -> slice:
        o = int(self.offsets[INDEX[name]])
        return slice(o, o + int(np.prod(self.shapes[name], dtype=np.int64)))

    def view(self, flat: np.ndarray, name: str) -> np.ndarray:
        return flat[self.slice(name)].reshape(self.shapes[name])

    def block_slices(self, prefix: str) -> list[slice]:
        return [self.slice(n) for n in self.shapes if n.startswith(prefix + ".")]
