import os
import subprocess
import sys

import numpy as np
import pytest

from mmaudit import kernels
from mmaudit import numerics as nx
from mmaudit.harness.model import Model, ModelConfig, objective_tape
from mmaudit.kernels.layout import INDEX, NAMES, Layout, block_shapes

numba_only = pytest.mark.skipif(kernels.fused_nb is None, reason="numba not installed")


def _case(seed, use_sics=True, with_head=True):
    rng = np.random.default_rng(seed)
    d_v, d_a = (int(v) for v in rng.integers(2, 7, size=2))
    cfg = ModelConfig(d_v=d_v, d_a=d_a, latent=int(rng.integers(2, 6)), use_sics=use_sics, with_head=with_head)
    model = Model(cfg, seed=seed)
    model.theta += 0.3 * rng.standard_normal(model.theta.shape)  # move off the zero-bias init
    B, L = int(rng.integers(1, 6)), int(rng.integers(1, 4))
    hv, ha = rng.standard_normal((B, L, d_v)), rng.standard_normal((B, L, d_a))
    y = rng.integers(0, 2, size=B)
    return model, hv, ha, y


def _kernel(model, hv, ha, y, use_dmc, stab, backend):
    return kernels.loss_and_grad(model.theta, model.offsets, model.cfg.dims, hv.mean(axis=1), ha.mean(axis=1),
                                 y, model.cfg.use_sics, use_dmc, model.cfg.lam, 0.1, stab, backend=backend)


def test_layout_fixed_order_and_offsets():
    shapes = {n: s for blk, f in block_shapes(3, 4, 3, 4, 2).items() for k, s in f.items() for n in [f"{blk}.{k}"]}
    lay = Layout(shapes)
    assert list(lay.shapes) == list(NAMES)
    assert lay.offsets[INDEX["sics_v.W1"]] == 0
    total = sum(int(np.prod(s)) for s in shapes.values())
    assert lay.size == total
    flat = np.arange(total, dtype=float)
    assert lay.view(flat, "head.h").shape == (2,)
    partial = Layout({k: v for k, v in shapes.items() if not k.startswith("sics")})
    assert partial.offsets[INDEX["sics_a.W1"]] == -1
    assert "sics_v.W1" not in partial


@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("use_sics", [True, False])
def test_numpy_kernel_matches_tape(seed, use_sics):
    model, hv, ha, y = _case(seed, use_sics)
    stab = 0.05 if use_sics else 0.0
    grad, losses = _kernel(model, hv, ha, y, True, stab, "numpy")
    tensors = model.tape_params()
    with nx.Tape():
        total, parts = objective_tape(tensors, hv, ha, y, use_dmc=True, lam=model.cfg.lam, alpha=0.1, stab_w=stab)
        nx.backward(total)
    for name, t in tensors.items():
        np.testing.assert_allclose(model.layout.view(grad, name), t.grad, atol=1e-12, rtol=0, err_msg=name)
    np.testing.assert_allclose(losses, [parts["loss_rep"], parts["loss_distill"], parts["loss_stab"]],
                               atol=1e-12, rtol=0)


@numba_only
@pytest.mark.parametrize("seed", range(12))
@pytest.mark.parametrize("use_sics,use_dmc", [(True, True), (True, False), (False, True), (False, False)])
def test_numba_matches_numpy(seed, use_sics, use_dmc):
    model, hv, ha, y = _case(seed, use_sics, with_head=use_dmc)
    g_np, l_np = _kernel(model, hv, ha, y, use_dmc, 0.02, "numpy")
    g_nb, l_nb = _kernel(model, hv, ha, y, use_dmc, 0.02, "numba")
    np.testing.assert_allclose(g_nb, g_np, atol=1e-12, rtol=0)
    np.testing.assert_allclose(l_nb, l_np, atol=1e-12, rtol=0)


def test_distill_off_leaves_head_untouched():
    model, hv, ha, y = _case(3)
    grad, losses = _kernel(model, hv, ha, y, False, 0.0, "numpy")
    assert losses[1] == 0.0
    for s in model.layout.block_slices("head"):
        assert not np.any(grad[s])


def test_teacher_gradient_independent_of_alpha():
    model, hv, ha, y = _case(5)
    args = (model.theta, model.offsets, model.cfg.dims, hv.mean(axis=1), ha.mean(axis=1), y, True, True, 0.2)
    g1, _ = kernels.loss_and_grad(*args, 0.1, 0.0, backend="numpy")
    g2, _ = kernels.loss_and_grad(*args, 0.9, 0.0, backend="numpy")
    for s in model.layout.block_slices("teacher"):
        assert np.array_equal(g1[s], g2[s])


def _backend_in_subprocess(flag):
    env = dict(os.environ)
    if flag is None:
        env.pop(kernels.ENV_FLAG, None)
    else:
        env[kernels.ENV_FLAG] = flag
    out = subprocess.run([sys.executable, "-c", "from mmaudit import kernels; print(kernels.BACKEND)"],
                         capture_output=True, text=True, env=env, check=True)
    return out.stdout.strip()


@pytest.mark.parametrize("flag", ["0", "false", "off", "No"])
def test_env_flag_selects_numpy(flag):
    assert _backend_in_subprocess(flag) == "numpy"


@numba_only
def test_numba_is_default():
    assert _backend_in_subprocess(None) == "numba"
    assert _backend_in_subprocess("1") == "numba"


def _random_csr(rng, n, vocab):
    indptr, ids, counts = [0], [], []
    for _ in range(n):
        k = int(rng.integers(0, 6))
        row = np.sort(rng.choice(vocab, size=k, replace=False))
        ids.extend(row.tolist())
        counts.extend(rng.integers(1, 4, size=k).tolist())
        indptr.append(len(ids))
    counts = np.array(counts, dtype=float)
    indptr = np.array(indptr, dtype=np.int64)
    sq = np.array([np.sum(counts[indptr[i]:indptr[i + 1]] ** 2) for i in range(n)])
    return indptr, np.array(ids, dtype=np.int64), counts, sq


@numba_only
@pytest.mark.parametrize("seed", range(10))
@pytest.mark.parametrize("threshold", [0.3, 0.7, 1.0])
def test_dedup_backends_identical(seed, threshold):
    rng = np.random.default_rng(seed)
    csr = _random_csr(rng, 40, 8)
    a = kernels.greedy_scan(*csr, threshold, backend="numpy")
    b = kernels.greedy_scan(*csr, threshold, backend="numba")
    assert np.array_equal(a[0], b[0])
    assert np.array_equal(a[1], b[1])


def test_dedup_scan_semantics():
    # rows: A, A, empty, empty, B
    indptr = np.array([0, 1, 2, 2, 2, 3])
    ids = np.array([0, 0, 1])
    counts = np.array([2.0, 2.0, 1.0])
    sq = np.array([4.0, 4.0, 0.0, 0.0, 1.0])
    dup_of, score = kernels.greedy_scan(indptr, ids, counts, sq, 0.95, backend="numpy")
    assert dup_of.tolist() == [-1, 0, -1, 2, -1]
    assert score.tolist() == [0.0, 1.0, 0.0, 1.0, 0.0]
