import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

import oracles
from mmaudit import dmc
from mmaudit import numerics as nx
from mmaudit.numerics import Tensor


def _proj(rng, d, p, scale=1.0):
    return dmc.ProjectorParams.from_arrays({k: scale * rng.standard_normal(s)
                                            for k, s in dmc.ProjectorParams.shapes(d, p).items()})


def _head(rng, p):
    return dmc.DistillHead.from_arrays({k: rng.standard_normal(s) for k, s in dmc.DistillHead.shapes(p).items()})


def _teacher(rng, p):
    return dmc.FusedHead.from_arrays({k: rng.standard_normal(s) for k, s in dmc.FusedHead.shapes(p).items()})


def _lists(params):
    return {k: t.data.tolist() for k, t in params.tensors().items()}


# ---------------------------------------------------------------- predictions

def test_zero_params_give_uniform():
    proj = dmc.ProjectorParams.from_arrays({k: np.zeros(s) for k, s in dmc.ProjectorParams.shapes(3, 2).items()})
    head = dmc.DistillHead.from_arrays({k: np.zeros(s) for k, s in dmc.DistillHead.shapes(2).items()})
    teacher = dmc.FusedHead.from_arrays({k: np.zeros(s) for k, s in dmc.FusedHead.shapes(2).items()})
    h = Tensor(np.random.default_rng(0).standard_normal((4, 3)))
    np.testing.assert_array_equal(dmc.modality_predict(h, proj, head).data, [0.5, 0.5])
    np.testing.assert_array_equal(dmc.teacher_predict(h, h, proj, proj, teacher).data, [0.5, 0.5])


def test_doubling_head_sharpens():
    rng = np.random.default_rng(1)
    proj, head = _proj(rng, 3, 4), _head(rng, 4)
    h = Tensor(rng.standard_normal((5, 3)))
    p1 = dmc.modality_predict(h, proj, head).data
    doubled = dmc.DistillHead(Tensor(2 * head.H.data), Tensor(2 * head.h.data))
    p2 = dmc.modality_predict(h, proj, doubled).data
    assert p1.argmax() == p2.argmax()
    assert p2.max() >= p1.max()


@pytest.mark.parametrize("seed", range(100))
def test_predictions_match_scalar_oracle(seed):
    rng = np.random.default_rng(seed)
    d_v, d_a, p = (int(v) for v in rng.integers(1, 7, size=3))
    L_v, L_a = (int(v) for v in rng.integers(1, 6, size=2))
    pv, pa, head, teacher = _proj(rng, d_v, p), _proj(rng, d_a, p), _head(rng, p), _teacher(rng, p)
    hv, ha = rng.standard_normal((L_v, d_v)), rng.standard_normal((L_a, d_a))

    p_v = dmc.modality_predict(Tensor(hv), pv, head).data
    p_a = dmc.modality_predict(Tensor(ha), pa, head).data
    q = dmc.teacher_predict(Tensor(hv), Tensor(ha), pv, pa, teacher).data
    ref_v = oracles.modality_predict(hv.tolist(), _lists(pv), _lists(head))
    ref_a = oracles.modality_predict(ha.tolist(), _lists(pa), _lists(head))
    ref_q = oracles.teacher_predict(hv.tolist(), ha.tolist(), _lists(pv), _lists(pa), _lists(teacher))
    np.testing.assert_allclose(p_v, ref_v, atol=1e-12, rtol=0)
    np.testing.assert_allclose(q, ref_q, atol=1e-12, rtol=0)
    loss = dmc.distill_loss(q, Tensor(p_v), Tensor(p_a)).item()
    assert abs(loss - (oracles.kl(ref_q, ref_v) + oracles.kl(ref_q, ref_a))) <= 1e-12


def test_teacher_ignoring_audio_is_invariant_to_audio():
    rng = np.random.default_rng(2)
    pv, pa, teacher = _proj(rng, 3, 2), _proj(rng, 3, 2), _teacher(rng, 2)
    teacher = dmc.FusedHead(teacher.F_v, Tensor(np.zeros((2, 2))), teacher.f)
    hv = Tensor(rng.standard_normal((4, 3)))
    q1 = dmc.teacher_predict(hv, Tensor(rng.standard_normal((4, 3))), pv, pa, teacher).data
    q2 = dmc.teacher_predict(hv, Tensor(rng.standard_normal((4, 3)) * 5), pv, pa, teacher).data
    assert np.array_equal(q1, q2)


def test_empty_sequence_rejected():
    rng = np.random.default_rng(0)
    with pytest.raises(nx.EmptySequenceError):
        dmc.modality_predict(Tensor(np.zeros((0, 3))), _proj(rng, 3, 2), _head(rng, 2))


def test_projector_width_mismatch():
    rng = np.random.default_rng(0)
    with pytest.raises(nx.DimensionError):
        dmc.project(Tensor(np.ones((2, 4))), _proj(rng, 3, 2))


# ---------------------------------------------------------------- KL

def test_kl_examples():
    q = np.array([0.3, 0.7])
    assert dmc.kl_div(q, Tensor(q)).item() == 0.0
    assert abs(dmc.kl_div([1.0, 0.0], Tensor([0.5, 0.5])).item() - math.log(2)) <= 1e-9
    # frozen from hand evaluation of the definition
    assert dmc.kl_div([0.9, 0.1], Tensor([0.5, 0.5])).item() == pytest.approx(0.3681, abs=5e-5)
    assert dmc.kl_div([0.5, 0.5], Tensor([0.9, 0.1])).item() == pytest.approx(0.5108, abs=5e-5)


def test_kl_rejects_malformed():
    with pytest.raises(nx.ContractError):
        dmc.kl_div([0.6, 0.6], Tensor([0.5, 0.5]))
    with pytest.raises(nx.ContractError):
        dmc.kl_div([0.5, 0.5], Tensor([1.2, -0.2]))
    with pytest.raises(nx.ContractError):
        dmc.kl_div([1.0], Tensor([1.0]))


def test_kl_nonnegative_on_many_pairs():
    rng = np.random.default_rng(0)
    for _ in range(10_000):
        a, b = rng.uniform(0, 1, 2)
        v = dmc.kl_div([a, 1 - a], Tensor([b, 1 - b])).item()
        assert v >= -1e-15


@given(st.floats(0, 1), st.floats(0, 1))
@settings(max_examples=300, deadline=None)
def test_kl_gibbs(a, b):
    q, p = np.array([a, 1 - a]), np.array([b, 1 - b])
    v = dmc.kl_div(q, Tensor(p)).item()
    assert v >= -1e-15
    if v <= 1e-15:
        np.testing.assert_allclose(q, p, atol=1e-6)


def test_distill_loss_additivity():
    q = np.array([0.8, 0.2])
    pa = Tensor([0.4, 0.6])
    assert dmc.distill_loss(q, Tensor(q), Tensor(q)).item() == 0.0
    assert dmc.distill_loss(q, Tensor(q), pa).item() == dmc.kl_div(q, pa).item()


def test_distill_gradient_on_projector_params():
    rng = np.random.default_rng(4)
    pv, pa, head, teacher = _proj(rng, 4, 3), _proj(rng, 4, 3), _head(rng, 3), _teacher(rng, 3)
    hv, ha = Tensor(rng.standard_normal((3, 4))), Tensor(rng.standard_normal((3, 4)))
    q = dmc.teacher_predict(hv, ha, pv, pa, teacher)
    params = {**{f"v.{k}": t for k, t in pv.tensors().items()},
              **{f"a.{k}": t for k, t in pa.tensors().items()}}

    def f(ps):
        P_v = dmc.ProjectorParams(**{k[2:]: t for k, t in ps.items() if k.startswith("v.")})
        P_a = dmc.ProjectorParams(**{k[2:]: t for k, t in ps.items() if k.startswith("a.")})
        return dmc.distill_loss(q, dmc.modality_predict(hv, P_v, head), dmc.modality_predict(ha, P_a, head))

    assert nx.grad_check(f, params) <= 1e-4


def test_shared_head_couples_modalities():
    rng = np.random.default_rng(6)
    pv, pa, head = _proj(rng, 3, 2), _proj(rng, 3, 2), _head(rng, 2)
    hv, ha = Tensor(rng.standard_normal((4, 3))), Tensor(rng.standard_normal((4, 3)))
    q = np.array([0.9, 0.1])
    before = dmc.modality_predict(hv, pv, head).data.copy()
    params = head.tensors()
    grads = nx.analytic_grad(lambda ps: dmc.kl_div(q, dmc.modality_predict(ha, pa, dmc.DistillHead(**ps))), params)
    stepped = dmc.DistillHead(**{k: Tensor(t.data - 0.5 * grads[k]) for k, t in params.items()})
    after = dmc.modality_predict(hv, pv, stepped).data
    assert not np.array_equal(before, after)


# ---------------------------------------------------------------- gradient balance

def test_grad_ratio():
    assert dmc.grad_ratio(1.0, 1.0) == 1.0
    assert dmc.grad_ratio(2.0, 1.0) == 2.0
    assert dmc.grad_ratio(1.0, 0.0) is None
    with pytest.raises(ValueError):
        dmc.grad_ratio(-1.0, 1.0)


def test_frobenius():
    assert dmc.frobenius([np.array([3.0]), np.array([[4.0]])]) == 5.0


def test_grad_trace_balance_and_csv():
    tr = dmc.GradTrace()
    for i, (v, a) in enumerate([(1.0, 1.0), (2.0, 1.0), (1.0, 0.0), (1.0, 2.0)]):
        tr.append(i, v, a)
    assert tr.balance(last=50) == pytest.approx(2 * math.log(2) / 3)
    assert tr.balance(last=1) == pytest.approx(math.log(2))
    lines = tr.to_csv().splitlines()
    assert lines[0] == "step,norm_v,norm_a,ratio"
    assert lines[3] == "2,1.0,0.0,"
    assert dmc.GradTrace().balance() is None
