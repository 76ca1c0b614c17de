"""End-to-end acceptance checks, one group per criterion.

A summary line per criterion is printed at the end of the pytest run.
"""
import math
import random
import time
from dataclasses import replace

import numpy as np
import pytest

import oracles
from mmaudit import dmc
from mmaudit import numerics as nx
from mmaudit import sics
from mmaudit.harness.certify import gradcheck_suite
from mmaudit.harness.data import SyntheticSpec, gen_synthetic
from mmaudit.harness.experiments import VARIANTS, feature_stability, run_experiment
from mmaudit.harness.model import tape_blocks
from mmaudit.harness.train import TrainConfig, train
from mmaudit.numerics import Tensor
from mmaudit.schema import (AuditReport, EmptyFieldError, FieldCountError, InternalSemicolonError, Prediction,
                            UnknownPredictionError, parse_report)
from mmaudit.schema import filters, manifest
from mmaudit.schema.filters import Record

SEEDS = [0, 1, 2, 3, 4]


# ---------------------------------------------------------------- 1

@pytest.mark.criterion(1)
def test_gradient_certification(detail):
    t0 = time.perf_counter()
    report = gradcheck_suite()
    elapsed = time.perf_counter() - t0
    worst = report.worst
    detail(f"max rel err {worst.error:.2e} at {worst.suite}/{worst.stage}/{worst.param}, {elapsed:.1f}s")
    assert {(r.suite, r.stage) for r in report.rows} >= {
        (s, st) for s in ("sics", "dmc", "full") for st in ("init", "trained")}
    assert report.passed, report.failures()
    assert elapsed < 30


# ---------------------------------------------------------------- 2

def _lists(params):
    return {k: t.data.tolist() for k, t in params.tensors().items()}


@pytest.mark.criterion(2)
def test_oracle_equivalence(detail):
    worst = 0.0
    for seed in range(100):
        rng = np.random.default_rng([seed, 2])
        d, L, hidden = (int(v) for v in rng.integers(1, 8, size=3))
        cfg = sics.SicsConfig(d=d, hidden=hidden, lam=0.2)
        p = sics.SicsParams.from_arrays({k: rng.standard_normal(s) for k, s in cfg.shapes().items()})
        x = rng.standard_normal((L, d))
        out, _ = sics.sics_forward(Tensor(x), p, cfg)
        P = _lists(p)
        P["W_g"], P["b_g"] = p.W_g.data[0].tolist(), float(p.b_g.data)
        ref, _ = oracles.sics_forward(x.tolist(), P, 0.2)
        worst = max(worst, float(np.max(np.abs(out.data - np.array(ref)))))

    for seed in range(100):
        rng = np.random.default_rng([seed, 3])
        d_v, d_a, lat = (int(v) for v in rng.integers(1, 8, size=3))
        L_v, L_a = (int(v) for v in rng.integers(1, 6, size=2))

        def rand(cls, *dims):
            return cls.from_arrays({k: rng.standard_normal(s) for k, s in cls.shapes(*dims).items()})

        pv, pa = rand(dmc.ProjectorParams, d_v, lat), rand(dmc.ProjectorParams, d_a, lat)
        head, teacher = rand(dmc.DistillHead, lat), rand(dmc.FusedHead, lat)
        hv, ha = rng.standard_normal((L_v, d_v)), rng.standard_normal((L_a, d_a))
        p_v = dmc.modality_predict(Tensor(hv), pv, head)
        p_a = dmc.modality_predict(Tensor(ha), pa, head)
        q = dmc.teacher_predict(Tensor(hv), Tensor(ha), pv, pa, teacher).data
        r_v = oracles.modality_predict(hv.tolist(), _lists(pv), _lists(head))
        r_a = oracles.modality_predict(ha.tolist(), _lists(pa), _lists(head))
        r_q = oracles.teacher_predict(hv.tolist(), ha.tolist(), _lists(pv), _lists(pa), _lists(teacher))
        loss = dmc.distill_loss(q, p_v, p_a).item()
        ref = oracles.kl(r_q, r_v) + oracles.kl(r_q, r_a)
        worst = max(worst, float(np.max(np.abs(p_v.data - r_v))), float(np.max(np.abs(p_a.data - r_a))),
                    float(np.max(np.abs(q - r_q))), abs(loss - ref))
    detail(f"max abs diff {worst:.1e} over 200 instances")
    assert worst <= 1e-12


# ---------------------------------------------------------------- 3

@pytest.mark.criterion(3)
def test_adapter_analytic_cases(detail):
    rng = np.random.default_rng(0)
    cfg = sics.SicsConfig(d=5, lam=0.0)
    p = sics.SicsParams.from_arrays({k: rng.standard_normal(s) for k, s in cfg.shapes().items()})
    x = 10 * rng.standard_normal((4, 5))
    assert np.array_equal(sics.sics_forward(Tensor(x), p, cfg)[0].data, x)

    cfg = replace(cfg, lam=0.2)
    assert np.array_equal(sics.sics_forward(Tensor(np.zeros((3, 5))), p, cfg)[0].data, np.zeros((3, 5)))

    arrays = {k: t.data for k, t in p.tensors().items()}
    swapped = sics.SicsParams.from_arrays(dict(arrays, W_plus=arrays["W_minus"], b_plus=arrays["b_minus"],
                                               W_minus=arrays["W_plus"], b_minus=arrays["b_plus"]))
    _, t1 = sics.sics_forward(Tensor(x), p, cfg)
    _, t2 = sics.sics_forward(Tensor(x), swapped, cfg)
    assert np.array_equal(t1.refined, -t2.refined)

    gcfg = sics.SicsConfig(d=4)
    gates = []
    for _ in range(10_000):
        gp = sics.SicsParams.from_arrays({k: 3 * rng.standard_normal(s) for k, s in gcfg.shapes().items()},
                                         requires_grad=False)
        gates.append(sics.gate_fuse(Tensor(3 * rng.standard_normal(4)), gp)[1].item())
    gates = np.array(gates)
    assert np.all((gates > 0) & (gates < 1))

    xx = Tensor([[1.0, -2.0]])
    refined = sics.apply_polarity(xx, Tensor([0.5, -0.3]), Tensor([0.2, 0.1]))
    out = nx.add(nx.scale(0.2, refined), nx.scale(0.8, xx))
    err = max(np.max(np.abs(refined.data - [[0.3, 0.2]])), np.max(np.abs(out.data - [[0.86, -1.56]])))
    detail(f"gate range [{gates.min():.3g}, {gates.max():.3g}], worked example err {err:.1e}")
    assert err <= 1e-12


# ---------------------------------------------------------------- 4

@pytest.mark.criterion(4)
def test_distillation_analytic_cases(detail):
    rng = np.random.default_rng(1)
    vals = []
    for _ in range(10_000):
        q, p = rng.dirichlet([1, 1]), rng.dirichlet([1, 1])
        vals.append(dmc.kl_div(q, Tensor(p)).item())
    assert min(vals) >= 0.0
    q = np.array([0.37, 0.63])
    assert dmc.kl_div(q, Tensor(q)).item() == 0.0
    assert abs(dmc.kl_div([1.0, 0.0], Tensor([0.5, 0.5])).item() - math.log(2)) <= 1e-9

    data = gen_synthetic(SyntheticSpec(n_samples=64))
    model, _ = train(data, TrainConfig(steps=50))
    tensors = model.tape_params()
    blocks = tape_blocks(tensors)
    with nx.Tape():
        total = None
        for hv, ha in zip(data.h_v[:8], data.h_a[:8]):
            hv, ha = Tensor(hv), Tensor(ha)
            qd = dmc.teacher_predict(hv, ha, blocks["proj_v"], blocks["proj_a"], blocks["teacher"])
            term = dmc.distill_loss(qd, dmc.modality_predict(hv, blocks["proj_v"], blocks["head"]),
                                    dmc.modality_predict(ha, blocks["proj_a"], blocks["head"]))
            total = term if total is None else nx.add(total, term)
        nx.backward(total)
    teacher_grads = [t.grad for k, t in tensors.items() if k.startswith("teacher.")]
    assert all(g is None or not np.any(g) for g in teacher_grads)

    slim = model.without_head()
    same = np.array_equal(model.predict_proba(data.Cv, data.Ca), slim.predict_proba(data.Cv, data.Ca))
    detail(f"min KL {min(vals):.1e}, teacher grads zero, headless predictions identical: {same}")
    assert same and slim.layout.size < model.layout.size


# ---------------------------------------------------------------- 5

@pytest.mark.criterion(5)
def test_gradient_rebalancing(detail):
    t0 = time.perf_counter()
    spec = SyntheticSpec(snr_v=1.0, snr_a=0.25)
    res = run_experiment(spec, TrainConfig(steps=500, batch_size=32, alpha=0.1), SEEDS, variants=["Base", "+DMC"])
    elapsed = time.perf_counter() - t0
    base, with_dmc = res.balance("Base"), res.balance("+DMC")
    wins = sum(d < b for b, d in zip(base, with_dmc))
    detail(f"{wins}/5 seeds, B base {np.mean(base):.3f} vs dmc {np.mean(with_dmc):.3f}, {elapsed:.1f}s")
    assert wins >= 4
    assert elapsed < 120


# ---------------------------------------------------------------- 6

@pytest.mark.criterion(6)
def test_spike_stabilization(detail):
    ok = 0
    ratios = []
    for seed in SEEDS:
        spec = SyntheticSpec(spike_frac=0.05, spike_gain=10, seed=seed)
        data = gen_synthetic(spec)
        model, _ = train(data, TrainConfig(steps=500, seed=seed))
        st = feature_stability(model, data)
        ok += all(s.stabilized for s in st.values())
        ratios += [r / s for m in st.values() for r, s in zip(m.refined_std, m.raw_std)]
    detail(f"{ok}/5 seeds, refined/raw std {min(ratios):.3f}..{max(ratios):.3f}")
    assert ok >= 4


# ---------------------------------------------------------------- 7

@pytest.mark.criterion(7)
def test_ablation_structure(detail):
    spec = SyntheticSpec(snr_v=5.0, snr_a=5.0)
    cfg = TrainConfig(steps=300)
    a = run_experiment(spec, cfg, SEEDS)
    b = run_experiment(spec, cfg, SEEDS, workers=4)
    assert list(a.runs) == list(VARIANTS)
    for name in VARIANTS:
        assert [r.seed for r in a.runs[name]] == SEEDS
        for ra, rb in zip(a.runs[name], b.runs[name]):
            assert ra.trace.to_csv() == rb.trace.to_csv()
            assert np.array_equal(ra.model.theta, rb.model.theta)
    accs = [r.metrics.accuracy for r in a.runs["Full"]]
    detail(f"Full accuracy {min(accs):.3f}..{max(accs):.3f}, traces bit-identical across runs")
    assert all(acc >= 0.95 for acc in accs)


# ---------------------------------------------------------------- 8

_ALPHABET = "abcdefghijklmnopqrstuvwxyz"
_EXTRA = list(",.:'!?()-/&%") + ["é", "ü", "ß", "漢"]


def _generated_corpus(n, seed=0):
    rnd = random.Random(seed)
    words = ["".join(rnd.choice(_ALPHABET) for _ in range(rnd.randint(2, 9))) for _ in range(400)]

    def text():
        out = []
        for _ in range(rnd.randint(1, 14)):
            w = rnd.choice(words)
            if rnd.random() < 0.15:
                w += rnd.choice(_EXTRA)
            out.append(w.capitalize() if rnd.random() < 0.2 else w)
        return " ".join(out)

    return [AuditReport(text(), text(), text(), rnd.choice(list(Prediction))).serialize() for _ in range(n)]


@pytest.mark.criterion(8)
def test_schema_grammar(detail):
    corpus = _generated_corpus(200)
    round_trips = sum(parse_report(line).serialize() == line for line in corpus)
    assert round_trips == 200

    cases = {
        FieldCountError: "Video Cues: a; Audio Cues: b; Reasoning: c",
        EmptyFieldError: "Video Cues: a; Audio Cues:  ; Reasoning: c; Prediction: truthful",
        UnknownPredictionError: "Video Cues: a; Audio Cues: b; Reasoning: c; Prediction: maybe",
        InternalSemicolonError: "Video Cues: a; Audio Cues: b; Reasoning: c; d; Prediction: truthful",
    }
    for err, line in cases.items():
        with pytest.raises(err):
            parse_report(line)

    distinct = _generated_corpus(60, seed=1)
    rnd = random.Random(2)
    k = 9
    lines = list(distinct)
    injected = []
    for _ in range(k):
        pos = rnd.randint(1, len(lines))
        lines.insert(pos, rnd.choice(lines[:pos]))
    recs = [Record(str(i), ln, i) for i, ln in enumerate(lines, 1)]
    seen = set()
    for r in recs:
        if r.line in seen:
            injected.append(r.id)
        seen.add(r.line)
    rep = filters.dedup_filter(recs, 0.95)
    detail(f"200/200 round trips, 4 error classes, dedup dropped {len(rep.dropped)} of {k} injected")
    assert sorted(d.id for d in rep.dropped) == sorted(injected)
    assert len(rep.dropped) == k


# ---------------------------------------------------------------- 9

@pytest.mark.criterion(9)
def test_manifest_arithmetic(detail):
    text = manifest.bundled_manifest_text()
    entries = manifest.parse_manifest(text)
    res = manifest.validate_manifest(entries, expect_ratio=(2, 1), expect_totals=(1695, 1130, 565))
    assert res.ok and res.totals == (1695, 1130, 565)
    assert sum(e.total for e in entries) == 876 + 702 + 66 + 51 == 1695
    assert 565 * 3 == 1695 and 565 * 2 == 1130

    rows = text.strip().splitlines()
    tampers = caught = 0
    for i in range(1, len(rows)):
        cells = rows[i].split(",")
        for j in range(1, 4):
            for delta in (-1, 1):
                bad = list(cells)
                bad[j] = str(int(bad[j]) + delta)
                mutated = "\n".join(rows[:i] + [",".join(bad)] + rows[i + 1:])
                r = manifest.validate_manifest(manifest.parse_manifest(mutated), expect_ratio=(2, 1),
                                               expect_totals=(1695, 1130, 565))
                tampers += 1
                caught += not r.ok
    detail(f"fixture valid, {caught}/{tampers} single-cell tampers detected")
    assert caught == tampers
