"""Pure-numpy batched forward/backward of the full training objective."""
from __future__ import annotations

import numpy as np

from .layout import HEAD, PROJ_A, PROJ_V, SICS_A, SICS_V, TEACHER

EPS = 1e-12


def _view(flat, offsets, idx, shape):
    o = offsets[idx]
    n = 1
    for s in shape:
        n *= s
    return flat[o:o + n].reshape(shape)


_SIG_LO = float(np.nextafter(0.0, 1.0))
_SIG_HI = float(np.nextafter(1.0, 0.0))


def _sigmoid(s):
    e = np.exp(-np.abs(s))
    return np.clip(np.where(s >= 0, 1.0 / (1.0 + e), e / (1.0 + e)), _SIG_LO, _SIG_HI)


def _softmax_rows(z):
    e = np.exp(z - z.max(axis=1, keepdims=True))
    return e / e.sum(axis=1, keepdims=True)


def _sics_fwd(theta, offsets, base, d, h, C, lam):
    W1 = _view(theta, offsets, base + 0, (h, d))
    b1 = _view(theta, offsets, base + 1, (h,))
    W2 = _view(theta, offsets, base + 2, (d, h))
    b2 = _view(theta, offsets, base + 3, (d,))
    Wg = _view(theta, offsets, base + 4, (d,))
    bg = theta[offsets[base + 5]]
    bglob = _view(theta, offsets, base + 6, (d,))
    Wp = _view(theta, offsets, base + 7, (d, d))
    bp = _view(theta, offsets, base + 8, (d,))
    Wm = _view(theta, offsets, base + 9, (d, d))
    bm = _view(theta, offsets, base + 10, (d,))

    t1 = np.tanh(C @ W1.T + b1)
    dz = t1 @ W2.T + b2
    g = _sigmoid(dz @ Wg + bg)
    w = np.tanh(g[:, None] * bglob + (1.0 - g)[:, None] * dz)
    wp = w @ Wp.T + bp
    wm = w @ Wm.T + bm
    mk = np.maximum(wp, 0.0) - np.maximum(wm, 0.0)
    out = C * (lam * mk + (1.0 - lam))
    cache = (C, t1, dz, g, w, wp, wm)
    return out, mk, cache


def _sics_bwd(theta, grad, offsets, base, d, h, cache, d_out, lam, stab_scale):
    C, t1, dz, g, w, wp, wm = cache
    W2 = _view(theta, offsets, base + 2, (d, h))
    Wg = _view(theta, offsets, base + 4, (d,))
    bglob = _view(theta, offsets, base + 6, (d,))
    Wp = _view(theta, offsets, base + 7, (d, d))
    Wm = _view(theta, offsets, base + 9, (d, d))

    d_mk = lam * C * d_out
    d_wp = d_mk * (wp > 0)
    d_wm = -d_mk * (wm > 0)
    _view(grad, offsets, base + 7, (d, d))[...] += d_wp.T @ w
    _view(grad, offsets, base + 8, (d,))[...] += d_wp.sum(axis=0)
    _view(grad, offsets, base + 9, (d, d))[...] += d_wm.T @ w
    _view(grad, offsets, base + 10, (d,))[...] += d_wm.sum(axis=0)
    d_u = (d_wp @ Wp + d_wm @ Wm) * (1.0 - w * w)
    _view(grad, offsets, base + 6, (d,))[...] += (g[:, None] * d_u).sum(axis=0)
    d_g = np.sum(d_u * (bglob - dz), axis=1)
    d_s = d_g * g * (1.0 - g)
    _view(grad, offsets, base + 4, (d,))[...] += d_s @ dz
    grad[offsets[base + 5]] += d_s.sum()
    d_dz = (1.0 - g)[:, None] * d_u + d_s[:, None] * Wg + stab_scale * 2.0 * dz
    _view(grad, offsets, base + 2, (d, h))[...] += d_dz.T @ t1
    _view(grad, offsets, base + 3, (d,))[...] += d_dz.sum(axis=0)
    d_a1 = (d_dz @ W2) * (1.0 - t1 * t1)
    _view(grad, offsets, base + 0, (h, d))[...] += d_a1.T @ C
    _view(grad, offsets, base + 1, (h,))[...] += d_a1.sum(axis=0)


def _proj_fwd(theta, offsets, base, d, p, O):
    P1 = _view(theta, offsets, base + 0, (p, d))
    c1 = _view(theta, offsets, base + 1, (p,))
    P2 = _view(theta, offsets, base + 2, (p, p))
    c2 = _view(theta, offsets, base + 3, (p,))
    t2 = np.tanh(O @ P1.T + c1)
    return t2 @ P2.T + c2, t2


def _proj_bwd(theta, grad, offsets, base, d, p, O, t2, d_z):
    P1 = _view(theta, offsets, base + 0, (p, d))
    P2 = _view(theta, offsets, base + 2, (p, p))
    _view(grad, offsets, base + 2, (p, p))[...] += d_z.T @ t2
    _view(grad, offsets, base + 3, (p,))[...] += d_z.sum(axis=0)
    d_a2 = (d_z @ P2) * (1.0 - t2 * t2)
    _view(grad, offsets, base + 0, (p, d))[...] += d_a2.T @ O
    _view(grad, offsets, base + 1, (p,))[...] += d_a2.sum(axis=0)
    return d_a2 @ P1


def forward(theta, offsets, dims, Cv, Ca, use_sics, lam):
    """Inference path: teacher distribution plus intermediate diagnostics."""
    d_v, d_a, h_v, h_a, p = (int(x) for x in dims)
    if use_sics:
        Ov, mk_v, cache_v = _sics_fwd(theta, offsets, SICS_V, d_v, h_v, Cv, lam)
        Oa, mk_a, cache_a = _sics_fwd(theta, offsets, SICS_A, d_a, h_a, Ca, lam)
    else:
        Ov, Oa, mk_v, mk_a, cache_v, cache_a = Cv, Ca, None, None, None, None
    zv, tv = _proj_fwd(theta, offsets, PROJ_V, d_v, p, Ov)
    za, ta = _proj_fwd(theta, offsets, PROJ_A, d_a, p, Oa)
    Fv = _view(theta, offsets, TEACHER + 0, (2, p))
    Fa = _view(theta, offsets, TEACHER + 1, (2, p))
    f = _view(theta, offsets, TEACHER + 2, (2,))
    q = _softmax_rows(zv @ Fv.T + za @ Fa.T + f)
    return {
        "q": q, "Ov": Ov, "Oa": Oa, "zv": zv, "za": za, "tv": tv, "ta": ta,
        "mk_v": mk_v, "mk_a": mk_a, "cache_v": cache_v, "cache_a": cache_a,
    }


def student_probs(theta, offsets, dims, z):
    p = int(dims[4])
    H = _view(theta, offsets, HEAD + 0, (2, p))
    hb = _view(theta, offsets, HEAD + 1, (2,))
    return _softmax_rows(z @ H.T + hb)


def loss_and_grad(theta, offsets, dims, Cv, Ca, y, use_sics, use_dmc, lam, alpha, stab_w):
    """Return (grad, [loss_rep, loss_distill, loss_stab]) averaged over the batch."""
    d_v, d_a, h_v, h_a, p = (int(x) for x in dims)
    B = Cv.shape[0]
    grad = np.zeros_like(theta)
    fw = forward(theta, offsets, dims, Cv, Ca, use_sics, lam)
    q, zv, za = fw["q"], fw["zv"], fw["za"]
    rows = np.arange(B)

    q_y = q[rows, y]
    loss_rep = float(np.mean(-np.log(q_y + EPS)))
    g_q = np.zeros_like(q)
    g_q[rows, y] = -1.0 / (q_y + EPS) / B
    d_lt = q * (g_q - np.sum(q * g_q, axis=1, keepdims=True))

    Fv = _view(theta, offsets, TEACHER + 0, (2, p))
    Fa = _view(theta, offsets, TEACHER + 1, (2, p))
    _view(grad, offsets, TEACHER + 0, (2, p))[...] += d_lt.T @ zv
    _view(grad, offsets, TEACHER + 1, (2, p))[...] += d_lt.T @ za
    _view(grad, offsets, TEACHER + 2, (2,))[...] += d_lt.sum(axis=0)
    d_zv = d_lt @ Fv
    d_za = d_lt @ Fa

    loss_distill = 0.0
    if use_dmc:
        H = _view(theta, offsets, HEAD + 0, (2, p))
        log_q = np.log(q + EPS)
        for z, d_z in ((zv, d_zv), (za, d_za)):
            pm = student_probs(theta, offsets, dims, z)
            kl = np.sum(q * (log_q - np.log(pm + EPS)), axis=1)
            live = kl > 0.0  # clamped at zero, as in dmc.kl_div
            loss_distill += float(np.mean(np.where(live, kl, 0.0)))
            g_p = -alpha * q / (pm + EPS) / B * live[:, None]
            d_ls = pm * (g_p - np.sum(pm * g_p, axis=1, keepdims=True))
            _view(grad, offsets, HEAD + 0, (2, p))[...] += d_ls.T @ z
            _view(grad, offsets, HEAD + 1, (2,))[...] += d_ls.sum(axis=0)
            d_z += d_ls @ H

    d_Ov = _proj_bwd(theta, grad, offsets, PROJ_V, d_v, p, fw["Ov"], fw["tv"], d_zv)
    d_Oa = _proj_bwd(theta, grad, offsets, PROJ_A, d_a, p, fw["Oa"], fw["ta"], d_za)

    loss_stab = 0.0
    if use_sics:
        dz_v, dz_a = fw["cache_v"][2], fw["cache_a"][2]
        loss_stab = stab_w * float(np.mean(np.sum(dz_v * dz_v, axis=1) + np.sum(dz_a * dz_a, axis=1)))
        _sics_bwd(theta, grad, offsets, SICS_V, d_v, h_v, fw["cache_v"], d_Ov, lam, stab_w / B)
        _sics_bwd(theta, grad, offsets, SICS_A, d_a, h_a, fw["cache_a"], d_Oa, lam, stab_w / B)
    return grad, np.array([loss_rep, loss_distill, loss_stab])
