"""Numba per-sample loop version of the batched objective and its gradient.

Mirrors ``fused_np.loss_and_grad`` term by term; parity is asserted in the
test suite to 1e-12.
"""
from __future__ import annotations

import math

import numpy as np
from numba import njit

from .layout import HEAD, PROJ_A, PROJ_V, SICS_A, SICS_V, TEACHER

_SIG_LO = float(np.nextafter(0.0, 1.0))
_SIG_HI = float(np.nextafter(1.0, 0.0))

EPS = 1e-12


@njit(cache=True)
def _mv(theta, o, rows, cols, x, out):
    for i in range(rows):
        acc = 0.0
        base = o + i * cols
        for j in range(cols):
            acc += theta[base + j] * x[j]
        out[i] = acc


@njit(cache=True)
def _mtv_add(theta, o, rows, cols, g, out):
    for i in range(rows):
        gi = g[i]
        base = o + i * cols
        for j in range(cols):
            out[j] += theta[base + j] * gi


@njit(cache=True)
def _outer_add(grad, o, rows, cols, g, x):
    for i in range(rows):
        gi = g[i]
        base = o + i * cols
        for j in range(cols):
            grad[base + j] += gi * x[j]


@njit(cache=True)
def _vec_add(grad, o, n, g):
    for i in range(n):
        grad[o + i] += g[i]


@njit(cache=True)
def _sigmoid(s):
    if s >= 0:
        g = 1.0 / (1.0 + math.exp(-s))
    else:
        e = math.exp(s)
        g = e / (1.0 + e)
    return min(max(g, _SIG_LO), _SIG_HI)


@njit(cache=True)
def _softmax2(z0, z1, out):
    m = max(z0, z1)
    e0 = math.exp(z0 - m)
    e1 = math.exp(z1 - m)
    s = e0 + e1
    out[0] = e0 / s
    out[1] = e1 / s


@njit(cache=True)
def _sics_fwd(theta, off, base, d, h, c, lam, t1, dz, w, wp, wm, out):
    _mv(theta, off[base + 0], h, d, c, t1)
    for i in range(h):
        t1[i] = math.tanh(t1[i] + theta[off[base + 1] + i])
    _mv(theta, off[base + 2], d, h, t1, dz)
    o_b2 = off[base + 3]
    o_wg = off[base + 4]
    s = theta[off[base + 5]]
    for i in range(d):
        dz[i] += theta[o_b2 + i]
        s += theta[o_wg + i] * dz[i]
    g = _sigmoid(s)
    o_bglob = off[base + 6]
    for i in range(d):
        w[i] = math.tanh(g * theta[o_bglob + i] + (1.0 - g) * dz[i])
    _mv(theta, off[base + 7], d, d, w, wp)
    _mv(theta, off[base + 9], d, d, w, wm)
    o_bp = off[base + 8]
    o_bm = off[base + 10]
    for i in range(d):
        wp[i] += theta[o_bp + i]
        wm[i] += theta[o_bm + i]
        mk = max(wp[i], 0.0) - max(wm[i], 0.0)
        out[i] = c[i] * (lam * mk + (1.0 - lam))
    return g


@njit(cache=True)
def _sics_bwd(theta, grad, off, base, d, h, c, t1, dz, g, w, wp, wm, d_out, lam, stab_scale):
    d_wp = np.zeros(d)
    d_wm = np.zeros(d)
    for i in range(d):
        d_mk = lam * c[i] * d_out[i]
        if wp[i] > 0:
            d_wp[i] = d_mk
        if wm[i] > 0:
            d_wm[i] = -d_mk
    _outer_add(grad, off[base + 7], d, d, d_wp, w)
    _vec_add(grad, off[base + 8], d, d_wp)
    _outer_add(grad, off[base + 9], d, d, d_wm, w)
    _vec_add(grad, off[base + 10], d, d_wm)
    d_u = np.zeros(d)
    _mtv_add(theta, off[base + 7], d, d, d_wp, d_u)
    _mtv_add(theta, off[base + 9], d, d, d_wm, d_u)
    o_bglob = off[base + 6]
    d_g = 0.0
    for i in range(d):
        d_u[i] *= 1.0 - w[i] * w[i]
        grad[o_bglob + i] += g * d_u[i]
        d_g += d_u[i] * (theta[o_bglob + i] - dz[i])
    d_s = d_g * g * (1.0 - g)
    o_wg = off[base + 4]
    grad[off[base + 5]] += d_s
    d_dz = np.empty(d)
    for i in range(d):
        grad[o_wg + i] += d_s * dz[i]
        d_dz[i] = (1.0 - g) * d_u[i] + d_s * theta[o_wg + i] + stab_scale * 2.0 * dz[i]
    _outer_add(grad, off[base + 2], d, h, d_dz, t1)
    _vec_add(grad, off[base + 3], d, d_dz)
    d_a1 = np.zeros(h)
    _mtv_add(theta, off[base + 2], d, h, d_dz, d_a1)
    for i in range(h):
        d_a1[i] *= 1.0 - t1[i] * t1[i]
    _outer_add(grad, off[base + 0], h, d, d_a1, c)
    _vec_add(grad, off[base + 1], h, d_a1)


@njit(cache=True)
def _proj_fwd(theta, off, base, d, p, o_in, t2, z):
    _mv(theta, off[base + 0], p, d, o_in, t2)
    for i in range(p):
        t2[i] = math.tanh(t2[i] + theta[off[base + 1] + i])
    _mv(theta, off[base + 2], p, p, t2, z)
    for i in range(p):
        z[i] += theta[off[base + 3] + i]


@njit(cache=True)
def _proj_bwd(theta, grad, off, base, d, p, o_in, t2, d_z, d_o):
    _outer_add(grad, off[base + 2], p, p, d_z, t2)
    _vec_add(grad, off[base + 3], p, d_z)
    d_a2 = np.zeros(p)
    _mtv_add(theta, off[base + 2], p, p, d_z, d_a2)
    for i in range(p):
        d_a2[i] *= 1.0 - t2[i] * t2[i]
    _outer_add(grad, off[base + 0], p, d, d_a2, o_in)
    _vec_add(grad, off[base + 1], p, d_a2)
    for j in range(d):
        d_o[j] = 0.0
    _mtv_add(theta, off[base + 0], p, d, d_a2, d_o)


@njit(cache=True)
def _head(theta, o_w, o_b, p, z, out):
    l0 = theta[o_b]
    l1 = theta[o_b + 1]
    for j in range(p):
        l0 += theta[o_w + j] * z[j]
        l1 += theta[o_w + p + j] * z[j]
    _softmax2(l0, l1, out)


@njit(cache=True)
def _student_bwd(theta, grad, o_w, o_b, p, z, pm, q, alpha_scale, d_z):
    kl = q[0] * (math.log(q[0] + EPS) - math.log(pm[0] + EPS)) + q[1] * (
        math.log(q[1] + EPS) - math.log(pm[1] + EPS))
    if kl <= 0.0:
        return 0.0
    g0 = -alpha_scale * q[0] / (pm[0] + EPS)
    g1 = -alpha_scale * q[1] / (pm[1] + EPS)
    dot = pm[0] * g0 + pm[1] * g1
    d0 = pm[0] * (g0 - dot)
    d1 = pm[1] * (g1 - dot)
    for j in range(p):
        grad[o_w + j] += d0 * z[j]
        grad[o_w + p + j] += d1 * z[j]
        d_z[j] += theta[o_w + j] * d0 + theta[o_w + p + j] * d1
    grad[o_b] += d0
    grad[o_b + 1] += d1
    return kl


@njit(cache=True)
def loss_and_grad(theta, off, dims, Cv, Ca, y, use_sics, use_dmc, lam, alpha, stab_w):
    d_v, d_a, h_v, h_a, p = dims[0], dims[1], dims[2], dims[3], dims[4]
    B = Cv.shape[0]
    inv_b = 1.0 / B
    grad = np.zeros_like(theta)
    losses = np.zeros(3)

    t1v = np.empty(h_v); dzv = np.empty(d_v); wv = np.empty(d_v)
    wpv = np.empty(d_v); wmv = np.empty(d_v); ov = np.empty(d_v)
    t1a = np.empty(h_a); dza = np.empty(d_a); wa = np.empty(d_a)
    wpa = np.empty(d_a); wma = np.empty(d_a); oa = np.empty(d_a)
    t2v = np.empty(p); zv = np.empty(p); t2a = np.empty(p); za = np.empty(p)
    q = np.empty(2); pm = np.empty(2)
    d_zv = np.empty(p); d_za = np.empty(p)
    d_ov = np.empty(d_v); d_oa = np.empty(d_a)

    o_fv = off[TEACHER]
    o_fa = off[TEACHER + 1]
    o_f = off[TEACHER + 2]

    for b in range(B):
        cv = Cv[b]
        ca = Ca[b]
        gv = 0.0
        ga = 0.0
        if use_sics:
            gv = _sics_fwd(theta, off, SICS_V, d_v, h_v, cv, lam, t1v, dzv, wv, wpv, wmv, ov)
            ga = _sics_fwd(theta, off, SICS_A, d_a, h_a, ca, lam, t1a, dza, wa, wpa, wma, oa)
        else:
            ov[:] = cv
            oa[:] = ca
        _proj_fwd(theta, off, PROJ_V, d_v, p, ov, t2v, zv)
        _proj_fwd(theta, off, PROJ_A, d_a, p, oa, t2a, za)

        l0 = theta[o_f]
        l1 = theta[o_f + 1]
        for j in range(p):
            l0 += theta[o_fv + j] * zv[j] + theta[o_fa + j] * za[j]
            l1 += theta[o_fv + p + j] * zv[j] + theta[o_fa + p + j] * za[j]
        _softmax2(l0, l1, q)

        yb = y[b]
        qy = q[yb]
        losses[0] -= math.log(qy + EPS) * inv_b
        gq = -inv_b / (qy + EPS)
        # softmax JVP with a one-hot upstream gradient at index yb
        d_l0 = q[0] * ((gq if yb == 0 else 0.0) - qy * gq)
        d_l1 = q[1] * ((gq if yb == 1 else 0.0) - qy * gq)
        for j in range(p):
            grad[o_fv + j] += d_l0 * zv[j]
            grad[o_fv + p + j] += d_l1 * zv[j]
            grad[o_fa + j] += d_l0 * za[j]
            grad[o_fa + p + j] += d_l1 * za[j]
            d_zv[j] = theta[o_fv + j] * d_l0 + theta[o_fv + p + j] * d_l1
            d_za[j] = theta[o_fa + j] * d_l0 + theta[o_fa + p + j] * d_l1
        grad[o_f] += d_l0
        grad[o_f + 1] += d_l1

        if use_dmc:
            o_h = off[HEAD]
            o_hb = off[HEAD + 1]
            _head(theta, o_h, o_hb, p, zv, pm)
            losses[1] += _student_bwd(theta, grad, o_h, o_hb, p, zv, pm, q, alpha * inv_b, d_zv) * inv_b
            _head(theta, o_h, o_hb, p, za, pm)
            losses[1] += _student_bwd(theta, grad, o_h, o_hb, p, za, pm, q, alpha * inv_b, d_za) * inv_b

        _proj_bwd(theta, grad, off, PROJ_V, d_v, p, ov, t2v, d_zv, d_ov)
        _proj_bwd(theta, grad, off, PROJ_A, d_a, p, oa, t2a, d_za, d_oa)

        if use_sics:
            sq = 0.0
            for i in range(d_v):
                sq += dzv[i] * dzv[i]
            for i in range(d_a):
                sq += dza[i] * dza[i]
            losses[2] += stab_w * sq * inv_b
            _sics_bwd(theta, grad, off, SICS_V, d_v, h_v, cv, t1v, dzv, gv, wv, wpv, wmv, d_ov, lam, stab_w * inv_b)
            _sics_bwd(theta, grad, off, SICS_A, d_a, h_a, ca, t1a, dza, ga, wa, wpa, wma, d_oa, lam, stab_w * inv_b)
    return grad, losses
