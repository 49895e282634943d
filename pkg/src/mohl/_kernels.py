"""Numeric inner loops with a numba and a pure-numpy implementation.

The numba path is used when numba imports and ``MOHL_DISABLE_NUMBA`` is unset
or ``0``.  Both implementations are always importable under explicit names
(``*_numpy`` / ``*_numba``) so tests and benchmarks can compare them.
"""

from __future__ import annotations

import os

import numpy as np

try:
    import numba

    NUMBA_AVAILABLE = True
except ImportError:  # pragma: no cover - numba is a declared dependency
    numba = None
    NUMBA_AVAILABLE = False

USE_NUMBA = NUMBA_AVAILABLE and os.environ.get("MOHL_DISABLE_NUMBA", "0") in ("", "0")

# closure slots, shared with physics.CoefficientClosure
CM, CT, CTM, KM, KT, KTM = range(6)


def _njit(func):
    if not NUMBA_AVAILABLE:
        return func
    return numba.njit(cache=True, error_model="numpy")(func)


# ---------------------------------------------------------------------------
# rational + power closures: f(v) = P(v)/Q(v) + a * v**p
# coefficient vectors are in descending order (np.polyval convention)


def closure_eval_numpy(num, den, a, p, v):
    v = np.asarray(v, dtype=float)
    pn = np.zeros_like(v)
    dpn = np.zeros_like(v)
    for c in num:
        dpn = dpn * v + pn
        pn = pn * v + c
    qd = np.zeros_like(v)
    dqd = np.zeros_like(v)
    for c in den:
        dqd = dqd * v + qd
        qd = qd * v + c
    val = pn / qd
    der = (dpn * qd - pn * dqd) / (qd * qd)
    if a != 0.0:
        val = val + a * v**p
        der = der + a * p * v ** (p - 1.0)
    return val, der


def _closure_eval_loop(num, den, a, p, v):
    m = v.shape[0]
    val = np.empty(m)
    der = np.empty(m)
    for i in range(m):
        x = v[i]
        pn = 0.0
        dpn = 0.0
        for c in num:
            dpn = dpn * x + pn
            pn = pn * x + c
        qd = 0.0
        dqd = 0.0
        for c in den:
            dqd = dqd * x + qd
            qd = qd * x + c
        f = pn / qd
        df = (dpn * qd - pn * dqd) / (qd * qd)
        if a != 0.0:
            f += a * x**p
            df += a * p * x ** (p - 1.0)
        val[i] = f
        der[i] = df
    return val, der


closure_eval_numba = _njit(_closure_eval_loop)


def closure_eval(num, den, a, p, v):
    """Value and first derivative of ``P(v)/Q(v) + a v**p``."""
    v = np.ascontiguousarray(v, dtype=float)
    if USE_NUMBA:
        flat = v.ravel()
        val, der = closure_eval_numba(num, den, float(a), float(p), flat)
        return val.reshape(v.shape), der.reshape(v.shape)
    return closure_eval_numpy(num, den, a, p, v)


def closures_eval_numpy(num, den, pw, slots, v):
    """Several closures of one layer at once: ``num[6, K]``, ``den[6, K]``, ``pw[6, 2]``.

    Returns values and derivatives of shape ``(len(slots), len(v))``.
    """
    vals = np.empty((len(slots), v.shape[0]))
    ders = np.empty_like(vals)
    for j, s in enumerate(slots):
        vals[j], ders[j] = closure_eval_numpy(num[s], den[s], pw[s, 0], pw[s, 1], v)
    return vals, ders


def _closures_eval_loop(num, den, pw, slots, v):
    ns = slots.shape[0]
    m = v.shape[0]
    vals = np.empty((ns, m))
    ders = np.empty((ns, m))
    for j in range(ns):
        s = slots[j]
        a = pw[s, 0]
        p = pw[s, 1]
        for i in range(m):
            x = v[i]
            pn = 0.0
            dpn = 0.0
            for c in num[s]:
                dpn = dpn * x + pn
                pn = pn * x + c
            qd = 0.0
            dqd = 0.0
            for c in den[s]:
                dqd = dqd * x + qd
                qd = qd * x + c
            f = pn / qd
            df = (dpn * qd - pn * dqd) / (qd * qd)
            if a != 0.0:
                f += a * x**p
                df += a * p * x ** (p - 1.0)
            vals[j, i] = f
            ders[j, i] = df
    return vals, ders


closures_eval_numba = _njit(_closures_eval_loop)


def closures_eval(num, den, pw, slots, v):
    """Dispatching wrapper of :func:`closures_eval_numpy`; ``v`` is 1-D."""
    if USE_NUMBA:
        return closures_eval_numba(num, den, pw, slots, v)
    return closures_eval_numpy(num, den, pw, slots, v)


# ---------------------------------------------------------------------------
# piecewise cubic evaluation: coeffs[n, intervals, 4] in the local variable s


def cubic_eval_numpy(nodes, coeffs, x, right):
    """Value and derivative of the piecewise cubic; ``ok`` is False outside the nodes."""
    if x.size and not (x.min() >= nodes[0] and x.max() <= nodes[-1]):
        return np.empty((coeffs.shape[0], 0)), np.empty((coeffs.shape[0], 0)), False
    idx = np.searchsorted(nodes, x, side="right" if right else "left") - 1
    idx = np.clip(idx, 0, nodes.size - 2)
    h = nodes[idx + 1] - nodes[idx]
    s = (x - nodes[idx]) / h
    c = coeffs[:, idx, :]
    val = c[..., 0] + s * (c[..., 1] + s * (c[..., 2] + s * c[..., 3]))
    der = (c[..., 1] + s * (2.0 * c[..., 2] + 3.0 * s * c[..., 3])) / h
    return val, der, True


def _cubic_eval_loop(nodes, coeffs, x, right):
    n = coeffs.shape[0]
    m = x.shape[0]
    last = nodes.shape[0] - 2
    val = np.empty((n, m))
    der = np.empty((n, m))
    for j in range(m):
        if not (x[j] >= nodes[0] and x[j] <= nodes[-1]):
            return val[:, :0], der[:, :0], False
    for j in range(m):
        xj = x[j]
        if right:
            i = np.searchsorted(nodes, xj, side="right") - 1
        else:
            i = np.searchsorted(nodes, xj, side="left") - 1
        if i < 0:
            i = 0
        elif i > last:
            i = last
        h = nodes[i + 1] - nodes[i]
        sj = (xj - nodes[i]) / h
        for k in range(n):
            c0 = coeffs[k, i, 0]
            c1 = coeffs[k, i, 1]
            c2 = coeffs[k, i, 2]
            c3 = coeffs[k, i, 3]
            val[k, j] = c0 + sj * (c1 + sj * (c2 + sj * c3))
            der[k, j] = (c1 + sj * (2.0 * c2 + 3.0 * sj * c3)) / h
    return val, der, True


cubic_eval_numba = _njit(_cubic_eval_loop)


def cubic_eval(nodes, coeffs, x, right):
    if USE_NUMBA:
        return cubic_eval_numba(nodes, coeffs, x, right)
    return cubic_eval_numpy(nodes, coeffs, x, right)


# ---------------------------------------------------------------------------
# explicit Euler march for the coupled system on a uniform grid
#
# packed closures: num[L, 6, K], den[L, 6, K], pw[L, 6, 2] (coef, exponent)
# bc arrays (per side): mode (0 robin, 1 dirichlet), bi[3] = (Bi_M, Bi_T, Bi_TM)
# drivers[side, 4, n_steps] = (u_inf, v_inf, g_inf, q_inf) at t^{n+1}


def _eval_packed_py(num, den, pw, layer, slot, x):
    pn = 0.0
    dpn = 0.0
    for c in num[layer, slot]:
        dpn = dpn * x + pn
        pn = pn * x + c
    qd = 0.0
    dqd = 0.0
    for c in den[layer, slot]:
        dqd = dqd * x + qd
        qd = qd * x + c
    f = pn / qd
    a = pw[layer, slot, 0]
    if a != 0.0:
        f += a * x ** pw[layer, slot, 1]
    return f


_eval_packed = _njit(_eval_packed_py)


def _explicit_march_loop(v, u, n_steps, dt, dx, num, den, pw, layer_node, layer_half,
                         interfaces, fo_m, fo_t, g1, g2, heat_factor, modes, bis,
                         drivers):
    n = v.shape[0]
    idx2 = 1.0 / (dx * dx)
    vn = np.empty(n)
    un = np.empty(n)
    cm = np.empty(n)
    ct = np.empty(n)
    ctm = np.empty(n)
    kmh = np.empty(n - 1)
    kth = np.empty(n - 1)
    ktmh = np.empty(n - 1)
    is_iface = np.zeros(n, dtype=np.bool_)
    for j in interfaces:
        is_iface[j] = True
    for step in range(n_steps):
        for j in range(n):
            lay = layer_node[j]
            cm[j] = _eval_packed(num, den, pw, lay, 0, v[j])
            ct[j] = _eval_packed(num, den, pw, lay, 1, v[j])
            ctm[j] = _eval_packed(num, den, pw, lay, 2, v[j])
        for j in range(n - 1):
            lay = layer_half[j]
            vh = 0.5 * (v[j] + v[j + 1])
            kmh[j] = _eval_packed(num, den, pw, lay, 3, vh)
            kth[j] = _eval_packed(num, den, pw, lay, 4, vh)
            ktmh[j] = _eval_packed(num, den, pw, lay, 5, vh)
        for j in range(1, n - 1):
            if is_iface[j]:
                continue
            div = fo_m * idx2 * (kmh[j] * (v[j + 1] - v[j]) - kmh[j - 1] * (v[j] - v[j - 1]))
            vn[j] = v[j] + dt * div / cm[j]
        for j in interfaces:
            vn[j] = (4.0 * vn[j - 1] - vn[j - 2] + 4.0 * vn[j + 1] - vn[j + 2]) / 6.0
        # moisture boundaries, coefficients frozen at the previous step
        for side in range(2):
            uinf = drivers[side, 0, step]
            vinf = drivers[side, 1, step]
            ginf = drivers[side, 2, step]
            if side == 0:
                b, i1, i2 = 0, 1, 2
            else:
                b, i1, i2 = n - 1, n - 2, n - 3
            if modes[side] == 1:
                vn[b] = vinf
                continue
            k0 = _eval_packed(num, den, pw, layer_node[b], 3, v[b])
            bi_m = bis[side, 0]
            vn[b] = (k0 * (4.0 * vn[i1] - vn[i2]) / (2.0 * dx) + bi_m * vinf + ginf) / (
                3.0 * k0 / (2.0 * dx) + bi_m)
        for j in range(1, n - 1):
            if is_iface[j]:
                continue
            cond = fo_t * idx2 * (kth[j] * (u[j + 1] - u[j]) - kth[j - 1] * (u[j] - u[j - 1]))
            cross = fo_t * g2 * idx2 * (ktmh[j] * (v[j + 1] - v[j]) - ktmh[j - 1] * (v[j] - v[j - 1]))
            un[j] = u[j] + (dt * (cond + cross) - g1 * ctm[j] * (vn[j] - v[j])) / ct[j]
        for j in interfaces:
            un[j] = (4.0 * un[j - 1] - un[j - 2] + 4.0 * un[j + 1] - un[j + 2]) / 6.0
        for side in range(2):
            uinf = drivers[side, 0, step]
            vinf = drivers[side, 1, step]
            qinf = drivers[side, 3, step]
            if side == 0:
                b, i1, i2 = 0, 1, 2
                sgn = 1.0
            else:
                b, i1, i2 = n - 1, n - 2, n - 3
                sgn = -1.0
            if modes[side] == 1:
                un[b] = uinf
                continue
            lay = layer_node[b]
            kt0 = _eval_packed(num, den, pw, lay, 4, v[b])
            ktm0 = _eval_packed(num, den, pw, lay, 5, v[b])
            vx = sgn * (-3.0 * vn[b] + 4.0 * vn[i1] - vn[i2]) / (2.0 * dx)
            bi_t = bis[side, 1]
            bi_tm = bis[side, 2]
            rhs = (heat_factor * kt0 * (4.0 * un[i1] - un[i2]) / (2.0 * dx)
                   + sgn * heat_factor * g2 * ktm0 * vx
                   + bi_t * uinf - bi_tm * g2 * (vn[b] - vinf) + qinf)
            un[b] = rhs / (3.0 * heat_factor * kt0 / (2.0 * dx) + bi_t)
        for j in range(n):
            v[j] = vn[j]
            u[j] = un[j]
    return v, u


explicit_march_numba = _njit(_explicit_march_loop)


def explicit_march_numpy(v, u, n_steps, dt, dx, num, den, pw, layer_node, layer_half,
                         interfaces, fo_m, fo_t, g1, g2, heat_factor, modes, bis, drivers):
    n = v.shape[0]
    idx2 = 1.0 / (dx * dx)
    interior = np.ones(n, dtype=bool)
    interior[[0, n - 1]] = False
    interior[interfaces] = False
    jj = np.flatnonzero(interior)
    layers = np.unique(layer_node)

    def packed(slot, values, lay_idx):
        out = np.empty_like(values)
        for lay in layers:
            m = lay_idx == lay
            if m.any():
                a, p = pw[lay, slot]
                out[m] = closure_eval_numpy(num[lay, slot], den[lay, slot], a, p, values[m])[0]
        return out

    for step in range(n_steps):
        cm = packed(CM, v, layer_node)
        ct = packed(CT, v, layer_node)
        ctm = packed(CTM, v, layer_node)
        vh = 0.5 * (v[1:] + v[:-1])
        kmh = packed(KM, vh, layer_half)
        kth = packed(KT, vh, layer_half)
        ktmh = packed(KTM, vh, layer_half)
        vn = v.copy()
        un = u.copy()
        dv = np.diff(v)
        du = np.diff(u)
        fm = kmh * dv
        vn[jj] = v[jj] + dt * fo_m * idx2 * (fm[jj] - fm[jj - 1]) / cm[jj]
        for j in interfaces:
            vn[j] = (4.0 * vn[j - 1] - vn[j - 2] + 4.0 * vn[j + 1] - vn[j + 2]) / 6.0
        for side, (b, i1, i2) in enumerate(((0, 1, 2), (n - 1, n - 2, n - 3))):
            uinf, vinf, ginf, _ = drivers[side, :, step]
            if modes[side] == 1:
                vn[b] = vinf
                continue
            k0 = packed(KM, v[b:b + 1], layer_node[b:b + 1])[0]
            bi_m = bis[side, 0]
            vn[b] = (k0 * (4.0 * vn[i1] - vn[i2]) / (2.0 * dx) + bi_m * vinf + ginf) / (
                3.0 * k0 / (2.0 * dx) + bi_m)
        ft = kth * du
        fx = ktmh * dv
        cond = fo_t * idx2 * (ft[jj] - ft[jj - 1])
        cross = fo_t * g2 * idx2 * (fx[jj] - fx[jj - 1])
        un[jj] = u[jj] + (dt * (cond + cross) - g1 * ctm[jj] * (vn[jj] - v[jj])) / ct[jj]
        for j in interfaces:
            un[j] = (4.0 * un[j - 1] - un[j - 2] + 4.0 * un[j + 1] - un[j + 2]) / 6.0
        for side, (b, i1, i2, sgn) in enumerate(((0, 1, 2, 1.0), (n - 1, n - 2, n - 3, -1.0))):
            uinf, vinf, _, qinf = drivers[side, :, step]
            if modes[side] == 1:
                un[b] = uinf
                continue
            kt0 = packed(KT, v[b:b + 1], layer_node[b:b + 1])[0]
            ktm0 = packed(KTM, v[b:b + 1], layer_node[b:b + 1])[0]
            vx = sgn * (-3.0 * vn[b] + 4.0 * vn[i1] - vn[i2]) / (2.0 * dx)
            bi_t, bi_tm = bis[side, 1], bis[side, 2]
            rhs = (heat_factor * kt0 * (4.0 * un[i1] - un[i2]) / (2.0 * dx)
                   + sgn * heat_factor * g2 * ktm0 * vx
                   + bi_t * uinf - bi_tm * g2 * (vn[b] - vinf) + qinf)
            un[b] = rhs / (3.0 * heat_factor * kt0 / (2.0 * dx) + bi_t)
        v[:] = vn
        u[:] = un
    return v, u


def explicit_march(*args):
    """Advance the explicit Euler scheme in place; see ``reference.euler_explicit_run``."""
    if USE_NUMBA:
        return explicit_march_numba(*args)
    return explicit_march_numpy(*args)


def backend() -> str:
    return "numba" if USE_NUMBA else "numpy"
