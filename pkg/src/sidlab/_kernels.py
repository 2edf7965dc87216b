"""Compiled Euler-Maruyama loops for the self-interacting and frozen diffusions.

Potentials are passed as ``(code, center, params)`` triples (see
``PotentialSpec.kernel_params``): code 0 is the diagonal quadratic with
``params`` the per-axis curvature, code 1 the radial even polynomial with
``params[p]`` the coefficient of ``|x - center|**p``.
"""

import numpy as np
from numba import njit

DONE = 0
EXITED = 1
EXPLODED = 2
BUFFER_FULL = 3

DOM_NONE = 0
DOM_INTERVAL = 1
DOM_BALL = 2
DOM_LEVEL = 3

# fstate slots
F_SUM_W = 0
F_SUM_WP = 1
F_MAX_DIST = 2
F_MAX_Y = 3
F_MAX_GAP = 4
F_SIZE = 5

# istate slots
I_STEP = 0
I_COUNT = 1
I_FILL = 2
I_REC = 3
I_SIZE = 4


@njit(cache=True, nogil=True)
def pot_value(code, center, params, x):
    d = x.shape[0]
    r2 = 0.0
    if code == 0:
        out = 0.0
        for i in range(d):
            y = x[i] - center[i]
            out += 0.5 * params[i] * y * y
        return out
    for i in range(d):
        y = x[i] - center[i]
        r2 += y * y
    out = 0.0
    for p in range(2, params.shape[0], 2):
        c = params[p]
        if c != 0.0:
            out += c * r2 ** (p // 2)
    return out


@njit(cache=True, nogil=True)
def pot_grad_add(code, center, params, x, scale, out):
    """out += scale * grad f(x)"""
    d = x.shape[0]
    if code == 0:
        for i in range(d):
            out[i] += scale * params[i] * (x[i] - center[i])
        return
    r2 = 0.0
    for i in range(d):
        y = x[i] - center[i]
        r2 += y * y
    s = 0.0
    for p in range(2, params.shape[0], 2):
        c = params[p]
        if c != 0.0:
            s += c * p * r2 ** ((p - 2) // 2)
    for i in range(d):
        out[i] += scale * s * (x[i] - center[i])


@njit(cache=True, nogil=True)
def _inside(dom_code, dom_params, x, vk, vc, vp, wk, wc, wp, has_w, m, tmp):
    d = x.shape[0]
    if dom_code == DOM_INTERVAL:
        return dom_params[0] < x[0] < dom_params[1]
    if dom_code == DOM_BALL:
        r2 = 0.0
        for i in range(d):
            y = x[i] - dom_params[1 + i]
            r2 += y * y
        return r2 < dom_params[0] * dom_params[0]
    if dom_code == DOM_LEVEL:
        val = pot_value(vk, vc, vp, x) - dom_params[1]
        if has_w:
            for i in range(d):
                tmp[i] = x[i] - m[i]
            val += pot_value(wk, wc, wp, tmp)
        return val < dom_params[0]
    return True


@njit(cache=True, nogil=True)
def run_chunk(x, y, sum_wx, fstate, istate, buf_t, buf_x, buf_w, store_buffer,
              vk, vc, vp, wk, wc, wp, has_w, fast, frozen, m, two_k,
              sigma, dt, dB, warmup, stride,
              coupled, switch_step,
              dom_code, dom_params,
              rec_every, rec_t, rec_x, rec_y, rec_aux, prev):
    """Advance the state through the increments ``dB``.

    Returns ``(status, steps_taken)``. On EXITED the state holds the first
    outside point and ``prev`` the last inside point; on EXPLODED and
    BUFFER_FULL the state is left at the last finite step.
    """
    d = x.shape[0]
    n = dB.shape[0]
    drift = np.zeros(d)
    ydrift = np.zeros(d)
    xn = np.zeros(d)
    yn = np.zeros(d)
    tmp = np.zeros(d)
    for i in range(n):
        step = istate[I_STEP]
        sum_w = fstate[F_SUM_W]
        new_block = istate[I_COUNT] == 0 or istate[I_FILL] >= stride
        if store_buffer and new_block and istate[I_COUNT] >= buf_t.shape[0]:
            return BUFFER_FULL, i

        for j in range(d):
            drift[j] = 0.0
        pot_grad_add(vk, vc, vp, x, 1.0, drift)
        if has_w:
            if frozen:
                for j in range(d):
                    tmp[j] = x[j] - m[j]
                pot_grad_add(wk, wc, wp, tmp, 1.0, drift)
            elif step >= warmup and sum_w > 0.0:
                if fast:
                    for j in range(d):
                        drift[j] += wp[j] * (x[j] - sum_wx[j] / sum_w)
                else:
                    inv = 1.0 / sum_w
                    for b in range(istate[I_COUNT]):
                        for j in range(d):
                            tmp[j] = x[j] - buf_x[b, j]
                        pot_grad_add(wk, wc, wp, tmp, buf_w[b] * inv, drift)

        ok = True
        for j in range(d):
            xn[j] = x[j] - drift[j] * dt + sigma * dB[i, j]
            if not np.isfinite(xn[j]):
                ok = False

        after_switch = coupled and step >= switch_step
        if coupled:
            if after_switch:
                for j in range(d):
                    ydrift[j] = 0.0
                pot_grad_add(vk, vc, vp, y, 1.0, ydrift)
                if has_w:
                    for j in range(d):
                        tmp[j] = y[j] - m[j]
                    pot_grad_add(wk, wc, wp, tmp, 1.0, ydrift)
                for j in range(d):
                    yn[j] = y[j] - ydrift[j] * dt + sigma * dB[i, j]
                    if not np.isfinite(yn[j]):
                        ok = False
            else:
                for j in range(d):
                    yn[j] = xn[j]
        if not ok:
            return EXPLODED, i

        if after_switch:
            # distance of the measure the drift just used to delta_m
            if sum_w > 0.0:
                dist = (fstate[F_SUM_WP] / sum_w) ** (1.0 / two_k)
            else:
                dist = 0.0
            if dist > fstate[F_MAX_DIST]:
                fstate[F_MAX_DIST] = dist

        # record the pre-update position in the occupation measure
        r2 = 0.0
        for j in range(d):
            sum_wx[j] += dt * x[j]
            r2 += (x[j] - m[j]) ** 2
        fstate[F_SUM_W] = sum_w + dt
        fstate[F_SUM_WP] += dt * r2 ** (two_k // 2)
        if store_buffer:
            if new_block:
                b = istate[I_COUNT]
                buf_w[b] = dt
                istate[I_COUNT] = b + 1
                istate[I_FILL] = 1
            else:
                b = istate[I_COUNT] - 1
                buf_w[b] += dt
                istate[I_FILL] += 1
            buf_t[b] = step * dt
            for j in range(d):
                buf_x[b, j] = x[j]

        for j in range(d):
            prev[j] = x[j]
            x[j] = xn[j]
            if coupled:
                y[j] = yn[j]
        istate[I_STEP] = step + 1

        if after_switch:
            g2 = 0.0
            y2 = 0.0
            for j in range(d):
                g2 += (x[j] - y[j]) ** 2
                y2 += y[j] * y[j]
            if np.sqrt(g2) > fstate[F_MAX_GAP]:
                fstate[F_MAX_GAP] = np.sqrt(g2)
            if np.sqrt(y2) > fstate[F_MAX_Y]:
                fstate[F_MAX_Y] = np.sqrt(y2)

        if rec_every > 0 and (step + 1) % rec_every == 0:
            k = istate[I_REC]
            if k < rec_t.shape[0]:
                rec_t[k] = (step + 1) * dt
                g2 = 0.0
                for j in range(d):
                    rec_x[k, j] = x[j]
                    rec_y[k, j] = y[j]
                    g2 += (x[j] - y[j]) ** 2
                rec_aux[k, 0] = g2
                rec_aux[k, 1] = (fstate[F_SUM_WP] / fstate[F_SUM_W]) ** (1.0 / two_k)
                istate[I_REC] = k + 1

        if dom_code != DOM_NONE:
            if not _inside(dom_code, dom_params, x, vk, vc, vp, wk, wc, wp, has_w, m, tmp):
                return EXITED, i + 1
    return DONE, n


@njit(cache=True, nogil=True)
def buffer_drift(x, buf_x, buf_w, wk, wc, wp):
    """(1 / total weight) * sum_b w_b grad W(x - x_b)."""
    d = x.shape[0]
    out = np.zeros(d)
    tmp = np.zeros(d)
    total = 0.0
    for b in range(buf_w.shape[0]):
        total += buf_w[b]
    if total == 0.0:
        return out
    for b in range(buf_w.shape[0]):
        for j in range(d):
            tmp[j] = x[j] - buf_x[b, j]
        pot_grad_add(wk, wc, wp, tmp, buf_w[b] / total, out)
    return out
