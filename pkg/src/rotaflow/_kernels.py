"""Scalar per-trajectory kernels (numba-compiled when enabled).

Fields are addressed by an integer kind plus flat parameter arrays so a single
compiled integrator serves the whole catalog:

KIND_CONSTANT   b = p[:d]
KIND_SINSQ      b = (c0 + c1 sin^2(pi x1) + c2 sin^2(pi x2))^alpha
                    * (1 + m sin(2 pi x2)) * (w1, w2)
                p = [c0, c1, c2, alpha, m, w1, w2]
KIND_GRADIENT   b = A grad v,  v = sin(2 pi x1) sin(2 pi x2),  p = [A11, A12, A21, A22]
KIND_SPECTRAL   b_j = sum_m cc[j,m] cos(2 pi k_m.x) + ss[j,m] sin(2 pi k_m.x),
                p = [K] with K = max |k| per axis

State is carried as an integer winding plus a base point in [0,1)^d.
"""
import math

import numpy as np

from ._accel import jit

KIND_CONSTANT = 0
KIND_SINSQ = 1
KIND_GRADIENT = 2
KIND_SPECTRAL = 3

SCHEME_DP45 = 0
SCHEME_RK4 = 1

MODE_SAMPLES = 0
MODE_HISTOGRAM = 1

STATUS_OK = 0
STATUS_STALLED = 1

TWO_PI = 2.0 * math.pi


@jit
def catalog_rhs(kind, p, modes, cc, ss, x, out):
    if kind == KIND_CONSTANT:
        for i in range(x.size):
            out[i] = p[i]
    elif kind == KIND_SINSQ:
        s1 = math.sin(math.pi * x[0])
        s2 = math.sin(math.pi * x[1])
        u = p[0] + p[1] * s1 * s1 + p[2] * s2 * s2
        if p[3] == 1.0:
            r = u
        elif u > 0.0:
            r = u ** p[3]
        else:
            r = 0.0
        if p[4] != 0.0:
            r *= 1.0 + p[4] * math.sin(TWO_PI * x[1])
        out[0] = r * p[5]
        out[1] = r * p[6]
    elif kind == KIND_GRADIENT:
        c1 = math.cos(TWO_PI * x[0])
        s1 = math.sin(TWO_PI * x[0])
        c2 = math.cos(TWO_PI * x[1])
        s2 = math.sin(TWO_PI * x[1])
        g1 = TWO_PI * c1 * s2
        g2 = TWO_PI * s1 * c2
        out[0] = p[0] * g1 + p[1] * g2
        out[1] = p[2] * g1 + p[3] * g2
    else:
        K = int(p[0])
        e1 = complex(math.cos(TWO_PI * x[0]), math.sin(TWO_PI * x[0]))
        e2 = complex(math.cos(TWO_PI * x[1]), math.sin(TWO_PI * x[1]))
        pw1 = np.empty(2 * K + 1, dtype=np.complex128)
        pw2 = np.empty(2 * K + 1, dtype=np.complex128)
        pw1[K] = 1.0
        pw2[K] = 1.0
        for k in range(1, K + 1):
            pw1[K + k] = pw1[K + k - 1] * e1
            pw2[K + k] = pw2[K + k - 1] * e2
            pw1[K - k] = pw1[K + k].conjugate()
            pw2[K - k] = pw2[K + k].conjugate()
        b0 = 0.0
        b1 = 0.0
        for m in range(modes.shape[0]):
            z = pw1[K + modes[m, 0]] * pw2[K + modes[m, 1]]
            b0 += cc[0, m] * z.real + ss[0, m] * z.imag
            b1 += cc[1, m] * z.real + ss[1, m] * z.imag
        out[0] = b0
        out[1] = b1


@jit
def _emit(mode, si, y, wind, out_samples, hist_res, hist_w, hist_c):
    d = y.size
    if mode == MODE_SAMPLES:
        for i in range(d):
            out_samples[si, i] = wind[i] + y[i]
    else:
        idx = 0
        for i in range(d):
            f = y[i] - math.floor(y[i])
            if f >= 1.0:
                f = 0.0
            c = int(f * hist_res)
            if c >= hist_res:
                c = hist_res - 1
            idx = idx * hist_res + c
        hist_w[idx] += 1.0
        for i in range(d):
            f = y[i] - math.floor(y[i])
            if f >= 1.0:
                f = 0.0
            hist_c[idx, i] += f


@jit
def integrate_core(kind, p, modes, cc, ss, base0, wind0, t_end,
                   atol, rtol, max_step, min_step, scheme, h0,
                   sample_times, mode, out_samples, hist_res, hist_w, hist_c):
    """Integrate one trajectory from ``wind0 + base0`` over [0, t_end].

    Samples are emitted at ``sample_times`` (monotone in the integration
    direction) by cubic Hermite interpolation inside accepted steps.
    Returns ``(status, t_reached, base, wind, nsteps)``.
    """
    d = base0.size
    base = base0.copy()
    wind = wind0.copy()
    direction = 1.0 if t_end >= 0.0 else -1.0
    span = abs(t_end)

    k1 = np.empty(d)
    k2 = np.empty(d)
    k3 = np.empty(d)
    k4 = np.empty(d)
    k5 = np.empty(d)
    k6 = np.empty(d)
    k7 = np.empty(d)
    tmp = np.empty(d)
    y = np.empty(d)
    yi = np.empty(d)

    ns = sample_times.size
    si = 0
    while si < ns and abs(sample_times[si]) <= 0.0:
        _emit(mode, si, base, wind, out_samples, hist_res, hist_w, hist_c)
        si += 1

    catalog_rhs(kind, p, modes, cc, ss, base, k1)
    habs = min(h0, max_step)
    tau = 0.0
    status = STATUS_OK
    nsteps = 0
    while tau < span:
        last = tau + habs >= span
        hs = span - tau if last else habs
        h = direction * hs
        if scheme == SCHEME_RK4:
            for i in range(d):
                tmp[i] = base[i] + 0.5 * h * k1[i]
            catalog_rhs(kind, p, modes, cc, ss, tmp, k2)
            for i in range(d):
                tmp[i] = base[i] + 0.5 * h * k2[i]
            catalog_rhs(kind, p, modes, cc, ss, tmp, k3)
            for i in range(d):
                tmp[i] = base[i] + h * k3[i]
            catalog_rhs(kind, p, modes, cc, ss, tmp, k4)
            for i in range(d):
                y[i] = base[i] + h * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]) / 6.0
            catalog_rhs(kind, p, modes, cc, ss, y, k7)
            err = 0.0
        else:
            for i in range(d):
                tmp[i] = base[i] + h * (0.2 * k1[i])
            catalog_rhs(kind, p, modes, cc, ss, tmp, k2)
            for i in range(d):
                tmp[i] = base[i] + h * (3.0 / 40.0 * k1[i] + 9.0 / 40.0 * k2[i])
            catalog_rhs(kind, p, modes, cc, ss, tmp, k3)
            for i in range(d):
                tmp[i] = base[i] + h * (44.0 / 45.0 * k1[i] - 56.0 / 15.0 * k2[i]
                                        + 32.0 / 9.0 * k3[i])
            catalog_rhs(kind, p, modes, cc, ss, tmp, k4)
            for i in range(d):
                tmp[i] = base[i] + h * (19372.0 / 6561.0 * k1[i] - 25360.0 / 2187.0 * k2[i]
                                        + 64448.0 / 6561.0 * k3[i] - 212.0 / 729.0 * k4[i])
            catalog_rhs(kind, p, modes, cc, ss, tmp, k5)
            for i in range(d):
                tmp[i] = base[i] + h * (9017.0 / 3168.0 * k1[i] - 355.0 / 33.0 * k2[i]
                                        + 46732.0 / 5247.0 * k3[i] + 49.0 / 176.0 * k4[i]
                                        - 5103.0 / 18656.0 * k5[i])
            catalog_rhs(kind, p, modes, cc, ss, tmp, k6)
            for i in range(d):
                y[i] = base[i] + h * (35.0 / 384.0 * k1[i] + 500.0 / 1113.0 * k3[i]
                                      + 125.0 / 192.0 * k4[i] - 2187.0 / 6784.0 * k5[i]
                                      + 11.0 / 84.0 * k6[i])
            catalog_rhs(kind, p, modes, cc, ss, y, k7)
            acc = 0.0
            for i in range(d):
                e = h * (71.0 / 57600.0 * k1[i] - 71.0 / 16695.0 * k3[i]
                         + 71.0 / 1920.0 * k4[i] - 17253.0 / 339200.0 * k5[i]
                         + 22.0 / 525.0 * k6[i] - 1.0 / 40.0 * k7[i])
                sc = atol + rtol * max(abs(base[i]), abs(y[i]))
                acc += (e / sc) ** 2
            err = math.sqrt(acc / d)
            if err != err:
                err = 1e10

        if err <= 1.0:
            tau_new = span if last else tau + hs
            while si < ns and abs(sample_times[si]) <= tau_new:
                th = (abs(sample_times[si]) - tau) / hs
                # increment form: exact when y == base
                h10 = th * (1.0 - th) ** 2
                h01 = th * th * (3.0 - 2.0 * th)
                h11 = th * th * (th - 1.0)
                for i in range(d):
                    yi[i] = base[i] + (h01 * (y[i] - base[i])
                                       + h * (h10 * k1[i] + h11 * k7[i]))
                _emit(mode, si, yi, wind, out_samples, hist_res, hist_w, hist_c)
                si += 1
            for i in range(d):
                fl = math.floor(y[i])
                b = y[i] - fl
                if b >= 1.0:
                    b = 0.0
                    fl += 1.0
                base[i] = b
                wind[i] += np.int64(fl)
                k1[i] = k7[i]
            tau = tau_new
            nsteps += 1
            if scheme == SCHEME_DP45 and not last:
                fac = 5.0 if err == 0.0 else min(5.0, max(0.2, 0.9 * err ** -0.2))
                habs = min(max_step, hs * fac)
        else:
            habs = hs * max(0.2, 0.9 * err ** -0.2)
            if habs < min_step:
                status = STATUS_STALLED
                break

    while si < ns:
        _emit(mode, si, base, wind, out_samples, hist_res, hist_w, hist_c)
        si += 1
    return status, direction * tau, base, wind, nsteps
