"""Vectorized numpy engine: catalog evaluation on point arrays and a lockstep
batch integrator with per-row adaptive steps.

This is the fallback for the numba kernels and the only engine for fields
given as plain Python callables.  The step controller matches
``_kernels.integrate_core`` line for line.
"""
import numpy as np

from ._kernels import (KIND_CONSTANT, KIND_GRADIENT, KIND_SINSQ, SCHEME_DP45,
                       SCHEME_RK4, STATUS_OK, STATUS_STALLED, TWO_PI)

_DP_A = (
    (0.2,),
    (3.0 / 40.0, 9.0 / 40.0),
    (44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0),
    (19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0),
    (9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0),
)
_DP_B = (35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0)
_DP_E = (71.0 / 57600.0, 0.0, -71.0 / 16695.0, 71.0 / 1920.0, -17253.0 / 339200.0,
         22.0 / 525.0, -1.0 / 40.0)


def eval_catalog(kind, p, modes, cc, ss, X):
    """Evaluate a catalog field at points ``X`` of shape (..., d)."""
    X = np.asarray(X, dtype=float)
    out = np.empty_like(X)
    if kind == KIND_CONSTANT:
        out[...] = p[: X.shape[-1]]
        return out
    x1 = X[..., 0]
    x2 = X[..., 1]
    if kind == KIND_SINSQ:
        u = p[0] + p[1] * np.sin(np.pi * x1) ** 2 + p[2] * np.sin(np.pi * x2) ** 2
        if p[3] == 1.0:
            r = u
        else:
            r = np.where(u > 0.0, np.abs(u) ** p[3], 0.0)
        if p[4] != 0.0:
            r = r * (1.0 + p[4] * np.sin(TWO_PI * x2))
        out[..., 0] = r * p[5]
        out[..., 1] = r * p[6]
    elif kind == KIND_GRADIENT:
        g1 = TWO_PI * np.cos(TWO_PI * x1) * np.sin(TWO_PI * x2)
        g2 = TWO_PI * np.sin(TWO_PI * x1) * np.cos(TWO_PI * x2)
        out[..., 0] = p[0] * g1 + p[1] * g2
        out[..., 1] = p[2] * g1 + p[3] * g2
    else:
        phase = TWO_PI * (X[..., :2] @ modes.T.astype(float))
        c = np.cos(phase)
        s = np.sin(phase)
        out[..., 0] = c @ cc[0] + s @ ss[0]
        out[..., 1] = c @ cc[1] + s @ ss[1]
    return out


def integrate_batch(rhs, base0, wind0, t_end, atol, rtol, max_step, min_step,
                    scheme, h0, sample_times):
    """Integrate every row of ``wind0 + base0`` over [0, t_end] in lockstep.

    ``rhs`` maps an (n, d) array of points to (n, d) velocities.  Returns
    ``(status, t_reached, base, wind, samples)`` where ``samples`` has shape
    (n, len(sample_times), d) and holds lifted positions.
    """
    base = np.array(base0, dtype=float, copy=True)
    wind = np.array(wind0, dtype=np.int64, copy=True)
    n, d = base.shape
    direction = 1.0 if t_end >= 0.0 else -1.0
    span = abs(float(t_end))
    st = np.abs(np.asarray(sample_times, dtype=float))
    ns = st.size
    samples = np.empty((n, ns, d))
    si = np.zeros(n, dtype=np.int64)

    at_zero = st <= 0.0
    samples[:, at_zero, :] = (wind + base)[:, None, :]
    si[:] = int(at_zero.sum())

    status = np.full(n, STATUS_OK, dtype=np.int64)
    tau = np.zeros(n)
    habs = np.full(n, min(h0, max_step))
    k1 = rhs(base)
    active = np.ones(n, dtype=bool) if span > 0.0 else np.zeros(n, dtype=bool)

    while active.any():
        rows = np.flatnonzero(active)
        b = base[rows]
        t0 = tau[rows]
        last = t0 + habs[rows] >= span
        hs = np.where(last, span - t0, habs[rows])
        h = (direction * hs)[:, None]
        kk = [k1[rows]]
        if scheme == SCHEME_RK4:
            kk.append(rhs(b + 0.5 * h * kk[0]))
            kk.append(rhs(b + 0.5 * h * kk[1]))
            kk.append(rhs(b + h * kk[2]))
            y = b + h * (kk[0] + 2.0 * kk[1] + 2.0 * kk[2] + kk[3]) / 6.0
            knew = rhs(y)
            err = np.zeros(rows.size)
        else:
            for a in _DP_A:
                incr = sum(coef * kj for coef, kj in zip(a, kk))
                kk.append(rhs(b + h * incr))
            y = b + h * sum(coef * kj for coef, kj in zip(_DP_B, kk))
            knew = rhs(y)
            kk.append(knew)
            e = h * sum(coef * kj for coef, kj in zip(_DP_E, kk))
            sc = atol + rtol * np.maximum(np.abs(b), np.abs(y))
            err = np.sqrt(np.mean((e / sc) ** 2, axis=1))
            err = np.where(np.isnan(err), 1e10, err)

        ok = err <= 1.0
        if ok.any():
            acc = rows[ok]
            tnew = np.where(last[ok], span, t0[ok] + hs[ok])
            b_a, y_a, h_a = b[ok], y[ok], h[ok]
            f0, f1 = kk[0][ok], knew[ok]
            while True:
                idx = si[acc]
                pending = idx < ns
                pending[pending] = st[idx[pending]] <= tnew[pending]
                if not pending.any():
                    break
                j = np.flatnonzero(pending)
                th = ((st[idx[j]] - t0[ok][j]) / hs[ok][j])[:, None]
                yi = b_a[j] + (th * th * (3.0 - 2.0 * th) * (y_a[j] - b_a[j])
                               + h_a[j] * (th * (1.0 - th) ** 2 * f0[j]
                                           + th * th * (th - 1.0) * f1[j]))
                samples[acc[j], idx[j], :] = wind[acc[j]] + yi
                si[acc[j]] += 1
            fl = np.floor(y_a)
            nb = y_a - fl
            wrap = nb >= 1.0
            nb[wrap] = 0.0
            fl[wrap] += 1.0
            base[acc] = nb
            wind[acc] += fl.astype(np.int64)
            k1[acc] = f1
            tau[acc] = tnew
            if scheme == SCHEME_DP45:
                e_ok = err[ok]
                with np.errstate(divide="ignore"):
                    fac = np.where(e_ok == 0.0, 5.0,
                                   np.clip(0.9 * e_ok ** -0.2, 0.2, 5.0))
                grow = ~last[ok]
                habs[acc[grow]] = np.minimum(max_step, hs[ok][grow] * fac[grow])
            done = acc[last[ok]]
            active[done] = False
        if (~ok).any():
            rej = rows[~ok]
            habs[rej] = hs[~ok] * np.maximum(0.2, 0.9 * err[~ok] ** -0.2)
            stalled = rej[habs[rej] < min_step]
            status[stalled] = STATUS_STALLED
            active[stalled] = False

    for r in range(n):
        if si[r] < ns:
            samples[r, si[r]:, :] = wind[r] + base[r]
    return status, direction * tau, base, wind, samples
