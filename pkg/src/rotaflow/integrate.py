"""Long-time integration of X' = b(X) on the covering space R^d.

Positions are tracked as an exact integer winding plus a base point in
[0,1)^d; the step controller only ever sees the base point, which makes a
run from x0 + kappa reproduce the run from x0 shifted by kappa bit for bit.
"""
from dataclasses import dataclass, field as dc_field
import math
from typing import Optional

import numpy as np

from . import _kernels as K
from ._accel import ordered_map, resolve_engine
from ._io import write_csv
from ._vectorized import integrate_batch
from .torus import LiftedState, split

SCHEMES = {"adaptive_embedded_45": K.SCHEME_DP45, "fixed_rk4": K.SCHEME_RK4}


@dataclass(frozen=True)
class IntegratorConfig:
    abs_tol: float = 1e-10
    rel_tol: float = 1e-10
    max_step: float = 0.1
    min_step: float = 1e-12
    scheme: str = "adaptive_embedded_45"
    initial_step: Optional[float] = None
    engine: str = "auto"

    def __post_init__(self):
        if not (self.abs_tol > 0 and self.rel_tol > 0):
            raise ValueError("tolerances must be positive")
        if not (0 < self.min_step <= self.max_step):
            raise ValueError("need 0 < min_step <= max_step")
        if self.scheme not in SCHEMES:
            raise ValueError(f"unknown scheme {self.scheme!r}; choose from {sorted(SCHEMES)}")

    @property
    def scheme_code(self):
        return SCHEMES[self.scheme]

    @property
    def first_step(self):
        # fixed-step RK4 always uses max_step
        if self.scheme == "fixed_rk4" or self.initial_step is None:
            return self.max_step
        return min(self.initial_step, self.max_step)


@dataclass(frozen=True)
class Stalled:
    """Step-size underflow: the integrator could not advance past ``t``."""

    t: float
    position: np.ndarray


class StalledError(RuntimeError):
    def __init__(self, stalled):
        super().__init__(f"integration stalled at t={stalled.t:.17g}, "
                         f"x={np.array2string(stalled.position, precision=17)}")
        self.stalled = stalled


@dataclass
class Trajectory:
    times: np.ndarray
    positions: np.ndarray
    field: object
    config: IntegratorConfig
    stalled: Optional[Stalled] = None
    _states: Optional[list] = dc_field(default=None, repr=False)

    @property
    def states(self):
        if self._states is None:
            self._states = [LiftedState.from_position(p) for p in self.positions]
        return self._states

    @property
    def final_position(self):
        return self.positions[-1]

    @property
    def t_final(self):
        return float(self.times[-1])

    def velocities(self):
        return self.field.evaluate(self.positions)

    def raise_if_stalled(self):
        if self.stalled is not None:
            raise StalledError(self.stalled)
        return self

    def to_csv(self, path):
        d = self.positions.shape[1]
        header = ["t"] + [f"x_{i + 1}" for i in range(d)] + [f"b_{i + 1}" for i in range(d)]
        rows = np.column_stack([self.times, self.positions, self.velocities()])
        write_csv(path, header, [[float(v) for v in r] for r in rows])


def sample_grid(t_end, sample_every=None):
    """0, dt, 2 dt, ... up to t_end (inclusive), signed like t_end."""
    span = abs(float(t_end))
    sign = -1.0 if t_end < 0 else 1.0
    if sample_every is None or sample_every <= 0 or span == 0.0:
        pts = [0.0, span] if span > 0 else [0.0]
        return sign * np.asarray(pts) + 0.0
    n = int(math.floor(span / sample_every + 1e-9))
    pts = np.arange(n + 1) * float(sample_every)
    if span - pts[-1] > 1e-9 * max(1.0, span):
        pts = np.append(pts, span)
    else:
        pts[-1] = span
    return sign * pts + 0.0


_DUMMY_W = np.zeros(1)


def run_kernel(field, x0, t_end, config, sample_times, mode=K.MODE_SAMPLES, hist_res=1,
               hist_w=None, hist_c=None):
    """One trajectory on the compiled (or interpreted) scalar kernel.

    Returns ``(status, t_reached, final_position, samples, nsteps)``.
    """
    wind, base = split(x0)
    d = base.size
    st = np.asarray(sample_times, dtype=float)
    if mode == K.MODE_SAMPLES:
        out = np.empty((st.size, d))
        hw, hc = _DUMMY_W, np.zeros((1, d))
    else:
        out = np.zeros((1, d))
        hw, hc = hist_w, hist_c
    status, t_reached, b, w, nsteps = K.integrate_core(
        *field.kernel_args, base, wind, float(t_end),
        config.abs_tol, config.rel_tol, config.max_step, config.min_step,
        config.scheme_code, config.first_step, st, mode, out, int(hist_res), hw, hc)
    return int(status), float(t_reached), w + b, out, int(nsteps)


def run_batch(field, x0s, t_end, config, sample_times=None, threads=None, engine=None):
    """Integrate many initial conditions.

    Returns ``(status, t_reached, final, samples)``.

    ``samples`` has shape (n, len(sample_times), d).  With the numba engine
    rows run independently on a thread pool; the numpy engine advances all
    rows in lockstep.  Either way results do not depend on ``threads``.
    """
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    if sample_times is None:
        sample_times = sample_grid(t_end)
    sample_times = np.asarray(sample_times, dtype=float)
    engine = resolve_engine(engine or config.engine)
    if engine == "numba" and not field.has_kernel:
        engine = "numpy"
    if engine == "numba":
        rows = ordered_map(lambda x: run_kernel(field, x, t_end, config, sample_times),
                           list(x0s), threads)
        status = np.array([r[0] for r in rows], dtype=np.int64)
        t_reached = np.array([r[1] for r in rows])
        final = np.stack([r[2] for r in rows])
        samples = np.stack([r[3] for r in rows])
        return status, t_reached, final, samples
    pairs = [split(x) for x in x0s]
    wind0 = np.array([p[0] for p in pairs], dtype=np.int64)
    base0 = np.array([p[1] for p in pairs])
    status, t_reached, base, wind, samples = integrate_batch(
        field.evaluate, base0, wind0, float(t_end), config.abs_tol, config.rel_tol,
        config.max_step, config.min_step, config.scheme_code, config.first_step, sample_times)
    return status, t_reached, wind + base, samples


def flow(field, x0, t_end, config=None, sample_every=None, engine=None):
    """Trajectory of X' = b(X) from ``x0`` over [0, t_end] (t_end may be negative).

    On step-size underflow the trajectory up to the stall time is returned
    with ``stalled`` set; call ``raise_if_stalled`` to turn it into an error.
    """
    config = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    if x0.shape != (field.dimension,):
        raise ValueError(f"x0 must have shape ({field.dimension},)")
    times = sample_grid(t_end, sample_every)
    status, t_reached, final, samples = run_batch(field, x0[None], t_end, config, times,
                                                  threads=1, engine=engine)
    samples = samples[0]
    samples[0] = x0
    stalled = None
    if status[0] == K.STATUS_STALLED:
        tr = float(t_reached[0])
        keep = np.abs(times) <= abs(tr)
        times, samples = times[keep], samples[keep]
        if times[-1] != tr:
            times = np.append(times, tr)
            samples = np.vstack([samples, final[0]])
        stalled = Stalled(tr, final[0].copy())
    return Trajectory(times=times, positions=samples, field=field, config=config,
                      stalled=stalled)


def endpoint(field, x0, t, config, engine=None):
    traj = flow(field, x0, t, config, engine=engine).raise_if_stalled()
    return traj.final_position


def verify_semigroup(field, x0, s, t, config=None, engine=None):
    """|X(s+t, x0) - X(s, X(t, x0))|."""
    config = config or IntegratorConfig()
    if max(abs(s), abs(t)) > 100:
        raise ValueError("semigroup check limited to |s|, |t| <= 100")
    direct = endpoint(field, x0, s + t, config, engine)
    mid = endpoint(field, x0, t, config, engine)
    composed = endpoint(field, mid, s, config, engine)
    return float(np.linalg.norm(direct - composed))


def verify_lattice_equivariance(field, x0, kappa, t, config=None, engine=None):
    """|X(t, x0 + kappa) - X(t, x0) - kappa| for an integer vector kappa."""
    config = config or IntegratorConfig()
    kappa = np.asarray(kappa)
    if not np.all(kappa == np.round(kappa)):
        raise ValueError("kappa must be an integer vector")
    kappa = kappa.astype(float)
    x0 = np.asarray(x0, dtype=float)
    a = endpoint(field, x0, t, config, engine)
    b = endpoint(field, x0 + kappa, t, config, engine)
    return float(np.linalg.norm(b - a - kappa))
