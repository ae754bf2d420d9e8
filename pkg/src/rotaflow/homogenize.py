"""Transport with oscillating velocity, solved exactly along characteristics.

The equation is  du/dt - b(x/eps) . grad u = 0,  u(0, x) = u0(x).  Its
solution is u_eps(t, x) = u0(X_eps(t, x)) with X_eps(t, x) = eps X(t/eps, x/eps),
and when every rotation vector equals zeta it converges to u0(x + t zeta).
"""
from dataclasses import dataclass, field as dc_field
import math
import time
from typing import Callable, Optional

import numpy as np

from ._io import write_csv, write_json
from .integrate import IntegratorConfig, run_batch


def gaussian_bump(center=(0.5, 0.5), width=0.15):
    c = np.asarray(center, dtype=float)

    def u0(x):
        r2 = np.sum((np.asarray(x, dtype=float) - c) ** 2, axis=-1)
        return np.exp(-r2 / (2.0 * width ** 2))

    return u0


def trig_polynomial():
    def u0(x):
        x = np.asarray(x, dtype=float)
        return (np.cos(2 * math.pi * x[..., 0])
                + 0.5 * np.sin(2 * math.pi * (x[..., 0] + x[..., 1])))

    return u0


PROFILES = {"gaussian": gaussian_bump, "trig": trig_polynomial}


def profile(name, **params):
    try:
        return PROFILES[name](**params)
    except KeyError:
        raise ValueError(f"unknown initial profile {name!r}; known: {sorted(PROFILES)}") from None


def characteristics(field, u0, eps, times, xs, config=None, threads=None, engine=None):
    """u_eps at every (x, t) pair: array of shape (len(xs), len(times)).

    Also returns the per-point stall flags.
    """
    if eps <= 0:
        raise ValueError("eps must be positive")
    config = config or IntegratorConfig()
    times = np.asarray(times, dtype=float)
    xs = np.atleast_2d(np.asarray(xs, dtype=float))
    t_end = float(times.max()) / eps if times.size else 0.0
    order = np.argsort(times, kind="stable")
    status, _, _, samples = run_batch(field, xs / eps, t_end, config, times[order] / eps,
                                      threads=threads, engine=engine)
    pos = np.empty_like(samples)
    pos[:, order, :] = samples
    return u0(eps * pos), status != 0


def solve_transport_characteristics(field, u0, eps, t, x, config=None, engine=None):
    """u_eps(t, x) = u0(eps X(t/eps, x/eps)); a stalled characteristic is
    evaluated at its stall point."""
    vals, _ = characteristics(field, u0, eps, [float(t)], [x], config, 1, engine)
    return float(vals[0, 0])


@dataclass
class TransportExperiment:
    field: object
    u0: Callable
    epsilons: list
    t_final: float = 1.0
    box: tuple = ((0.0, 1.0), (0.0, 1.0))
    points_per_axis: int = 64
    time_samples: int = 16
    p: float = 2.0
    config: IntegratorConfig = dc_field(default_factory=IntegratorConfig)

    def __post_init__(self):
        eps = [float(e) for e in self.epsilons]
        if not eps or min(eps) <= 0:
            raise ValueError("epsilons must be positive")
        if any(b >= a for a, b in zip(eps, eps[1:])):
            raise ValueError("epsilons must be strictly decreasing")
        if self.t_final <= 0:
            raise ValueError("t_final must be positive")
        if self.p < 1:
            raise ValueError("p must be >= 1")
        self.epsilons = eps

    def eval_points(self):
        axes = [lo + (np.arange(self.points_per_axis) + 0.5) * (hi - lo) / self.points_per_axis
                for lo, hi in self.box]
        mesh = np.meshgrid(*axes, indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=-1)

    def eval_times(self):
        return (np.arange(self.time_samples) + 0.5) * self.t_final / self.time_samples

    def volume(self):
        return self.t_final * float(np.prod([hi - lo for lo, hi in self.box]))


@dataclass
class ConvergenceTable:
    epsilons: list
    errors: list
    runtimes: list
    p: float
    oscillation: float
    stalled: list = dc_field(default_factory=list)

    @property
    def rows(self):
        return list(zip(self.epsilons, self.errors, self.runtimes))

    def strictly_decreasing(self):
        return all(b < a for a, b in zip(self.errors, self.errors[1:]))

    def max_growth(self):
        """Largest ratio error(eps/2) / error(eps) along the sweep."""
        ratios = [b / a for a, b in zip(self.errors, self.errors[1:]) if a > 0]
        return max(ratios) if ratios else 0.0

    def to_dict(self, timings=False):
        out = {"p": self.p, "oscillation": self.oscillation,
               "rows": [{"eps": e, "error": r, "stalled_points": s}
                        for e, r, s in zip(self.epsilons, self.errors, self.stalled)]}
        if timings:
            for row, rt in zip(out["rows"], self.runtimes):
                row["runtime"] = rt
        return out

    def to_json(self, path, timings=False):
        write_json(self.to_dict(timings), path)

    def to_csv(self, path, timings=False):
        header = ["eps", "error"] + (["runtime"] if timings else [])
        rows = [[float(e), float(r)] + ([float(t)] if timings else [])
                for e, r, t in self.rows]
        write_csv(path, header, rows)

    def to_svg(self, path):
        import matplotlib

        matplotlib.use("Agg")
        import matplotlib.pyplot as plt

        with matplotlib.rc_context({"svg.hashsalt": "rotaflow", "svg.fonttype": "none"}):
            fig, ax = plt.subplots(figsize=(5, 4))
            ax.loglog(self.epsilons, self.errors, "o-")
            ax.set_xlabel("eps")
            ax.set_ylabel(f"L^{self.p:g} error")
            ax.grid(True, which="both", alpha=0.3)
            fig.tight_layout()
            fig.savefig(path, format="svg", metadata={"Date": None})
            plt.close(fig)


def run_experiment(exp, zeta, threads=None, engine=None, progress=None):
    """L^p distance between u_eps and u0(x + t zeta) over [0, t_final] x box.

    Midpoint tensor quadrature in (t, x); rows come out sorted by
    decreasing eps.
    """
    zeta = np.asarray(zeta, dtype=float)
    xs = exp.eval_points()
    ts = exp.eval_times()
    limit = exp.u0(xs[:, None, :] + ts[None, :, None] * zeta)
    osc = float(limit.max() - limit.min()) if limit.size else 0.0
    errors, runtimes, stalled = [], [], []
    for eps in exp.epsilons:
        start = time.perf_counter()
        vals, st = characteristics(exp.field, exp.u0, eps, ts, xs, exp.config, threads, engine)
        err = (exp.volume() * np.mean(np.abs(vals - limit) ** exp.p)) ** (1.0 / exp.p)
        errors.append(float(err))
        runtimes.append(time.perf_counter() - start)
        stalled.append(int(st.sum()))
        if progress is not None:
            progress(eps, err)
    return ConvergenceTable(list(exp.epsilons), errors, runtimes, exp.p, osc, stalled)
