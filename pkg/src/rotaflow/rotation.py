"""Rotation vectors (X(T,x) - x)/T and rotation sets over grids of initial conditions."""
from dataclasses import dataclass, field as dc_field
from typing import Callable, Optional, Union

import numpy as np

from . import _kernels as K
from ._io import plain, write_csv, write_json
from .fields import catalog_build
from .integrate import IntegratorConfig, run_batch, sample_grid
from .torus import min_image_distances, uniform_grid

SINGLETON_FACTOR = 5e-3
SEGMENT_FACTOR = 1e-2


@dataclass(frozen=True)
class RotationEstimate:
    zeta_hat: np.ndarray
    T: float
    x0: np.ndarray
    cauchy_gap: float
    stalled: bool = False
    equilibrium: bool = False


@dataclass
class RotationSetEstimate:
    points: list
    hull: np.ndarray
    classification: str
    zeta: np.ndarray
    diameter: float
    tol_singleton: float
    tol_segment: float
    max_speed: float

    @property
    def zetas(self):
        return np.array([p.zeta_hat for p in self.points])

    def to_dict(self):
        return {
            "classification": self.classification,
            "zeta": self.zeta,
            "diameter": self.diameter,
            "tol_singleton": self.tol_singleton,
            "tol_segment": self.tol_segment,
            "max_speed": self.max_speed,
            "hull": self.hull,
            "points": [{"x0": p.x0, "zeta_hat": p.zeta_hat, "T": p.T,
                        "cauchy_gap": p.cauchy_gap, "stalled": p.stalled,
                        "equilibrium": p.equilibrium} for p in self.points],
        }

    def to_json(self, path):
        write_json(self.to_dict(), path)

    def to_csv(self, path):
        write_estimates_csv(self.points, path)


def write_estimates_csv(points, path):
    d = points[0].x0.size
    header = ([f"x0_{i + 1}" for i in range(d)] + [f"zeta_{i + 1}" for i in range(d)]
              + ["T", "cauchy_gap", "stalled"])
    rows = [[float(v) for v in p.x0] + [float(v) for v in p.zeta_hat]
            + [float(p.T), float(p.cauchy_gap), int(p.stalled)] for p in points]
    write_csv(path, header, rows)


def _estimates(field, x0s, T, config, threads=None, engine=None):
    x0s = np.atleast_2d(np.asarray(x0s, dtype=float))
    times = np.array([0.0, 0.5 * T, T])
    status, t_reached, final, samples = run_batch(field, x0s, T, config, times,
                                                  threads=threads, engine=engine)
    out = []
    for x0, st, tr, xf, smp in zip(x0s, status, t_reached, final, samples):
        stalled = st == K.STATUS_STALLED
        t_full = tr if stalled else T
        if t_full <= 0.0:
            zeta = np.zeros_like(x0)
            gap = 0.0
        else:
            zeta = (xf - x0) / t_full
            t_half = min(0.5 * T, t_full)
            half = (smp[1] - x0) / t_half
            gap = float(np.linalg.norm(zeta - half))
        out.append(RotationEstimate(zeta, float(T), x0.copy(), gap, bool(stalled)))
    return out


def rotation_vector(field, x0, T, config=None, engine=None):
    """Finite-horizon rotation vector with its half-horizon Cauchy gap.

    On a stall at t* < T the estimate uses t* and ``stalled`` is set; the
    half-horizon comparison then uses min(T/2, t*).
    """
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    return _estimates(field, x0, float(T), config or IntegratorConfig(), 1, engine)[0]


def rotation_vectors(field, x0s, T, config=None, threads=None, engine=None):
    if T < 1:
        raise ValueError("horizon T must be >= 1")
    return _estimates(field, x0s, float(T), config or IntegratorConfig(), threads, engine)


def _segment_distances(points, end):
    """Distance from each row of ``points`` to the segment [0, end]."""
    nn = float(end @ end)
    if nn == 0.0:
        return np.linalg.norm(points, axis=1)
    s = np.clip(points @ end / nn, 0.0, 1.0)
    return np.linalg.norm(points - s[:, None] * end, axis=1)


def convex_hull(points):
    """Vertices of the convex hull of a point cloud, in a deterministic order.

    Degenerate clouds (a point or a collinear set) return their extreme points.
    """
    pts = np.unique(np.asarray(points, dtype=float), axis=0)
    if pts.shape[0] <= 2:
        return pts
    centred = pts - pts.mean(axis=0)
    _, sv, vt = np.linalg.svd(centred, full_matrices=False)
    rank = int(np.sum(sv > 1e-12 * max(1.0, sv[0])))
    if rank <= 1:
        proj = centred @ vt[0]
        return pts[[int(np.argmin(proj)), int(np.argmax(proj))]]
    if rank < pts.shape[1]:
        sub = centred @ vt[:rank].T
    else:
        sub = pts
    from scipy.spatial import ConvexHull

    hull = ConvexHull(sub)
    return pts[np.sort(hull.vertices)]


def _diameter(hull):
    if hull.shape[0] < 2:
        return 0.0
    diff = hull[:, None, :] - hull[None, :, :]
    return float(np.sqrt((diff ** 2).sum(-1)).max())


def classify(points, max_speed, tol_singleton=None, tol_segment=None):
    """Classify a list of RotationEstimate into singleton / segment / other.

    Returns ``(classification, zeta, hull, diameter, tol_singleton, tol_segment)``.
    """
    zetas = np.array([p.zeta_hat for p in points])
    hull = convex_hull(zetas)
    diam = _diameter(hull)
    if tol_singleton is None:
        tol_singleton = SINGLETON_FACTOR * max_speed
    usable = np.array([not p.stalled for p in points])
    pool = zetas[usable] if usable.any() else zetas
    end = pool[int(np.argmax(np.linalg.norm(pool, axis=1)))]
    if tol_segment is None:
        tol_segment = SEGMENT_FACTOR * float(np.linalg.norm(end))
    if diam <= tol_singleton:
        return "singleton", zetas.mean(axis=0), hull, diam, tol_singleton, tol_segment
    if np.all(_segment_distances(zetas, end) <= tol_segment):
        return "segment", end, hull, diam, tol_singleton, tol_segment
    return "other", end, hull, diam, tol_singleton, tol_segment


def rotation_set(field, grid_resolution=16, T=1e4, config=None, tol_singleton=None,
                 tol_segment=None, include_equilibria=True, threads=None, engine=None):
    """Rotation-set estimate from a half-cell-offset grid of initial conditions.

    Equilibria listed in the field's zero set enter as exact zero rotation
    vectors, since a trajectory started there never moves.  A segment is
    reported as [0, zeta] with zeta the largest non-stalled estimate.
    """
    if grid_resolution < 2:
        raise ValueError("grid_resolution must be >= 2")
    config = config or IntegratorConfig()
    x0s = uniform_grid(grid_resolution, field.dimension)
    points = rotation_vectors(field, x0s, T, config, threads, engine)
    if include_equilibria:
        zero = np.zeros(field.dimension)
        for z in field.zero_set:
            if np.allclose(field.evaluate(z.coords), 0.0, atol=1e-14):
                points.append(RotationEstimate(zero.copy(), float(T), z.coords.copy(), 0.0,
                                               False, True))
    speed = field.max_speed(256 if field.dimension <= 2 else 32)
    cls, zeta, hull, diam, ts, tg = classify(points, speed, tol_singleton, tol_segment)
    return RotationSetEstimate(points, hull, cls, zeta, diam, ts, tg, speed)


@dataclass
class SweepEntry:
    n: int
    classification: str
    zeta: np.ndarray
    diameter: float
    gap_to_limit: Optional[float]
    flagged: bool


@dataclass
class SweepResult:
    entries: list
    limit_classification: Optional[str] = None
    limit_zeta: Optional[np.ndarray] = None
    extras: dict = dc_field(default_factory=dict)

    def to_dict(self):
        return plain({
            "limit_classification": self.limit_classification,
            "limit_zeta": self.limit_zeta,
            "entries": [{"n": e.n, "classification": e.classification, "zeta": e.zeta,
                         "diameter": e.diameter, "gap_to_limit": e.gap_to_limit,
                         "flagged": e.flagged} for e in self.entries],
        })

    def to_json(self, path):
        write_json(self.to_dict(), path)

    def to_csv(self, path):
        d = self.entries[0].zeta.size
        header = (["n", "classification"] + [f"zeta_{i + 1}" for i in range(d)]
                  + ["diameter", "gap_to_limit", "flagged"])
        rows = [[e.n, e.classification] + [float(v) for v in e.zeta]
                + [float(e.diameter),
                   float("nan") if e.gap_to_limit is None else float(e.gap_to_limit),
                   int(e.flagged)] for e in self.entries]
        write_csv(path, header, rows)


def perturbation_sweep(family: Union[str, Callable], n_list, grid=8, T=1e4, config=None,
                       params=None, limit=None, threads=None, engine=None):
    """Rotation sets of a family b_n indexed by n, compared with a limit.

    ``family`` is a catalog name taking an ``n`` parameter or a callable
    ``n -> FieldSpec``.  ``limit`` is a RotationSetEstimate or a
    ``(classification, zeta)`` pair; ``zeta_n`` is the centroid of the
    member's estimates.  Members that are not singletons are flagged.
    """
    config = config or IntegratorConfig()
    if isinstance(family, str):
        name, base = family, dict(params or {})

        def build(n):
            return catalog_build(name, {**base, "n": n})
    else:
        build = family
    lim_cls = lim_zeta = None
    if isinstance(limit, RotationSetEstimate):
        lim_cls, lim_zeta = limit.classification, limit.zeta
    elif limit is not None:
        lim_cls, lim_zeta = limit[0], np.asarray(limit[1], dtype=float)
    entries = []
    for n in n_list:
        est = rotation_set(build(n), grid, T, config, threads=threads, engine=engine)
        zeta_n = est.zetas.mean(axis=0)
        gap = None if lim_zeta is None else float(np.linalg.norm(zeta_n - lim_zeta))
        entries.append(SweepEntry(int(n), est.classification, zeta_n, est.diameter, gap,
                                  est.classification != "singleton"))
    return SweepResult(entries, lim_cls, lim_zeta)


@dataclass(frozen=True)
class OrbitClosureReport:
    x0: np.ndarray
    min_distance_to_zero_set: float
    qualifies: bool


def orbit_distance_report(field, x0, T=1e3, sample_every=0.01, config=None,
                          safety_margin=1e-2, engine=None):
    """Closest approach of the sampled orbit (forward and backward) to the zero set."""
    if not field.zero_set:
        raise ValueError(f"field {field.name!r} has no zero-set metadata")
    config = config or IntegratorConfig()
    x0 = np.asarray(x0, dtype=float)
    zeros = field.zero_points()
    best = np.inf
    for sign in (1.0, -1.0):
        times = sample_grid(sign * T, sample_every)
        _, _, _, samples = run_batch(field, x0[None], sign * T, config, times, threads=1,
                                     engine=engine)
        pts = samples[0] - np.floor(samples[0])
        best = min(best, float(min_image_distances(pts, zeros).min()))
    return OrbitClosureReport(x0.copy(), best, bool(best > safety_margin))
