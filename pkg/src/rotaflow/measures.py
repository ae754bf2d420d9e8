"""Occupation measures of long trajectories and the divergence-curl test.

A measure mu is invariant for the flow exactly when the integral of
b . grad(psi) against mu vanishes for every smooth periodic psi.  The check
uses real trigonometric monomials cos/sin(2 pi kappa . x) with 0 < |kappa|_inf <= K.
"""
from dataclasses import dataclass
import itertools
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from ._accel import resolve_engine
from ._io import write_csv, write_json
from .fields import quadrature_grid
from .integrate import IntegratorConfig, run_batch, run_kernel
from .torus import split

TWO_PI = 2.0 * np.pi
GOLDEN = 0.6180339887498949


@dataclass
class OccupationMeasure:
    """Time-weighted histogram of a trajectory on a uniform grid of cells.

    Besides the cell weights it keeps the mean position of the samples in
    each cell, which makes cell quadrature second-order accurate.
    """

    weights: np.ndarray
    centroids: np.ndarray
    resolution: int
    dimension: int
    x0: np.ndarray
    T: float
    endpoint: np.ndarray
    stalled: bool = False

    def __post_init__(self):
        if np.any(self.weights < 0):
            raise ValueError("negative histogram weight")

    @property
    def support(self):
        return np.flatnonzero(self.weights > 0)

    def cell_centres(self):
        return quadrature_grid(self.resolution, self.dimension) + 0.5 / self.resolution

    def integrate(self, f):
        """Quadrature of a scalar field against the measure."""
        idx = self.support
        vals = np.asarray(f(self.centroids[idx]), dtype=float)
        return float(np.dot(self.weights[idx], vals))

    def as_grid(self):
        return self.weights.reshape((self.resolution,) * self.dimension)

    def to_csv(self, path):
        write_csv(path, ["cell", "weight"],
                  [[int(i), float(w)] for i, w in enumerate(self.weights)])


@dataclass
class AnalyticMeasure:
    """mu = density dx / integral(density), integrated on a periodic grid."""

    density: Callable
    dimension: int = 2
    nodes: int = 128
    factors: Optional[tuple] = None  # (sigma, rho) when density = sigma / rho

    def _grid(self):
        pts = quadrature_grid(self.nodes, self.dimension)
        w = np.asarray(self.density(pts), dtype=float)
        return pts, w

    def integrate(self, f):
        pts, w = self._grid()
        vals = np.asarray(f(pts), dtype=float)
        finite = np.isfinite(w)
        prod = np.where(finite, w * np.where(finite, vals, 0.0), 0.0)
        return float(prod.sum() / w[finite].sum())

    def integrate_flux(self, field, g):
        """Integral of (b . g) against mu, with density * b formed before g so
        that densities blowing up where b vanishes stay finite."""
        pts, w = self._grid()
        fac = field.factorization
        if self.factors is not None and fac is not None and fac[0] is self.factors[1]:
            # (sigma / rho) * rho * Phi = sigma * Phi, finite at the zeros of rho
            wb = np.asarray(self.factors[0](pts), dtype=float)[:, None] * fac[1](pts)
        else:
            b = field.evaluate(pts)
            with np.errstate(invalid="ignore"):
                wb = np.where(np.isfinite(w)[:, None], w[:, None] * b, 0.0)
        vals = np.einsum("nd,nd->n", wb, g(pts))
        return float(vals.sum() / w[np.isfinite(w)].sum())


def invariant_measure(field, nodes=128):
    """Absolutely continuous invariant measure sigma / rho of b = rho * Phi.

    Requires the field's factorisation and an invariant density sigma of Phi.
    """
    if field.factorization is None or field.invariant_density is None:
        raise ValueError(f"field {field.name!r} has no factorisation with invariant density")
    rho = field.rho
    sigma = field.invariant_density

    def density(x):
        r = rho(x)
        with np.errstate(divide="ignore"):
            return np.where(r > 0, sigma(x) / np.where(r > 0, r, 1.0), np.inf)

    return AnalyticMeasure(density, field.dimension, nodes, (sigma, rho))


def rescaled_measure(measure, rho, rho_n):
    """Reweight mu by rho / rho_n, carrying an invariant measure of rho Phi to rho_n Phi.

    When mu = sigma / rho dx with the same rho, the factor cancels exactly,
    so zeros of rho do not produce 0 * inf.
    """
    if measure.factors is not None and measure.factors[1] is rho:
        sigma = measure.factors[0]

        def density(x):
            return sigma(x) / rho_n(x)

        return AnalyticMeasure(density, measure.dimension, measure.nodes, (sigma, rho_n))

    def density(x):
        return measure.density(x) * rho(x) / rho_n(x)

    return AnalyticMeasure(density, measure.dimension, measure.nodes)


def _hist_from_samples(samples, res, d):
    frac = samples - np.floor(samples)
    frac[frac >= 1.0] = 0.0
    cells = np.minimum((frac * res).astype(np.int64), res - 1)
    flat = np.ravel_multi_index(tuple(cells.T), (res,) * d)
    counts = np.bincount(flat, minlength=res ** d).astype(float)
    sums = np.stack([np.bincount(flat, weights=frac[:, i], minlength=res ** d)
                     for i in range(d)], axis=1)
    return counts, sums


def occupation_measure(field, x0, T, resolution=None, config=None, sample_every=0.01,
                       engine=None):
    """Occupation measure (1/T) integral_0^T delta_{X(s, x0)} ds as a histogram.

    One sample per cell of a uniform time grid, placed inside the cell by
    a golden-ratio Weyl sequence: plain midpoints alias with rational
    velocity components (b = (1, sqrt 2) would visit only 100 values of x1).  A stalled trajectory keeps contributing its stall point, so the
    histogram piles up at the equilibrium it is approaching.
    """
    if T < 10:
        raise ValueError("occupation measures need T >= 10")
    config = config or IntegratorConfig()
    d = field.dimension
    if resolution is None:
        resolution = 64 if d <= 2 else 32
    x0 = np.asarray(x0, dtype=float)
    n = max(1, int(round(T / sample_every)))
    dt = T / n
    k = np.arange(n)
    times = (k + np.modf(0.5 + k * GOLDEN)[0]) * dt
    engine = resolve_engine(engine or config.engine)
    cells = resolution ** d
    if engine == "numba" and field.has_kernel:
        hw = np.zeros(cells)
        hc = np.zeros((cells, d))
        status, _, final, _, _ = run_kernel(field, x0, T, config, times, K.MODE_HISTOGRAM,
                                            resolution, hw, hc)
        counts, sums = hw, hc
    else:
        status_a, _, final_a, samples = run_batch(field, x0[None], T, config, times, 1, "numpy")
        status, final = int(status_a[0]), final_a[0]
        counts, sums = _hist_from_samples(samples[0], resolution, d)
    weights = counts / counts.sum()
    centres = quadrature_grid(resolution, d) + 0.5 / resolution
    hit = counts > 0
    centroids = centres.copy()
    centroids[hit] = sums[hit] / counts[hit, None]
    return OccupationMeasure(weights, centroids, resolution, d, x0.copy(), float(T),
                             np.asarray(final, dtype=float), status == K.STATUS_STALLED)


def dirac_measure(point, resolution=64):
    """Occupation measure of an equilibrium: all mass in the cell of ``point``."""
    _, frac = split(point)
    d = frac.size
    cell = np.minimum((frac * resolution).astype(np.int64), resolution - 1)
    weights = np.zeros(resolution ** d)
    idx = np.ravel_multi_index(tuple(cell), (resolution,) * d)
    weights[idx] = 1.0
    centroids = quadrature_grid(resolution, d) + 0.5 / resolution
    centroids[idx] = frac
    return OccupationMeasure(weights, centroids, resolution, d, frac.copy(), np.inf,
                             frac.copy())


def merge(measures):
    """Time-weighted union of occupation measures on the same grid."""
    first = measures[0]
    if any(m.resolution != first.resolution or m.dimension != first.dimension
           for m in measures):
        raise ValueError("measures live on different grids")
    total_T = sum(m.T for m in measures)
    w = sum(m.weights * (m.T / total_T) for m in measures)
    num = sum((m.weights * m.T / total_T)[:, None] * m.centroids for m in measures)
    centroids = first.cell_centres()
    hit = w > 0
    centroids[hit] = num[hit] / w[hit, None]
    return OccupationMeasure(w, centroids, first.resolution, first.dimension,
                             first.x0, total_T, first.endpoint)


def trig_frequencies(d, K_max):
    """Frequencies 0 < |kappa|_inf <= K, one of each +-kappa pair."""
    out = []
    for kappa in itertools.product(range(-K_max, K_max + 1), repeat=d):
        nz = [k for k in kappa if k != 0]
        if nz and nz[0] > 0:
            out.append(kappa)
    return out


def _psi_grad(kappa, kind):
    k = np.asarray(kappa, dtype=float)

    def grad(x):
        ph = TWO_PI * (x @ k)
        s = -np.sin(ph) if kind == "cos" else np.cos(ph)
        return TWO_PI * s[..., None] * k

    return grad


@dataclass
class DivCurlReport:
    residuals: dict
    max_residual: float
    decay_bound: float
    discretization_bound: float
    freq_cutoff: int

    def to_dict(self):
        return {"residuals": self.residuals, "max_residual": self.max_residual,
                "decay_bound": self.decay_bound,
                "discretization_bound": self.discretization_bound,
                "freq_cutoff": self.freq_cutoff}

    def to_json(self, path):
        write_json(self.to_dict(), path)


def divcurl_residual(field, measure, freq_cutoff=5):
    """|integral of b . grad(psi) d mu| for every trig test function psi.

    For an occupation measure over [0, T] the exact value is the telescoping
    term (psi(X(T)) - psi(x0)) / T, bounded by ``decay_bound = 2 max|psi| / T``;
    the histogram quadrature adds an error controlled by
    ``discretization_bound`` = max |grad(b . grad psi)| * cell diameter,
    estimated on the visited cells.
    """
    if freq_cutoff < 1:
        raise ValueError("freq_cutoff must be >= 1")
    d = field.dimension
    if measure.dimension != d:
        raise ValueError("measure and field live in different dimensions")
    residuals = {}
    disc = 0.0
    occupation = isinstance(measure, OccupationMeasure)
    if occupation:
        idx = measure.support
        pts = measure.centroids[idx]
        w = measure.weights[idx]
        b = field.evaluate(pts)
        cell_diam = np.sqrt(d) / measure.resolution
        hstep = 1e-6
    for kappa in trig_frequencies(d, freq_cutoff):
        for kind in ("cos", "sin"):
            g = _psi_grad(kappa, kind)
            label = f"{kind}({','.join(str(k) for k in kappa)})"
            if occupation:
                val = float(np.dot(w, np.einsum("nd,nd->n", b, g(pts))))
                slope = 0.0
                for i in range(d):
                    e = np.zeros(d)
                    e[i] = hstep
                    fp = np.einsum("nd,nd->n", field.evaluate(pts + e), g(pts + e))
                    fm = np.einsum("nd,nd->n", field.evaluate(pts - e), g(pts - e))
                    slope += ((fp - fm) / (2 * hstep)) ** 2
                disc = max(disc, float(np.sqrt(slope).max()) * cell_diam)
            else:
                val = measure.integrate_flux(field, g)
            residuals[label] = abs(val)
    decay = 2.0 / measure.T if occupation and np.isfinite(measure.T) else 0.0
    return DivCurlReport(residuals, max(residuals.values()), decay, disc, freq_cutoff)


def mean_under_measure(field, measure):
    """Integral of b against the measure."""
    if isinstance(measure, OccupationMeasure):
        idx = measure.support
        return measure.weights[idx] @ field.evaluate(measure.centroids[idx])
    return np.array([measure.integrate_flux(field, lambda x, i=i: np.eye(field.dimension)[i]
                                            * np.ones(x.shape))
                     for i in range(field.dimension)])
