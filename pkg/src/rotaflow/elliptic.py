"""Periodic conductivity cell problem in 2D by Fourier collocation.

For each unit vector e_j the corrector phi_j solves

    -div(sigma (e_j + grad phi_j)) = 0  on the unit torus,

so that U(y) = y + (phi_1, phi_2) has gradient DU with columns
e_j + grad phi_j and A* = integral of sigma DU.  Derivatives are spectral
with the Nyquist mode dropped, which keeps the discrete operator
-div(sigma grad .) symmetric; it is inverted by preconditioned conjugate
gradients with the inverse Laplacian as preconditioner.
"""
from dataclasses import dataclass
import math
from typing import Callable, Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, cg

from . import _kernels as K
from ._io import write_csv, write_json
from .fields import FieldSpec, quadrature_grid

TWO_PI = 2.0 * math.pi
PRUNE = 1e-14


@dataclass(frozen=True, eq=False)
class ConductivitySpec:
    """Positive periodic conductivity normalised to unit mean on the grid."""

    sigma: Callable
    resolution: int = 32
    name: str = "custom"
    params: Optional[dict] = None
    sigma_grad: Optional[Callable] = None

    def __post_init__(self):
        n = self.resolution
        if n < 16 or n & (n - 1):
            raise ValueError("resolution must be a power of two >= 16")
        vals = self.grid_values()
        if vals.min() <= 0.0:
            raise ValueError("conductivity must be positive on the grid")
        if abs(vals.mean() - 1.0) >= 1e-10:
            raise ValueError(f"conductivity must have unit mean, got {vals.mean():.17g}")

    def grid_points(self):
        return quadrature_grid(self.resolution, 2).reshape(self.resolution, self.resolution, 2)

    def grid_values(self):
        return np.asarray(self.sigma(self.grid_points()), dtype=float)


def conductivity(kind="generic", amplitude=0.5, resolution=32, sigma=None):
    """Catalog conductivities, each rescaled to unit mean.

    ``uniform``  sigma = 1
    ``laminate`` sigma = 1 + amplitude sin(2 pi x1)
    ``generic``  sigma = 1 + amplitude sin(2 pi x1) sin(2 pi x2)
    ``custom``   the callable ``sigma``, divided by its grid mean
    """
    a = float(amplitude)
    if kind != "custom" and kind != "uniform" and not 0.0 <= abs(a) < 1.0:
        raise ValueError("|amplitude| must be < 1")
    if kind == "uniform":
        return ConductivitySpec(lambda x: np.ones(np.shape(x)[:-1]), resolution, "uniform",
                                {}, lambda x: np.zeros(np.shape(x)))
    if kind == "laminate":
        def sig(x):
            return 1.0 + a * np.sin(TWO_PI * x[..., 0])

        def grad(x):
            g = np.zeros(np.shape(x))
            g[..., 0] = TWO_PI * a * np.cos(TWO_PI * x[..., 0])
            return g

        return ConductivitySpec(sig, resolution, "laminate", {"amplitude": a}, grad)
    if kind == "generic":
        def sig(x):
            return 1.0 + a * np.sin(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1])

        def grad(x):
            s1, c1 = np.sin(TWO_PI * x[..., 0]), np.cos(TWO_PI * x[..., 0])
            s2, c2 = np.sin(TWO_PI * x[..., 1]), np.cos(TWO_PI * x[..., 1])
            return TWO_PI * a * np.stack([c1 * s2, s1 * c2], axis=-1)

        return ConductivitySpec(sig, resolution, "generic", {"amplitude": a}, grad)
    if kind == "custom":
        if sigma is None:
            raise ValueError("custom conductivity needs a callable sigma")
        pts = quadrature_grid(resolution, 2)
        mean = float(np.mean(sigma(pts)))
        return ConductivitySpec(lambda x: sigma(x) / mean, resolution, "custom", {})
    raise ValueError(f"unknown conductivity {kind!r}")


def _wavenumbers(n):
    k = np.fft.fftfreq(n, 1.0 / n)
    k[n // 2] = 0.0  # drop the Nyquist derivative
    return k


class _Spectral:
    def __init__(self, n):
        self.n = n
        k = _wavenumbers(n)
        self.ik = (1j * TWO_PI * k[:, None], 1j * TWO_PI * k[None, :])
        k2 = (TWO_PI ** 2) * (k[:, None] ** 2 + k[None, :] ** 2)
        with np.errstate(divide="ignore"):
            self.inv_lap = np.where(k2 > 0, 1.0 / k2, 0.0)

    def grad(self, f):
        fh = np.fft.fft2(f)
        return [np.fft.ifft2(ik * fh).real for ik in self.ik]

    def div(self, g):
        return sum(np.fft.ifft2(ik * np.fft.fft2(gi)).real for ik, gi in zip(self.ik, g))


@dataclass
class CellSolution:
    spec: ConductivitySpec
    grad_u: np.ndarray  # DU on the grid, shape (N, N, 2, 2), DU[..., i, j] = d_i U_j
    A_star: np.ndarray
    residual: float
    iterations: int
    converged: bool
    tol: float

    def to_dict(self):
        return {"A_star": self.A_star, "residual": self.residual,
                "iterations": self.iterations, "converged": self.converged,
                "tol": self.tol, "resolution": self.spec.resolution,
                "conductivity": self.spec.name, "params": self.spec.params or {}}

    def to_json(self, path):
        write_json(self.to_dict(), path)

    def to_csv(self, path):
        pts = self.spec.grid_points().reshape(-1, 2)
        du = self.grad_u.reshape(-1, 4)
        write_csv(path, ["x_1", "x_2", "DU_11", "DU_12", "DU_21", "DU_22"],
                  [[float(v) for v in p] + [float(v) for v in row] for p, row in zip(pts, du)])


def solve_cell(spec, tol=1e-10, max_iter=None):
    """Correctors for both unit vectors and the homogenized matrix A*.

    ``residual`` is the largest relative residual |L phi - f| / |f| over
    the two problems (0 when the right-hand side vanishes).
    """
    n = spec.resolution
    if max_iter is None:
        max_iter = 10 * n
    sp = _Spectral(n)
    sig = spec.grid_values()
    scale = float(sig.mean())

    def apply(v):
        g = sp.grad(v.reshape(n, n))
        return -sp.div([sig * gi for gi in g]).ravel()

    def precond(v):
        return (np.fft.ifft2(sp.inv_lap * np.fft.fft2(v.reshape(n, n))).real / scale).ravel()

    L = LinearOperator((n * n, n * n), matvec=apply, dtype=float)
    M = LinearOperator((n * n, n * n), matvec=precond, dtype=float)
    du = np.zeros((n, n, 2, 2))
    worst = 0.0
    iters = 0
    converged = True
    for j in range(2):
        flux = [np.zeros((n, n)), np.zeros((n, n))]
        flux[j] = sig
        rhs = sp.div(flux).ravel()
        norm = float(np.linalg.norm(rhs))
        if norm <= 1e-14:
            phi = np.zeros(n * n)
            res = 0.0
        else:
            count = [0]

            def cb(_):
                count[0] += 1

            phi, info = cg(L, rhs, rtol=tol, atol=0.0, maxiter=max_iter, M=M, callback=cb)
            res = float(np.linalg.norm(apply(phi) - rhs) / norm)
            iters = max(iters, count[0])
            converged = converged and info == 0 and res <= tol * 10
        worst = max(worst, res)
        g = sp.grad(phi.reshape(n, n))
        for i in range(2):
            du[..., i, j] = (1.0 if i == j else 0.0) + g[i]
    A = np.einsum("xy,xyij->ij", sig, du) / (n * n)
    return CellSolution(spec, du, A, worst, iters, converged, tol)


def _half_plane_modes(n):
    k = np.fft.fftfreq(n, 1.0 / n).astype(np.int64)
    out = []
    for a in range(n):
        for b in range(n):
            k1, k2 = int(k[a]), int(k[b])
            if abs(k1) == n // 2 or abs(k2) == n // 2:
                continue
            if k1 > 0 or (k1 == 0 and k2 >= 0):
                out.append((a, b, k1, k2))
    return out


def spectral_coefficients(values, prune=PRUNE):
    """Real Fourier expansion of grid fields, values shape (N, N, m).

    Returns ``(modes, cos_coef, sin_coef)`` with
    f_c(x) = sum_m cos_coef[c, m] cos(2 pi k_m.x) + sin_coef[c, m] sin(2 pi k_m.x),
    dropping modes whose coefficients are below ``prune`` times the largest.
    """
    n = values.shape[0]
    m = values.shape[-1]
    hat = np.stack([np.fft.fft2(values[..., c]) / (n * n) for c in range(m)])
    modes, cc, ss = [], [], []
    for a, b, k1, k2 in _half_plane_modes(n):
        c = hat[:, a, b]
        w = 1.0 if (k1 == 0 and k2 == 0) else 2.0
        modes.append((k1, k2))
        cc.append(w * c.real)
        ss.append(-w * c.imag)
    modes = np.array(modes, dtype=np.int64)
    cc = np.array(cc).T
    ss = np.array(ss).T
    size = np.sqrt((cc ** 2 + ss ** 2).sum(axis=0))
    keep = size > prune * size.max()
    return modes[keep], np.ascontiguousarray(cc[:, keep]), np.ascontiguousarray(ss[:, keep])


def electric_field(solution, lam):
    """b_lambda = DU lambda, evaluated anywhere by Fourier summation.

    The conductivity is attached as invariant density.
    """
    lam = np.asarray(lam, dtype=float)
    if lam.shape != (2,) or not np.any(lam):
        raise ValueError("lambda must be a non-zero 2-vector")
    n = solution.spec.resolution
    b_grid = np.einsum("xyij,j->xyi", solution.grad_u, lam)
    modes, cc, ss = spectral_coefficients(b_grid)
    kmax = int(np.abs(modes).max()) if modes.size else 0
    sigma = solution.spec.sigma
    A_lam = solution.A_star @ lam

    def one(x):
        return np.ones(np.shape(x)[:-1])

    def divergence(x):
        ph = TWO_PI * (np.asarray(x, dtype=float) @ modes.T.astype(float))
        c, s = np.cos(ph), np.sin(ph)
        out = 0.0
        for i in range(2):
            kk = TWO_PI * modes[:, i]
            out = out + (-s * kk) @ cc[i] + (c * kk) @ ss[i]
        return out

    scalars = {}
    if solution.spec.sigma_grad is not None:
        scalars["sigma"] = (sigma, solution.spec.sigma_grad)
    field = FieldSpec(
        name="conductivity", dimension=2,
        params={"sigma": solution.spec.name, **(solution.spec.params or {}),
                "resolution": n, "lam": lam.tolist(), "A_star": solution.A_star.tolist(),
                "A_star_lambda": A_lam.tolist(), "cell_residual": solution.residual},
        kind=K.KIND_SPECTRAL, kernel_params=np.array([float(kmax)]),
        modes=modes, cos_coef=cc, sin_coef=ss,
        rho=one, invariant_density=sigma, divergence=divergence, scalar_fields=scalars)
    object.__setattr__(field, "phi", field.evaluate)
    return field


def small_denominators(zeta, kmax=20, threshold=1e-6):
    """Integer vectors 0 < |kappa|_inf <= kmax with |zeta . kappa| < threshold."""
    zeta = np.asarray(zeta, dtype=float)
    r = np.arange(-kmax, kmax + 1)
    grid = np.stack(np.meshgrid(*([r] * zeta.size), indexing="ij"), axis=-1).reshape(-1, zeta.size)
    grid = grid[np.any(grid != 0, axis=1)]
    hits = grid[np.abs(grid @ zeta) < threshold]
    return [tuple(int(v) for v in k) for k in hits]


def min_field_norm(field, nodes=128):
    """Smallest |b| on a grid; exact solutions never vanish in 2D, a
    discretisation may, so the value is reported rather than asserted."""
    pts = quadrature_grid(nodes, 2)
    return float(np.linalg.norm(field.evaluate(pts), axis=1).min())
