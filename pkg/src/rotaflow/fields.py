"""Catalog of periodic vector fields b = rho * Phi and periodic quadrature.

Every catalog entry carries closed-form derivatives so that finite-difference
checks and divergence tests never rely on automatic differentiation.  Scalar
and vector fields are vectorised callables: a scalar field maps points of
shape (..., d) to (...), a vector field maps (..., d) to (..., d).
"""
from dataclasses import dataclass, field as dc_field
import math
from typing import Callable, Optional

import numpy as np

from . import _kernels as K
from ._vectorized import eval_catalog
from .torus import TorusPoint

SQRT2 = math.sqrt(2.0)
PI = math.pi
TWO_PI = 2.0 * math.pi

EPS_SING = 1e-12
REFINE_LEVELS = (64, 128, 256, 512, 1024, 2048)
DIVERGENCE_GROWTH = 0.05
MAX_REFINE_POINTS = 2 ** 23


class CatalogError(ValueError):
    """Unknown catalog name or invalid parameters."""


def rotate_perp(v):
    """The -pi/2 rotation: (v1, v2) -> (v2, -v1)."""
    v = np.asarray(v, dtype=float)
    return np.array([v[1], -v[0]])


@dataclass(frozen=True, eq=False)
class FieldSpec:
    """A Z^d-periodic C^1 vector field, optionally factorised as b = rho * Phi.

    ``kind``/``kernel_params``/``modes``/``cos_coef``/``sin_coef`` address
    the compiled kernels; ``kind is None`` marks a Python-only field that
    is integrated by the numpy engine.
    """

    name: str
    dimension: int
    params: dict
    kind: Optional[int] = None
    kernel_params: np.ndarray = dc_field(default_factory=lambda: np.zeros(1))
    modes: np.ndarray = dc_field(default_factory=lambda: np.zeros((0, 2), dtype=np.int64))
    cos_coef: np.ndarray = dc_field(default_factory=lambda: np.zeros((2, 0)))
    sin_coef: np.ndarray = dc_field(default_factory=lambda: np.zeros((2, 0)))
    python_evaluate: Optional[Callable] = None
    rho: Optional[Callable] = None
    phi: Optional[Callable] = None
    invariant_density: Optional[Callable] = None
    zero_set: tuple = ()
    divergence: Optional[Callable] = None
    scalar_fields: dict = dc_field(default_factory=dict)
    flags: tuple = ()

    def __post_init__(self):
        if self.kind is None and self.python_evaluate is None:
            raise CatalogError("a field needs either a kernel kind or a Python evaluator")

    @property
    def has_kernel(self):
        return self.kind is not None

    @property
    def kernel_args(self):
        return (self.kind, self.kernel_params, self.modes, self.cos_coef, self.sin_coef)

    @property
    def factorization(self):
        if self.rho is None or self.phi is None:
            return None
        return self.rho, self.phi

    def evaluate(self, x):
        x = np.asarray(x, dtype=float)
        if x.shape[-1] != self.dimension:
            raise ValueError(f"{self.name} lives in dimension {self.dimension}, got points of "
                             f"shape {x.shape}")
        if self.kind is None:
            return np.asarray(self.python_evaluate(x), dtype=float)
        return eval_catalog(self.kind, self.kernel_params, self.modes,
                            self.cos_coef, self.sin_coef, x)

    __call__ = evaluate

    def max_speed(self, nodes=128):
        pts = quadrature_grid(nodes, self.dimension)
        return float(np.linalg.norm(self.evaluate(pts), axis=-1).max())

    def zero_points(self):
        return np.array([z.coords for z in self.zero_set]).reshape(-1, self.dimension)


@dataclass(frozen=True)
class MeanReport:
    arithmetic: float
    harmonic: float
    quadrature_nodes: int
    singular_flag: bool
    # |extrapolated - finest| of 1/harmonic, relative; 0 when plain quadrature converged
    error_estimate: float = 0.0


# ----------------------------------------------------------------------------
# quadrature


def quadrature_grid(nodes, d):
    """Equispaced periodic nodes k/nodes, shape (nodes**d, d)."""
    axis = np.arange(nodes) / nodes
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)


def _values(f, nodes, d):
    return np.asarray(f(quadrature_grid(nodes, d)), dtype=float).reshape(-1)


def periodic_mean(f, nodes=64, d=2):
    """Mean of a periodic scalar field by the periodic trapezoidal rule."""
    if nodes < 2:
        raise ValueError("need at least 2 nodes per axis")
    return float(np.mean(_values(f, nodes, d)))


def _inverse_mean(vals, eps_sing):
    keep = vals >= eps_sing
    return float(np.sum(1.0 / vals[keep]) / vals.size), bool((~keep).any())


def _aitken(seq):
    if len(seq) < 3:
        return seq[-1]
    d1 = seq[-2] - seq[-3]
    d2 = seq[-1] - seq[-2]
    if d1 == 0.0 or d1 * d2 <= 0.0 or abs(d2) >= abs(d1):
        return seq[-1]
    r = d2 / d1
    return seq[-1] + d2 * r / (1.0 - r)


def harmonic_mean(f, nodes=64, singularity_policy="auto", d=2, eps_sing=EPS_SING):
    """Harmonic mean (integral of 1/f)^-1 of a non-negative periodic field.

    ``singularity_policy``:

    ``"auto"``   plain quadrature when ``f`` stays away from zero and the
                 rule has converged, otherwise node-doubling refinement;
    ``"refine"`` always refine;
    ``"none"``   plain quadrature at ``nodes``, rejecting zeros.

    Refinement integrates 1/f on 64..2048 nodes per axis, skipping nodes
    where f < eps_sing.  If the integral grows by more than 5% per doubling
    at the last two levels, 1/f is declared non-integrable and the harmonic
    mean is 0.  Otherwise the sequence is Aitken-extrapolated and
    ``error_estimate`` records the size of the extrapolation step; it grows
    when f dips close to zero on a scale finer than the finest grid.
    """
    vals = _values(f, nodes, d)
    if np.any(vals < -1e-14):
        raise ValueError("harmonic mean of a function taking negative values")
    vals = np.maximum(vals, 0.0)
    if singularity_policy not in ("auto", "refine", "none"):
        raise ValueError(f"unknown singularity policy {singularity_policy!r}")

    if singularity_policy == "none":
        if vals.min() < eps_sing:
            raise ValueError("function vanishes on the quadrature grid")
        return MeanReport(float(vals.mean()), float(1.0 / np.mean(1.0 / vals)), nodes, False)

    if singularity_policy == "auto" and vals.min() >= eps_sing:
        inv1 = float(np.mean(1.0 / vals))
        vals2 = np.maximum(_values(f, 2 * nodes, d), 0.0)
        if vals2.min() >= eps_sing:
            inv2 = float(np.mean(1.0 / vals2))
            if abs(inv2 - inv1) <= 1e-12 * inv2:
                return MeanReport(float(vals2.mean()), 1.0 / inv2, 2 * nodes, False)

    levels = [n for n in REFINE_LEVELS if n ** d <= MAX_REFINE_POINTS]
    if d == 1:
        levels = [n * 16 for n in REFINE_LEVELS]
    seq = []
    arith = 0.0
    for n in levels:
        v = np.maximum(_values(f, n, d), 0.0)
        arith = float(v.mean())
        seq.append(_inverse_mean(v, eps_sing)[0])
    growth = [(seq[i] - seq[i - 1]) / seq[i - 1] for i in range(1, len(seq)) if seq[i - 1] > 0]
    if len(growth) >= 2 and growth[-1] > DIVERGENCE_GROWTH and growth[-2] > DIVERGENCE_GROWTH:
        return MeanReport(arith, 0.0, levels[-1], True)
    inv = _aitken(seq)
    err = abs(inv - seq[-1]) / inv if inv > 0 else math.inf
    return MeanReport(arith, 1.0 / inv if inv > 0 else math.inf, levels[-1], False, err)


def line_harmonic_mean(a, direction=0, offset=None, nodes=64, singularity_policy="auto", d=2):
    """Harmonic mean of ``a`` restricted to the line t -> offset + t e_direction."""
    if offset is None:
        offset = np.zeros(d)
    off = offset.coords if isinstance(offset, TorusPoint) else np.asarray(offset, dtype=float)
    d = off.size

    def restricted(t):
        t = np.asarray(t, dtype=float)[..., 0]
        pts = np.broadcast_to(off, t.shape + (d,)).copy()
        pts[..., direction] = pts[..., direction] + t
        return a(pts)

    return harmonic_mean(restricted, nodes=nodes, singularity_policy=singularity_policy, d=1)


# ----------------------------------------------------------------------------
# closed-form pieces of the SINSQ family


def _sinsq_u(x, c0, c1, c2):
    return (c0 + c1 * np.sin(PI * x[..., 0]) ** 2 + c2 * np.sin(PI * x[..., 1]) ** 2)


def _sinsq_du(x, c1, c2):
    return np.stack([c1 * PI * np.sin(TWO_PI * x[..., 0]),
                     c2 * PI * np.sin(TWO_PI * x[..., 1])], axis=-1)


def _power(u, alpha):
    if alpha == 1.0:
        return u
    return np.where(u > 0.0, np.abs(u) ** alpha, 0.0)


def _power_grad(u, du, alpha):
    if alpha == 1.0:
        return du
    with np.errstate(divide="ignore", invalid="ignore"):
        coef = np.where(u > 0.0, alpha * np.abs(u) ** (alpha - 1.0), 0.0)
    return coef[..., None] * du


def _sinsq_field(name, params, c0, c1, c2, alpha, w, amp=0.0, rho_is_power=True,
                 zero_set=(), flags=()):
    """b = u^alpha * (1 + amp sin(2 pi x2)) * w with the factorisation
    rho = u^alpha, Phi = (1 + amp sin(2 pi x2)) w and density sigma = 1/(1 + amp sin)."""
    w = np.asarray(w, dtype=float)
    kp = np.array([c0, c1, c2, alpha, amp, w[0], w[1]], dtype=float)

    def rho(x):
        return _power(_sinsq_u(x, c0, c1, c2), alpha)

    def rho_grad(x):
        return _power_grad(_sinsq_u(x, c0, c1, c2), _sinsq_du(x, c1, c2), alpha)

    def amp_fn(x):
        return 1.0 + amp * np.sin(TWO_PI * x[..., 1])

    def amp_grad(x):
        g = np.zeros(x.shape)
        g[..., 1] = TWO_PI * amp * np.cos(TWO_PI * x[..., 1])
        return g

    def phi(x):
        return amp_fn(x)[..., None] * w

    def sigma(x):
        return 1.0 / amp_fn(x)

    def sigma_grad(x):
        return -amp_grad(x) / amp_fn(x)[..., None] ** 2

    def divergence(x):
        return (rho_grad(x) @ w) * amp_fn(x) + rho(x) * (amp_grad(x) @ w)

    return FieldSpec(
        name=name, dimension=2, params=params, kind=K.KIND_SINSQ, kernel_params=kp,
        rho=rho, phi=phi, invariant_density=sigma, zero_set=tuple(zero_set),
        divergence=divergence,
        scalar_fields={"rho": (rho, rho_grad), "sigma": (sigma, sigma_grad)},
        flags=tuple(flags))


# ----------------------------------------------------------------------------
# catalog builders


def _vec(value, name, length=None):
    arr = np.atleast_1d(np.asarray(value, dtype=float))
    if arr.ndim != 1 or (length is not None and arr.size != length):
        raise CatalogError(f"parameter {name!r} must be a vector of length {length}")
    if not np.all(np.isfinite(arr)):
        raise CatalogError(f"parameter {name!r} must be finite")
    return arr


def _positive_int(value, name):
    n = int(value)
    if n != value or n < 1:
        raise CatalogError(f"parameter {name!r} must be a positive integer")
    return n


def _build_constant(zeta=(1.0, SQRT2)):
    z = _vec(zeta, "zeta")
    d = z.size

    def phi(x):
        return np.broadcast_to(z, np.shape(x)).copy()

    def one(x):
        return np.ones(np.shape(x)[:-1])

    def zero_grad(x):
        return np.zeros(np.shape(x))

    return FieldSpec(
        name="constant", dimension=d, params={"zeta": z.tolist()}, kind=K.KIND_CONSTANT,
        kernel_params=z.copy(), rho=one, phi=phi, invariant_density=one,
        divergence=lambda x: np.zeros(np.shape(x)[:-1]),
        scalar_fields={"rho": (one, zero_grad)},
        zero_set=(TorusPoint(np.zeros(d)),) if not np.any(z) else ())


def _build_shear_41():
    return _sinsq_field("shear_41", {}, 0.0, 1.0, 1.0, 1.0, (1.0, 0.0),
                        zero_set=[TorusPoint((0.0, 0.0))])


def _build_shear_41_perturbed(n=16, gamma=None):
    n = _positive_int(n, "n")
    gamma = SQRT2 / n if gamma is None else float(gamma)
    return _sinsq_field("shear_41_perturbed", {"n": n, "gamma": gamma},
                        1.0 / n, 1.0, 1.0, 1.0, (1.0, gamma))


def _alpha_flags(alpha):
    if alpha <= 0.0:
        raise CatalogError("alpha must be positive")
    flags = []
    if alpha <= 0.5:
        flags.append("alpha<=1/2: rho is not C^1 at its zero")
    elif alpha >= 1.0:
        flags.append("alpha>=1: harmonic mean of rho vanishes (null-asymptotics branch)")
    return flags


def _build_vanishing_segment_42(alpha=0.75, xi=(1.0, SQRT2)):
    alpha = float(alpha)
    xi = _vec(xi, "xi", 2)
    return _sinsq_field("vanishing_segment_42", {"alpha": alpha, "xi": xi.tolist()},
                        0.0, 1.0, 1.0, alpha, rotate_perp(xi),
                        zero_set=[TorusPoint((0.0, 0.0))], flags=_alpha_flags(alpha))


def _build_vanishing_segment_42_perturbed(alpha=0.75, xi=(1.0, SQRT2), n=16):
    alpha = float(alpha)
    xi = _vec(xi, "xi", 2)
    n = _positive_int(n, "n")
    return _sinsq_field("vanishing_segment_42_perturbed",
                        {"alpha": alpha, "xi": xi.tolist(), "n": n},
                        1.0 / n, 1.0, 1.0, alpha, rotate_perp(xi), flags=_alpha_flags(alpha))


def _build_current_35(rho_offset=1.5, a_amp=0.0, xi=(1.0, SQRT2)):
    rho_offset = float(rho_offset)
    a_amp = float(a_amp)
    if rho_offset < 0.0:
        raise CatalogError("rho_offset must be non-negative")
    if abs(a_amp) >= 1.0:
        raise CatalogError("|a_amp| must be < 1 so that a stays positive")
    xi = _vec(xi, "xi", 2)
    zeros = [TorusPoint((0.0, 0.5)), TorusPoint((0.0, 0.0))] if rho_offset == 0.0 else []
    return _sinsq_field("current_35", {"rho_offset": rho_offset, "a_amp": a_amp,
                                       "xi": xi.tolist()},
                        rho_offset, 1.0, 0.0, 1.0, rotate_perp(xi), amp=a_amp,
                        zero_set=zeros)


def _build_determinant_shear_43(f0=0.25, beta=0.5, zero_samples=64):
    """d = 2 instance: u2(x2) = x2 + beta sin(2 pi x2) / (2 pi), f = f0 + sin^2(pi x1).

    Then Delta = u2' = 1 + beta cos(2 pi x2), Phi = R_perp grad u2 = Delta e1,
    rho = f / Delta and b = f e1.
    """
    f0 = float(f0)
    beta = float(beta)
    if f0 < 0.0:
        raise CatalogError("f0 must be non-negative")
    if abs(beta) >= 1.0:
        raise CatalogError("|beta| must be < 1 so that det(grad U) > 0")

    def f(x):
        return f0 + np.sin(PI * x[..., 0]) ** 2

    def delta(x):
        return 1.0 + beta * np.cos(TWO_PI * x[..., 1])

    def rho(x):
        return f(x) / delta(x)

    def rho_grad(x):
        fp = PI * np.sin(TWO_PI * x[..., 0])
        dp = -TWO_PI * beta * np.sin(TWO_PI * x[..., 1])
        return np.stack([fp / delta(x), -f(x) * dp / delta(x) ** 2], axis=-1)

    def phi(x):
        out = np.zeros(np.shape(x))
        out[..., 0] = delta(x)
        return out

    def one(x):
        return np.ones(np.shape(x)[:-1])

    zeros = []
    if f0 == 0.0:
        zeros = [TorusPoint((0.0, k / zero_samples)) for k in range(zero_samples)]
    flags = ["zero set is the circle x1 = 0, sampled"] if f0 == 0.0 else []
    return FieldSpec(
        name="determinant_shear_43", dimension=2, params={"f0": f0, "beta": beta},
        kind=K.KIND_SINSQ, kernel_params=np.array([f0, 1.0, 0.0, 1.0, 0.0, 1.0, 0.0]),
        rho=rho, phi=phi, invariant_density=one, zero_set=tuple(zeros),
        divergence=lambda x: PI * np.sin(TWO_PI * x[..., 0]),
        scalar_fields={"rho": (rho, rho_grad)}, flags=tuple(flags))


def _build_gradient_flow(A=((1.0, 0.0), (0.0, 1.0))):
    A = np.asarray(A, dtype=float).reshape(2, 2)
    if not np.all(np.isfinite(A)):
        raise CatalogError("A must be finite")

    def v(x):
        return np.sin(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1])

    def grad_v(x):
        return TWO_PI * np.stack([np.cos(TWO_PI * x[..., 0]) * np.sin(TWO_PI * x[..., 1]),
                                  np.sin(TWO_PI * x[..., 0]) * np.cos(TWO_PI * x[..., 1])],
                                 axis=-1)

    def divergence(x):
        s = v(x)
        c = np.cos(TWO_PI * x[..., 0]) * np.cos(TWO_PI * x[..., 1])
        k2 = TWO_PI ** 2
        return -k2 * s * (A[0, 0] + A[1, 1]) + k2 * c * (A[0, 1] + A[1, 0])

    crit = [(0.0, 0.0), (0.0, 0.5), (0.5, 0.0), (0.5, 0.5),
            (0.25, 0.25), (0.25, 0.75), (0.75, 0.25), (0.75, 0.75)]
    return FieldSpec(
        name="gradient_flow", dimension=2, params={"A": A.tolist()}, kind=K.KIND_GRADIENT,
        kernel_params=A.ravel().copy(), divergence=divergence,
        scalar_fields={"potential": (v, grad_v)},
        zero_set=tuple(TorusPoint(c) for c in crit) if abs(np.linalg.det(A)) > 0 else ())


def _build_conductivity(sigma="generic", amplitude=0.5, resolution=32, lam=(1.0, SQRT2),
                        tol=1e-10):
    from . import elliptic

    spec = elliptic.conductivity(sigma, amplitude=amplitude, resolution=int(resolution))
    solution = elliptic.solve_cell(spec, tol=float(tol))
    out = elliptic.electric_field(solution, _vec(lam, "lam", 2))
    return out


def _build_custom(evaluate=None, dimension=None, rho=None, phi=None,
                  invariant_density=None, zero_set=(), name="custom"):
    if evaluate is None or dimension is None:
        raise CatalogError("custom fields need 'evaluate' and 'dimension'")
    return FieldSpec(
        name=name, dimension=int(dimension), params={"dimension": int(dimension)},
        python_evaluate=evaluate, rho=rho, phi=phi, invariant_density=invariant_density,
        zero_set=tuple(z if isinstance(z, TorusPoint) else TorusPoint(z) for z in zero_set))


CATALOG = {
    "constant": (_build_constant, "b = zeta everywhere", {"zeta": [1.0, SQRT2]}),
    "shear_41": (_build_shear_41, "b = (sin^2(pi x1) + sin^2(pi x2)) e1", {}),
    "shear_41_perturbed": (_build_shear_41_perturbed,
                           "b_n = (a + 1/n)(e1 + gamma_n e2), gamma_n = sqrt(2)/n",
                           {"n": 16, "gamma": None}),
    "vanishing_segment_42": (_build_vanishing_segment_42,
                             "b = (sin^2(pi x1) + sin^2(pi x2))^alpha R_perp xi",
                             {"alpha": 0.75, "xi": [1.0, SQRT2]}),
    "vanishing_segment_42_perturbed": (_build_vanishing_segment_42_perturbed,
                                       "b_n = (sin^2 + sin^2 + 1/n)^alpha R_perp xi",
                                       {"alpha": 0.75, "xi": [1.0, SQRT2], "n": 16}),
    "determinant_shear_43": (_build_determinant_shear_43,
                             "b = (f0 + sin^2(pi x1)) e1 with rho = f/Delta, "
                             "Delta = 1 + beta cos(2 pi x2)",
                             {"f0": 0.25, "beta": 0.5}),
    "gradient_flow": (_build_gradient_flow, "b = A grad(sin(2 pi x1) sin(2 pi x2))",
                      {"A": [[1.0, 0.0], [0.0, 1.0]]}),
    "current_35": (_build_current_35,
                   "b = (rho_offset + sin^2(pi x1)) (1 + a_amp sin(2 pi x2)) R_perp xi",
                   {"rho_offset": 1.5, "a_amp": 0.0, "xi": [1.0, SQRT2]}),
    "conductivity": (_build_conductivity,
                     "electric field DU lambda of a 2D periodic conductivity cell problem",
                     {"sigma": "generic", "amplitude": 0.5, "resolution": 32,
                      "lam": [1.0, SQRT2], "tol": 1e-10}),
    "custom": (_build_custom, "user-supplied vectorised callable",
               {"evaluate": None, "dimension": None}),
}


def catalog_build(name, params=None):
    """Build a catalog field by name with keyword parameters."""
    params = dict(params or {})
    try:
        builder, _, defaults = CATALOG[name]
    except KeyError:
        raise CatalogError(f"unknown field {name!r}; known: {sorted(CATALOG)}") from None
    unknown = set(params) - set(defaults) - ({"rho", "phi", "invariant_density", "zero_set",
                                              "name"} if name == "custom" else set())
    if unknown:
        raise CatalogError(f"unknown parameters for {name}: {sorted(unknown)}")
    return builder(**params)


def catalog_entries():
    """(name, description, defaults) for every catalog entry."""
    return [(name, desc, dict(defaults)) for name, (_, desc, defaults) in CATALOG.items()]


# ----------------------------------------------------------------------------
# closed-form rotation data


def reference_rotation(field):
    """Rotation set predicted by the closed-form theory for catalog fields.

    Returns ``(shape, zeta)`` with shape ``"singleton"`` or ``"segment"``
    (meaning [0, zeta]), or ``None`` when no formula applies.
    """
    p = field.params
    name = field.name
    if name == "constant":
        return "singleton", np.asarray(p["zeta"], dtype=float)
    if name == "shear_41":
        row = line_harmonic_mean(field.rho, 0, (0.0, 0.5)).harmonic
        return "segment", np.array([row, 0.0])
    if name == "shear_41_perturbed":
        h = harmonic_mean(field.rho).harmonic
        return "singleton", h * np.array([1.0, p["gamma"]])
    if name in ("vanishing_segment_42", "vanishing_segment_42_perturbed"):
        rep = harmonic_mean(field.rho)
        zeta = rep.harmonic * rotate_perp(p["xi"])
        if name.endswith("perturbed"):
            return "singleton", zeta
        return ("singleton", np.zeros(2)) if rep.harmonic == 0.0 else ("segment", zeta)
    if name == "current_35":
        ar = lambda x: field.rho(x) / field.invariant_density(x)  # noqa: E731
        rep = harmonic_mean(ar)
        zeta = rep.harmonic * rotate_perp(p["xi"])
        if p["rho_offset"] > 0.0 or rep.harmonic == 0.0:
            return "singleton", zeta
        return "segment", zeta
    if name == "determinant_shear_43":
        rep = harmonic_mean(field.rho)
        return "singleton", np.array([rep.harmonic, 0.0])
    if name == "gradient_flow":
        return "singleton", np.zeros(2)
    if name == "conductivity":
        return "singleton", np.asarray(p["A_star_lambda"], dtype=float)
    return None
