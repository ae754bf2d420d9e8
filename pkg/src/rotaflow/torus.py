"""Lattice arithmetic on the flat torus R^d / Z^d.

A point of the torus is stored as its representative in [0, 1)^d.  A point
of the covering space R^d is stored as an exact integer winding plus that
representative, so long integrations never lose the integer part to
floating-point cancellation.
"""
from dataclasses import dataclass
import itertools

import numpy as np

# fractional parts this close to 1 are folded back to 0
WRAP_EPS = 1e-12


def _as_vector(x):
    arr = np.atleast_1d(np.asarray(x, dtype=float))
    if arr.ndim != 1:
        raise ValueError(f"expected a d-vector, got shape {arr.shape}")
    if not np.all(np.isfinite(arr)):
        raise ValueError("non-finite coordinates cannot be projected to the torus")
    return arr


def split(x):
    """Return ``(winding, frac)`` with ``x = winding + frac`` and frac in [0,1)."""
    x = _as_vector(x)
    winding = np.floor(x)
    frac = x - winding
    wrap = frac >= 1.0 - WRAP_EPS
    frac[wrap] = 0.0
    winding[wrap] += 1.0
    return winding.astype(np.int64), frac


@dataclass(frozen=True)
class TorusPoint:
    coords: np.ndarray

    def __post_init__(self):
        c = _as_vector(self.coords)
        if np.any(c < 0.0) or np.any(c >= 1.0):
            raise ValueError(f"torus coordinates must lie in [0,1): {c}")
        object.__setattr__(self, "coords", c)

    @property
    def dimension(self):
        return self.coords.size

    def __eq__(self, other):
        return isinstance(other, TorusPoint) and np.array_equal(self.coords, other.coords)

    def __hash__(self):
        return hash(self.coords.tobytes())


@dataclass(frozen=True)
class LiftedState:
    """A point of R^d together with its torus projection and integer winding."""

    winding: np.ndarray
    base: TorusPoint

    @classmethod
    def from_position(cls, x):
        winding, frac = split(x)
        return cls(winding, TorusPoint(frac))

    @property
    def position(self):
        return self.winding + self.base.coords

    @property
    def dimension(self):
        return self.base.dimension


def project(x):
    """Canonical projection R^d -> [0,1)^d."""
    return TorusPoint(split(x)[1])


def torus_distance(p, q):
    """Euclidean distance on the torus, minimised over lattice offsets."""
    a = p.coords if isinstance(p, TorusPoint) else _as_vector(p)
    b = q.coords if isinstance(q, TorusPoint) else _as_vector(q)
    if a.shape != b.shape:
        raise ValueError("points live on tori of different dimension")
    diff = a - b
    best = np.inf
    for kappa in itertools.product((-1.0, 0.0, 1.0), repeat=a.size):
        best = min(best, float(np.linalg.norm(diff + np.asarray(kappa))))
    return best


def min_image_distances(points, targets):
    """Vectorised torus distance from every row of ``points`` to the nearest target.

    ``points`` has shape (n, d) and ``targets`` shape (m, d), both with
    coordinates in [0,1).  Returns an array of shape (n,).
    """
    points = np.asarray(points, dtype=float)
    targets = np.asarray(targets, dtype=float)
    diff = points[:, None, :] - targets[None, :, :]
    diff -= np.round(diff)
    return np.sqrt((diff ** 2).sum(axis=-1)).min(axis=1)


def uniform_grid(resolution, d, offset=0.5):
    """Cell-centred grid of initial conditions, shape (resolution**d, d).

    Ordering is lexicographic with the first axis slowest.
    """
    axis = (np.arange(resolution) + offset) / resolution
    mesh = np.meshgrid(*([axis] * d), indexing="ij")
    return np.stack([m.ravel() for m in mesh], axis=-1)
