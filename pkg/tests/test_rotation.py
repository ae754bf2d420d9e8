import csv
import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotaflow.fields import catalog_build, rotate_perp
from rotaflow.integrate import IntegratorConfig
from rotaflow.rotation import (RotationEstimate, classify, convex_hull, orbit_distance_report,
                               perturbation_sweep, rotation_set, rotation_vector,
                               rotation_vectors)
from rotaflow.torus import uniform_grid

SQRT2 = np.sqrt(2.0)
# harmonic mean of (sin^2 pi x1 + sin^2 pi x2)^0.75, nested scipy quad
H_ALPHA_075 = 0.5205204808029068
FAST = IntegratorConfig(abs_tol=1e-8, rel_tol=1e-8, max_step=0.5)


def row_speed(x2):
    c = np.sin(np.pi * np.asarray(x2)) ** 2
    return np.sqrt(c * (1 + c))


@pytest.mark.parametrize("T", [1.0, 37.5, 1e3])
def test_constant_rotation_exact(T):
    f = catalog_build("constant", {"zeta": [1.0, 2.0]})
    est = rotation_vector(f, [0.2, 0.9], T)
    assert np.allclose(est.zeta_hat, [1.0, 2.0], atol=1e-9)
    assert est.cauchy_gap < 1e-9
    assert not est.stalled


def test_horizon_validation():
    f = catalog_build("constant")
    with pytest.raises(ValueError):
        rotation_vector(f, [0.0, 0.0], 0.5)


def test_shear_middle_row():
    f = catalog_build("shear_41")
    est = rotation_vector(f, [0.3, 0.5], 1e4)
    assert np.allclose(est.zeta_hat, [SQRT2, 0.0], atol=2e-3)


@settings(max_examples=8)
@given(x=st.tuples(st.floats(0, 1, exclude_max=True), st.floats(0, 1, exclude_max=True)))
def test_gradient_flow_null(x):
    f = catalog_build("gradient_flow")
    est = rotation_vector(f, x, 1e3)
    assert np.linalg.norm(est.zeta_hat) < 1e-2


def test_constant_singleton():
    f = catalog_build("constant")
    rs = rotation_set(f, 4, 100.0)
    assert rs.classification == "singleton"
    assert rs.diameter < 1e-8
    assert np.allclose(rs.zeta, [1.0, SQRT2], atol=1e-9)


def test_shear_rows_and_segment():
    f = catalog_build("shear_41")
    rs = rotation_set(f, 8, 4e3, FAST)
    assert rs.classification == "segment"
    est = [p for p in rs.points if not p.equilibrium]
    for p in est:
        assert abs(p.zeta_hat[0] - row_speed(p.x0[1])) < 5e-3
        assert abs(p.zeta_hat[1]) < 1e-12
    # fastest half-offset row at resolution 8 is x2 = 7/16
    assert abs(rs.zeta[0] - row_speed(7 / 16)) < 5e-3


def test_vanishing_segment_endpoint():
    f = catalog_build("vanishing_segment_42")
    zeta = H_ALPHA_075 * rotate_perp([1.0, SQRT2])
    rs = rotation_set(f, 16, 1e4, IntegratorConfig(abs_tol=1e-6, rel_tol=1e-6, max_step=0.5))
    assert rs.classification == "segment"
    assert np.linalg.norm(rs.zeta - zeta) < 1e-2 * np.linalg.norm(zeta)


def test_segment_estimates_lie_in_hull_of_zero_and_endpoint():
    f = catalog_build("vanishing_segment_42")
    rs = rotation_set(f, 4, 2e3, FAST)
    assert rs.classification == "segment"
    end = rs.zeta
    for z in rs.zetas:
        s = np.clip(z @ end / (end @ end), 0, 1)
        assert np.linalg.norm(z - s * end) <= rs.tol_segment


def test_equilibria_enter_rotation_set():
    f = catalog_build("shear_41")
    rs = rotation_set(f, 2, 100.0, FAST)
    eq = [p for p in rs.points if p.equilibrium]
    assert len(eq) == 1 and not np.any(eq[0].zeta_hat)
    rs2 = rotation_set(f, 2, 100.0, FAST, include_equilibria=False)
    assert not any(p.equilibrium for p in rs2.points)


@pytest.mark.parametrize("name", ["shear_41", "vanishing_segment_42", "gradient_flow",
                                  "current_35", "determinant_shear_43"])
def test_sup_bound(name):
    f = catalog_build(name)
    x0s = uniform_grid(4, 2)
    bound = f.max_speed(512) + 1e-9
    for est in rotation_vectors(f, x0s, 200.0, FAST):
        assert np.linalg.norm(est.zeta_hat) <= bound


def max_gaps(f, Ts=(1e3, 2e3, 4e3)):
    x0s = uniform_grid(6, 2)
    return [max(e.cauchy_gap for e in rotation_vectors(f, x0s, T, FAST)) for T in Ts]


@pytest.mark.parametrize("name,params", [("shear_41_perturbed", {"n": 16}),
                                         ("vanishing_segment_42_perturbed", {"n": 16}),
                                         ("current_35", {"a_amp": 0.5})])
def test_cauchy_contraction(name, params):
    # per-point gaps oscillate quasi-periodically; the grid maximum carries the 1/T envelope
    g = max_gaps(catalog_build(name, params))
    assert g[0] > g[1] > g[2]


@pytest.mark.parametrize("name,params", [("shear_41_perturbed", {"n": 1}),
                                         ("determinant_shear_43", {})])
def test_cauchy_gap_envelope(name, params):
    # bounded-deviation flows: the gap plateaus at rounding level or wobbles, but shrinks overall
    g = max_gaps(catalog_build(name, params))
    assert g[2] < g[0]


def test_classify_buckets():
    def pts(zs):
        return [RotationEstimate(np.asarray(z, float), 1.0, np.zeros(2), 0.0) for z in zs]

    assert classify(pts([[1, 1], [1, 1.0001]]), 1.0)[0] == "singleton"
    cls, end, *_ = classify(pts([[0, 0], [0.5, 0.25], [1, 0.5]]), 1.0)
    assert cls == "segment" and np.allclose(end, [1, 0.5])
    assert classify(pts([[0, 0], [1, 0], [0, 1]]), 1.0)[0] == "other"


def test_convex_hull_degenerate_and_square():
    assert convex_hull([[1.0, 2.0]] * 3).shape == (1, 2)
    line = convex_hull([[0, 0], [1, 1], [0.5, 0.5], [2, 2]])
    assert {tuple(p) for p in line} == {(0.0, 0.0), (2.0, 2.0)}
    sq = convex_hull([[0, 0], [1, 0], [0, 1], [1, 1], [0.5, 0.5]])
    assert len(sq) == 4


def test_orbit_distance_shear_row():
    f = catalog_build("shear_41")
    rep = orbit_distance_report(f, [0.3, 0.5], T=100.0)
    # closest sample is off x1 = 0 by at most one sampling step
    assert 0.5 <= rep.min_distance_to_zero_set < 0.5 + 1e-4
    assert rep.qualifies


def test_orbit_distance_at_zero():
    f = catalog_build("shear_41")
    rep = orbit_distance_report(f, [0.0, 0.0], T=10.0)
    assert rep.min_distance_to_zero_set == 0.0 and not rep.qualifies
    assert not np.any(rotation_vector(f, [0.0, 0.0], 10.0).zeta_hat)


def test_orbit_distance_line_through_zero():
    f = catalog_build("vanishing_segment_42")
    # (0.3 sqrt2, -0.3) lies on the line through the origin along R_perp xi
    rep = orbit_distance_report(f, [0.3 * SQRT2, 1.0 - 0.3], T=50.0)
    assert not rep.qualifies


def test_orbit_distance_needs_zero_set():
    with pytest.raises(ValueError):
        orbit_distance_report(catalog_build("shear_41_perturbed"), [0.1, 0.1], T=10.0)


def test_sweep_constant_family():
    def family(n):
        rho = 1.0 + 1.0 / n
        return catalog_build("constant", {"zeta": [rho * 0.5, rho * SQRT2 / 2]})

    res = perturbation_sweep(family, [1, 10, 100], grid=2, T=10.0,
                             limit=("singleton", [0.5, SQRT2 / 2]))
    gaps = [e.gap_to_limit for e in res.entries]
    assert all(e.classification == "singleton" and not e.flagged for e in res.entries)
    assert gaps[0] > gaps[1] > gaps[2]
    assert abs(gaps[2] - 0.01 * np.linalg.norm([0.5, SQRT2 / 2])) < 1e-9


def test_exports(tmp_path):
    f = catalog_build("shear_41")
    rs = rotation_set(f, 2, 50.0, FAST)
    rs.to_json(tmp_path / "r.json")
    rs.to_csv(tmp_path / "r.csv")
    data = json.loads((tmp_path / "r.json").read_text())
    assert data["classification"] == rs.classification
    rows = list(csv.reader(open(tmp_path / "r.csv")))
    assert rows[0] == ["x0_1", "x0_2", "zeta_1", "zeta_2", "T", "cauchy_gap", "stalled"]
    assert len(rows) == 1 + len(rs.points)
