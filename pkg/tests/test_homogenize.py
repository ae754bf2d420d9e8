import csv

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from rotaflow.fields import catalog_build, harmonic_mean, rotate_perp
from rotaflow.homogenize import (ConvergenceTable, TransportExperiment, characteristics,
                                 gaussian_bump, profile, run_experiment,
                                 solve_transport_characteristics, trig_polynomial)
from rotaflow.integrate import flow

SQRT2 = np.sqrt(2.0)


@pytest.mark.parametrize("eps", [1.0, 0.1, 0.01])
def test_constant_translates(eps):
    f = catalog_build("constant", {"zeta": [1.0, 2.0]})
    u0 = gaussian_bump()
    x = np.array([0.4, 0.7])
    for t in (0.25, 1.0):
        got = solve_transport_characteristics(f, u0, eps, t, x)
        assert abs(got - u0(x + t * np.array([1.0, 2.0]))) < 1e-9


def test_unit_scale_is_plain_flow():
    f = catalog_build("current_35", {"a_amp": 0.5})
    u0 = trig_polynomial()
    x = np.array([0.15, 0.8])
    got = solve_transport_characteristics(f, u0, 1.0, 0.7, x)
    assert got == u0(flow(f, x, 0.7).final_position)


def test_shear_rows_negative_control():
    # rows x2 / eps = 1/2 mod 1 move at sqrt 2, rows x2 / eps in Z stay put
    f = catalog_build("shear_41")
    u0 = trig_polynomial()
    eps = 0.01
    fast = np.array([0.3, 0.255])
    slow = np.array([0.3, 0.25])
    t = 0.5
    u_fast = solve_transport_characteristics(f, u0, eps, t, fast)
    u_slow = solve_transport_characteristics(f, u0, eps, t, slow)
    assert abs(u_fast - u0(fast + t * np.array([SQRT2, 0.0]))) < 0.05
    assert abs(u_slow - u0(slow)) < 0.05
    assert abs(u_slow - u0(slow + t * np.array([SQRT2, 0.0]))) > 0.5


@settings(max_examples=10)
@given(eps=st.floats(0.01, 1.0), t=st.floats(0.0, 2.0),
       x=st.tuples(st.floats(-1, 2), st.floats(-1, 2)))
def test_maximum_principle(eps, t, x):
    f = catalog_build("vanishing_segment_42_perturbed", {"n": 4})
    u0 = trig_polynomial()
    v = solve_transport_characteristics(f, u0, eps, t, np.array(x))
    assert -1.5 - 1e-12 <= v <= 1.5 + 1e-12


def test_characteristics_shape_and_order():
    f = catalog_build("constant")
    u0 = gaussian_bump()
    xs = np.array([[0.1, 0.2], [0.5, 0.5], [0.9, 0.3]])
    ts = np.array([0.5, 0.1, 0.3])
    vals, stalled = characteristics(f, u0, 0.2, ts, xs)
    assert vals.shape == (3, 3) and not stalled.any()
    expect = u0(xs[:, None, :] + ts[None, :, None] * np.array([1.0, SQRT2]))
    assert np.allclose(vals, expect, atol=1e-9)
    with pytest.raises(ValueError):
        characteristics(f, u0, 0.0, ts, xs)


def test_constant_table_at_floor():
    f = catalog_build("constant", {"zeta": [1.0, 2.0]})
    exp = TransportExperiment(f, gaussian_bump(), [0.5, 0.25, 0.125], points_per_axis=16,
                              time_samples=4)
    table = run_experiment(exp, [1.0, 2.0])
    assert max(table.errors) < 1e-9
    assert table.oscillation > 0.5


def test_positive_rho_current_decreasing():
    f = catalog_build("current_35")
    rep = harmonic_mean(f.rho)
    zeta = rep.harmonic * rotate_perp([1.0, SQRT2])
    # oracle: harmonic mean of 1.5 + sin^2(pi t) is sqrt(1.5 * 2.5)
    assert abs(rep.harmonic - np.sqrt(1.5 * 2.5)) < 1e-10
    exp = TransportExperiment(f, gaussian_bump(), [1 / 4, 1 / 8, 1 / 16, 1 / 32],
                              points_per_axis=16, time_samples=4)
    table = run_experiment(exp, zeta)
    assert table.strictly_decreasing()
    assert table.max_growth() <= 1.1


def test_experiment_validation():
    f = catalog_build("constant")
    u0 = gaussian_bump()
    for bad in ([0.5, 0.5], [0.25, 0.5], [0.5, -0.1], []):
        with pytest.raises(ValueError):
            TransportExperiment(f, u0, bad)
    with pytest.raises(ValueError):
        TransportExperiment(f, u0, [0.5], t_final=0.0)
    with pytest.raises(ValueError):
        TransportExperiment(f, u0, [0.5], p=0.5)
    with pytest.raises(ValueError):
        profile("square")


def test_lp_norm_matches_manual():
    f = catalog_build("shear_41_perturbed", {"n": 4})
    u0 = gaussian_bump()
    exp = TransportExperiment(f, u0, [0.5], points_per_axis=4, time_samples=2, p=3.0)
    zeta = np.array([0.3, 0.1])
    table = run_experiment(exp, zeta)
    xs, ts = exp.eval_points(), exp.eval_times()
    vals, _ = characteristics(f, u0, 0.5, ts, xs)
    lim = u0(xs[:, None, :] + ts[None, :, None] * zeta)
    manual = (np.mean(np.abs(vals - lim) ** 3) * 1.0) ** (1 / 3)
    assert abs(table.errors[0] - manual) < 1e-14


def test_table_exports(tmp_path):
    t = ConvergenceTable([0.5, 0.25], [0.1, 0.05], [1.2, 3.4], 2.0, 1.0, [0, 0])
    t.to_csv(tmp_path / "a.csv")
    rows = list(csv.reader(open(tmp_path / "a.csv")))
    assert rows[0] == ["eps", "error"]
    assert rows[1] == ["0.5", "0.10000000000000001"]
    t.to_csv(tmp_path / "b.csv", timings=True)
    assert next(csv.reader(open(tmp_path / "b.csv"))) == ["eps", "error", "runtime"]
    t.to_svg(tmp_path / "p1.svg")
    t.to_svg(tmp_path / "p2.svg")
    assert (tmp_path / "p1.svg").read_bytes() == (tmp_path / "p2.svg").read_bytes()
    assert t.strictly_decreasing() and t.max_growth() == 0.5
