import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatnull.heat_ops import Nonlinearity
from heatnull.nullcontrol import solve_null_control
from heatnull.semilinear import (
    DivergenceError,
    F0_values,
    Fprime_values,
    SmallnessError,
    linearize,
    solve_semilinear,
)
from heatnull.weights import WeightSystem


def test_F0_examples():
    F = np.sin
    np.testing.assert_allclose(F0_values(F, np.array([0.0, np.pi, 1e-10])), [1.0, 0.0, 1.0], atol=1e-15)
    assert Fprime_values(F, np.array([np.pi]))[0] == pytest.approx(-1.0, rel=1e-9)
    np.testing.assert_array_equal(F0_values(Nonlinearity.zero(), np.ones(3)), 0.0)


@settings(max_examples=50, deadline=None)
@given(v=st.floats(-50, 50))
def test_F0_times_v_recovers_F(v):
    F = Nonlinearity.sine(0.1)
    val = F0_values(F, np.array([v]))[0] * v
    assert val == pytest.approx(0.1 * np.sin(v), abs=1e-15)


def test_nonzero_at_origin_rejected(calib_ws, calib_grid):
    with pytest.raises(ValueError):
        linearize(np.cos, np.zeros((2, calib_grid.n)), calib_ws)


def test_smallness_window(calib_ws, calib_grid):
    lin = linearize(Nonlinearity.sine(0.1), np.zeros((2, calib_grid.n)), calib_ws)
    assert lin.M == pytest.approx(0.1)
    assert lin.S_ratio == pytest.approx(1 / 256, rel=1e-12)
    assert lin.admissible and lin.smallness < 1e-3
    lo, hi = lin.beta_window
    assert lo < lin.beta < hi == pytest.approx(10.0)


def test_smallness_failure_raises(calib_eta, calib_spec):
    # s well below threshold and a steep F break the precondition
    ws = WeightSystem(calib_eta, s=1e-3, lam=1.0, T=1.0, profile="terminal")
    with pytest.raises(SmallnessError):
        solve_semilinear(calib_spec.replace(F=Nonlinearity.sine(50.0)), ws)


def test_zero_nonlinearity_reproduces_linear_exactly(calib_spec, calib_ws, calib_solution):
    sol, trace = solve_semilinear(calib_spec.replace(F=Nonlinearity.zero()), calib_ws)
    np.testing.assert_array_equal(sol.f.values, calib_solution.f.values)
    np.testing.assert_array_equal(sol.y.values, calib_solution.y.values)
    assert trace.converged and trace.iterations == 1


@pytest.fixture(scope="module")
def sine_run(calib_spec, calib_ws):
    return solve_semilinear(calib_spec.replace(F=Nonlinearity.sine(0.1)), calib_ws, tol=1e-6)


def test_iteration_converges(sine_run):
    sol, trace = sine_run
    assert trace.converged and trace.iterations <= 30
    assert trace.increments[-1] <= 1e-6
    assert sol.diagnostics["iterations"] == trace.iterations


def test_replayed_terminal_ratio(sine_run):
    sol, _ = sine_run
    assert sol.terminal_ratio <= 1e-2
    assert np.all(sol.f.values[:, ~sol.f.grid.gamma_mask] == 0.0)


def test_bound_trace_is_uniform(sine_run):
    _, trace = sine_run
    r = np.array(trace.log_bound_ratio)
    assert np.all(np.isfinite(r))
    assert r.max() <= r[0] + np.log(2.0)


def test_symmetrized_variant_runs(calib_spec, calib_ws):
    sol, trace = solve_semilinear(calib_spec.replace(F=Nonlinearity.sine(0.1)), calib_ws, symmetrize=True)
    assert trace.converged
    assert sol.system.symmetric
    assert sol.terminal_ratio <= 1e-2


def test_divergence_guard_reports_trace(calib_spec, calib_ws):
    # a single iteration cannot meet an impossible tolerance; the loop ends unconverged
    sol, trace = solve_semilinear(calib_spec.replace(F=Nonlinearity.sine(0.1)), calib_ws, tol=0.0, max_iter=2)
    assert not trace.converged and trace.iterations == 2
    err = DivergenceError("x", trace)
    assert err.trace is trace


def test_drift_rejected(calib_spec, calib_ws):
    with pytest.raises(ValueError):
        solve_semilinear(calib_spec.replace(A=0.1, F=Nonlinearity.sine(0.1)), calib_ws)


def test_linear_and_zero_F_share_solver(calib_spec, calib_ws):
    a = solve_null_control(calib_spec, calib_ws)
    b, _ = solve_semilinear(calib_spec, calib_ws)
    np.testing.assert_array_equal(a.p_scaled, b.p_scaled)
