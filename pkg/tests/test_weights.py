import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatnull.geometry import Domain, build_grid
from heatnull.weights import (
    EtaVerificationError,
    WeightSystem,
    audit_weight_bounds,
    build_eta,
    check_weight_bounds,
    default_s_min,
    eval_alpha_xi,
    log_rho,
    safe_exp,
    verify_eta,
)


@pytest.fixture(scope="module")
def eta1d():
    return build_eta(build_grid(Domain.interval(0.0, 1.0), 33, 64, 1.0))


def test_eta_1d_is_ramp_towards_control(eta1d):
    x = eta1d.grid.points[:, 0]
    np.testing.assert_allclose(eta1d.values, x)
    assert eta1d.sup_norm == 1.0
    left = build_eta(build_grid(Domain.interval(0.0, 1.0, gamma=("left",)), 9, 4, 1.0))
    np.testing.assert_allclose(left.values, 1.0 - left.grid.points[:, 0])


def test_alpha_xi_hand_values(eta1d):
    ws = WeightSystem(eta1d, s=1.0, lam=1.0, T=1.0)
    x = np.array([[0.0], [1.0]])
    a, xi = eval_alpha_xi(ws, 0.5, x)
    np.testing.assert_allclose(a, [4 * (np.e**2 - 1), 4 * (np.e**2 - np.e)], rtol=1e-14)
    np.testing.assert_allclose(a, [25.5562243957226, 18.6830970818864], rtol=1e-12)
    np.testing.assert_allclose(xi, [4.0, 4.0 * np.e], rtol=1e-14)


def test_rho_family_ratios(eta1d):
    ws = WeightSystem(eta1d, s=1.0, lam=1.0, T=1.0)
    lr = log_rho(ws, 0.5, np.array([[0.0]]))
    # rho0^-2 / rho^-2 = (s xi)^3 lam^4 = 64 at xi = 4
    assert np.exp(-2 * lr.rho0 + 2 * lr.rho)[0] == pytest.approx(64.0, rel=1e-13)
    assert np.exp(-2 * lr.rho1 + 2 * lr.rho)[0] == pytest.approx(4.0, rel=1e-13)
    assert np.exp(-2 * lr.rho2 + 2 * lr.rho)[0] == pytest.approx(16.0, rel=1e-13)


def test_weights_defined_only_inside(eta1d):
    ws = WeightSystem.default(eta1d, 1.0)
    for t in (0.0, 1.0, -0.1):
        with pytest.raises(ValueError):
            ws.alpha(t, eta1d.values)


def test_terminal_profile_flat_before_half(eta1d):
    ws = WeightSystem.default(eta1d, 1.0, profile="terminal")
    a1 = ws.alpha(0.1, eta1d.values)
    a2 = ws.alpha(0.5, eta1d.values)
    np.testing.assert_array_equal(a1, a2)
    assert np.all(ws.alpha(0.9, eta1d.values) > a2)


def test_safe_exp_never_overflows():
    v = safe_exp(np.array([-1e4, 0.0, 1e4]))
    assert v[0] == 0.0 and v[1] == 1.0 and np.isfinite(v[2])


def test_s_min_and_threshold(eta1d):
    assert default_s_min(1.0) == pytest.approx(4.0)
    assert default_s_min(2.0, 1.0) == pytest.approx(2.0 + 2.0 ** (8 / 3))
    ws = WeightSystem.default(eta1d, 1.0)
    assert not ws.below_threshold
    assert ws.with_s(1.0).below_threshold


def test_rho0_over_rho_sup_matches_sampling(eta1d):
    ws = WeightSystem.default(eta1d, 1.0, lam=2.0)
    t = np.linspace(0.01, 0.99, 99)
    lr = ws.log_rho(t, eta1d.values)
    assert np.exp(np.max(lr.rho0 - lr.rho)) == pytest.approx(ws.rho0_over_rho_sup, rel=1e-12)


@pytest.mark.parametrize("seg", [("top", 0.0, 0.5), ("top", 0.25, 0.75), ("left", 0.5, 1.0), ("bottom", 0.1, 0.3)])
@pytest.mark.parametrize("n", [9, 33])
def test_eta_2d_passes_all_checks(seg, n):
    g = build_grid(Domain.rectangle(0, 1, 0, 1, [seg]), n, 2, 1.0, ny=n)
    eta = build_eta(g)
    assert all(ok for ok, _ in eta.checks.values())
    assert eta.c0 > 0
    # analytic gradient agrees with a finite difference of the analytic values
    p = g.points[g.n // 2 + 1 : g.n // 2 + 2]
    h = 1e-6
    fd = [(eta.evaluate(p + h * e) - eta.evaluate(p - h * e))[0] / (2 * h) for e in np.eye(2)]
    np.testing.assert_allclose(eta.gradient_at(p)[0], fd, rtol=1e-6, atol=1e-8)


def test_verify_eta_rejects_a_broken_eta(eta1d):
    from dataclasses import replace

    bad = replace(eta1d, values=eta1d.values + 0.1)
    checks, _, _ = verify_eta(bad)
    assert not checks["(iv) vanishes on uncontrolled boundary"][0]


def test_build_eta_raises_for_two_segments():
    g = build_grid(Domain.rectangle(0, 1, 0, 1, [("top", 0.0, 0.2), ("top", 0.5, 0.7)]), 9, 2, 1.0, ny=9)
    with pytest.raises((EtaVerificationError, ValueError)):
        build_eta(g)


def test_xi_inverse_sup_formula(eta1d):
    for f in (1.0, 2.0, 4.0):
        r = check_weight_bounds(WeightSystem.default(eta1d, 1.0, s_factor=f))
        assert abs(r.xi_inv_sup - r.xi_inv_sup_exact) <= 1e-10
        assert r.xi_inv_sup_exact == pytest.approx(1.0 / (4 * r.s))


def test_audit_1d_ok(eta1d):
    reports, ok = audit_weight_bounds(eta1d, 1.0)
    assert ok
    assert len(reports) == 2 * 2 * 2 * 3
    assert all(np.isfinite(r.grad_constant) and np.isfinite(r.time_constant) for r in reports)


@settings(max_examples=25, deadline=None)
@given(s=st.floats(0.5, 50.0), lam=st.floats(0.5, 6.0), t=st.floats(0.01, 0.99))
def test_log_weights_are_consistent(eta1d, s, lam, t):
    ws = WeightSystem(eta1d, s=s, lam=lam, T=1.0)
    lr = ws.log_rho(t, eta1d.values)
    lx = ws.log_xi(t, eta1d.values)
    np.testing.assert_allclose(lr.rho, s * ws.alpha(t, eta1d.values), rtol=1e-13)
    np.testing.assert_allclose(lr.rho0 - lr.rho, -1.5 * (np.log(s) + lx) - 2 * np.log(lam), rtol=1e-12,
                               atol=1e-14 * np.max(np.abs(lr.rho)))
    # alpha is positive everywhere, so increasing s lowers every e^{-2 s alpha}
    assert np.all(ws.alpha(t, eta1d.values) > 0)
