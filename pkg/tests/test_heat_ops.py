import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from heatnull.geometry import Domain, build_grid
from heatnull.heat_ops import (
    Field,
    Nonlinearity,
    ProblemSpec,
    apply_Lstar,
    inner_Q,
    inner_Sigma,
    lstar_matrix,
    op_G,
    op_G_star,
    op_H0,
    op_H0_star,
    solve_adjoint,
    solve_forward,
)

DOMAINS = [
    (Domain.interval(0, 1), {}),
    (Domain.rectangle(0, 1, 0, 1, [("top", 0.25, 0.75)]), {"ny": 9}),
]


@pytest.mark.parametrize("scheme", ["be", "cn"])
@pytest.mark.parametrize("dom,kw", DOMAINS)
def test_operator_pairs_are_exact_transposes(dom, kw, scheme, rng):
    g = build_grid(dom, 9, 6, 1.0, **kw)
    spec = ProblemSpec(g, b=1.3)
    q, psi = rng.normal(size=(2, g.nt, g.n))
    beta = rng.normal(size=(g.nt, g.nb))
    lhs = inner_Q(g, op_H0(spec, q, scheme), psi)
    assert lhs == pytest.approx(inner_Q(g, q, op_H0_star(spec, psi, scheme)), rel=1e-12)
    lhs = inner_Q(g, op_G(spec, beta, scheme), psi)
    assert lhs == pytest.approx(inner_Sigma(g, beta, op_G_star(spec, psi, scheme)), rel=1e-12)


@pytest.mark.parametrize("scheme", ["be", "cn"])
@pytest.mark.parametrize("dom,kw", DOMAINS)
def test_boundary_trace_recovered_through_transposed_stencil(dom, kw, scheme, rng):
    g = build_grid(dom, 9, 6, 1.0, **kw)
    spec = ProblemSpec(g, b=1.3)
    P = rng.normal(size=(g.nt, g.n))
    w = apply_Lstar(spec, P, scheme=scheme)
    np.testing.assert_allclose(op_G_star(spec, w, scheme).values, P[:, g.boundary_nodes], atol=1e-12)


def _compatible_p(grid, b, rng):
    # q satisfies the homogeneous Robin condition on both ends; p vanishes at T
    x = grid.points[:, 0]
    c = rng.normal(size=4)
    t = grid.t_nodes[1:]
    r = lambda x: sum(c[k] * np.cos(k * np.pi * x) / (1 + k) for k in range(4))
    dr = lambda x: sum(-c[k] * k * np.pi * np.sin(k * np.pi * x) / (1 + k) for k in range(4))
    a0 = b * r(0) - dr(0)
    a1 = -(dr(1) + a0 + b * r(1) + b * a0) / (2 + b)
    q = r(x) + a0 * x + a1 * x**2
    d = rng.normal(size=2)
    tau = (grid.T - t) * (1 + 0.3 * d[0] * np.sin(np.pi * t) + 0.3 * d[1] * np.cos(np.pi * t))
    return tau[:, None] * q[None, :]


@pytest.mark.parametrize("seed", range(3))
def test_centered_stencil_trace_identity_converges(seed):
    errs = []
    for nx in (17, 33, 65):
        g = build_grid(Domain.interval(0, 1), nx, 2 * (nx - 1), 1.0)
        spec = ProblemSpec(g, b=1.0)
        P = _compatible_p(g, 1.0, np.random.default_rng(seed))
        w = apply_Lstar(spec, P, stencil="centered")
        tr = P[:, g.boundary_nodes]
        errs.append(np.linalg.norm(op_G_star(spec, w, "cn").values - tr) / np.linalg.norm(tr))
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 0.9), rates


def test_manufactured_solution_second_order():
    errs = []
    for nx in (17, 33, 65):
        g = build_grid(Domain.interval(0, 1), nx, nx - 1, 1.0)
        tm = g.t_nodes[1:] - 0.5 * g.dt
        f = np.column_stack([np.exp(-tm), -np.exp(-tm)])
        spec = ProblemSpec(
            g, b=1.0, g=lambda t, x: (np.pi**2 - 1) * np.exp(-t) * np.cos(np.pi * x[:, 0]),
            y0=lambda x: np.cos(np.pi * x[:, 0]))
        Y = solve_forward(spec, f, "cn")
        exact = np.array([np.exp(-t) * np.cos(np.pi * g.points[:, 0]) for t in Y.times])
        errs.append(Field(g, Y.values - exact, Y.times).norm())
    rates = np.log2(np.array(errs[:-1]) / errs[1:])
    assert np.all(rates > 1.9), rates


def test_lstar_matrix_matches_apply(rng):
    g = build_grid(Domain.interval(0, 1), 7, 5, 1.0)
    spec = ProblemSpec(g, b=0.7, a=0.3, A=0.5)
    P = rng.normal(size=(g.nt, g.n))
    for scheme in ("be", "cn"):
        L = lstar_matrix(spec, scheme)
        np.testing.assert_allclose(L @ P.ravel(), apply_Lstar(spec, P, scheme=scheme).values.ravel(), atol=1e-10)


def _duality_gap(spec, F1, y0, scheme):
    g = spec.grid
    P = solve_adjoint(spec, F1=F1, scheme=scheme).values
    Y = solve_forward(spec.replace(y0=y0), scheme=scheme)
    lhs = g.dt * np.sum((F1 * Y.values) @ g.mass)
    return lhs, float((g.mass * P[0]) @ y0)


def test_adjoint_solver_exact_for_frozen_coefficients(rng):
    g = build_grid(Domain.interval(0, 1), 9, 8, 1.0)
    spec = ProblemSpec(g, b=0.5, a=1.2, A=0.4)
    lhs, rhs = _duality_gap(spec, rng.normal(size=(g.nt, g.n)), rng.normal(size=g.n), "be")
    assert lhs == pytest.approx(rhs, rel=1e-12)


def test_adjoint_solver_consistent_for_varying_coefficients():
    gaps = []
    for nt in (16, 32, 64):
        g = build_grid(Domain.interval(0, 1), 17, nt, 1.0)
        spec = ProblemSpec(g, b=0.5, a=lambda t, x: 4 * t * (1 + x[:, 0]), A=0.4)
        F1 = np.array([np.sin(np.pi * g.points[:, 0]) for _ in range(nt)])
        lhs, rhs = _duality_gap(spec, F1, np.cos(np.pi * g.points[:, 0]) + 1, "be")
        gaps.append(abs(lhs - rhs))
    assert gaps[0] / gaps[1] > 1.7 and gaps[1] / gaps[2] > 1.7, gaps


def test_drift_pe_warning():
    g = build_grid(Domain.interval(0, 1), 5, 4, 1.0)
    with pytest.warns(UserWarning, match="Peclet"):
        ProblemSpec(g, A=20.0)


def test_nonlinearity_must_vanish_at_zero():
    g = build_grid(Domain.interval(0, 1), 5, 4, 1.0)
    with pytest.raises(ValueError):
        ProblemSpec(g, F=Nonlinearity(lambda v: np.cos(v)))


def test_implicit_and_lagged_agree_to_first_order():
    gaps = []
    for nt in (32, 64, 128):
        g = build_grid(Domain.interval(0, 1), 17, nt, 1.0)
        spec = ProblemSpec(g, b=1.0, y0=lambda x: 3 * np.sin(np.pi * x[:, 0]), F=Nonlinearity.sine(0.5))
        a = solve_forward(spec, scheme="be", nonlinear="implicit").terminal
        b = solve_forward(spec, scheme="be", nonlinear="lagged").terminal
        gaps.append(np.max(np.abs(a - b)))
    assert gaps[0] / gaps[1] > 1.7 and gaps[1] / gaps[2] > 1.7


def test_unknown_scheme_rejected():
    g = build_grid(Domain.interval(0, 1), 5, 4, 1.0)
    with pytest.raises(ValueError):
        solve_forward(ProblemSpec(g), scheme="rk4")


@settings(max_examples=20, deadline=None)
@given(b=st.floats(0.0, 5.0), c=st.floats(-2.0, 2.0))
def test_forward_is_linear_in_data(b, c):
    g = build_grid(Domain.interval(0, 1), 9, 6, 1.0)
    rng = np.random.default_rng(1)
    y0 = rng.normal(size=g.n)
    f = rng.normal(size=(g.nt, g.nb))
    one = solve_forward(ProblemSpec(g, b=b, y0=y0), f).values
    two = solve_forward(ProblemSpec(g, b=b, y0=c * y0), c * f).values
    np.testing.assert_allclose(two, c * one, atol=1e-12 * max(1.0, np.abs(one).max()))


def test_trivial_solutions():
    g = build_grid(Domain.interval(0, 1), 9, 8, 1.0)
    assert not np.any(solve_forward(ProblemSpec(g, b=1.0, a=2.0)).values)
    np.testing.assert_allclose(solve_forward(ProblemSpec(g, y0=np.ones(g.n))).values, 1.0, rtol=1e-13)
    np.testing.assert_allclose(solve_adjoint(ProblemSpec(g), terminal=np.ones(g.n)).values, 1.0, rtol=1e-13)
    assert not np.any(solve_adjoint(ProblemSpec(g)).values)
    # z_t = 1 with insulated ends gives z = t at every node
    z = op_H0(ProblemSpec(g), np.ones((g.nt, g.n)))
    np.testing.assert_allclose(z.values, np.repeat(g.t_nodes[1:, None], g.n, axis=1), rtol=1e-13)
    assert not np.any(op_G(ProblemSpec(g, b=1.0), np.zeros((g.nt, g.nb))).values)


def test_Lstar_examples():
    g = build_grid(Domain.interval(0, 1), 33, 64, 1.0)
    ones = np.ones((g.nt, g.n))
    np.testing.assert_allclose(apply_Lstar(ProblemSpec(g), 3 * ones, stencil="centered").values, 0.0, atol=1e-12)
    np.testing.assert_allclose(apply_Lstar(ProblemSpec(g, a=1.0), ones, stencil="centered").values, 1.0, atol=1e-12)
    errs = []
    for nx in (33, 65):
        g = build_grid(Domain.interval(0, 1), nx, 2 * (nx - 1), 1.0)
        t = g.t_nodes[1:, None]
        x = g.points[None, :, 0]
        P = np.exp(-t) * np.cos(np.pi * x)
        # b = 0: cos(pi x) has zero slope at both ends
        out = apply_Lstar(ProblemSpec(g), P, stencil="centered").values
        inner = slice(1, -1)
        errs.append(np.max(np.abs(out[1:-1, inner] - (1 + np.pi**2) * P[1:-1, inner])))
    assert errs[1] < 0.6 * errs[0]
