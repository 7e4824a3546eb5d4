"""Semilinear null control by fixed-point iteration on F(v) = F0(v) v.

Each sweep freezes the previous state y_n, assembles the weighted form with
L* carrying the potential F'(y_n) on the unknown and F0(y_n) on the test
function, solves for the multiplier and rebuilds (y, f).
"""

from __future__ import annotations

import time
from dataclasses import dataclass, field

import numpy as np

from heatnull.heat_ops import Field, Nonlinearity, ProblemSpec, solve_forward
from heatnull.nullcontrol import (
    ControlError,
    ControlSolution,
    _finish,
    assemble_B,
    reconstruct,
    solve_null_control,
    solve_system,
)
from heatnull.weights import WeightSystem

DELTA = 1e-8


class SmallnessError(ControlError):
    """M * S * sqrt(2) >= 1: the iteration is refused."""


class DivergenceError(ControlError):
    def __init__(self, msg, trace):
        super().__init__(msg)
        self.trace = trace


def _func(F):
    return F.func if isinstance(F, Nonlinearity) else F


def F0_values(F, v) -> np.ndarray:
    """F(v) / v, with the symmetric difference quotient at 0 for |v| <= 1e-8."""
    v = np.asarray(v, dtype=float)
    fn = _func(F)
    if isinstance(F, Nonlinearity) and F.is_zero:
        return np.zeros_like(v)
    out = np.empty_like(v)
    big = np.abs(v) > DELTA
    out[big] = fn(v[big]) / v[big]
    if (~big).any():
        out[~big] = (fn(np.array(DELTA)) - fn(np.array(-DELTA))) / (2 * DELTA)
    return out


def Fprime_values(F, v) -> np.ndarray:
    v = np.asarray(v, dtype=float)
    if isinstance(F, Nonlinearity):
        return F.derivative(v)
    d = 1e-6 * np.maximum(1.0, np.abs(v))
    return (F(v + d) - F(v - d)) / (2 * d)


@dataclass
class Linearization:
    """F0(y) and F'(y) on every time level plus the smallness data."""

    F0_values: np.ndarray
    Fprime_values: np.ndarray
    M: float
    S_ratio: float
    beta: float
    beta_window: tuple

    @property
    def smallness(self) -> float:
        return self.M * self.S_ratio * np.sqrt(2.0)

    @property
    def admissible(self) -> bool:
        return self.smallness < 1.0


def linearize(F, y, ws: WeightSystem) -> Linearization:
    """Sample F0 and F' on the levels of ``y`` (a Field or an array of rows)."""
    if isinstance(y, Field):
        rows = y.values if y.initial is None else np.vstack([y.initial[None, :], y.values])
    else:
        rows = np.asarray(y, dtype=float)
    fn = _func(F)
    f0 = fn(np.zeros(1))
    if abs(float(f0[0])) > 1e-12:
        raise ValueError(f"F(0) = {float(f0[0]):.3e}; the nonlinearity must vanish at 0")
    F0 = F0_values(F, rows)
    Fp = Fprime_values(F, rows)
    radius = max(10.0, float(np.max(np.abs(rows))) if rows.size else 0.0)
    lip = F.lipschitz(radius) if isinstance(F, Nonlinearity) else float(
        np.max(np.abs(Fprime_values(F, np.linspace(-radius, radius, 20001)))))
    M = max(lip, float(np.max(np.abs(Fp))) if Fp.size else 0.0)
    S = ws.rho0_over_rho_sup
    if M > 0 and M * S * np.sqrt(2.0) < 1.0:
        lo = (1.0 / M) * S**2 * M**2 / (1.0 - M**2 * S**2)
        hi = 1.0 / M
        beta = 0.5 * (lo + hi)
    else:
        lo = hi = beta = float("nan")
    return Linearization(F0, Fp, float(M), float(S), float(beta), (float(lo), float(hi)))


@dataclass
class IterationTrace:
    increments: list = field(default_factory=list)
    terminal_norms: list = field(default_factory=list)
    log_norm_y: list = field(default_factory=list)
    log_norm_p: list = field(default_factory=list)
    log_bound_ratio: list = field(default_factory=list)
    solver: list = field(default_factory=list)
    converged: bool = False

    @property
    def iterations(self) -> int:
        return len(self.increments)

    def rows(self):
        for i in range(self.iterations):
            yield {
                "iter": i + 1,
                "increment": self.increments[i],
                "terminal_norm": self.terminal_norms[i],
                "log_norm_y": self.log_norm_y[i],
                "log_norm_p": self.log_norm_p[i],
                "log_bound_ratio": self.log_bound_ratio[i],
            }


def _data_norm(spec: ProblemSpec) -> float:
    grid = spec.grid
    g = spec.source_steps(1.0)
    y0 = spec.initial_values()
    return float(np.sqrt(grid.dt * np.sum((g**2) @ grid.mass)) + np.sqrt(y0**2 @ grid.mass))


def _record(trace, system, pt, Y, grid, data_norm, inc, sdiag):
    ny = float(np.linalg.norm(system.J_left @ pt))
    nf = float(np.sqrt(np.sum(system.gamma_diag * pt**2)))
    base = 0.5 * system.shift + system.log_rhs_scale
    np_ = np.sqrt(ny**2 + nf**2)
    with np.errstate(divide="ignore"):
        trace.log_norm_y.append(base + float(np.log(ny)))
        trace.log_norm_p.append(base + float(np.log(np_)))
        # grid-independent shift c/2 removed, as in check_norm_bound
        trace.log_bound_ratio.append(system.log_rhs_scale + float(np.log(ny + nf)) - float(np.log(data_norm)))
    trace.terminal_norms.append(float(np.sqrt(Y[-1] ** 2 @ grid.mass)))
    trace.increments.append(inc)
    trace.solver.append({k: v for k, v in sdiag.items() if k != "factor"})


def solve_semilinear(spec: ProblemSpec, ws: WeightSystem, tol: float = 1e-6, max_iter: int = 50,
                     symmetrize: bool = False, eps: float = 0.0, cutoff: float = 80.0, y_init=None):
    """Fixed-point null control for y_t - Lap y + F(y) = g.

    Returns (ControlSolution, IterationTrace).  With F = 0 this is exactly
    :func:`solve_null_control`.  ``symmetrize`` puts F0(y_n) in both slots.
    """
    t0 = time.perf_counter()
    grid = spec.grid
    F = spec.F
    if spec.has_drift:
        raise ValueError("the semilinear solver takes A = 0")
    trace = IterationTrace()
    data_norm = _data_norm(spec)
    if F is None or F.is_zero:
        sol = solve_null_control(spec, ws, eps=eps, cutoff=cutoff)
        Y = np.vstack([sol.y.initial[None, :], sol.y.values])
        _record(trace, sol.system, sol.p_scaled, Y, grid, data_norm, 0.0, sol.diagnostics)
        trace.converged = True
        return sol, trace

    y0 = spec.initial_values()
    Y = np.zeros((grid.nt + 1, grid.n)) if y_init is None else np.asarray(y_init, dtype=float).copy()
    growth = 0
    sys_ = pt = sdiag = None
    for _ in range(max_iter):
        lin = linearize(F, Y, ws)
        if not lin.admissible:
            raise SmallnessError(f"smallness condition fails: M*S*sqrt(2) = {lin.smallness:.3e} >= 1")
        if symmetrize:
            sys_ = assemble_B(spec, ws, eps=eps, cutoff=cutoff, potential_left=lin.F0_values,
                              potential_right=lin.F0_values)
        else:
            sys_ = assemble_B(spec, ws, eps=eps, cutoff=cutoff, potential_left=lin.Fprime_values,
                              potential_right=lin.F0_values)
        pt, sdiag = solve_system(sys_)
        Yn, _, _, _ = reconstruct(spec, sys_, pt)
        Ynew = np.vstack([y0[None, :], Yn])
        num = np.sqrt(grid.dt * np.sum(((Ynew[1:] - Y[1:]) ** 2) @ grid.mass))
        den = np.sqrt(grid.dt * np.sum((Ynew[1:] ** 2) @ grid.mass))
        inc = float(num / den) if den > 0 else float(num)
        prev = trace.increments[-1] if trace.increments else np.inf
        _record(trace, sys_, pt, Ynew, grid, data_norm, inc, sdiag)
        Y = Ynew
        if inc <= tol:
            trace.converged = True
            break
        growth = growth + 1 if inc > prev else 0
        if growth >= 3:
            raise DivergenceError(f"increment grew 3 iterations in a row (last {inc:.3e})", trace)
    factor = sdiag.pop("factor", None)
    init = float(np.sqrt(y0**2 @ grid.mass))
    sol = _finish(spec, sys_, pt, sdiag, factor, y0, init, False, t0, replay_mode="implicit")
    lagged = solve_forward(spec, sol.f.values * grid.gamma_fraction, scheme="be", nonlinear="lagged")
    sol.diagnostics["replay_lagged_terminal_ratio"] = float(lagged.slice_norms()[-1]) / init if init > 0 else 0.0
    sol.diagnostics["iterations"] = trace.iterations
    sol.diagnostics["converged"] = trace.converged
    return sol, trace
