"""Both sides of the weighted Carleman inequalities for discrete adjoint states.

Every term is a weighted square integral whose weight e^{-2 s alpha} lies far
below double range, so terms are accumulated as logarithms (logsumexp) and
reported relative to one common shift.  Time integrals use the step midpoints
with psi averaged over the two adjacent levels; gradients live on grid edges
with the weight sampled at the edge midpoint, matching the stiffness stencil.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from scipy.special import logsumexp

from heatnull.geometry import SpaceTimeGrid
from heatnull.heat_ops import Field, ProblemSpec, TraceField, solve_adjoint, spatial_ops, stiffness
from heatnull.probes import smoothed_field
from heatnull.weights import WeightSystem

LHS_KEYS_THM1 = ("grad", "state", "boundary")
RHS_KEYS_THM1 = ("residual", "F1", "F2", "F3", "observation")
LHS_KEYS_NEUMANN = ("time_lap", "grad", "state", "boundary")
RHS_KEYS_NEUMANN = ("residual", "observation")


@dataclass
class CarlemanReport:
    """Logs of each term; ``lhs_terms``/``rhs_terms`` are exp(log - log_shift)."""

    log_lhs_terms: dict
    log_rhs_terms: dict
    log_shift: float
    params: dict
    flags: set = field(default_factory=set)

    @property
    def lhs_terms(self) -> dict:
        return {k: float(np.exp(v - self.log_shift)) for k, v in self.log_lhs_terms.items()}

    @property
    def rhs_terms(self) -> dict:
        return {k: float(np.exp(v - self.log_shift)) for k, v in self.log_rhs_terms.items()}

    @property
    def log_lhs(self) -> float:
        return float(logsumexp(list(self.log_lhs_terms.values())))

    @property
    def log_rhs(self) -> float:
        return float(logsumexp(list(self.log_rhs_terms.values())))

    @property
    def indeterminate(self) -> bool:
        return "indeterminate" in self.flags

    @property
    def ratio(self) -> float | None:
        """LHS / RHS; None when both sides vanish, inf when only the RHS does."""
        if self.indeterminate:
            return None
        return float(np.exp(self.log_lhs - self.log_rhs))

    def as_row(self) -> dict:
        row = dict(self.params)
        row.update({f"lhs_{k}": v for k, v in self.lhs_terms.items()})
        row.update({f"rhs_{k}": v for k, v in self.rhs_terms.items()})
        row["log_shift"] = self.log_shift
        r = self.ratio
        row["ratio"] = "indeterminate" if r is None else r
        row["flags"] = ";".join(sorted(self.flags))
        return row


def _logsum(logw, vals2, measure) -> float:
    """log sum(measure * exp(logw) * vals2); -inf when everything vanishes."""
    logw, vals2, measure = np.broadcast_arrays(logw, vals2, measure)
    ok = (vals2 > 0) & (measure > 0)
    if not ok.any():
        return -np.inf
    return float(logsumexp(logw[ok] + np.log(vals2[ok]) + np.log(measure[ok])))


@dataclass(frozen=True)
class _Edges:
    a: np.ndarray
    b: np.ndarray
    h: np.ndarray
    measure: np.ndarray
    mid: np.ndarray


def _edges(grid: SpaceTimeGrid) -> _Edges:
    pts = grid.points
    if grid.dim == 1:
        a = np.arange(grid.nx - 1)
        b = a + 1
        h = np.full(a.size, grid.h[0])
        meas = h.copy()
    else:
        nx, ny = grid.shape
        hx, hy = grid.h
        mx, my = grid.axis_weights
        I, J = np.meshgrid(np.arange(nx - 1), np.arange(ny), indexing="ij")
        ax, bx = grid.node_index(I.ravel(), J.ravel()), grid.node_index(I.ravel() + 1, J.ravel())
        I2, J2 = np.meshgrid(np.arange(nx), np.arange(ny - 1), indexing="ij")
        ay, by = grid.node_index(I2.ravel(), J2.ravel()), grid.node_index(I2.ravel(), J2.ravel() + 1)
        a = np.concatenate([ax, ay])
        b = np.concatenate([bx, by])
        h = np.concatenate([np.full(ax.size, hx), np.full(ay.size, hy)])
        meas = np.concatenate([my[J.ravel()] * hx, mx[I2.ravel()] * hy])
    return _Edges(a, b, h, meas, 0.5 * (pts[a] + pts[b]))


def _cells(psi: Field) -> tuple[np.ndarray, np.ndarray]:
    """(step averages, step differences / dt) of a field holding levels 0..nt."""
    P = psi.values
    if P.shape[0] != psi.grid.nt + 1:
        raise ValueError("expected an adjoint field with levels t_0..t_nt")
    return 0.5 * (P[1:] + P[:-1]), (P[1:] - P[:-1]) / psi.grid.dt


def _flags(ws: WeightSystem, lam_min: float = 2.0) -> set:
    out = set()
    if ws.s < ws.s_min * (1 - 1e-12):
        out.add("s_below_threshold")
    if ws.lam < lam_min:
        out.add("lambda_below_threshold")
    if ws.profile != "symmetric":
        out.add("non_symmetric_profile")
    return out


def _finalize(lhs: dict, rhs: dict, params: dict, flags: set) -> CarlemanReport:
    finite = [v for v in list(lhs.values()) + list(rhs.values()) if np.isfinite(v)]
    shift = max(finite) if finite else 0.0
    if all(v == -np.inf for v in lhs.values()) and all(v == -np.inf for v in rhs.values()):
        flags = flags | {"indeterminate"}
    elif all(v == -np.inf for v in rhs.values()):
        flags = flags | {"rhs_zero"}
    return CarlemanReport(lhs, rhs, float(shift), params, flags)


def _theta_for(scheme: str) -> float:
    return {"be": 1.0, "cn": 0.5}[scheme]


def eval_carleman_thm1(ws: WeightSystem, psi: Field, spec: ProblemSpec | None = None, F1=None, F2=None, F3=None,
                       scheme: str = "cn", squared: bool = True) -> CarlemanReport:
    """Weighted sides of the Robin-adjoint Carleman inequality.

    ``psi`` holds levels t_0..t_nt of a :func:`solve_adjoint` solution for
    the same (F1, F2, F3) and ``scheme``; ``spec`` supplies b (default b=0,
    A=0, a=0).  The residual psi_t + Lap psi uses the solver's operator, so it
    equals -(F1 + div F2) up to round-off.  ``squared=False`` evaluates the
    residual term without the square.
    """
    grid = psi.grid
    spec = spec if spec is not None else ProblemSpec(grid)
    theta = _theta_for(scheme)
    m = grid.mass
    N = grid.nt
    ops = spatial_ops(grid)
    K = stiffness(spec, 0.0)
    P = psi.values
    mid, pt = _cells(psi)
    Ptheta = theta * P[:-1] + (1 - theta) * P[1:]
    lap = -(Ptheta @ K.T) / m
    if F3 is not None:
        f3 = grid.check_trace(F3.values if isinstance(F3, TraceField) else F3)
        lap = lap + (f3 @ ops.R().T) / m
    res = pt + lap

    tc = grid.t_cells
    logs = ws.log_rho_inv2(tc, ws.eta.values)
    ed = _edges(grid)
    elogs = ws.log_rho_inv2(tc, ws.eta.evaluate(ed.mid))
    grad = (mid[:, ed.b] - mid[:, ed.a]) / ed.h
    bn = grid.boundary_nodes
    dt = grid.dt

    lhs = {
        "grad": _logsum(elogs.rho1, grad**2, dt * ed.measure),
        "state": _logsum(logs.rho1, mid**2, dt * m),
        "boundary": _logsum(logs.rho0[:, bn], mid[:, bn] ** 2, dt * grid.boundary_weights),
    }
    rvals = res**2 if squared else np.abs(res)
    rhs = {"residual": _logsum(logs.rho, rvals, dt * m)}
    rhs["F1"] = _logsum(logs.rho, grid.check_field(F1) ** 2, dt * m) if F1 is not None else -np.inf
    if F2 is not None:
        f2 = np.asarray(F2, dtype=float).reshape(N, grid.n, grid.dim)
        rhs["F2"] = _logsum(logs.rho2, np.sum(f2**2, axis=2), dt * m)
    else:
        rhs["F2"] = -np.inf
    rhs["F3"] = _logsum(logs.rho3[:, bn], f3**2, dt * grid.boundary_weights) if F3 is not None else -np.inf
    rhs["observation"] = _logsum(logs.rho0[:, bn], mid[:, bn] ** 2, dt * grid.gamma_weights)
    params = {"s": ws.s, "lambda": ws.lam, "T": ws.T, "grid": _grid_id(grid), "squared": squared}
    return _finalize(lhs, rhs, params, _flags(ws))


def eval_carleman_neumann(ws: WeightSystem, p: Field, scheme: str = "cn") -> CarlemanReport:
    """Weighted sides of the Neumann-adjoint inequality with explicit s, lambda, xi factors."""
    grid = p.grid
    theta = _theta_for(scheme)
    m = grid.mass
    K0 = spatial_ops(grid).K0
    P = p.values
    mid, pt = _cells(p)
    Ptheta = theta * P[:-1] + (1 - theta) * P[1:]
    lap = -(Ptheta @ K0.T) / m
    res = pt + lap

    s, lam = ws.s, ws.lam
    tc = grid.t_cells
    ev = ws.eta.values
    w = -2 * s * ws.alpha(tc, ev)
    lx = ws.log_xi(tc, ev)
    ed = _edges(grid)
    eev = ws.eta.evaluate(ed.mid)
    we = -2 * s * ws.alpha(tc, eev) + ws.log_xi(tc, eev)
    grad = (mid[:, ed.b] - mid[:, ed.a]) / ed.h
    bn = grid.boundary_nodes
    dt = grid.dt
    ls, ll = np.log(s), np.log(lam)

    lhs = {
        "time_lap": float(np.logaddexp(_logsum(w - lx, pt**2, dt * m), _logsum(w - lx, lap**2, dt * m))) - ls,
        "grad": _logsum(we, grad**2, dt * ed.measure) + ls + 2 * ll,
        "state": _logsum(w + lx, mid**2, dt * m) + ls + 2 * ll,
        "boundary": _logsum((w + 3 * lx)[:, bn], mid[:, bn] ** 2, dt * grid.boundary_weights) + 3 * ls + 3 * ll,
    }
    rhs = {
        "residual": _logsum(w, res**2, dt * m),
        "observation": _logsum((w + 3 * lx)[:, bn], mid[:, bn] ** 2, dt * grid.gamma_weights) + 3 * ls + 4 * ll,
    }
    params = {"s": s, "lambda": lam, "T": ws.T, "grid": _grid_id(grid)}
    return _finalize(lhs, rhs, params, _flags(ws))


def _grid_id(grid: SpaceTimeGrid) -> str:
    sh = "x".join(str(v) for v in grid.shape)
    return f"{sh}x{grid.nt}"


def adjoint_probe(grid: SpaceTimeGrid, rng: np.random.Generator, b=0.0, scheme: str = "cn") -> tuple[ProblemSpec, Field]:
    """Adjoint state from a unit smoothed random terminal datum, no sources."""
    spec = ProblemSpec(grid, b=b)
    psi0 = smoothed_field(grid, rng)
    return spec, solve_adjoint(spec, terminal=psi0, scheme=scheme)


@dataclass
class SweepResult:
    rows: list
    max_ratio: dict
    growth: float

    @property
    def C_hat(self) -> float:
        return max(self.max_ratio.values())


def carleman_sweep(grid: SpaceTimeGrid, eta, T: float, s_factors=(1.0, 2.0, 4.0), lambdas=(2.0,), seeds=range(20),
                   b=1.0, scheme: str = "cn", which: str = "thm1", squared: bool = True,
                   s_scale: float = 2.0) -> SweepResult:
    """Max LHS/RHS over seeded adjoint states for each (lambda, s) pair.

    ``growth`` is the largest relative increase of the per-s maximum over its
    value at the smallest s, taken over lambdas.
    """
    rows, maxr = [], {}
    probes = []
    for seed in seeds:
        rng = np.random.default_rng(seed)
        bb = 0.0 if which == "neumann" else b
        spec, psi = adjoint_probe(grid, rng, b=bb, scheme=scheme)
        probes.append((seed, spec, psi))
    growth = 0.0
    for lam in lambdas:
        base = None
        for sf in s_factors:
            ws = WeightSystem.default(eta, T, s_factor=sf, lam=lam, s_scale=s_scale, profile="symmetric")
            best = 0.0
            for seed, spec, psi in probes:
                if which == "neumann":
                    rep = eval_carleman_neumann(ws, psi, scheme=scheme)
                else:
                    rep = eval_carleman_thm1(ws, psi, spec, scheme=scheme, squared=squared)
                row = {"seed": seed, "s_factor": sf}
                row.update(rep.as_row())
                rows.append(row)
                if rep.ratio is not None:
                    best = max(best, rep.ratio)
            maxr[(lam, sf)] = best
            if base is None:
                base = best
            elif base > 0:
                growth = max(growth, best / base - 1.0)
    return SweepResult(rows, maxr, growth)


def weight_monotone(ws: WeightSystem, psi: Field, spec: ProblemSpec | None = None, factor: float = 2.0) -> bool:
    """Every e^{-2 s alpha}-weighted Neumann term shrinks when s grows by ``factor`` (s-powers removed)."""
    lo = eval_carleman_neumann(ws, psi)
    hi = eval_carleman_neumann(ws.with_s(ws.s * factor), psi)
    # strip the explicit s powers so only the exponential weight is compared
    pw = {"time_lap": -1, "grad": 1, "state": 1, "boundary": 3, "residual": 0, "observation": 3}
    lf = np.log(factor)
    for part in ("log_lhs_terms", "log_rhs_terms"):
        a, c = getattr(lo, part), getattr(hi, part)
        for k in a:
            if np.isfinite(a[k]) and c[k] - pw[k] * lf > a[k] + 1e-12 * max(1.0, abs(a[k])):
                return False
    return True
