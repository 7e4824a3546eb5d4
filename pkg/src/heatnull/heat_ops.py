"""Finite-difference heat solvers with Robin boundary conditions.

Space: nodal finite differences on the uniform grid written in "mass form".
The semi-discrete state equation reads

    M y' + K(t) y = M g + R f,      R = E^T diag(sigma),

where M is the lumped (trapezoid) mass, E restricts to boundary nodes and
sigma holds the surface quadrature weights.  K collects the diffusion
stiffness, the Robin term b, the potential a and the drift A.grad.  The
Robin condition d_nu y + b y = f enters through ghost-node elimination,
which for the lumped mass is exactly the boundary row of K plus R f.

Time: theta-scheme, step k (t_{k-1} -> t_k)

    (M/dt + theta K_k) y_k - (M/dt - (1-theta) K_{k-1}) y_{k-1} = M g_k + R f_k,

with sources sampled at t_k - (1-theta) dt.  Adjoint quantities are exact
transposes of this space-time system, so the duality identities below hold
to round-off.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field
from typing import Callable

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from heatnull import _kernels
from heatnull.geometry import SpaceTimeGrid

SCHEMES = {"be": 1.0, "cn": 0.5}


class SolverError(RuntimeError):
    pass


# ---------------------------------------------------------------- data types


@dataclass(eq=False)
class Field:
    """Grid function on Q: one row of node values per time in ``times``."""

    grid: SpaceTimeGrid
    values: np.ndarray
    times: np.ndarray
    initial: np.ndarray | None = None

    def __post_init__(self):
        self.values = np.asarray(self.values, dtype=float)
        if self.values.ndim != 2 or self.values.shape[1] != self.grid.n:
            raise ValueError(f"field shape {self.values.shape} does not match {self.grid.n} nodes")
        if len(self.times) != self.values.shape[0]:
            raise ValueError("one time per row expected")

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def slice_norms(self) -> np.ndarray:
        """L2(Omega) norm of every row."""
        return np.sqrt(np.maximum((self.values**2) @ self.grid.mass, 0.0))

    def norm(self) -> float:
        """Discrete L2(Q) norm (dt-weighted rows)."""
        return float(np.sqrt(self.grid.dt * np.sum((self.values**2) @ self.grid.mass)))


@dataclass(eq=False)
class TraceField:
    """Grid function on Sigma: one row of boundary-node values per time step."""

    grid: SpaceTimeGrid
    values: np.ndarray

    def __post_init__(self):
        self.values = self.grid.check_trace(self.values)

    @property
    def gamma_mask(self) -> np.ndarray:
        return self.grid.gamma_mask

    @classmethod
    def zeros(cls, grid) -> "TraceField":
        return cls(grid, np.zeros((grid.nt, grid.nb)))

    def norm(self, where: str = "sigma") -> float:
        w = self.grid.gamma_weights if where == "gamma" else self.grid.boundary_weights
        return float(np.sqrt(self.grid.dt * np.sum((self.values**2) @ w)))


@dataclass(frozen=True)
class Nonlinearity:
    """Scalar nonlinearity F with F(0) = 0; ``deriv`` is optional."""

    func: Callable[[np.ndarray], np.ndarray]
    deriv: Callable[[np.ndarray], np.ndarray] | None = None
    name: str = "custom"

    @classmethod
    def sine(cls, amplitude: float = 0.1) -> "Nonlinearity":
        return cls(lambda v: amplitude * np.sin(v), lambda v: amplitude * np.cos(v), f"{amplitude}*sin")

    @classmethod
    def zero(cls) -> "Nonlinearity":
        return cls(np.zeros_like, np.zeros_like, "zero")

    def derivative(self, v) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.deriv is not None:
            return np.asarray(self.deriv(v), dtype=float)
        d = 1e-6 * np.maximum(1.0, np.abs(v))
        return (self.func(v + d) - self.func(v - d)) / (2 * d)

    def lipschitz(self, radius: float = 10.0, samples: int = 20001) -> float:
        """Sampled sup |F'| on [-radius, radius]."""
        v = np.linspace(-radius, radius, samples)
        return float(np.max(np.abs(self.derivative(v))))

    @property
    def is_zero(self) -> bool:
        return self.name == "zero"


@dataclass(frozen=True, eq=False)
class ProblemSpec:
    """Coefficients and data of y_t - Lap y + A.grad y + a y = g, d_nu y + b y = f.

    Coefficients are constants or callables ``(t, points) -> values``;
    ``b`` may also be a ``{face: value}`` mapping.  ``g`` is a callable or a
    per-step array (nt, n); ``y0`` is a callable of the points or an array.
    """

    grid: SpaceTimeGrid
    A: object = None
    a: object = None
    b: object = 0.0
    g: object = None
    y0: object = None
    F: Nonlinearity | None = None

    def __post_init__(self):
        A = self.drift_at(0.0)
        if A is not None:
            pe = float(np.max(np.abs(A))) * max(self.grid.h) / 2
            if pe > 1:
                warnings.warn(f"cell Peclet number {pe:.2f} > 1; centred drift may oscillate", stacklevel=3)
        if self.F is not None and abs(float(self.F.func(np.array(0.0)))) > 1e-12:
            raise ValueError("nonlinearity must satisfy F(0) = 0")

    def replace(self, **kw) -> "ProblemSpec":
        d = dict(grid=self.grid, A=self.A, a=self.a, b=self.b, g=self.g, y0=self.y0, F=self.F)
        d.update(kw)
        return ProblemSpec(**d)

    @property
    def has_drift(self) -> bool:
        return self.A is not None and not (np.isscalar(self.A) and self.A == 0)

    @property
    def time_dependent(self) -> bool:
        return any(callable(c) for c in (self.A, self.a, self.b))

    def drift_at(self, t) -> np.ndarray | None:
        if not self.has_drift:
            return None
        if callable(self.A):
            return np.asarray(self.A(t, self.grid.points), dtype=float).reshape(self.grid.n, self.grid.dim)
        return np.broadcast_to(np.asarray(self.A, dtype=float), (self.grid.n, self.grid.dim)).copy()

    def potential_at(self, t) -> np.ndarray:
        if self.a is None:
            return np.zeros(self.grid.n)
        if callable(self.a):
            return np.asarray(self.a(t, self.grid.points), dtype=float).reshape(self.grid.n)
        return np.full(self.grid.n, float(self.a))

    def robin_at(self, t) -> np.ndarray:
        """sigma_j * b_j per boundary node (face weights applied per face)."""
        grid = self.grid
        if isinstance(self.b, dict):
            return sum(grid.face_weights(f) * float(v) for f, v in self.b.items())
        if callable(self.b):
            vals = np.asarray(self.b(t, grid.points[grid.boundary_nodes]), dtype=float)
            return grid.boundary_weights * vals
        return grid.boundary_weights * float(self.b)

    def initial_values(self) -> np.ndarray:
        if self.y0 is None:
            return np.zeros(self.grid.n)
        if callable(self.y0):
            return np.asarray(self.y0(self.grid.points), dtype=float).reshape(self.grid.n)
        return np.asarray(self.y0, dtype=float).reshape(self.grid.n)

    def source_steps(self, theta: float) -> np.ndarray:
        """M-free source per step, sampled at the theta-time of each step."""
        grid = self.grid
        if self.g is None:
            return np.zeros((grid.nt, grid.n))
        if callable(self.g):
            ts = grid.t_nodes[1:] - (1 - theta) * grid.dt
            return np.array([np.asarray(self.g(t, grid.points), dtype=float).reshape(grid.n) for t in ts])
        return grid.check_field(self.g)


# ---------------------------------------------------------------- spatial operators


def _stiffness_1d(n: int, h: float) -> sp.csr_matrix:
    main = np.full(n, 2.0)
    main[0] = main[-1] = 1.0
    off = -np.ones(n - 1)
    return sp.diags([off, main, off], [-1, 0, 1], format="csr") / h


def _derivative_1d(n: int, h: float) -> sp.csr_matrix:
    # centred inside, first-order one-sided at the ends to stay tridiagonal
    D = sp.diags([-np.ones(n - 1), np.ones(n - 1)], [-1, 1], format="lil") / (2 * h)
    D[0, 0], D[0, 1] = -1 / h, 1 / h
    D[n - 1, n - 2], D[n - 1, n - 1] = -1 / h, 1 / h
    return D.tocsr()


@dataclass(eq=False)
class SpatialOps:
    """Time-independent building blocks on a grid."""

    grid: SpaceTimeGrid
    K0: sp.csr_matrix = field(init=False)
    E: sp.csr_matrix = field(init=False)
    D: tuple = field(init=False)

    def __post_init__(self):
        grid = self.grid
        if grid.dim == 1:
            self.K0 = _stiffness_1d(grid.nx, grid.h[0])
            self.D = (_derivative_1d(grid.nx, grid.h[0]),)
        else:
            (nx, ny), (hx, hy) = grid.shape, grid.h
            mx, my = grid.axis_weights
            Kx, Ky = _stiffness_1d(nx, hx), _stiffness_1d(ny, hy)
            self.K0 = (sp.kron(Kx, sp.diags(my)) + sp.kron(sp.diags(mx), Ky)).tocsr()
            self.D = (
                sp.kron(_derivative_1d(nx, hx), sp.identity(ny)).tocsr(),
                sp.kron(sp.identity(nx), _derivative_1d(ny, hy)).tocsr(),
            )
        nb = grid.nb
        self.E = sp.csr_matrix((np.ones(nb), (np.arange(nb), grid.boundary_nodes)), shape=(nb, grid.n))

    def R(self, weights=None) -> sp.csr_matrix:
        """Boundary injection E^T diag(weights) (default: surface weights)."""
        w = self.grid.boundary_weights if weights is None else weights
        return (self.E.T @ sp.diags(w)).tocsr()


_OPS_CACHE: dict[int, SpatialOps] = {}


def spatial_ops(grid: SpaceTimeGrid) -> SpatialOps:
    key = id(grid)
    ops = _OPS_CACHE.get(key)
    if ops is None or ops.grid is not grid:
        ops = SpatialOps(grid)
        _OPS_CACHE[key] = ops
    return ops


def stiffness(spec: ProblemSpec, t: float, potential: np.ndarray | None = None) -> sp.csr_matrix:
    """Mass-form spatial operator K(t) including Robin, potential and drift."""
    grid = spec.grid
    ops = spatial_ops(grid)
    m = grid.mass
    K = ops.K0 + ops.E.T @ sp.diags(spec.robin_at(t)) @ ops.E
    c = spec.potential_at(t)
    if potential is not None:
        c = c + potential
    K = K + sp.diags(m * c)
    A = spec.drift_at(t)
    if A is not None:
        for d, Dd in enumerate(ops.D):
            K = K + sp.diags(m * A[:, d]) @ Dd
    return K.tocsr()


# ---------------------------------------------------------------- theta marches


class Stepper:
    """theta-scheme march for one ProblemSpec and optional extra potential.

    ``potential`` is None, an array (n,) or an array (nt + 1, n) with one
    row per time level.
    """

    def __init__(self, spec: ProblemSpec, theta: float, potential: np.ndarray | None = None):
        grid = spec.grid
        self.spec, self.grid, self.theta = spec, grid, float(theta)
        self.m = grid.mass
        levels = grid.t_nodes
        pot = None if potential is None else np.asarray(potential, dtype=float)
        per_level = pot is not None and pot.ndim == 2
        self.steady = not spec.time_dependent and not per_level
        if self.steady:
            K = stiffness(spec, 0.0, pot)
            self.K = [K] * (grid.nt + 1)
        else:
            self.K = [stiffness(spec, t, pot[k] if per_level else pot) for k, t in enumerate(levels)]
        self._lu = None
        self._luT = None
        if grid.dim == 1:
            self.bands = tuple(
                np.ascontiguousarray(np.array([Kk.diagonal(off) for Kk in self.K])) for off in (-1, 0, 1)
            )

    # 2D path: sparse LU per distinct step matrix
    def _step_lu(self, k: int, transpose: bool):
        cache = "_luT" if transpose else "_lu"
        if self.steady and getattr(self, cache) is not None:
            return getattr(self, cache)
        A = sp.diags(self.m / self.grid.dt) + self.theta * self.K[k]
        lu = spla.splu((A.T if transpose else A).tocsc())
        if self.steady:
            setattr(self, cache, lu)
        return lu

    def _explicit(self, k: int, v: np.ndarray, transpose: bool = False) -> np.ndarray:
        Kk = self.K[k].T if transpose else self.K[k]
        return self.m / self.grid.dt * v - (1 - self.theta) * (Kk @ v)

    def forward(self, rhs: np.ndarray, y0: np.ndarray) -> np.ndarray:
        """Levels 0..nt of the forward march; ``rhs`` has one row per step."""
        grid = self.grid
        rhs = np.ascontiguousarray(rhs, dtype=float)
        y0 = np.ascontiguousarray(y0, dtype=float)
        if grid.dim == 1:
            lo, di, up = self.bands
            Y = _kernels.march_forward(self.m, lo, di, up, rhs, y0, grid.dt, self.theta)
            Y = np.asarray(Y)
        else:
            Y = np.empty((grid.nt + 1, grid.n))
            Y[0] = y0
            for k in range(1, grid.nt + 1):
                Y[k] = self._step_lu(k, False).solve(self._explicit(k - 1, Y[k - 1]) + rhs[k - 1])
        if not np.all(np.isfinite(Y)):
            bad = int(np.argmax(~np.all(np.isfinite(Y), axis=1)))
            raise SolverError(f"forward march produced non-finite values at step {bad}")
        return Y

    def adjoint(self, rhs: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
        """Exact transpose of :meth:`forward` (rows = steps), plus the y0 sensitivity."""
        grid = self.grid
        rhs = np.ascontiguousarray(rhs, dtype=float)
        if grid.dim == 1:
            lo, di, up = self.bands
            Z, z0 = _kernels.march_adjoint(self.m, lo, di, up, rhs, grid.dt, self.theta)
            return np.asarray(Z), np.asarray(z0)
        N = grid.nt
        Z = np.empty((N, grid.n))
        for k in range(N, 0, -1):
            d = rhs[k - 1].copy()
            if k < N:
                d += self._explicit(k, Z[k], transpose=True)
            Z[k - 1] = self._step_lu(k, True).solve(d)
        return Z, self._explicit(0, Z[0], transpose=True)


# ---------------------------------------------------------------- public solvers


def _theta(scheme: str) -> float:
    try:
        return SCHEMES[scheme]
    except KeyError:
        raise ValueError(f"unknown scheme {scheme!r}; use one of {sorted(SCHEMES)}") from None


def _trace_rows(f, grid) -> np.ndarray | None:
    if f is None:
        return None
    return grid.check_trace(f.values if isinstance(f, TraceField) else f)


def solve_forward(spec: ProblemSpec, f=None, scheme: str = "cn", lagged: bool | None = None,
                  nonlinear: str = "lagged") -> Field:
    """Solve the state equation; rows of the result are the levels t_1..t_nt.

    ``f`` is the Robin datum on boundary nodes, one row per step.  If the
    spec carries a nonlinearity, ``nonlinear="lagged"`` uses the potential
    F0(y_prev) from the previous level in each step, ``"implicit"`` solves
    each step for F(y_k) by Newton.  ``lagged=False`` ignores F.
    """
    grid = spec.grid
    theta = _theta(scheme)
    ops = spatial_ops(grid)
    rhs = spec.source_steps(theta) * grid.mass
    fr = _trace_rows(f, grid)
    if fr is not None:
        rhs = rhs + fr @ ops.R().T
    y0 = spec.initial_values()
    use_F = spec.F is not None and not spec.F.is_zero and lagged is not False
    if not use_F:
        Y = Stepper(spec, theta).forward(rhs, y0)
    elif nonlinear == "lagged":
        Y = _forward_lagged(spec, theta, rhs, y0)
    elif nonlinear == "implicit":
        Y = _forward_implicit(spec, theta, rhs, y0)
    else:
        raise ValueError(f"unknown nonlinear mode {nonlinear!r}")
    return Field(grid, Y[1:], grid.t_nodes[1:], initial=Y[0])


def _forward_lagged(spec, theta, rhs, y0):
    from heatnull.semilinear import F0_values

    grid = spec.grid
    Y = np.empty((grid.nt + 1, grid.n))
    Y[0] = y0
    base = [stiffness(spec, t) for t in grid.t_nodes]
    m = grid.mass
    prev_pot = F0_values(spec.F, y0)
    for k in range(1, grid.nt + 1):
        pot = F0_values(spec.F, Y[k - 1])
        Kk = base[k] + sp.diags(m * pot)
        Kp = base[k - 1] + sp.diags(m * prev_pot)
        A = sp.diags(m / grid.dt) + theta * Kk
        d = m / grid.dt * Y[k - 1] - (1 - theta) * (Kp @ Y[k - 1]) + rhs[k - 1]
        Y[k] = spla.spsolve(A.tocsc(), d)
        prev_pot = pot
    if not np.all(np.isfinite(Y)):
        raise SolverError("lagged forward march produced non-finite values")
    return Y


def _forward_implicit(spec, theta, rhs, y0, rtol: float = 1e-13, max_newton: int = 30):
    grid = spec.grid
    F = spec.F
    Y = np.empty((grid.nt + 1, grid.n))
    Y[0] = y0
    base = [stiffness(spec, t) for t in grid.t_nodes]
    m = grid.mass
    Md = sp.diags(m / grid.dt)
    for k in range(1, grid.nt + 1):
        yp = Y[k - 1]
        d = m / grid.dt * yp - (1 - theta) * (base[k - 1] @ yp + m * F.func(yp)) + rhs[k - 1]
        A = Md + theta * base[k]
        y = yp.copy()
        for _ in range(max_newton):
            r = A @ y + theta * m * F.func(y) - d
            J = A + sp.diags(theta * m * F.derivative(y))
            dy = spla.spsolve(J.tocsc(), r)
            y -= dy
            if np.linalg.norm(dy) <= rtol * max(1.0, np.linalg.norm(y)):
                break
        else:
            raise SolverError(f"Newton did not converge at step {k}")
        Y[k] = y
    if not np.all(np.isfinite(Y)):
        raise SolverError("implicit forward march produced non-finite values")
    return Y


def solve_adjoint(spec: ProblemSpec, terminal=None, F1=None, F2=None, F3=None, scheme: str = "cn") -> Field:
    """Backward solve of -psi_t - Lap psi - div(A psi) + a psi = div F2 + F1.

    Boundary condition: d_nu psi + (b + A.nu) psi + F2.nu = F3.  The spatial
    operator is K^T, the transpose of the forward one, so the boundary
    condition is the one that K^T encodes.  Sources are given per step
    (F1: (nt, n), F2: (nt, n, dim), F3: (nt, nb)).  Returns all levels
    t_0..t_nt, the last one being the terminal datum.
    """
    grid = spec.grid
    theta = _theta(scheme)
    ops = spatial_ops(grid)
    m = grid.mass
    N = grid.nt
    src = np.zeros((N, grid.n))
    if F1 is not None:
        src += grid.check_field(F1) * m
    if F2 is not None:
        F2 = np.asarray(F2, dtype=float).reshape(N, grid.n, grid.dim)
        # weak form of div F2 with the boundary flux F2.nu moved to the right
        for d, Dd in enumerate(ops.D):
            src -= (Dd.T @ (m[:, None] * F2[:, :, d].T)).T
    if F3 is not None:
        src += _trace_rows(F3, grid) @ ops.R().T
    st = Stepper(spec, theta)
    P = np.empty((N + 1, grid.n))
    P[N] = np.zeros(grid.n) if terminal is None else np.asarray(terminal, dtype=float).reshape(grid.n)
    dt = grid.dt
    for k in range(N, 0, -1):
        # implicit at the lower level, mirroring the forward theta-scheme
        Kl, Ku = st.K[k - 1].T, st.K[k].T
        A = sp.diags(m / dt) + theta * Kl
        d = m / dt * P[k] - (1 - theta) * (Ku @ P[k]) + src[k - 1]
        P[k - 1] = spla.spsolve(A.tocsc(), d)
    if not np.all(np.isfinite(P)):
        raise SolverError("adjoint march produced non-finite values")
    return Field(grid, P, grid.t_nodes)


# ---------------------------------------------------------------- operator quadruple


def _heat_spec(spec: ProblemSpec) -> ProblemSpec:
    """Same grid and Robin coefficient, no drift, no potential, no data."""
    return ProblemSpec(spec.grid, b=spec.b)


def _rows(x):
    return x.values if isinstance(x, (Field, TraceField)) else np.asarray(x, dtype=float)


def op_H0(spec: ProblemSpec, q, scheme: str = "cn") -> Field:
    """z_t - Lap z = q, d_nu z + b z = 0, z(0) = 0."""
    grid = spec.grid
    st = Stepper(_heat_spec(spec), _theta(scheme))
    Y = st.forward(grid.check_field(_rows(q)) * grid.mass, np.zeros(grid.n))
    return Field(grid, Y[1:], grid.t_nodes[1:])


def op_H0_star(spec: ProblemSpec, psi, scheme: str = "cn") -> Field:
    """Exact transpose of op_H0 in the discrete L2(Q) inner product."""
    grid = spec.grid
    st = Stepper(_heat_spec(spec), _theta(scheme))
    Z, _ = st.adjoint(grid.check_field(_rows(psi)) * grid.mass)
    return Field(grid, Z, grid.t_cells)


def op_G(spec: ProblemSpec, beta, scheme: str = "cn") -> Field:
    """u_t - Lap u = 0, d_nu u + b u = beta, u(0) = 0."""
    grid = spec.grid
    st = Stepper(_heat_spec(spec), _theta(scheme))
    rhs = grid.check_trace(_rows(beta)) @ spatial_ops(grid).R().T
    Y = st.forward(rhs, np.zeros(grid.n))
    return Field(grid, Y[1:], grid.t_nodes[1:])


def op_G_star(spec: ProblemSpec, w, scheme: str = "cn") -> TraceField:
    """Exact transpose of op_G: L2(Q) -> L2(Sigma)."""
    grid = spec.grid
    st = Stepper(_heat_spec(spec), _theta(scheme))
    Z, _ = st.adjoint(grid.check_field(_rows(w)) * grid.mass)
    return TraceField(grid, Z[:, grid.boundary_nodes])


def inner_Q(grid, u, v) -> float:
    return float(grid.dt * np.sum((_rows(u) * _rows(v)) @ grid.mass))


def inner_Sigma(grid, u, v) -> float:
    return float(grid.dt * np.sum((_rows(u) * _rows(v)) @ grid.boundary_weights))


# ---------------------------------------------------------------- adjoint operator


def lstar_matrix(spec: ProblemSpec, scheme: str = "be", potential=None, steps: int | None = None) -> sp.csr_matrix:
    """Space-time matrix of the transposed stencil on the first ``steps`` steps.

    Acts on p stacked step by step (p_{steps+1} = 0) and returns
    M^{-1} (A^T p) blockwise, where A is the forward space-time matrix.
    """
    grid = spec.grid
    theta = _theta(scheme)
    N = grid.nt if steps is None else int(steps)
    st = Stepper(spec, theta, potential)
    m = grid.mass
    Minv = sp.diags(1.0 / m)
    Mdt = sp.diags(m / grid.dt)
    rows = []
    for k in range(1, N + 1):
        Kk = st.K[k]
        diag = Minv @ (Mdt + theta * Kk.T)
        blocks = [None] * N
        blocks[k - 1] = diag
        if k < N:
            blocks[k] = -(Minv @ (Mdt - (1 - theta) * Kk.T))
        rows.append(blocks)
    return sp.bmat(rows, format="csr")


def apply_Lstar(spec: ProblemSpec, p, stencil: str = "transpose", scheme: str = "be", potential=None) -> Field:
    """Discrete -p_t - Lap p - div(A p) + a p on the step lattice.

    ``transpose``: rows of M^{-1} A^T p, the exact adjoint of the forward
    space-time operator (p after the last step taken as 0).

    ``centered``: node-wise stencil independent of the solver, with centred
    time differences inside and one-sided ones at the first and last row.
    The Robin constraint
    d_nu p + (b + A.nu) p = 0 is folded in through the boundary rows.
    """
    grid = spec.grid
    P = grid.check_field(_rows(p))
    m = grid.mass
    dt = grid.dt
    if stencil == "transpose":
        theta = _theta(scheme)
        st = Stepper(spec, theta, potential)
        nxt = np.vstack([P[1:], np.zeros((1, grid.n))])
        out = np.empty_like(P)
        for k in range(grid.nt):
            Kt = st.K[k + 1].T
            out[k] = (m / dt * (P[k] - nxt[k]) + theta * (Kt @ P[k]) + (1 - theta) * (Kt @ nxt[k])) / m
        return Field(grid, out, grid.t_nodes[1:])
    if stencil != "centered":
        raise ValueError(f"unknown stencil {stencil!r}")
    ops = spatial_ops(grid)
    dpdt = np.empty_like(P)
    dpdt[0] = (P[1] - P[0]) / dt
    dpdt[-1] = (P[-1] - P[-2]) / dt
    dpdt[1:-1] = (P[2:] - P[:-2]) / (2 * dt)
    pot = None if potential is None else np.asarray(potential, dtype=float)
    bn = grid.boundary_nodes
    out = np.empty_like(P)
    for k, t in enumerate(grid.t_nodes[1:]):
        A = spec.drift_at(t)
        robin = spec.robin_at(t)
        if A is not None:
            robin = robin + grid.boundary_weights * np.sum(A[bn] * grid.outward_normals, axis=1)
        K = ops.K0 + ops.E.T @ sp.diags(robin) @ ops.E
        c = spec.potential_at(t)
        if pot is not None:
            c = c + (pot[k + 1] if pot.ndim == 2 else pot)
        div = np.zeros(grid.n)
        if A is not None:
            for d, Dd in enumerate(ops.D):
                div += Dd @ (A[:, d] * P[k])
        out[k] = -dpdt[k] + (K @ P[k]) / m - div + c * P[k]
    return Field(grid, out, grid.t_nodes[1:])
