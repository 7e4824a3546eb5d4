"""Weighted variational synthesis of boundary null controls.

The multiplier p solves

    B(p, q) = sum q_i w_i (L* p)_i (L* q)_i + sum_gamma c_j w0_j p_j q_j = l(q)

for all discrete q, where L* is the transposed backward-Euler stencil,
w = rho^-2 and w0 = rho0^-2 are sampled at cell midpoints, and
l(q) = <g, q>_Q + <y0, q(first step)>.  Then

    y = w L* p,      f = -w0 p on gamma, 0 elsewhere,

solve the discrete state equation exactly (the sign of f follows from
integrating the Robin term by parts; a forward replay confirms it).

Conditioning.  w spans hundreds of orders of magnitude, so nothing is
formed in linear scale.  With the change of unknown p = S p~ where
log S = -log(w)/2 + (Jacobi factor), the scaled factor

    J~ = diag(sqrt(q_i)) exp((lw_i - lw_j)/2) L*_ij

only involves weight ratios between neighbouring nodes and steps, and
B~ = J~^T J~ + diag(gamma term) has unit diagonal.  Steps where every
weight is below exp(-cutoff) relative to the peak carry no information at
double precision and are dropped (p = 0 there).
"""

from __future__ import annotations

import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.linalg as sla
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from heatnull.heat_ops import Field, ProblemSpec, Stepper, TraceField, lstar_matrix, solve_forward, spatial_ops
from heatnull.weights import WeightSystem

BANDED_MAX_BYTES = 400e6


class ControlError(RuntimeError):
    pass


@dataclass(frozen=True)
class DofMap:
    steps: int
    n: int

    def index(self, k: int, i: int) -> int:
        return k * self.n + i

    def unpack(self, v: np.ndarray) -> np.ndarray:
        return np.asarray(v).reshape(self.steps, self.n)


@dataclass(eq=False)
class VariationalSystem:
    """Scaled discrete form B~ p~ = l~ and the data needed to undo the scaling.

    ``matrix`` is the symmetric part when the form is symmetric, else the
    full non-symmetric operator.  ``log_scale`` is log S per dof, and
    ``shift`` the constant c in lw = log(rho^-2) + c (c cancels in y and f).
    ``rhs`` has unit max-norm; the true scaled right-hand side is
    exp(log_rhs_scale) * rhs.
    """

    matrix: sp.csr_matrix
    rhs: np.ndarray
    log_rhs_scale: float
    dof_map: DofMap
    tikhonov_eps: float
    log_scale: np.ndarray
    J_left: sp.csr_matrix
    J_right: sp.csr_matrix
    gamma_diag: np.ndarray
    log_w: np.ndarray
    log_w0: np.ndarray
    shift: float
    steps_total: int
    symmetric: bool
    dropped_source: float = 0.0
    info: dict = field(default_factory=dict)

    @property
    def steps(self) -> int:
        return self.dof_map.steps

    def bilinear(self, p, q) -> float:
        return float(q @ (self.matrix @ p))


def weight_shift(ws: WeightSystem) -> float:
    """c = 2 s min(alpha); keeps log(rho^-2) + c <= 0 and is grid independent."""
    ell_max = ws.T**2 / 4
    alpha_min = (ws.big - np.exp(ws.lam * ws.eta.sup_norm)) / ell_max
    return float(2 * ws.s * alpha_min)


def _cell_logs(spec: ProblemSpec, ws: WeightSystem):
    grid = spec.grid
    t = grid.t_cells
    logs = ws.log_rho_inv2(t, ws.eta.values)
    c = weight_shift(ws)
    return np.atleast_2d(logs.rho) + c, np.atleast_2d(logs.rho0) + c, c


def _scaled_factor(D: sp.csr_matrix, sq: np.ndarray, lw: np.ndarray) -> sp.csr_matrix:
    C = D.tocoo()
    data = C.data * sq[C.row] * np.exp(0.5 * (lw[C.row] - lw[C.col]))
    return sp.csr_matrix((data, (C.row, C.col)), shape=D.shape)


def assemble_B(spec: ProblemSpec, ws: WeightSystem, eps: float = 0.0, cutoff: float = 80.0,
               potential_left=None, potential_right=None) -> VariationalSystem:
    """Assemble the scaled variational system.

    ``potential_left`` / ``potential_right`` add a zeroth-order term to the
    L* acting on the unknown / on the test function (per-level arrays of
    shape (nt + 1, n) or None).  Different potentials give a non-symmetric
    form.
    """
    grid = spec.grid
    n, nt = grid.n, grid.nt
    lw_all, lw0_all, c = _cell_logs(spec, ws)
    gam = grid.gamma_weights
    bn = grid.boundary_nodes
    lw0_gam = np.full_like(lw0_all, -np.inf)
    lw0_gam[:, bn[gam > 0]] = lw0_all[:, bn[gam > 0]]
    live = (lw_all.max(axis=1) > -cutoff) | (lw0_gam.max(axis=1) > -cutoff)
    if not live.any():
        raise ControlError("no time step carries weight above the cutoff")
    N = int(np.nonzero(live)[0].max()) + 1
    lw, lw0 = lw_all[:N].ravel(), lw0_all[:N].ravel()

    sym = potential_left is None and potential_right is None
    if sym:
        DL = lstar_matrix(spec, "be", None, steps=N)
        DR = DL
    else:
        DL = lstar_matrix(spec, "be", potential_left, steps=N)
        DR = lstar_matrix(spec, "be", potential_right, steps=N)
        sym = potential_left is potential_right

    q = np.tile(grid.dt * grid.mass, N)
    sq = np.sqrt(q)
    JL = _scaled_factor(DL, sq, lw)
    JR = JL if DR is DL else _scaled_factor(DR, sq, lw)
    cgam = np.zeros(n)
    cgam[bn] = grid.dt * gam
    cq = np.tile(cgam, N)
    gd = np.zeros(N * n)
    on = cq > 0
    gd[on] = cq[on] * np.exp(lw0[on] - lw[on])

    Bt = (JR.T @ JL + sp.diags(gd)).tocsr()
    d = Bt.diagonal()
    if np.any(d <= 0) or not np.all(np.isfinite(d)):
        raise ControlError("scaled system has a non-positive diagonal entry")
    jac = 1.0 / np.sqrt(d)
    Dj = sp.diags(jac)
    Bh = (Dj @ Bt @ Dj).tocsr()
    same = JR is JL
    JL = (JL @ Dj).tocsr()
    JR = JL if same else (JR @ Dj).tocsr()
    gdh = gd * jac**2
    log_scale = -0.5 * lw + np.log(jac)
    if np.max(log_scale) > 700:
        raise ControlError("weights exceed double range in the active window; lower s or the cutoff")
    if eps > 0:
        Bh = (Bh + eps * sp.identity(N * n)).tocsr()

    rhs, log_rho, dropped = _scaled_rhs(spec, log_scale, N)

    if sym:
        asym = abs(Bh - Bh.T).max() if Bh.nnz else 0.0
        if asym > 1e-12 * max(1.0, abs(Bh).max()):
            raise ControlError(f"assembled form is not symmetric (max |B - B^T| = {asym:.2e})")
    return VariationalSystem(
        matrix=Bh, rhs=rhs, log_rhs_scale=log_rho, dof_map=DofMap(N, n), tikhonov_eps=float(eps), log_scale=log_scale,
        J_left=JL, J_right=JR, gamma_diag=gdh, log_w=lw.reshape(N, n), log_w0=lw0.reshape(N, n),
        shift=c, steps_total=nt, symmetric=sym, dropped_source=dropped,
        info={"cutoff": cutoff},
    )


# ---------------------------------------------------------------- linear solve


def _scaled_rhs(spec: ProblemSpec, log_scale: np.ndarray, N: int):
    """Unit-max-norm scaled l(q) = <g, q>_Q + <y0, q_1>, its log scale, dropped source."""
    grid = spec.grid
    n = grid.n
    src = spec.source_steps(1.0)
    ell = (grid.dt * src[:N] * grid.mass).ravel()
    ell[:n] += grid.mass * spec.initial_values()
    nz = ell != 0
    rhs = np.zeros_like(ell)
    log_rho = 0.0
    if nz.any():
        le = log_scale[nz] + np.log(np.abs(ell[nz]))
        log_rho = float(le.max())
        rhs[nz] = np.sign(ell[nz]) * np.exp(le - log_rho)
    dropped = float(np.sqrt(grid.dt * np.sum((src[N:] ** 2) @ grid.mass))) if N < grid.nt else 0.0
    return rhs, log_rho, dropped


def _bandwidth(A: sp.spmatrix) -> int:
    C = A.tocoo()
    return int(np.max(np.abs(C.row - C.col))) if C.nnz else 0


def _banded_upper(A: sp.spmatrix, bw: int) -> np.ndarray:
    U = sp.triu(A).tocoo()
    ab = np.zeros((bw + 1, A.shape[0]))
    ab[bw + U.row - U.col, U.col] = U.data
    return ab


def _banded_full(A: sp.spmatrix, bw: int) -> np.ndarray:
    C = A.tocoo()
    ab = np.zeros((2 * bw + 1, A.shape[0]))
    ab[bw + C.row - C.col, C.col] = C.data
    return ab


class _Factor:
    """Direct factorization with the method picked from symmetry and band size."""

    def __init__(self, A: sp.csr_matrix, symmetric: bool):
        self.A = A
        n = A.shape[0]
        bw = _bandwidth(A)
        rows = (bw + 1) if symmetric else (3 * bw + 1)
        self.method = None
        if rows * n * 8 <= BANDED_MAX_BYTES:
            if symmetric:
                c = sla.cholesky_banded(_banded_upper(A, bw), lower=False, check_finite=True)
                self._solve = lambda r: sla.cho_solve_banded((c, False), r, check_finite=False)
                self.method = "banded-cholesky"
            else:
                ab = _banded_full(A, bw)
                self._solve = lambda r: sla.solve_banded((bw, bw), ab, r, check_finite=False)
                self.method = "banded-lu"
        else:
            lu = spla.splu(A.tocsc())
            self._solve = lu.solve
            self.method = "sparse-lu"

    def solve(self, r):
        return self._solve(r)


def _factorize(A: sp.csr_matrix, symmetric: bool):
    """(factor or None, matrix actually factored, Tikhonov shift used)."""
    try:
        return _Factor(A, symmetric), A, 0.0
    except (np.linalg.LinAlgError, RuntimeError, ValueError):
        pass
    shift = 1e-12 * float(np.mean(A.diagonal()))
    A = (A + shift * sp.identity(A.shape[0])).tocsr()
    try:
        return _Factor(A, symmetric), A, shift
    except (np.linalg.LinAlgError, RuntimeError, ValueError):
        return None, A, shift


def solve_system(system: VariationalSystem, refine: int = 3, cg_rtol: float = 1e-10):
    """Solve the scaled system; returns (p~, diagnostics)."""
    r = system.rhs
    fac, A, shift = _factorize(system.matrix, system.symmetric)
    diag = {"retry_eps": shift, "refinement": []}
    rn = float(np.linalg.norm(r)) or 1.0
    if fac is not None:
        diag["method"] = fac.method
        x = fac.solve(r)
        for _ in range(refine):
            res = r - A @ x
            diag["refinement"].append(float(np.linalg.norm(res)) / rn)
            x = x + fac.solve(res)
        res = float(np.linalg.norm(r - A @ x)) / rn
        if np.all(np.isfinite(x)) and res < 1e-8:
            diag["residual"] = res
            diag["factor"] = fac
            return x, diag
    # iterative fallback
    hist = []
    if system.symmetric:
        x, info = spla.cg(A, r, rtol=cg_rtol, maxiter=20 * A.shape[0], callback=lambda xk: hist.append(
            float(np.linalg.norm(r - A @ xk)) / rn))
        diag["method"] = "cg"
    else:
        x, info = spla.gmres(A, r, rtol=cg_rtol, restart=200, maxiter=50 * A.shape[0] // 200 + 1)
        diag["method"] = "gmres"
    res = float(np.linalg.norm(r - A @ x)) / rn
    diag["residual"] = res
    if info != 0 or res > 10 * cg_rtol:
        raise ControlError(f"{diag['method']} did not converge (relative residual {res:.2e}); history {hist[-5:]}")
    return x, diag


def min_eigenvalue(system: VariationalSystem, factor=None) -> float:
    """Smallest eigenvalue of the scaled symmetric matrix (shift-invert Lanczos)."""
    A = system.matrix
    if factor is None:
        factor = _Factor(A, True)
    op = spla.LinearOperator(A.shape, matvec=factor.solve, dtype=float)
    vals = spla.eigsh(A, k=1, sigma=0.0, which="LM", OPinv=op, return_eigenvectors=False, tol=1e-6)
    return float(vals[0])


# ---------------------------------------------------------------- solution


@dataclass(eq=False)
class ControlSolution:
    """Multiplier, reconstructed state and control with diagnostics.

    The multiplier is p = exp(p_log_scale) * p.values; the factor is far
    outside double range for realistic weights.  Weighted norms are given as
    natural logarithms.  ``p_scaled`` solves the unit-rhs scaled system.
    """

    p: Field
    p_log_scale: float
    y: Field
    f: TraceField
    terminal_norm: float
    replay: Field
    replay_terminal_norm: float
    initial_norm: float
    log_weighted_norm_y: float
    log_weighted_norm_f: float
    system: VariationalSystem
    p_scaled: np.ndarray
    diagnostics: dict

    @property
    def terminal_ratio(self) -> float:
        return self.replay_terminal_norm / self.initial_norm if self.initial_norm > 0 else float("nan")

    @property
    def weighted_norms(self) -> dict:
        return {"log_rho_y": self.log_weighted_norm_y, "log_rho0_f": self.log_weighted_norm_f}


def reconstruct(spec: ProblemSpec, system: VariationalSystem, pt: np.ndarray):
    """y, f and the multiplier (up to exp(shift + log_rhs_scale)) from p~."""
    grid = spec.grid
    N, n = system.steps, grid.n
    lr = system.log_rhs_scale
    Jp = system.J_left @ pt
    q = np.tile(grid.dt * grid.mass, N)
    lw = system.log_w.ravel()
    Y = np.zeros((grid.nt, n))
    Y[:N] = _signed_exp(Jp / np.sqrt(q), 0.5 * lw + lr).reshape(N, n)
    bn = grid.boundary_nodes
    on = grid.gamma_mask
    P = np.zeros((grid.nt, n))
    P[:N] = _signed_exp(pt, system.log_scale).reshape(N, n)
    Fv = np.zeros((grid.nt, grid.nb))
    lw0 = system.log_w0[:, bn[on]]
    ls = system.log_scale.reshape(N, n)[:, bn[on]]
    Fv[:N, on] = -_signed_exp(pt.reshape(N, n)[:, bn[on]], lw0 + ls + lr)
    return Y, Fv, P, Jp


def _signed_exp(v, logfac):
    """v * exp(logfac) without forming exp(logfac) on its own."""
    v = np.asarray(v, dtype=float)
    with np.errstate(divide="ignore"):
        la = np.log(np.abs(v)) + logfac
    return np.sign(v) * np.exp(np.minimum(la, 709.0))


def solve_null_control(spec: ProblemSpec, ws: WeightSystem, eps: float = 0.0, cutoff: float = 80.0,
                       min_eig: bool = False, system: VariationalSystem | None = None) -> ControlSolution:
    """Null control of the linear problem by the weighted variational route."""
    t0 = time.perf_counter()
    grid = spec.grid
    if system is None:
        system = assemble_B(spec, ws, eps=eps, cutoff=cutoff)
    y0 = spec.initial_values()
    init = float(np.sqrt(y0**2 @ grid.mass))
    if not np.any(system.rhs):
        pt = np.zeros_like(system.rhs)
        sdiag = {"method": "trivial", "residual": 0.0, "retry_eps": 0.0, "refinement": []}
    else:
        pt, sdiag = solve_system(system)
    factor = sdiag.pop("factor", None)
    return _finish(spec, system, pt, sdiag, factor, y0, init, min_eig, t0)


def _finish(spec, system, pt, sdiag, factor, y0, init, min_eig, t0, replay_mode="lagged"):
    grid = spec.grid
    Y, Fv, P, Jp = reconstruct(spec, system, pt)
    yF = Field(grid, Y, grid.t_nodes[1:], initial=y0)
    fT = TraceField(grid, Fv)
    # replay with the Robin datum f 1_gamma (fractional weight at segment ends)
    rep = solve_forward(spec, fT.values * grid.gamma_fraction, scheme="be", nonlinear=replay_mode)
    ny = float(np.linalg.norm(Jp))
    nf = float(np.sqrt(np.sum(system.gamma_diag * pt**2)))
    base = 0.5 * system.shift + system.log_rhs_scale
    diag = dict(sdiag)
    diag.update(
        steps_active=system.steps,
        steps_total=system.steps_total,
        dofs=system.matrix.shape[0],
        tikhonov_eps=system.tikhonov_eps,
        dropped_source=system.dropped_source,
        energy_lhs=ny**2 + nf**2,
        energy_rhs=float(system.rhs @ pt),
        energy_form=system.bilinear(pt, pt),
        replay_max_gap=float(np.max(np.abs(rep.values - yF.values))),
        # round-off level of the replayed terminal ratio: accumulated eps of the largest state
        replay_floor=float(np.finfo(float).eps * np.max(np.abs(rep.values)) * grid.nt / init) if init > 0 else 0.0,
        seconds=time.perf_counter() - t0,
    )
    if min_eig and system.symmetric and system.rhs.size:
        diag["min_eig"] = min_eigenvalue(system, factor)
    with np.errstate(divide="ignore"):
        ly = base + float(np.log(ny))
        lf = base + float(np.log(nf))
    return ControlSolution(
        p=Field(grid, P, grid.t_cells), p_log_scale=float(system.shift + system.log_rhs_scale), y=yF, f=fT,
        terminal_norm=float(yF.slice_norms()[-1]), replay=rep,
        replay_terminal_norm=float(rep.slice_norms()[-1]), initial_norm=init,
        log_weighted_norm_y=ly, log_weighted_norm_f=lf,
        system=system, p_scaled=pt, diagnostics=diag,
    )


# ---------------------------------------------------------------- checks


def galerkin_defect(sol: ControlSolution, rng: np.random.Generator, trials: int = 10) -> float:
    """max |B(p, q) - l(q)| / (|q| |l|) over random scaled test vectors."""
    sysm = sol.system
    rn = float(np.linalg.norm(sysm.rhs)) or 1.0
    worst = 0.0
    Bp = sysm.matrix @ sol.p_scaled
    for _ in range(trials):
        q = rng.standard_normal(sysm.rhs.size)
        worst = max(worst, abs(q @ Bp - q @ sysm.rhs) / (np.linalg.norm(q) * rn))
    return float(worst)


def check_optimality_residual(sol: ControlSolution, spec: ProblemSpec, ws: WeightSystem | None = None) -> float:
    """Residual of the state equation for the reconstructed (y, f).

    Independent of the solver's stencil: Crank-Nicolson-centred in time with
    the textbook 3-point Laplacian inside, and one-sided second-order normal
    derivatives for d_nu y + b y - f on the boundary.  Returned as
    sqrt(|r_Q|^2 + |r_Sigma|^2) in discrete L2 norms.
    """
    grid = spec.grid
    Y = np.vstack([sol.y.initial[None, :], sol.y.values])
    ops = spatial_ops(grid)
    m = grid.mass
    dt = grid.dt
    bn = grid.boundary_nodes
    inner = np.setdiff1d(np.arange(grid.n), bn)
    src = spec.source_steps(0.5)
    rq = np.zeros((grid.nt, grid.n))
    for k in range(1, grid.nt + 1):
        tm = grid.t_nodes[k] - 0.5 * dt
        ymid = 0.5 * (Y[k] + Y[k - 1])
        lap = -(ops.K0 @ ymid) / m
        r = (Y[k] - Y[k - 1]) / dt - lap + spec.potential_at(tm) * ymid - src[k - 1]
        A = spec.drift_at(tm)
        if A is not None:
            for d, Dd in enumerate(ops.D):
                r += A[:, d] * (Dd @ ymid)
        rq[k - 1, inner] = r[inner]
    # boundary: one-sided second-order normal derivative at each level
    dnu = _normal_derivative(grid, Y[1:])
    b_nodes = np.where(grid.boundary_weights > 0, spec.robin_at(0.0) / grid.boundary_weights, 0.0)
    rs = dnu + b_nodes * Y[1:, bn] - sol.f.values * grid.gamma_fraction
    res_q = grid.dt * np.sum(rq**2 @ m)
    res_s = grid.dt * np.sum(rs**2 @ grid.boundary_weights)
    return float(np.sqrt(res_q + res_s))


def _normal_derivative(grid, Y: np.ndarray) -> np.ndarray:
    bn = grid.boundary_nodes
    out = np.zeros((Y.shape[0], bn.size))
    if grid.dim == 1:
        h = grid.h[0]
        out[:, 0] = (3 * Y[:, 0] - 4 * Y[:, 1] + Y[:, 2]) / (2 * h)
        out[:, -1] = (3 * Y[:, -1] - 4 * Y[:, -2] + Y[:, -3]) / (2 * h)
        return out
    nx, ny = grid.shape
    hx, hy = grid.h
    cube = Y.reshape(Y.shape[0], nx, ny)
    pos = {int(v): i for i, v in enumerate(bn)}
    cnt = np.zeros(bn.size)
    faces = {
        "left": (lambda c: (3 * c[:, 0, :] - 4 * c[:, 1, :] + c[:, 2, :]) / (2 * hx), [grid.node_index(0, j) for j in range(ny)]),
        "right": (lambda c: (3 * c[:, -1, :] - 4 * c[:, -2, :] + c[:, -3, :]) / (2 * hx), [grid.node_index(nx - 1, j) for j in range(ny)]),
        "bottom": (lambda c: (3 * c[:, :, 0] - 4 * c[:, :, 1] + c[:, :, 2]) / (2 * hy), [grid.node_index(i, 0) for i in range(nx)]),
        "top": (lambda c: (3 * c[:, :, -1] - 4 * c[:, :, -2] + c[:, :, -3]) / (2 * hy), [grid.node_index(i, ny - 1) for i in range(nx)]),
    }
    for fn, idx in faces.values():
        vals = fn(cube)
        cols = [pos[i] for i in idx]
        out[:, cols] += vals
        cnt[cols] += 1
    return out / cnt


def check_minimality(sol: ControlSolution, spec: ProblemSpec, rng: np.random.Generator, trials: int = 5,
                     scale: float = 1e-2):
    """Compare the weighted cost S of f with that of f + delta.

    S(f) = (|rho y|^2 + |rho0 f|^2) / 2 with y the state driven by f; the
    competitor's state is y + (forward response to delta).  Costs are in
    the units of the scaled system (the common factor
    exp(shift + 2 log_rhs_scale) removed).  ``delta`` lives on gamma and is
    sized so that S(delta) = scale^2 S(f).  Returns (S(f), S(f + delta))
    pairs.
    """
    grid = spec.grid
    sysm = sol.system
    N, n = sysm.steps, grid.n
    bn = grid.boundary_nodes
    on = grid.gamma_mask
    lw = sysm.log_w
    lw0 = sysm.log_w0[:, bn[on]]
    lr = sysm.log_rhs_scale
    sq = np.sqrt(grid.dt * grid.mass)
    sc = np.sqrt(grid.dt * grid.gamma_weights[on])
    st = Stepper(spec, 1.0)
    R = spatial_ops(grid).R()

    def weighted(Y, Fv):
        u = sq * _signed_exp(Y[:N], -0.5 * lw - lr)
        v = sc * _signed_exp(Fv[:N, on], -0.5 * lw0 - lr)
        return u, v

    u0, v0 = weighted(sol.y.values, sol.f.values)
    base = 0.5 * (np.sum(u0**2) + np.sum(v0**2))
    out = []
    with np.errstate(divide="ignore"):
        for _ in range(trials):
            d = np.zeros((grid.nt, grid.nb))
            d[:N, on] = rng.standard_normal((N, int(on.sum()))) * np.exp(0.5 * (lw0 - lw0.max()))
            dY = st.forward((d * grid.gamma_fraction) @ R.T, np.zeros(n))[1:]
            # delta has arbitrary scale: weight it in logs with a common shift
            la = np.log(np.abs(dY[:N])) - 0.5 * lw
            lb = np.log(np.abs(d[:N, on])) - 0.5 * lw0
            m = max(la.max(), lb.max())
            du = sq * np.sign(dY[:N]) * np.exp(la - m)
            dv = sc * np.sign(d[:N, on]) * np.exp(lb - m)
            sd = 0.5 * (np.sum(du**2) + np.sum(dv**2))
            k = scale * np.sqrt(base / sd) if sd > 0 else 0.0
            val = 0.5 * (np.sum((u0 + k * du) ** 2) + np.sum((v0 + k * dv) ** 2))
            out.append((float(base), float(val)))
    return out


@dataclass
class NormBoundReport:
    """log ratios are log((|rho y| + |rho0 f|) / (|g| + |y0|)) minus shift/2."""

    log_ratios: list
    skipped: int
    log_C_hat_normalized: float
    log_C_hat: float


def check_norm_bound(spec: ProblemSpec, ws: WeightSystem, batch, cutoff: float = 80.0) -> NormBoundReport:
    """Empirical constant of |rho y| + |rho0 f| <= C (|g| + |y0|) over a batch.

    ``batch`` yields (g, y0) pairs (per-step arrays / node arrays or None).
    One factorization serves the whole batch.  Entries with zero data are
    skipped.  Ratios carry the grid-independent factor exp(shift / 2),
    which is removed from ``log_C_hat_normalized``.
    """
    grid = spec.grid
    out, skipped = [], 0
    system = factor = None
    for g, y0 in batch:
        gn = float(np.sqrt(grid.dt * np.sum((np.asarray(g) ** 2) @ grid.mass))) if g is not None else 0.0
        yn = float(np.sqrt(np.asarray(y0) ** 2 @ grid.mass)) if y0 is not None else 0.0
        if gn + yn == 0:
            skipped += 1
            continue
        s = spec.replace(g=g, y0=y0)
        if system is None:
            system = assemble_B(s, ws, cutoff=cutoff)
            factor, A, _ = _factorize(system.matrix, True)
            if factor is None:
                raise ControlError("norm-bound system could not be factored")
        rhs, lr, _ = _scaled_rhs(s, system.log_scale, system.steps)
        pt = factor.solve(rhs)
        for _ in range(2):
            pt = pt + factor.solve(rhs - A @ pt)
        ny = float(np.linalg.norm(system.J_left @ pt))
        nf = float(np.sqrt(np.sum(system.gamma_diag * pt**2)))
        out.append(lr + float(np.log(ny + nf)) - float(np.log(gn + yn)))
    if not out:
        return NormBoundReport([], skipped, float("nan"), float("nan"))
    c = max(out)
    return NormBoundReport(out, skipped, c, c + 0.5 * system.shift)


def warn_if_unsafe(ws: WeightSystem):
    if ws.below_threshold:
        warnings.warn("s or lambda below the configured thresholds; null controllability not guaranteed", stacklevel=2)
