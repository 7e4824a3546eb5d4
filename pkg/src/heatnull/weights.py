"""Auxiliary function eta and the exponential Carleman weight family.

With ell(t) = t (T - t) the weights are

    alpha = (exp(2 lam |eta|_inf) - exp(lam eta)) / ell,   xi = exp(lam eta) / ell,
    rho = exp(s alpha),  rho1 = s^-1/2 lam^-1 xi^-1/2 rho,
    rho0 = s^-3/2 lam^-2 xi^-3/2 rho,  rho2 = s^-1 lam^-1 xi^-1 rho,
    rho3 = s^-1/2 lam^-1/2 xi^-1/2 rho.

``rho`` alone overflows for realistic (s, lam), so everything is carried as
logarithms and exponentiated once, after all factors are combined.

The ``terminal`` profile replaces ell by T^2/4 on (0, T/2].  It keeps the
blow-up at t = T, which is what forces y(T) = 0, and removes the one at
t = 0, which only penalises the state near the initial time.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import NamedTuple

import numpy as np

from heatnull.geometry import GeometryError, SpaceTimeGrid

EXP_CLIP = 700.0


class EtaVerificationError(ValueError):
    """A candidate eta failed one of its node-wise properties."""


# ---------------------------------------------------------------- eta


@dataclass(frozen=True, eq=False)
class EtaFunction:
    """eta sampled on the nodes of a grid, with its analytic evaluators.

    ``c0_gradient`` is the realized min |grad eta| and ``c0_normal`` the
    realized min of -d_nu eta on the uncontrolled boundary; ``c0`` is the
    smaller of the two.  2D corners, where the boundary is not smooth and
    grad eta must vanish, are excluded from both minima.
    """

    grid: SpaceTimeGrid
    values: np.ndarray
    gradient: np.ndarray
    c0_gradient: float
    c0_normal: float
    laplacian_bound: float
    sup_norm: float
    checks: dict = field(default_factory=dict)
    _eval: object = field(default=None, repr=False)
    _grad: object = field(default=None, repr=False)

    @property
    def c0(self) -> float:
        return min(self.c0_gradient, self.c0_normal)

    @property
    def min_value(self) -> float:
        return float(self.values.min())

    def evaluate(self, points) -> np.ndarray:
        return self._eval(np.atleast_2d(np.asarray(points, dtype=float)))

    def gradient_at(self, points) -> np.ndarray:
        return self._grad(np.atleast_2d(np.asarray(points, dtype=float)))


def _eta_1d(domain):
    a, b = domain.bounds
    L = b - a
    if domain.gamma[0].face == "right":
        return (lambda p: (p[:, 0] - a) / L), (lambda p: np.full((p.shape[0], 1), 1.0 / L))
    return (lambda p: (b - p[:, 0]) / L), (lambda p: np.full((p.shape[0], 1), -1.0 / L))


def _eta_2d(domain):
    if len(domain.gamma) != 1:
        raise GeometryError("the built-in 2D eta supports a single control segment")
    seg = domain.gamma[0]
    ax, bx, ay, by = domain.bounds
    Lx, Ly = bx - ax, by - ay
    flo, fhi = domain.face_extent(seg.face)
    lo, hi = domain.segment_range(seg)
    u0, u1 = (lo - flo) / (fhi - flo), (hi - flo) / (fhi - flo)
    c = 0.5 * (u0 + u1)
    half = 0.5 * (u1 - u0)
    # phi is a monotone Mobius map sending c to 1/2, so the hump of g sits
    # under the control segment wherever it lies on the face
    mob = c / (1.0 - c)
    kappa = 1.0

    # (u, v) unit-square coordinates with v = 1 on the control face;
    # jac[d] = (du/dx_d, dv/dx_d)
    face = seg.face
    if face == "top":
        uv = lambda p: ((p[:, 0] - ax) / Lx, (p[:, 1] - ay) / Ly)
        jac = ((1 / Lx, 0.0), (0.0, 1 / Ly))
    elif face == "bottom":
        uv = lambda p: ((p[:, 0] - ax) / Lx, (by - p[:, 1]) / Ly)
        jac = ((1 / Lx, 0.0), (0.0, -1 / Ly))
    elif face == "right":
        uv = lambda p: ((p[:, 1] - ay) / Ly, (p[:, 0] - ax) / Lx)
        jac = ((0.0, 1 / Lx), (1 / Ly, 0.0))
    else:
        uv = lambda p: ((p[:, 1] - ay) / Ly, (bx - p[:, 0]) / Lx)
        jac = ((0.0, -1 / Lx), (1 / Ly, 0.0))

    def parts(u, v):
        den = u + mob * (1 - u)
        phi = u / den
        dphi = mob / den**2
        g = 4 * phi * (1 - phi)
        dg = 4 * dphi * (1 - 2 * phi)
        inside = (u > u0) & (u < u1)
        q = np.where(inside, (u - u0) * (u1 - u), 0.0) / half**2
        dq = np.where(inside, (u1 - u) - (u - u0), 0.0) / half**2
        B = q**3
        dB = 3 * q**2 * dq
        w = v * (1 - v) + kappa * B * v**2
        dw_u = kappa * dB * v**2
        dw_v = 1 - 2 * v + 2 * kappa * B * v
        return g, dg, w, dw_u, dw_v

    def ev(p):
        u, v = uv(p)
        g, _, w, _, _ = parts(u, v)
        return g * w

    def gr(p):
        u, v = uv(p)
        g, dg, w, dw_u, dw_v = parts(u, v)
        eu, ev_ = dg * w + g * dw_u, g * dw_v
        return np.column_stack([eu * jac[0][0] + ev_ * jac[0][1], eu * jac[1][0] + ev_ * jac[1][1]])

    # the maximum sits on the control face, where eta = kappa g B
    us = np.linspace(u0, u1, 4001)
    g, _, _, _, _ = parts(us, np.ones_like(us))
    sup = float(np.max(kappa * g * np.where((us > u0) & (us < u1), ((us - u0) * (u1 - us) / half**2) ** 3, 0)))
    return ev, gr, sup


def build_eta(grid: SpaceTimeGrid) -> EtaFunction:
    """Construct eta for the grid's control region and verify it node-wise.

    Raises :class:`EtaVerificationError` naming the first failed property.
    """
    domain = grid.domain
    if domain.dim == 1:
        ev, gr = _eta_1d(domain)
        sup = 1.0
    else:
        ev, gr, sup = _eta_2d(domain)
    pts = grid.points
    values = ev(pts)
    grad = gr(pts)
    sup = max(sup, float(values.max()))
    lap = _laplacian_bound(gr, pts, grid.h)
    eta = EtaFunction(grid, values, grad, 0.0, 0.0, lap, sup, {}, ev, gr)
    checks, c0g, c0n = verify_eta(eta)
    eta = EtaFunction(grid, values, grad, c0g, c0n, lap, sup, checks, ev, gr)
    for name, (ok, detail) in checks.items():
        if not ok:
            raise EtaVerificationError(f"eta fails property {name}: {detail}")
    return eta


def _laplacian_bound(gr, pts, h) -> float:
    d = 1e-5 * min(h)
    lap = np.zeros(pts.shape[0])
    for k in range(pts.shape[1]):
        e = np.zeros(pts.shape[1])
        e[k] = d
        lap += (gr(pts + e)[:, k] - gr(pts - e)[:, k]) / (2 * d)
    return float(np.abs(lap).max())


def verify_eta(eta: EtaFunction, tol_zero: float = 1e-10):
    """Check the four node-wise properties of eta.

    Returns ``(checks, c0_gradient, c0_normal)``; ``checks`` maps each
    property to ``(passed, detail)``.
    """
    grid = eta.grid
    bn = grid.boundary_nodes
    interior = np.setdiff1d(np.arange(grid.n), bn)
    corner = bn[grid.corner_mask]
    uncontrolled = (~grid.gamma_mask) & (~grid.corner_mask)
    free = bn[uncontrolled]
    smooth = np.setdiff1d(np.arange(grid.n), corner)

    gnorm = np.linalg.norm(eta.gradient, axis=1)
    c0g = float(gnorm[smooth].min())
    nrm = grid.outward_normals[uncontrolled]
    dnu = np.sum(eta.gradient[free] * nrm, axis=1)
    c0n = float((-dnu).min()) if dnu.size else np.inf
    c0 = min(c0g, c0n)

    tang = eta.gradient[free] - dnu[:, None] * nrm
    checks = {
        "(i) positive inside": (
            bool(interior.size == 0 or eta.values[interior].min() > 0),
            f"min eta inside = {eta.values[interior].min() if interior.size else np.nan:.3e}",
        ),
        "(ii) gradient bounded below": (c0g > 0 and np.all(gnorm[smooth] >= c0 / 2), f"min |grad eta| = {c0g:.3e}"),
        "(iii) outward derivative negative": (
            c0n > 0 and bool(np.all(dnu <= -c0 / 2)),
            f"max d_nu eta = {(-c0n):.3e}",
        ),
        "(iv) vanishes on uncontrolled boundary": (
            bool(np.all(np.abs(eta.values[bn[~grid.gamma_mask]]) <= tol_zero))
            and bool(np.all(np.linalg.norm(tang, axis=1) <= tol_zero)),
            f"max |eta| = {np.abs(eta.values[bn[~grid.gamma_mask]]).max():.3e}, "
            f"max |tangential grad| = {np.linalg.norm(tang, axis=1).max() if tang.size else 0.0:.3e}",
        ),
    }
    return checks, c0g, c0n


# ---------------------------------------------------------------- weights


class RhoLogs(NamedTuple):
    rho: np.ndarray
    rho0: np.ndarray
    rho1: np.ndarray
    rho2: np.ndarray
    rho3: np.ndarray


def default_s_min(T: float, s_scale: float = 2.0) -> float:
    """Proxy threshold s_min = s_scale (T + T^(8/3))."""
    return s_scale * (T + T ** (8.0 / 3.0))


@dataclass(frozen=True, eq=False)
class WeightSystem:
    eta: EtaFunction
    s: float
    lam: float
    T: float
    profile: str = "symmetric"
    s_scale: float = 2.0
    lambda_min: float = 2.0

    def __post_init__(self):
        if self.profile not in ("symmetric", "terminal"):
            raise ValueError(f"unknown weight profile {self.profile!r}")
        if self.s <= 0 or self.lam <= 0 or self.T <= 0:
            raise ValueError("s, lambda and T must be positive")

    @classmethod
    def default(cls, eta, T, s_factor=1.0, lam=2.0, s_scale=2.0, profile="symmetric", lambda_min=2.0):
        return cls(eta, s_factor * default_s_min(T, s_scale), lam, T, profile, s_scale, lambda_min)

    def with_s(self, s: float) -> "WeightSystem":
        return WeightSystem(self.eta, s, self.lam, self.T, self.profile, self.s_scale, self.lambda_min)

    def with_profile(self, profile: str) -> "WeightSystem":
        return WeightSystem(self.eta, self.s, self.lam, self.T, profile, self.s_scale, self.lambda_min)

    @property
    def s_min(self) -> float:
        return default_s_min(self.T, self.s_scale)

    @property
    def below_threshold(self) -> bool:
        return self.s < self.s_min * (1 - 1e-12) or self.lam < self.lambda_min

    @property
    def big(self) -> float:
        """exp(2 lam |eta|_inf), the constant inside alpha."""
        return float(np.exp(2 * self.lam * self.eta.sup_norm))

    def ell(self, t) -> np.ndarray:
        t = np.asarray(t, dtype=float)
        if np.any((t <= 0) | (t >= self.T)):
            raise ValueError("weights are only defined for 0 < t < T")
        e = t * (self.T - t)
        if self.profile == "terminal":
            e = np.where(t <= self.T / 2, self.T**2 / 4, e)
        return e

    def _broadcast(self, t, eta_vals):
        ell = self.ell(t)
        ev = np.asarray(eta_vals, dtype=float)
        if ell.ndim == 1 and ev.ndim == 1 and ell.size > 1 and ev.size > 1:
            return ell[:, None], ev[None, :]
        return ell, ev

    def alpha(self, t, eta_vals) -> np.ndarray:
        ell, ev = self._broadcast(t, eta_vals)
        return (self.big - np.exp(self.lam * ev)) / ell

    def xi(self, t, eta_vals) -> np.ndarray:
        ell, ev = self._broadcast(t, eta_vals)
        return np.exp(self.lam * ev) / ell

    def log_xi(self, t, eta_vals) -> np.ndarray:
        ell, ev = self._broadcast(t, eta_vals)
        return self.lam * ev - np.log(ell)

    def log_rho(self, t, eta_vals) -> RhoLogs:
        """Logarithms of rho, rho0, rho1, rho2, rho3 (exact, never clipped)."""
        sa = self.s * self.alpha(t, eta_vals)
        lx = self.log_xi(t, eta_vals)
        ls, ll = np.log(self.s), np.log(self.lam)
        return RhoLogs(
            rho=sa,
            rho0=sa - 1.5 * (ls + lx) - 2 * ll,
            rho1=sa - 0.5 * (ls + lx) - ll,
            rho2=sa - (ls + lx) - ll,
            rho3=sa - 0.5 * (ls + lx + ll),
        )

    def log_rho_inv2(self, t, eta_vals) -> RhoLogs:
        return RhoLogs(*(-2 * v for v in self.log_rho(t, eta_vals)))

    def rho_inv2(self, t, eta_vals) -> RhoLogs:
        """Inverse-square weights; exponents below -700 give exactly 0."""
        return RhoLogs(*(safe_exp(v) for v in self.log_rho_inv2(t, eta_vals)))

    @property
    def xi_min(self) -> float:
        """Smallest xi over Q (t = T/2 and the smallest eta)."""
        return float(np.exp(self.lam * self.eta.min_value) * 4 / self.T**2)

    @property
    def rho0_over_rho_sup(self) -> float:
        """sup over Q of rho0 / rho = (s xi)^(-3/2) lam^(-2)."""
        return float((self.s * self.xi_min) ** -1.5 / self.lam**2)


def safe_exp(x) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    out = np.exp(np.minimum(x, EXP_CLIP))
    return np.where(x < -EXP_CLIP, 0.0, out)


def eval_alpha_xi(ws: WeightSystem, t, x):
    """alpha and xi at time ``t`` and point(s) ``x``."""
    ev = ws.eta.evaluate(np.reshape(x, (-1, ws.eta.grid.dim)))
    a = ws.alpha(t, ev)
    xi = ws.xi(t, ev)
    if np.ndim(t) == 0 and np.size(x) == ws.eta.grid.dim:
        return float(a.ravel()[0]), float(xi.ravel()[0])
    return a, xi


def eval_rho_family(ws: WeightSystem, t, x) -> RhoLogs:
    ev = ws.eta.evaluate(np.reshape(x, (-1, ws.eta.grid.dim)))
    return ws.rho_inv2(t, ev)


def log_rho(ws: WeightSystem, t, x) -> RhoLogs:
    ev = ws.eta.evaluate(np.reshape(x, (-1, ws.eta.grid.dim)))
    return ws.log_rho(t, ev)


# ---------------------------------------------------------------- bound audit


@dataclass
class BoundReport:
    s: float
    lam: float
    m: float
    k: float
    grad_constant: float
    time_constant: float
    xi_inv_sup: float
    xi_inv_sup_exact: float

    def as_row(self) -> dict:
        return dict(self.__dict__)


def _sample_times(ws: WeightSystem, grid: SpaceTimeGrid) -> np.ndarray:
    t = np.union1d(grid.t_cells, [ws.T / 2])
    return t[(t > 0) & (t < ws.T)]


def check_weight_bounds(ws: WeightSystem, grid: SpaceTimeGrid | None = None, m: float = 0.0, k: float = 0.0) -> BoundReport:
    """Smallest constants that make the weight-derivative bounds hold on the grid.

    grad_constant: max |grad(e^{2 s alpha} xi^m)| / (s lam e^{2 s alpha} xi^{m+1})
    time_constant: max |d/dt(xi^k e^{2 s alpha})| / (T s xi^{k+1} e^{2 s alpha} e^{2 lam |eta|})
    xi_inv_sup:    max 1/(s xi)

    Derivatives are centred finite differences of the logarithm, so the
    exponentials cancel exactly before anything is evaluated.
    """
    grid = ws.eta.grid if grid is None else grid
    t = _sample_times(ws, grid)
    eta = ws.eta.values
    lam, s = ws.lam, ws.s
    ell = ws.ell(t)

    # x-dependent part of log(e^{2 s alpha} xi^m); constants in x drop out
    phi = (-2 * s * np.exp(lam * eta))[None, :] / ell[:, None] + m * lam * eta[None, :]
    if grid.dim == 1:
        grads = [np.gradient(phi, grid.h[0], axis=1, edge_order=2)]
    else:
        cube = phi.reshape(t.size, *grid.shape)
        grads = [
            np.gradient(cube, grid.h[d], axis=d + 1, edge_order=2).reshape(t.size, grid.n) for d in range(2)
        ]
    gnorm = np.sqrt(sum(g**2 for g in grads))
    xi = ws.xi(t, eta)
    grad_c = float(np.max(gnorm / (s * lam * xi)))

    # time derivative of log(xi^k e^{2 s alpha}), centred with a small step
    d = 0.25 * grid.dt
    tp, tm = t + d, t - d
    ok = (tm > 0) & (tp < ws.T)
    tp, tm, tt = tp[ok], tm[ok], t[ok]

    def logG(tq):
        return k * ws.log_xi(tq, eta) + 2 * s * ws.alpha(tq, eta)

    dlog = (logG(tp) - logG(tm)) / (2 * d)
    time_c = float(np.max(np.abs(dlog) / (ws.T * s * ws.xi(tt, eta) * ws.big)))

    xi_inv = float(np.max(1.0 / (s * xi)))
    exact = float(ws.T**2 * np.exp(-lam * ws.eta.min_value) / (4 * s)) if ws.profile == "symmetric" else np.nan
    return BoundReport(s, lam, m, k, grad_c, time_c, xi_inv, exact)


def audit_weight_bounds(eta: EtaFunction, T: float, lambdas=(2.0, 4.0), s_factors=(1.0, 2.0, 4.0),
                        m_values=(0.0, -1.0), k_values=(0.0, 1.0), s_scale: float = 2.0, rtol: float = 1e-9):
    """Sweep (s, lam) and check every constant is finite and non-increasing in s.

    Returns ``(reports, ok)``.  Ties within ``rtol`` count as non-increasing.
    """
    reports = []
    ok = True
    for lam in lambdas:
        for m in m_values:
            for k in k_values:
                prev = None
                for f in s_factors:
                    ws = WeightSystem.default(eta, T, s_factor=f, lam=lam, s_scale=s_scale)
                    r = check_weight_bounds(ws, eta.grid, m=m, k=k)
                    reports.append(r)
                    vals = np.array([r.grad_constant, r.time_constant, r.xi_inv_sup])
                    ok &= bool(np.all(np.isfinite(vals)))
                    if prev is not None:
                        ok &= bool(np.all(vals <= prev * (1 + rtol)))
                    prev = vals
    return reports, ok
