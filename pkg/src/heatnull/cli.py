"""Command-line front end: ``heatnull run <config>`` and ``heatnull validate <config>``.

Outputs go to ``output.directory`` (relative paths are resolved against
``$HEATNULL_OUTPUT_ROOT`` when set).  Every run prints ``METRIC name value``
lines for scraping.  Exit codes: 0 ok, 1 solver failure, 2 bad config,
3 a configured check failed.
"""

from __future__ import annotations

import argparse
import os
import sys
from pathlib import Path

import numpy as np

from heatnull import carleman, heat_ops, nullcontrol, semilinear, weights
from heatnull.config import ConfigError, RunConfig, load_config
from heatnull.geometry import GeometryError
from heatnull.report import finite_or_text, line_plot, write_csv, write_field_csv

# wall-clock entries would break byte-identical reruns
NONDETERMINISTIC = {"seconds"}


class CheckFailed(RuntimeError):
    pass


def _out_dir(cfg: RunConfig) -> Path:
    d = Path(cfg.output.directory)
    root = os.environ.get("HEATNULL_OUTPUT_ROOT")
    if root and not d.is_absolute():
        d = Path(root) / d
    d.mkdir(parents=True, exist_ok=True)
    return d


def _metric(name: str, value) -> None:
    v = "%.17g" % value if isinstance(value, (float, np.floating)) else str(value)
    print(f"METRIC {name} {v}")


def _diag_rows(diag: dict) -> list[dict]:
    rows = []
    for k in sorted(diag):
        if k in NONDETERMINISTIC:
            continue
        v = diag[k]
        if isinstance(v, (list, tuple)):
            v = ";".join("%.17g" % float(x) for x in v)
        elif isinstance(v, float):
            v = finite_or_text(v)
        rows.append({"name": k, "value": v})
    return rows


# ---------------------------------------------------------------- experiments


def run_forward(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.build_grid()
    spec = cfg.build_spec(grid)
    y = heat_ops.solve_forward(spec, scheme=cfg.solver.scheme)
    write_field_csv(out / "state.csv", grid, y.times, y.values, "y")
    norms = y.slice_norms()
    t = np.concatenate([[0.0], y.times])
    n0 = float(np.sqrt(y.initial @ (y.initial * grid.mass)))
    write_csv(out / "norms.csv", [{"t": ti, "l2_norm": ni} for ti, ni in zip(t, np.concatenate([[n0], norms]))])
    if cfg.output.svg:
        line_plot(out / "norms.svg", [("||y(t)||", t, np.concatenate([[n0], norms]))], "t", "L2 norm")
    return {"terminal_norm": float(norms[-1])}


def run_weight_audit(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.build_grid()
    eta = cfg.build_eta(grid)
    chk = eta.checks
    write_csv(out / "eta_checks.csv", [{"check": k, "passed": ok, "detail": d} for k, (ok, d) in chk.items()])
    reports, ok = weights.audit_weight_bounds(
        eta, cfg.grid.T, lambdas=tuple(cfg.output.lambdas), s_factors=tuple(cfg.output.s_factors),
        m_values=tuple(cfg.output.m_values), k_values=tuple(cfg.output.k_values))
    write_csv(out / "weight_bounds.csv", [r.as_row() for r in reports])
    if cfg.output.svg:
        series = []
        for lam in cfg.output.lambdas:
            sel = [r for r in reports if r.lam == lam and r.m == cfg.output.m_values[0] and r.k == cfg.output.k_values[0]]
            series.append((f"lambda={lam:g}", [r.s for r in sel], [r.grad_constant for r in sel]))
        line_plot(out / "grad_constant.svg", series, "s", "space constant", logy=True)
    return {"audit_ok": int(ok), "eta_c0": float(eta.c0)}


def run_carleman(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.build_grid()
    eta = cfg.build_eta(grid)
    res = carleman.carleman_sweep(
        grid, eta, cfg.grid.T, s_factors=tuple(cfg.output.s_factors), lambdas=tuple(cfg.output.lambdas),
        seeds=range(cfg.output.seed, cfg.output.seed + cfg.output.samples), b=_scalar_b(cfg),
        scheme=cfg.solver.scheme, squared=cfg.solver.squared_residual, s_scale=cfg.weights.s_scale)
    write_csv(out / "carleman.csv", res.rows)
    if cfg.output.svg:
        series = []
        for lam in cfg.output.lambdas:
            sf = cfg.output.s_factors
            series.append((f"lambda={lam:g}", sf, [res.max_ratio[(lam, f)] for f in sf]))
        line_plot(out / "ratio_vs_s.svg", series, "s / s_min", "max LHS/RHS")
    if cfg.checks.growth_max is not None and res.growth > cfg.checks.growth_max:
        raise CheckFailed(f"Carleman ratio grew by {res.growth:.3f} > {cfg.checks.growth_max}")
    return {"C_hat": res.C_hat, "growth": res.growth, "rows": len(res.rows)}


def _scalar_b(cfg: RunConfig) -> float:
    b = cfg.coefficients.b
    return float(b) if not isinstance(b, dict) else 0.0


def _control_outputs(cfg, out, grid, sol) -> None:
    y, f = sol.y, sol.f
    write_field_csv(out / "solution_y.csv", grid, y.times, y.values, "y")
    write_field_csv(out / "solution_p.csv", grid, sol.p.times, sol.p.values, "p_scaled")
    bn = grid.boundary_nodes
    rows = []
    for k, t in enumerate(y.times):
        for j, node in enumerate(bn):
            rows.append({"t": t, "node": int(node), "gamma": bool(grid.gamma_mask[j]), "f": f.values[k, j]})
    write_csv(out / "solution_f.csv", rows)
    diag = dict(sol.diagnostics)
    diag.update(
        terminal_norm=sol.terminal_norm, replay_terminal_norm=sol.replay_terminal_norm,
        terminal_ratio=sol.terminal_ratio, initial_norm=sol.initial_norm,
        log_weighted_norm_y=sol.log_weighted_norm_y, log_weighted_norm_f=sol.log_weighted_norm_f,
        p_log_scale=sol.p_log_scale,
    )
    write_csv(out / "diagnostics.csv", _diag_rows(diag))
    if cfg.output.svg:
        t = np.concatenate([[0.0], y.times])
        norms = np.concatenate([[sol.initial_norm], y.slice_norms()])
        rep = np.concatenate([[sol.initial_norm], sol.replay.slice_norms()])
        line_plot(out / "state_norm.svg", [("reconstructed", t, norms), ("replayed", t, rep)], "t",
                  "||y(t)||", logy=True)


def _check_ratio(cfg, ratio):
    lim = cfg.checks.terminal_ratio_max
    if lim is not None and not ratio <= lim:
        raise CheckFailed(f"terminal ratio {ratio:.3e} exceeds {lim:.3e}")


def run_null_linear(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.build_grid()
    eta = cfg.build_eta(grid)
    ws = cfg.build_weights(eta, "terminal")
    spec = cfg.build_spec(grid)
    sol = nullcontrol.solve_null_control(spec, ws, eps=cfg.solver.eps, cutoff=cfg.solver.cutoff)
    _control_outputs(cfg, out, grid, sol)
    _check_ratio(cfg, sol.terminal_ratio)
    return {"terminal_ratio": sol.terminal_ratio, "energy_lhs": sol.diagnostics["energy_lhs"]}


def run_null_semilinear(cfg: RunConfig, out: Path) -> dict:
    grid = cfg.build_grid()
    eta = cfg.build_eta(grid)
    ws = cfg.build_weights(eta, "terminal")
    spec = cfg.build_spec(grid)
    sol, trace = semilinear.solve_semilinear(spec, ws, tol=cfg.solver.tol, max_iter=cfg.solver.max_iter,
                                             symmetrize=cfg.solver.symmetrize, eps=cfg.solver.eps,
                                             cutoff=cfg.solver.cutoff)
    _control_outputs(cfg, out, grid, sol)
    write_csv(out / "iterations.csv", list(trace.rows()))
    if cfg.output.svg and trace.iterations:
        it = np.arange(1, trace.iterations + 1)
        line_plot(out / "increments.svg", [("increment", it, trace.increments)], "iteration", "relative increment",
                  logy=True)
    _check_ratio(cfg, sol.terminal_ratio)
    return {"terminal_ratio": sol.terminal_ratio, "iterations": trace.iterations, "converged": int(trace.converged)}


EXPERIMENTS = {
    "forward": run_forward,
    "weight_audit": run_weight_audit,
    "carleman_sweep": run_carleman,
    "null_linear": run_null_linear,
    "null_semilinear": run_null_semilinear,
}


# ---------------------------------------------------------------- entry points


def run(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
        cfg.build_grid()
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    out = _out_dir(cfg)
    try:
        metrics = EXPERIMENTS[cfg.experiment](cfg, out)
    except CheckFailed as exc:
        print(f"check failed: {exc}", file=sys.stderr)
        return 3
    except (heat_ops.SolverError, nullcontrol.ControlError, weights.EtaVerificationError, ValueError) as exc:
        print(f"{cfg.experiment} failed: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 1
    for k, v in metrics.items():
        _metric(k, v)
    print(f"{cfg.experiment}: ok -> {out}")
    return 0


def validate(config_path: str) -> int:
    try:
        cfg = load_config(config_path)
        cfg.build_grid()
    except (ConfigError, GeometryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    print(f"ok: {cfg.experiment}")
    return 0


def main(argv: list[str] | None = None) -> int:
    ap = argparse.ArgumentParser(prog="heatnull", description="Weighted null control of the Robin heat equation.")
    sub = ap.add_subparsers(dest="command", required=True)
    for name, hlp in (("run", "run an experiment config"), ("validate", "check a config without running it")):
        p = sub.add_parser(name, help=hlp)
        p.add_argument("config")
    args = ap.parse_args(argv)
    return run(args.config) if args.command == "run" else validate(args.config)


if __name__ == "__main__":
    sys.exit(main())
