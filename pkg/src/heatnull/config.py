"""YAML run configuration and its translation into solver objects."""

from __future__ import annotations

from pathlib import Path
from typing import Literal, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, field_validator, model_validator

from heatnull.geometry import Domain, GammaSegment, SpaceTimeGrid, build_grid
from heatnull.heat_ops import Nonlinearity, ProblemSpec
from heatnull.probes import modal_field, random_source, smoothed_field
from heatnull.weights import EtaFunction, WeightSystem, build_eta

Experiment = Literal["forward", "carleman_sweep", "null_linear", "null_semilinear", "weight_audit"]


def _sine(points):
    return np.prod(np.sin(np.pi * (points - points.min(axis=0)) / np.ptp(points, axis=0)), axis=1)


# named coefficient profiles: (t, points) -> values
POTENTIALS = {
    "zero": None,
    "bump": lambda t, p: 1.0 + 0.5 * np.sin(np.pi * p[:, 0]),
}
DRIFTS = {
    "zero": None,
    "uniform": lambda t, p: np.full_like(p, 0.5),
}
INITIAL = ("zero", "sine", "modal", "smoothed")
SOURCES = ("zero", "modal", "smoothed")


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class SegmentCfg(_Strict):
    face: str
    lo: float | None = None
    hi: float | None = None


class DomainCfg(_Strict):
    kind: Literal["interval", "rectangle"] = "interval"
    bounds: list[float] = [0.0, 1.0]
    gamma: list[Union[str, SegmentCfg]] = ["right"]

    @model_validator(mode="after")
    def _shape(self):
        want = 2 if self.kind == "interval" else 4
        if len(self.bounds) != want:
            raise ValueError(f"{self.kind} needs {want} bounds, got {len(self.bounds)}")
        return self


class GridCfg(_Strict):
    nx: int = Field(ge=3)
    ny: int | None = Field(default=None, ge=3)
    nt: int = Field(ge=2)
    T: float = Field(gt=0)


class CoefficientCfg(_Strict):
    A: Union[float, list[float], str] = 0.0
    a: Union[float, str] = 0.0
    b: Union[float, dict[str, float]] = 1.0

    @field_validator("A")
    @classmethod
    def _drift(cls, v):
        if isinstance(v, str) and v not in DRIFTS:
            raise ValueError(f"unknown drift profile {v!r}; known: {sorted(DRIFTS)}")
        return v

    @field_validator("a")
    @classmethod
    def _pot(cls, v):
        if isinstance(v, str) and v not in POTENTIALS:
            raise ValueError(f"unknown potential profile {v!r}; known: {sorted(POTENTIALS)}")
        return v


class DataCfg(_Strict):
    y0: str = "sine"
    g: str = "zero"

    @field_validator("y0")
    @classmethod
    def _y0(cls, v):
        if v not in INITIAL:
            raise ValueError(f"unknown initial datum {v!r}; known: {list(INITIAL)}")
        return v

    @field_validator("g")
    @classmethod
    def _g(cls, v):
        if v not in SOURCES:
            raise ValueError(f"unknown source {v!r}; known: {list(SOURCES)}")
        return v


class WeightsCfg(_Strict):
    lam: float = Field(default=2.0, alias="lambda", gt=0)
    s: float | None = Field(default=None, gt=0)
    s_factor: float = Field(default=1.0, gt=0)
    s_scale: float = Field(default=2.0, gt=0)
    profile: Literal["symmetric", "terminal"] | None = None
    eta: Literal["auto"] = "auto"
    model_config = ConfigDict(extra="forbid", populate_by_name=True)


class NonlinearityCfg(_Strict):
    name: Literal["zero", "sine"] = "zero"
    amplitude: float = 0.1


class SolverCfg(_Strict):
    scheme: Literal["be", "cn"] = "cn"
    tol: float = Field(default=1e-6, gt=0)
    max_iter: int = Field(default=50, ge=1)
    eps: float = Field(default=0.0, ge=0)
    cutoff: float = Field(default=80.0, gt=0)
    symmetrize: bool = False
    squared_residual: bool = True


class OutputCfg(_Strict):
    directory: str = "out"
    seed: int = 0
    svg: bool = True
    s_factors: list[float] = [1.0, 2.0, 4.0]
    lambdas: list[float] = [2.0]
    samples: int = Field(default=20, ge=1)
    m_values: list[float] = [0.0, -1.0]
    k_values: list[float] = [0.0, 1.0]

    @field_validator("s_factors", "lambdas", "m_values", "k_values")
    @classmethod
    def _nonempty(cls, v):
        if not v:
            raise ValueError("sweep list must be non-empty")
        return v


class ChecksCfg(_Strict):
    terminal_ratio_max: float | None = None
    growth_max: float | None = None


class RunConfig(_Strict):
    experiment: Experiment
    domain: DomainCfg = DomainCfg()
    grid: GridCfg
    coefficients: CoefficientCfg = CoefficientCfg()
    data: DataCfg = DataCfg()
    weights: WeightsCfg = WeightsCfg()
    nonlinearity: NonlinearityCfg = NonlinearityCfg()
    solver: SolverCfg = SolverCfg()
    output: OutputCfg = OutputCfg()
    checks: ChecksCfg = ChecksCfg()

    @model_validator(mode="after")
    def _consistent(self):
        if self.domain.kind == "rectangle" and self.grid.ny is None:
            raise ValueError("grid.ny is required for a rectangle")
        if self.domain.kind == "interval" and self.grid.ny is not None:
            raise ValueError("grid.ny is only meaningful for a rectangle")
        return self

    # ---------------------------------------------------------------- builders

    def build_domain(self) -> Domain:
        d = self.domain
        segs = [s if isinstance(s, str) else GammaSegment(s.face, s.lo, s.hi) for s in d.gamma]
        if d.kind == "interval":
            return Domain.interval(*d.bounds, gamma=tuple(s if isinstance(s, str) else s.face for s in segs))
        return Domain.rectangle(*d.bounds, gamma=[s if isinstance(s, str) else (s.face, s.lo, s.hi) for s in segs])

    def build_grid(self) -> SpaceTimeGrid:
        g = self.grid
        return build_grid(self.build_domain(), g.nx, g.nt, g.T, ny=g.ny)

    def build_weights(self, eta: EtaFunction, profile: str) -> WeightSystem:
        w = self.weights
        prof = w.profile or profile
        ws = WeightSystem.default(eta, self.grid.T, s_factor=w.s_factor, lam=w.lam, s_scale=w.s_scale, profile=prof)
        return ws.with_s(w.s) if w.s is not None else ws

    def build_spec(self, grid: SpaceTimeGrid) -> ProblemSpec:
        c = self.coefficients
        rng = np.random.default_rng(self.output.seed)
        A = DRIFTS[c.A] if isinstance(c.A, str) else (c.A if c.A != 0.0 else None)
        a = POTENTIALS[c.a] if isinstance(c.a, str) else (c.a if c.a != 0.0 else None)
        kind = self.data.y0
        if kind == "zero":
            y0 = None
        elif kind == "sine":
            y0 = _sine(grid.points)
        elif kind == "modal":
            y0 = modal_field(grid, rng)
        else:
            y0 = smoothed_field(grid, rng)
        g = None if self.data.g == "zero" else random_source(grid, rng, self.data.g)
        nl = self.nonlinearity
        F = Nonlinearity.sine(nl.amplitude) if nl.name == "sine" else None
        return ProblemSpec(grid, A=A, a=a, b=dict(c.b) if isinstance(c.b, dict) else c.b, g=g, y0=y0, F=F)

    def build_eta(self, grid: SpaceTimeGrid) -> EtaFunction:
        return build_eta(grid)


class ConfigError(ValueError):
    """Schema violation; the message names the offending field path."""


def load_config(path: str | Path) -> RunConfig:
    from pydantic import ValidationError

    path = Path(path)
    try:
        raw = yaml.safe_load(path.read_text())
    except OSError as exc:
        raise ConfigError(f"cannot read {path}: {exc}") from None
    except yaml.YAMLError as exc:
        raise ConfigError(f"{path}: not valid YAML: {exc}") from None
    if not isinstance(raw, dict):
        raise ConfigError(f"{path}: top level must be a mapping")
    try:
        return RunConfig.model_validate(raw)
    except ValidationError as exc:
        lines = []
        for err in exc.errors():
            loc = ".".join(str(p) for p in err["loc"]) or "<root>"
            lines.append(f"{loc}: {err['msg']}")
        raise ConfigError("; ".join(lines)) from None
