"""Domains, control regions and space-time grids with quadrature weights.

Supported domains are an interval (a, b) and an axis-aligned rectangle.
The control region gamma is a union of non-overlapping face segments.  In
1D the boundary is two points and boundary integrals use counting measure.

Spatial quadrature is the composite trapezoid rule on a uniform node grid.
Time quadrature is the midpoint rule: a field on Q stores one row per time
cell, sampled at t_{k-1/2}, so weighted integrals never touch t = 0 or T.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from functools import cached_property

import numpy as np

FACES_1D = ("left", "right")
FACES_2D = ("left", "right", "bottom", "top")

# face -> (axis whose coordinate is fixed, 0 = low end / 1 = high end)
_FACE_AXIS = {
    "left": (0, 0),
    "right": (0, 1),
    "bottom": (1, 0),
    "top": (1, 1),
}


class GeometryError(ValueError):
    """Raised for degenerate domains or an inadmissible control region."""


@dataclass(frozen=True)
class GammaSegment:
    """Part of one boundary face.

    ``lo``/``hi`` bound the tangential coordinate of the segment; ``None``
    means the face end.  In 1D faces are points and the bounds are unused.
    """

    face: str
    lo: float | None = None
    hi: float | None = None


@dataclass(frozen=True)
class Domain:
    kind: str
    bounds: tuple[float, ...]
    gamma: tuple[GammaSegment, ...]

    def __post_init__(self):
        if self.kind not in ("interval", "rectangle"):
            raise GeometryError(f"unknown domain kind {self.kind!r}")
        want = 2 if self.kind == "interval" else 4
        if len(self.bounds) != want:
            raise GeometryError(f"{self.kind} needs {want} bounds")
        for lo, hi in zip(self.bounds[::2], self.bounds[1::2]):
            if not hi > lo:
                raise GeometryError("degenerate domain: zero length along an axis")
        self._check_gamma()

    @classmethod
    def interval(cls, a: float, b: float, gamma=("right",)) -> "Domain":
        segs = tuple(g if isinstance(g, GammaSegment) else GammaSegment(g) for g in gamma)
        return cls("interval", (float(a), float(b)), segs)

    @classmethod
    def rectangle(cls, ax, bx, ay, by, gamma) -> "Domain":
        segs = []
        for g in gamma:
            if isinstance(g, GammaSegment):
                segs.append(g)
            elif isinstance(g, str):
                segs.append(GammaSegment(g))
            else:
                face, lo, hi = g
                segs.append(GammaSegment(face, lo, hi))
        return cls("rectangle", tuple(float(v) for v in (ax, bx, ay, by)), tuple(segs))

    @property
    def dim(self) -> int:
        return 1 if self.kind == "interval" else 2

    @property
    def faces(self) -> tuple[str, ...]:
        return FACES_1D if self.dim == 1 else FACES_2D

    def face_extent(self, face: str) -> tuple[float, float]:
        """Tangential coordinate range of a 2D face."""
        axis, _ = _FACE_AXIS[face]
        t = 1 - axis
        return self.bounds[2 * t], self.bounds[2 * t + 1]

    def face_measure(self, face: str) -> float:
        if self.dim == 1:
            return 1.0
        lo, hi = self.face_extent(face)
        return hi - lo

    def segment_range(self, seg: GammaSegment) -> tuple[float, float]:
        lo, hi = self.face_extent(seg.face)
        return (lo if seg.lo is None else float(seg.lo), hi if seg.hi is None else float(seg.hi))

    @property
    def volume(self) -> float:
        return float(np.prod([hi - lo for lo, hi in zip(self.bounds[::2], self.bounds[1::2])]))

    @property
    def boundary_measure(self) -> float:
        return sum(self.face_measure(f) for f in self.faces)

    @property
    def gamma_measure(self) -> float:
        if self.dim == 1:
            return float(len(self.gamma))
        return sum(np.subtract(*self.segment_range(s)[::-1]) for s in self.gamma)

    def _check_gamma(self):
        if not self.gamma:
            raise GeometryError("control region is empty")
        for seg in self.gamma:
            if seg.face not in self.faces:
                raise GeometryError(f"face {seg.face!r} is not a face of the {self.kind}")
        if self.dim == 1:
            names = [s.face for s in self.gamma]
            if len(set(names)) != len(names):
                raise GeometryError("control region lists a face twice")
            if len(names) == 2:
                raise GeometryError("control region covers the whole boundary")
            return
        by_face: dict[str, list[tuple[float, float]]] = {}
        for seg in self.gamma:
            lo, hi = self.segment_range(seg)
            flo, fhi = self.face_extent(seg.face)
            if not (flo <= lo < hi <= fhi):
                raise GeometryError(f"segment {seg} does not lie on face {seg.face!r}")
            by_face.setdefault(seg.face, []).append((lo, hi))
        for face, spans in by_face.items():
            spans.sort()
            for (_, h0), (l1, _) in zip(spans, spans[1:]):
                if l1 < h0:
                    raise GeometryError(f"overlapping control segments on face {face!r}")
        if self.gamma_measure >= self.boundary_measure * (1 - 1e-14):
            raise GeometryError("control region covers the whole boundary")


@dataclass(frozen=True, eq=False)
class SpaceTimeGrid:
    domain: Domain
    shape: tuple[int, ...]
    nt: int
    T: float
    axes: tuple[np.ndarray, ...] = field(repr=False)

    @property
    def dim(self) -> int:
        return self.domain.dim

    @property
    def nx(self) -> int:
        return self.shape[0]

    @property
    def ny(self) -> int | None:
        return self.shape[1] if self.dim == 2 else None

    @property
    def n(self) -> int:
        """Number of spatial nodes."""
        return int(np.prod(self.shape))

    @property
    def h(self) -> tuple[float, ...]:
        return tuple(float(ax[1] - ax[0]) for ax in self.axes)

    @property
    def dt(self) -> float:
        return self.T / self.nt

    @property
    def t_nodes(self) -> np.ndarray:
        """Time levels t_0 = 0, ..., t_nt = T."""
        return self.dt * np.arange(self.nt + 1)

    @property
    def t_cells(self) -> np.ndarray:
        """Cell midpoints t_{k-1/2}, k = 1..nt (the interior time nodes)."""
        return self.dt * (np.arange(self.nt) + 0.5)

    @cached_property
    def points(self) -> np.ndarray:
        """Node coordinates, shape (n, dim); 2D nodes are ordered x-major."""
        if self.dim == 1:
            return self.axes[0][:, None].copy()
        X, Y = np.meshgrid(*self.axes, indexing="ij")
        return np.column_stack([X.ravel(), Y.ravel()])

    @cached_property
    def axis_weights(self) -> tuple[np.ndarray, ...]:
        out = []
        for ax in self.axes:
            w = np.full(ax.size, ax[1] - ax[0])
            w[0] = w[-1] = 0.5 * (ax[1] - ax[0])
            out.append(w)
        return tuple(out)

    @cached_property
    def mass(self) -> np.ndarray:
        """Trapezoid weights of the spatial nodes (lumped mass)."""
        if self.dim == 1:
            return self.axis_weights[0].copy()
        return np.outer(*self.axis_weights).ravel()

    def node_index(self, i, j=None):
        return i if self.dim == 1 else i * self.shape[1] + j

    @cached_property
    def _boundary_tables(self):
        # per face: node indices along the face and their face-trapezoid weights
        faces = {}
        if self.dim == 1:
            faces["left"] = (np.array([0]), np.array([1.0]))
            faces["right"] = (np.array([self.nx - 1]), np.array([1.0]))
        else:
            nx, ny = self.shape
            wx, wy = self.axis_weights
            i = np.arange(nx)
            j = np.arange(ny)
            faces["left"] = (self.node_index(0, j), wy)
            faces["right"] = (self.node_index(nx - 1, j), wy)
            faces["bottom"] = (self.node_index(i, 0), wx)
            faces["top"] = (self.node_index(i, ny - 1), wx)
        nodes = np.unique(np.concatenate([v[0] for v in faces.values()]))
        return faces, nodes

    @property
    def boundary_nodes(self) -> np.ndarray:
        """Sorted indices of the spatial nodes lying on the boundary."""
        return self._boundary_tables[1]

    @property
    def nb(self) -> int:
        return self.boundary_nodes.size

    def face_weights(self, face: str) -> np.ndarray:
        """Face quadrature weight of each boundary node (zero off the face)."""
        idx, w = self._boundary_tables[0][face]
        out = np.zeros(self.nb)
        out[np.searchsorted(self.boundary_nodes, idx)] = w
        return out

    @cached_property
    def boundary_weights(self) -> np.ndarray:
        """Surface quadrature weight sigma_j of each boundary node."""
        return sum(self.face_weights(f) for f in self.domain.faces)

    @cached_property
    def gamma_weights(self) -> np.ndarray:
        """Quadrature weights of gamma, restricted to boundary nodes.

        Nodes at the end of a control segment get the half-cell weight of
        the part of their face cell that lies in gamma.
        """
        out = np.zeros(self.nb)
        faces, _ = self._boundary_tables
        for seg in self.domain.gamma:
            idx, _ = faces[seg.face]
            pos = np.searchsorted(self.boundary_nodes, idx)
            if self.dim == 1:
                out[pos] += 1.0
                continue
            axis, _ = _FACE_AXIS[seg.face]
            coord = self.axes[1 - axis]
            lo, hi = self.domain.segment_range(seg)
            # exact measure of [lo, hi] intersected with each node's dual cell
            hh = coord[1] - coord[0]
            cl = np.maximum(coord - hh / 2, coord[0])
            cr = np.minimum(coord + hh / 2, coord[-1])
            out[pos] += np.clip(np.minimum(cr, hi) - np.maximum(cl, lo), 0.0, None)
        return out

    @cached_property
    def gamma_fraction(self) -> np.ndarray:
        """Share of each boundary node's surface weight that belongs to gamma."""
        return self.gamma_weights / self.boundary_weights

    @cached_property
    def gamma_mask(self) -> np.ndarray:
        """True for boundary nodes that carry part of gamma."""
        return self.gamma_weights > 0

    @cached_property
    def outward_normals(self) -> np.ndarray:
        """Outward unit normal per boundary node (corners average two faces)."""
        nrm = np.zeros((self.nb, self.dim))
        for face in self.domain.faces:
            axis, side = _FACE_AXIS[face]
            on = self.face_weights(face) > 0
            nrm[on, axis] += 1.0 if side else -1.0
        return nrm / np.linalg.norm(nrm, axis=1, keepdims=True)

    @cached_property
    def corner_mask(self) -> np.ndarray:
        """Boundary nodes shared by two faces (2D corners)."""
        count = sum((self.face_weights(f) > 0).astype(int) for f in self.domain.faces)
        return count > 1

    def check_field(self, values: np.ndarray, rows: int | None = None) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        rows = self.nt if rows is None else rows
        if values.shape != (rows, self.n):
            raise ValueError(f"field shape {values.shape} does not match grid ({rows}, {self.n})")
        return values

    def check_trace(self, values: np.ndarray) -> np.ndarray:
        values = np.asarray(values, dtype=float)
        if values.shape != (self.nt, self.nb):
            raise ValueError(f"trace shape {values.shape} does not match grid ({self.nt}, {self.nb})")
        return values


def build_grid(domain: Domain, nx: int, nt: int, T: float, ny: int | None = None) -> SpaceTimeGrid:
    """Uniform grid with ``nx`` (and ``ny``) nodes per axis and ``nt`` time steps."""
    if T <= 0:
        raise GeometryError("final time must be positive")
    if nt < 2:
        raise GeometryError("need at least two time steps")
    shape = (int(nx),) if domain.dim == 1 else (int(nx), int(nx if ny is None else ny))
    if min(shape) < 3:
        raise GeometryError("need at least three nodes per axis")
    axes = tuple(
        np.linspace(domain.bounds[2 * d], domain.bounds[2 * d + 1], shape[d])
        for d in range(domain.dim)
    )
    return SpaceTimeGrid(domain, shape, int(nt), float(T), axes)


def _rows(values) -> np.ndarray:
    return values.values if hasattr(values, "values") else np.asarray(values, dtype=float)


def integrate_Q(grid: SpaceTimeGrid, field) -> float:
    """Midpoint-in-time, trapezoid-in-space integral over Q."""
    v = grid.check_field(_rows(field))
    return float(grid.dt * np.sum(v @ grid.mass))


def integrate_Sigma(grid: SpaceTimeGrid, tf) -> float:
    v = grid.check_trace(_rows(tf))
    return float(grid.dt * np.sum(v @ grid.boundary_weights))


def integrate_gamma(grid: SpaceTimeGrid, tf) -> float:
    v = grid.check_trace(_rows(tf))
    return float(grid.dt * np.sum(v @ grid.gamma_weights))
