"""Grids, the self-focusing core Omega and the sign weight Q.

Every admissible core is a finite union of balls and annuli centred at the
origin, so membership only depends on |x|.  Two grid flavours exist:

* ``radial``: nodes r_i = i*h, i = 1..M with M*h = R_max, quadrature weight
  w_i = |S^{N-1}| r_i^{N-1} h (midpoint rule on [r_i - h/2, r_i + h/2]).
* ``cartesian2d``: the square lattice h*Z^2 restricted to [-R_max, R_max]^2,
  weight h^2 per node.  Field values are stored as ``(n, n)`` arrays indexed
  ``[ix, iy]``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Sequence, Union as TypingUnion

import numpy as np

from .errors import GridMismatch, InvalidShape, InvalidSpacing, TruncationTooSmall

RADIAL = "radial"
CARTESIAN = "cartesian2d"

# subsamples per axis when integrating Q over a Cartesian cell cut by the boundary
_CELL_SUBSAMPLES = 32


def sphere_area(n: int) -> float:
    """Surface area of the unit sphere in R^n (2 for n = 1)."""
    return 2.0 * math.pi ** (n / 2.0) / math.gamma(n / 2.0)


# ---------------------------------------------------------------------------
# Core shapes
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class Ball:
    radius: float

    def __post_init__(self):
        if not self.radius > 0:
            raise InvalidShape(f"ball radius must be positive, got {self.radius}")

    def intervals(self):
        return [(0.0, float(self.radius))]

    def descriptor(self) -> str:
        return f"ball:{self.radius!r}"


@dataclass(frozen=True)
class Annulus:
    inner: float
    outer: float

    def __post_init__(self):
        if not (self.inner > 0 and self.outer > 0):
            raise InvalidShape("annulus radii must be positive")
        if not self.inner < self.outer:
            raise InvalidShape(f"annulus needs inner < outer, got {self.inner} >= {self.outer}")

    def intervals(self):
        return [(float(self.inner), float(self.outer))]

    def descriptor(self) -> str:
        return f"annulus:{self.inner!r},{self.outer!r}"


@dataclass(frozen=True)
class Union:
    members: tuple

    def __post_init__(self):
        members = tuple(self.members)
        object.__setattr__(self, "members", members)
        if not members:
            raise InvalidShape("union needs at least one member")
        spans = sorted(iv for m in members for iv in m.intervals())
        for (a0, b0), (a1, b1) in zip(spans, spans[1:]):
            # members must not overlap; a common boundary sphere is allowed
            if a1 < b0:
                raise InvalidShape(f"union members overlap on ({a1}, {min(b0, b1)})")

    def intervals(self):
        return sorted(iv for m in self.members for iv in m.intervals())

    def descriptor(self) -> str:
        return "union:" + ";".join(m.descriptor() for m in self.members)


OmegaShape = TypingUnion[Ball, Annulus, Union]


def outer_radius(omega: OmegaShape) -> float:
    return max(b for _, b in omega.intervals())


def shape_volume(omega: OmegaShape, dim: int) -> float:
    """Lebesgue measure of omega in R^dim."""
    c = sphere_area(dim) / dim
    return sum(c * (b**dim - a**dim) for a, b in omega.intervals())


def contains_radius(omega: OmegaShape, r):
    """Open-set membership as a function of |x|; boundary spheres are outside."""
    r = np.asarray(r, dtype=float)
    inside = np.zeros(r.shape, dtype=bool)
    for a, b in omega.intervals():
        lo = (r > a) if a > 0 else np.ones(r.shape, dtype=bool)
        inside |= lo & (r < b)
    return inside


def parse_shape(text: str) -> OmegaShape:
    """Parse ``ball:R``, ``annulus:a,b`` or ``union:<shape>;<shape>;...``."""
    text = text.strip()
    kind, _, rest = text.partition(":")
    kind = kind.strip().lower()
    try:
        if kind == "ball":
            return Ball(float(rest))
        if kind == "annulus":
            a, b = (float(s) for s in rest.split(","))
            return Annulus(a, b)
        if kind == "union":
            return Union(tuple(parse_shape(part) for part in rest.split(";") if part.strip()))
    except (TypeError, ValueError) as exc:
        if isinstance(exc, InvalidShape):
            raise
        raise InvalidShape(f"malformed shape descriptor {text!r}") from exc
    raise InvalidShape(f"unknown shape kind {kind!r}")


# ---------------------------------------------------------------------------
# Grids
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class GridSpec:
    mode: str
    h: float
    rmax: float
    dim: int = 2

    def __post_init__(self):
        if self.mode not in (RADIAL, CARTESIAN):
            raise ValueError(f"unknown grid mode {self.mode!r}")
        if self.mode == CARTESIAN and self.dim != 2:
            raise ValueError("cartesian grids are two-dimensional")
        if self.dim < 1:
            raise ValueError("dimension must be >= 1")


@dataclass(frozen=True, eq=False)
class Grid:
    """Immutable node set with quadrature weights.

    Attributes:
        spec: the generating GridSpec.
        coords: radial node radii ``(M,)`` or the 1-D lattice ``(n,)``.
        radius: |x| at every node, shaped like a field.
        weights: quadrature measure of every node, shaped like a field.
    """

    spec: GridSpec
    coords: np.ndarray
    radius: np.ndarray
    weights: np.ndarray
    _extra: dict = field(default_factory=dict, repr=False)

    @property
    def mode(self) -> str:
        return self.spec.mode

    @property
    def dim(self) -> int:
        return self.spec.dim

    @property
    def h(self) -> float:
        return self.spec.h

    @property
    def rmax(self) -> float:
        return self.spec.rmax

    @property
    def shape(self):
        return self.radius.shape

    @property
    def is_radial(self) -> bool:
        return self.spec.mode == RADIAL

    def points(self) -> np.ndarray:
        """Node coordinates as ``(*shape, d)`` (d = 1 for radial grids)."""
        if self.is_radial:
            return self.coords[:, None]
        x = self.coords
        X, Y = np.meshgrid(x, x, indexing="ij")
        return np.stack([X, Y], axis=-1)

    def domain_measure(self) -> float:
        """Measure of the union of node cells."""
        h = self.h
        if self.is_radial:
            n = self.dim
            top = self.coords[-1] + h / 2
            return sphere_area(n) / n * (top**n - (h / 2) ** n)
        side = len(self.coords) * h
        return side * side

    def zeros(self) -> "Field":
        return Field(self, np.zeros(self.shape))

    def field(self, values) -> "Field":
        return Field(self, values)

    def __eq__(self, other):
        return isinstance(other, Grid) and self.spec == other.spec

    def __hash__(self):
        return hash(self.spec)


def build_grid(spec: GridSpec, omega: OmegaShape) -> Grid:
    """Construct the node set and weights for ``spec``.

    Raises:
        InvalidSpacing: if ``spec.h <= 0``.
        TruncationTooSmall: if ``spec.rmax`` is less than 4x the outer radius of omega.
    """
    if not spec.h > 0:
        raise InvalidSpacing(f"grid spacing must be positive, got {spec.h}")
    R = outer_radius(omega)
    if spec.rmax < 4.0 * R * (1 - 1e-12):
        raise TruncationTooSmall(f"rmax={spec.rmax} < 4 x outer radius {R}")
    h = float(spec.h)
    m = int(math.floor(spec.rmax / h + 1e-9))
    if m < 1:
        raise InvalidSpacing("grid spacing exceeds truncation radius")
    if spec.mode == RADIAL:
        r = h * np.arange(1, m + 1, dtype=float)
        w = sphere_area(spec.dim) * r ** (spec.dim - 1) * h
        return Grid(spec, r, r.copy(), w)
    x = h * np.arange(-m, m + 1, dtype=float)
    X, Y = np.meshgrid(x, x, indexing="ij")
    radius = np.hypot(X, Y)
    w = np.full(radius.shape, h * h)
    return Grid(spec, x, radius, w)


# ---------------------------------------------------------------------------
# Fields
# ---------------------------------------------------------------------------


class Field:
    """Real values on the nodes of one grid."""

    __slots__ = ("grid", "values")

    def __init__(self, grid: Grid, values):
        values = np.asarray(values, dtype=float)
        if values.shape != grid.shape:
            values = values.reshape(grid.shape)
        if not np.all(np.isfinite(values)):
            raise ValueError("field values must be finite")
        self.grid = grid
        self.values = values

    def _check(self, other):
        if isinstance(other, Field):
            if other.grid is not self.grid and other.grid != self.grid:
                raise GridMismatch("fields live on different grids")
            return other.values
        return other

    def __add__(self, other):
        return Field(self.grid, self.values + self._check(other))

    __radd__ = __add__

    def __sub__(self, other):
        return Field(self.grid, self.values - self._check(other))

    def __rsub__(self, other):
        return Field(self.grid, self._check(other) - self.values)

    def __mul__(self, other):
        return Field(self.grid, self.values * self._check(other))

    __rmul__ = __mul__

    def __truediv__(self, other):
        return Field(self.grid, self.values / self._check(other))

    def __neg__(self):
        return Field(self.grid, -self.values)

    def __abs__(self):
        return Field(self.grid, np.abs(self.values))

    def positive_part(self) -> "Field":
        return Field(self.grid, np.maximum(self.values, 0.0))

    def negative_part(self) -> "Field":
        return Field(self.grid, np.minimum(self.values, 0.0))

    def copy(self) -> "Field":
        return Field(self.grid, self.values.copy())

    def integrate(self) -> float:
        return float(np.sum(self.grid.weights * self.values))

    def max_abs(self) -> float:
        return float(np.max(np.abs(self.values)))

    def __repr__(self):
        return f"Field(mode={self.grid.mode}, shape={self.grid.shape})"


# ---------------------------------------------------------------------------
# Q
# ---------------------------------------------------------------------------


def q_value(omega: OmegaShape, point: Sequence[float] | float) -> int:
    """+1 if ``point`` lies in the open set omega, else -1."""
    r = float(np.linalg.norm(np.atleast_1d(np.asarray(point, dtype=float))))
    return 1 if bool(contains_radius(omega, r)) else -1


def q_field(grid: Grid, omega: OmegaShape) -> Field:
    """Pointwise Q sampled at the nodes."""
    return Field(grid, np.where(contains_radius(omega, grid.radius), 1.0, -1.0))


def q_cell_field(grid: Grid, omega: OmegaShape) -> Field:
    """Cell average of Q over each node's quadrature cell, in [-1, 1].

    Away from the boundary of omega this coincides with :func:`q_field`.
    Radial cells are integrated exactly against r^{N-1} dr; Cartesian cells
    cut by the boundary are integrated with a midpoint sub-lattice.
    """
    h = grid.h
    if grid.is_radial:
        n = grid.dim
        lo = grid.coords - h / 2
        hi = grid.coords + h / 2
        inside = np.zeros_like(lo)
        for a, b in omega.intervals():
            a_c = np.clip(a, lo, hi)
            b_c = np.clip(b, lo, hi)
            inside += b_c**n - a_c**n
        frac = inside / (hi**n - lo**n)
        return Field(grid, 2.0 * frac - 1.0)

    q = q_field(grid, omega).values.copy()
    half_diag = h / math.sqrt(2.0)
    radii = sorted({v for iv in omega.intervals() for v in iv if v > 0})
    cut = np.zeros(grid.shape, dtype=bool)
    for rb in radii:
        cut |= np.abs(grid.radius - rb) <= half_diag + 1e-12
    if np.any(cut):
        k = _CELL_SUBSAMPLES
        offs = (np.arange(k) + 0.5) / k * h - h / 2
        ox, oy = np.meshgrid(offs, offs, indexing="ij")
        ix, iy = np.nonzero(cut)
        x = grid.coords
        for i, j in zip(ix, iy):
            rr = np.hypot(x[i] + ox, x[j] + oy)
            q[i, j] = 2.0 * np.mean(contains_radius(omega, rr)) - 1.0
    return Field(grid, q)


def scale_shape(omega: OmegaShape, factor: float) -> OmegaShape:
    """The dilated set factor * omega."""
    if isinstance(omega, Ball):
        return Ball(omega.radius * factor)
    if isinstance(omega, Annulus):
        return Annulus(omega.inner * factor, omega.outer * factor)
    return Union(tuple(scale_shape(m, factor) for m in omega.members))
