"""Masked MAC-staggered geometries for the cell and exterior problems.

Array convention: index ``[i, j]`` with ``i`` along x and ``j`` along y.
``u[i, j]`` lives on the vertical face at the left of cell ``(i, j)``,
``v[i, j]`` on the horizontal face at its bottom.  Periodic grids store
``n`` faces per row (face ``n`` is face ``0``); bounded grids store ``n+1``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

MIN_OBSTACLE_CELLS = 4


class ResolutionError(ValueError):
    """The obstacle is not resolved by the grid."""


@dataclass(frozen=True)
class Disk:
    radius: float

    def __post_init__(self):
        if not (0 < self.radius < 0.5):
            raise ValueError("Disk radius must lie in (0, 0.5)")

    def contains(self, x, y, scale=1.0):
        rr = self.radius * scale
        return x * x + y * y <= rr * rr

    @property
    def area(self):
        return math.pi * self.radius**2

    @property
    def half_extent(self):
        return self.radius


@dataclass(frozen=True)
class Square:
    half_side: float

    def __post_init__(self):
        if not (0 < self.half_side < 0.5):
            raise ValueError("Square half-side must lie in (0, 0.5)")

    def contains(self, x, y, scale=1.0):
        a = self.half_side * scale
        return (np.abs(x) <= a) & (np.abs(y) <= a)

    @property
    def area(self):
        return 4.0 * self.half_side**2

    @property
    def half_extent(self):
        return self.half_side


ObstacleShape = (Disk, Square)


def parse_shape(text: str):
    """Parse ``disk:0.25`` or ``square:0.2``."""
    kind, _, val = text.partition(":")
    kind = kind.strip().lower()
    if kind == "disk":
        return Disk(float(val))
    if kind == "square":
        return Square(float(val))
    raise ValueError(f"unknown obstacle shape {text!r}")


def _extent_cells(solid: np.ndarray) -> int:
    """Largest number of solid cells along any grid row or column."""
    if not solid.any():
        return 0
    return int(max(solid.sum(axis=0).max(), solid.sum(axis=1).max()))


@dataclass(frozen=True, eq=False)
class Grid2D:
    """Uniform n x n cell grid on [x0, x0 + n h]^2 with a solid-cell mask."""

    n: int
    h: float
    x0: float
    solid: np.ndarray
    periodic: bool

    @property
    def xc(self):
        return self.x0 + (np.arange(self.n) + 0.5) * self.h

    @property
    def xf(self):
        m = self.n if self.periodic else self.n + 1
        return self.x0 + np.arange(m) * self.h

    @property
    def fluid(self):
        return ~self.solid

    @property
    def u_shape(self):
        return (self.n, self.n) if self.periodic else (self.n + 1, self.n)

    @property
    def v_shape(self):
        return (self.n, self.n) if self.periodic else (self.n, self.n + 1)

    def u_blocked(self) -> np.ndarray:
        """Faces of u touching a solid cell (no-slip)."""
        s = self.solid
        if self.periodic:
            return s | np.roll(s, 1, axis=0)
        out = np.zeros(self.u_shape, dtype=bool)
        out[:-1] |= s
        out[1:] |= s
        return out

    def v_blocked(self) -> np.ndarray:
        s = self.solid
        if self.periodic:
            return s | np.roll(s, 1, axis=1)
        out = np.zeros(self.v_shape, dtype=bool)
        out[:, :-1] |= s
        out[:, 1:] |= s
        return out

    def porosity(self) -> float:
        return float(self.fluid.mean())

    def partner(self, i: int) -> int:
        """Periodic partner of a boundary face index (0 <-> n)."""
        if i not in (0, self.n):
            raise IndexError(f"{i} is not a boundary face index")
        return self.n - i


@dataclass(frozen=True, eq=False)
class CellGeometry(Grid2D):
    shape: object = None
    delta: float = 1.0


@dataclass(frozen=True, eq=False)
class ExteriorGeometry(Grid2D):
    shape: object = None
    R: float = 4.0
    dirichlet_edges: tuple = field(default=())

    def dirichlet_count(self) -> int:
        """Boundary cell edges carrying the far-field value, per velocity component."""
        return len(self.dirichlet_edges)


def _mask(shape, n, x0, h, scale):
    xc = x0 + (np.arange(n) + 0.5) * h
    X, Y = np.meshgrid(xc, xc, indexing="ij")
    return np.asarray(shape.contains(X, Y, scale), dtype=bool)


def build_cell(shape, delta: float, n: int) -> CellGeometry:
    """Periodic unit cell [-1/2, 1/2]^2 with obstacle ``delta * shape``."""
    if not (0 < delta <= 1):
        raise ValueError("delta must lie in (0, 1]")
    if n < 16:
        raise ValueError("cell grids need n >= 16")
    h = 1.0 / n
    solid = _mask(shape, n, -0.5, h, delta)
    if _extent_cells(solid) < MIN_OBSTACLE_CELLS:
        raise ResolutionError(
            f"obstacle spans {_extent_cells(solid)} cells per axis at n={n}, delta={delta}; "
            f"need >= {MIN_OBSTACLE_CELLS}"
        )
    solid.setflags(write=False)
    return CellGeometry(n=n, h=h, x0=-0.5, solid=solid, periodic=True, shape=shape, delta=delta)


def build_exterior(shape, R: float, n: int) -> ExteriorGeometry:
    """Box [-R, R]^2 around the unit obstacle, far field imposed on the box edges."""
    if R < 4:
        raise ValueError("truncation half-width R must be >= 4")
    if n < 32:
        raise ValueError("exterior grids need n >= 32")
    h = 2.0 * R / n
    solid = _mask(shape, n, -R, h, 1.0)
    if _extent_cells(solid) < MIN_OBSTACLE_CELLS:
        raise ResolutionError(
            f"obstacle spans {_extent_cells(solid)} cells per axis at n={n}, R={R}; "
            f"need >= {MIN_OBSTACLE_CELLS}"
        )
    if solid[0].any() or solid[-1].any() or solid[:, 0].any() or solid[:, -1].any():
        raise ValueError("obstacle touches the truncation box")
    solid.setflags(write=False)
    edges = tuple((side, k) for side in ("left", "right", "bottom", "top") for k in range(n))
    return ExteriorGeometry(
        n=n, h=h, x0=-R, solid=solid, periodic=False, shape=shape, R=R, dirichlet_edges=edges
    )


@dataclass(eq=False)
class StaggeredField:
    u: np.ndarray
    v: np.ndarray
    p: np.ndarray
    grid: Grid2D

    @property
    def h(self):
        return self.grid.h

    @property
    def solid(self):
        return self.grid.solid

    def divergence(self) -> np.ndarray:
        return divergence(self.u, self.v, self.grid)

    def mean_velocity_integral(self) -> np.ndarray:
        """Midpoint-rule integral of the velocity over the grid (solid faces are zero)."""
        g = self.grid
        if g.periodic:
            return g.h**2 * np.array([self.u.sum(), self.v.sum()])
        # boundary faces carry half a control volume
        wu = np.ones(g.u_shape)
        wu[[0, -1], :] = 0.5
        wv = np.ones(g.v_shape)
        wv[:, [0, -1]] = 0.5
        return g.h**2 * np.array([(wu * self.u).sum(), (wv * self.v).sum()])

    def cell_velocity(self):
        """Velocity averaged to cell centers."""
        if self.grid.periodic:
            uc = 0.5 * (self.u + np.roll(self.u, -1, axis=0))
            vc = 0.5 * (self.v + np.roll(self.v, -1, axis=1))
        else:
            uc = 0.5 * (self.u[:-1] + self.u[1:])
            vc = 0.5 * (self.v[:, :-1] + self.v[:, 1:])
        return uc, vc

    def rotated(self) -> "StaggeredField":
        """Rotate the field by +90 degrees about the grid center (periodic grids)."""
        g = self.grid
        if not g.periodic:
            raise NotImplementedError("rotation implemented for periodic grids")
        # new(x, y) = R old(R^-1 (x, y)); R(a, b) = (-b, a)
        # cell (i, j) -> (n-1-j, i); u-face (i, j) <- v-face
        n = g.n
        u_new = np.empty_like(self.u)
        v_new = np.empty_like(self.v)
        p_new = np.empty_like(self.p)
        ii, jj = np.meshgrid(np.arange(n), np.arange(n), indexing="ij")
        # u_new at x-face i (x=x0+i h), y-cell j  <-  -v_old at y-face (n-i)%n, x-cell j
        u_new[ii, jj] = -self.v[jj, (n - ii) % n]
        # v_new at x-cell i, y-face j  <-  u_old at x-face j, y-cell n-1-i
        v_new[ii, jj] = self.u[jj, n - 1 - ii]
        p_new[ii, jj] = self.p[jj, n - 1 - ii]
        return StaggeredField(u_new, v_new, p_new, g)

    def to_csv(self, path, header_comment: str | None = None):
        uc, vc = self.cell_velocity()
        g = self.grid
        X, Y = np.meshgrid(g.xc, g.xc, indexing="ij")
        I, J = np.meshgrid(np.arange(g.n), np.arange(g.n), indexing="ij")
        rows = np.column_stack(
            [I.ravel(), J.ravel(), X.ravel(), Y.ravel(), uc.ravel(), vc.ravel(),
             np.where(g.solid, 0.0, self.p).ravel(), (~g.solid).astype(int).ravel()]
        )
        with open(path, "w", newline="\n") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("i,j,x,y,u,v,p,mask\n")
            for r in rows:
                fh.write(
                    f"{int(r[0])},{int(r[1])},{r[2]:.17g},{r[3]:.17g},{r[4]:.17g},"
                    f"{r[5]:.17g},{r[6]:.17g},{int(r[7])}\n"
                )


def divergence(u, v, grid: Grid2D) -> np.ndarray:
    h = grid.h
    if grid.periodic:
        return (np.roll(u, -1, axis=0) - u + np.roll(v, -1, axis=1) - v) / h
    return (u[1:] - u[:-1] + v[:, 1:] - v[:, :-1]) / h


def zero_field(grid: Grid2D) -> StaggeredField:
    return StaggeredField(np.zeros(grid.u_shape), np.zeros(grid.v_shape), np.zeros((grid.n, grid.n)), grid)


def write_pgm(grid: Grid2D, path) -> None:
    """ASCII P2 mask, top row first, 0 = solid, 1 = fluid."""
    img = (~grid.solid).astype(int).T[::-1]
    lines = ["P2", f"{grid.n} {grid.n}", "1"]
    lines += [" ".join(str(x) for x in row) for row in img]
    Path(path).write_text("\n".join(lines) + "\n")


def read_pgm(path) -> np.ndarray:
    """Inverse of :func:`write_pgm`; returns the solid mask in ``[i, j]`` order."""
    tokens = Path(path).read_text().split()
    if tokens[0] != "P2":
        raise ValueError("not an ASCII PGM file")
    w, hgt, maxval = int(tokens[1]), int(tokens[2]), int(tokens[3])
    if maxval != 1:
        raise ValueError("expected maxval 1")
    img = np.array(tokens[4:], dtype=int).reshape(hgt, w)
    return (img[::-1].T == 0)
