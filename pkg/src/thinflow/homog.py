"""Homogenized constitutive maps: permeability, drag force and their links."""

from __future__ import annotations

import dataclasses
import logging
import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .core import FlowParams, conjugate_exponent
from .grid import CellGeometry, Disk, ExteriorGeometry, StaggeredField, build_cell
from .stokes_pl import SolverConfig, dissipation_pairing, solve_cell, solve_exterior

log = logging.getLogger(__name__)

TABLE_COLUMNS = ("r", "delta_or_R", "xi_x", "xi_y", "out_x", "out_y", "energy", "iters", "residual")


def _r(params):
    return params.r if isinstance(params, FlowParams) else float(params)


@dataclass(frozen=True)
class MobilityMap:
    """Isotropic map  xi -> coefficient * |xi|^(exponent - 1) * xi."""

    coefficient: float
    exponent: float
    provenance: str
    lam: float | None = None

    def __post_init__(self):
        if not self.coefficient > 0:
            raise ValueError("mobility coefficient must be positive")
        if not self.exponent > 0:
            raise ValueError("mobility exponent must be positive")
        if self.provenance not in ("Darcy", "Reynolds", "Brinkman", "linear"):
            raise ValueError(f"unknown provenance {self.provenance!r}")
        if (self.provenance == "Brinkman") != (self.lam is not None):
            raise ValueError("lam is given exactly for Brinkman provenance")

    def __call__(self, xi_x, xi_y=None):
        """Apply componentwise; accepts a 2-vector or two broadcastable arrays."""
        if xi_y is None:
            xi = np.asarray(xi_x, dtype=float)
            return self.coefficient * _scaled(xi[0], xi[1], self.exponent)
        return self.coefficient * _scaled(np.asarray(xi_x, float), np.asarray(xi_y, float), self.exponent)

    def potential(self, xi_x, xi_y):
        """Convex potential whose gradient is the map."""
        mag = np.hypot(xi_x, xi_y)
        return self.coefficient * mag ** (self.exponent + 1.0) / (self.exponent + 1.0)


def _scaled(a, b, e):
    mag = np.hypot(a, b)
    with np.errstate(divide="ignore", invalid="ignore"):
        f = np.where(mag > 0, mag ** (e - 1.0), 0.0)
    return np.stack([f * a, f * b])


@dataclass(frozen=True)
class DragCoefficient:
    """Isotropic drag law  G(zeta) = g_r |zeta|^(r-2) zeta."""

    g_r: float
    r: float
    obstacle: str = "disk"
    R: float | None = None
    n: int | None = None
    history: tuple = ()

    def __post_init__(self):
        if not self.g_r > 0:
            raise ValueError("g_r must be positive")
        if not 1 < self.r < 2:
            raise ValueError("r must lie in (1, 2)")

    def force(self, zeta):
        z = np.asarray(zeta, dtype=float)
        return self.g_r * _scaled(z[0], z[1], self.r - 1.0)

    def bounds(self):
        """Two-sided bound constants (m, M) of |G(zeta)| / |zeta|^(r-1); equal when isotropic."""
        return self.g_r, self.g_r


def drag_force(g: DragCoefficient, zeta):
    return g.force(zeta)


def drag_inverse(g: DragCoefficient, xi):
    xi = np.asarray(xi, dtype=float)
    e = 1.0 / (g.r - 1.0)
    return g.g_r ** (-e) * _scaled(xi[0], xi[1], e)


# ---------------------------------------------------------------------------
# cell problem


def permeability(geom: CellGeometry, xi, params, cfg: SolverConfig | None = None, return_report=False):
    """Integral of the cell velocity over the fluid part of the unit cell."""
    fld, rep = solve_cell(geom, xi, params, cfg)
    U = fld.mean_velocity_integral()
    return (U, rep) if return_report else U


def rescaled_cell_solve(shape, delta, params, cfg=None, xi=(1.0, 0.0), cells_per_unit=8):
    """Cell solve expressed in obstacle-sized units.

    The unit cell is resolved with ``cells_per_unit / delta`` cells, so the
    obstacle sees the same mesh width as an exterior box with
    ``cells_per_unit`` cells per unit length.  Returns the velocity field
    ``delta^((2-r)/(r-1)) w(delta y)`` on the stretched grid and the scaled
    permeability ``delta^((2-r)/(r-1)) U_delta(xi)``.
    """
    r = _r(params)
    n = max(16, int(round(cells_per_unit / delta)))
    geom = build_cell(shape, delta, n)
    fld, rep = solve_cell(geom, xi, params, cfg)
    s = delta ** ((2.0 - r) / (r - 1.0))
    stretched = dataclasses.replace(geom, h=geom.h / delta, x0=geom.x0 / delta)
    scaled = StaggeredField(s * fld.u, s * fld.v, fld.p, stretched)
    return scaled, s * fld.mean_velocity_integral()


@dataclass(frozen=True)
class Extrapolation:
    limit: float
    rate: float
    values: tuple
    gaps: tuple
    cauchy: bool


def richardson(deltas, values) -> Extrapolation:
    """Extrapolate a geometric delta-sequence to delta -> 0 assuming C delta^p error.

    The rate p is fitted from the last three values.  When the last two gaps
    do not shrink geometrically the rate is reported as NaN and the limit
    falls back to the last value.
    """
    d = np.asarray(deltas, dtype=float)
    v = np.asarray(values, dtype=float)
    if len(d) < 3 or len(d) != len(v):
        raise ValueError("need at least three (delta, value) pairs")
    ratios = d[1:] / d[:-1]
    if not np.allclose(ratios, ratios[0], rtol=1e-12) or not 0 < ratios[0] < 1:
        raise ValueError("deltas must decrease geometrically")
    gaps = np.abs(np.diff(v)) / np.maximum(np.abs(v[1:]), 1e-300)
    cauchy = bool(np.all(np.diff(gaps) < 0))
    v1, v2, v3 = v[-3:]
    q = (v1 - v2) / (v2 - v3) if v2 != v3 else math.inf
    if not (q > 1.0 and math.isfinite(q)):
        return Extrapolation(float(v3), math.nan, tuple(v), tuple(gaps), cauchy)
    rate = math.log(q) / math.log(1.0 / ratios[0])
    return Extrapolation(float(v3 - (v2 - v3) / (q - 1.0)), rate, tuple(v), tuple(gaps), cauchy)


# ---------------------------------------------------------------------------
# exterior problem


def _exterior_solution(geom: ExteriorGeometry, params, cfg, zeta, cache):
    key = tuple(float(z) for z in zeta)
    if cache is not None and key in cache:
        return cache[key]
    out = solve_exterior(geom, zeta, params, cfg)
    if cache is not None:
        cache[key] = out
    return out


def drag(geom: ExteriorGeometry, params, cfg: SolverConfig | None = None, cache=None) -> DragCoefficient:
    """Drag coefficient from the dissipation of the exterior flow at unit far field."""
    if not isinstance(geom.shape, Disk):
        warnings.warn("non-isotropic obstacle: returning the e1-axis drag coefficient", stacklevel=2)
    fld, rep = _exterior_solution(geom, params, cfg, (1.0, 0.0), cache)
    g_r = dissipation_pairing(fld, fld, r=_r(params))
    hist = tuple((float(k), float(J), float(res)) for k, J, res in rep.history)
    return DragCoefficient(g_r=g_r, r=_r(params), obstacle=str(geom.shape), R=geom.R, n=geom.n, history=hist)


def drag_pairing_full(geom: ExteriorGeometry, params, cfg, zeta, tau, cache=None) -> float:
    """G(zeta) . tau as the pairing of the exterior flows at far fields zeta and tau."""
    wz, _ = _exterior_solution(geom, params, cfg, zeta, cache)
    wt, _ = _exterior_solution(geom, params, cfg, tau, cache)
    return dissipation_pairing(wz, wt, r=_r(params))


# ---------------------------------------------------------------------------
# tabulation


def table_row(r, delta_or_R, xi, out, energy, iters, residual):
    return (float(r), float(delta_or_R), float(xi[0]), float(xi[1]), float(out[0]), float(out[1]),
            float(energy), int(iters), float(residual))


def format_row(row) -> str:
    return ",".join(str(v) if isinstance(v, int) else f"{v:.17g}" for v in row)


def write_table(path, rows, header_comment=None):
    with open(path, "w", newline="\n") as fh:
        if header_comment:
            fh.write(f"# {header_comment}\n")
        fh.write(",".join(TABLE_COLUMNS) + "\n")
        for row in rows:
            fh.write(format_row(row) + "\n")
