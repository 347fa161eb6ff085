"""Independent reference computations used to validate the production solvers.

Nothing here shares code with the production operators: the cell oracle
uses the stencil-form energy in ``_kernels`` and its own dense projector,
and the Poisson reference is a matrix-free CG on the five-point stencil.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
import scipy.sparse.linalg as spla

from . import _kernels
from .core import conjugate_exponent
from .grid import CellGeometry, StaggeredField, zero_field

MAX_ORACLE_N = 32


@dataclass(frozen=True)
class PoiseuilleSolution:
    """Closed-form solution of  -a (|u'|^(r-2) u')' = c  on (0, 1), u(0) = u(1) = 0."""

    c: float
    a: float
    r: float

    def __post_init__(self):
        if self.c < 0 or self.a <= 0:
            raise ValueError("need c >= 0 and a > 0")
        if not 1 < self.r < 2:
            raise ValueError("r must lie in (1, 2)")

    @property
    def rc(self):
        return conjugate_exponent(self.r)

    def __call__(self, y):
        rc = self.rc
        y = np.asarray(y, dtype=float)
        return (self.c / self.a) ** (rc - 1.0) / rc * (0.5**rc - np.abs(y - 0.5) ** rc)

    def slope(self, y):
        rc = self.rc
        d = np.asarray(y, dtype=float) - 0.5
        return -(self.c / self.a) ** (rc - 1.0) * np.abs(d) ** (rc - 2.0) * d

    def average(self):
        rc = self.rc
        return (self.c / self.a) ** (rc - 1.0) * 0.5**rc / (rc + 1.0)


def poiseuille_profile(c, a, r, y3):
    return PoiseuilleSolution(c, a, r)(y3)


# ---------------------------------------------------------------------------
# brute-force cell minimizer


@dataclass
class OracleResult:
    field: StaggeredField
    energy: float
    functional: float
    grad_norm: float
    iterations: int
    converged: bool
    accepted: list


def _constraint_matrix(geom: CellGeometry):
    """Dense divergence rows (fluid cells) acting on the free faces, unit scaling."""
    n = geom.n
    ub = np.asarray(geom.u_blocked())
    vb = np.asarray(geom.v_blocked())
    uf = [(i, j) for i in range(n) for j in range(n) if not ub[i, j]]
    vf = [(i, j) for i in range(n) for j in range(n) if not vb[i, j]]
    col = {("u",) + f: k for k, f in enumerate(uf)}
    col.update({("v",) + f: len(uf) + k for k, f in enumerate(vf)})
    rows = []
    for i in range(n):
        for j in range(n):
            if geom.solid[i, j]:
                continue
            row = np.zeros(len(col))
            for key, sgn in ((("u", (i + 1) % n, j), 1.0), (("u", i, j), -1.0),
                             (("v", i, (j + 1) % n), 1.0), (("v", i, j), -1.0)):
                if key in col:
                    row[col[key]] += sgn
            if row.any():
                rows.append(row)
    return np.array(rows), uf, vf


def _projector(B):
    # orthogonal projector onto ker(B); pinv handles the constant-pressure null space
    return np.eye(B.shape[1]) - np.linalg.pinv(B) @ B


def minimize_cell_energy(geom: CellGeometry, xi, params, kappa=1e-6, iters=200000,
                         gtol=1e-9, impl=None) -> OracleResult:
    """Accelerated projected-gradient minimization of the discrete cell functional."""
    if geom.n > MAX_ORACLE_N:
        raise ValueError(f"oracle is limited to n <= {MAX_ORACLE_N}")
    impl = impl or _kernels.active
    r = params.r if hasattr(params, "r") else float(params)
    xi = np.asarray(xi, dtype=float)
    n, h = geom.n, geom.h
    if not xi.any():
        return OracleResult(zero_field(geom), 0.0, 0.0, 0.0, 0, True, [])
    B, uf, vf = _constraint_matrix(geom)
    P = _projector(B)
    ui = np.array(uf).T
    vi = np.array(vf).T
    nu = len(uf)

    def unpack(x):
        u = np.zeros((n, n))
        v = np.zeros((n, n))
        u[ui[0], ui[1]] = x[:nu]
        v[vi[0], vi[1]] = x[nu:]
        return u, v

    def fg(x):
        u, v = unpack(x)
        e, gu, gv = impl.periodic_energy(u, v, h, r, kappa, xi[0], xi[1])
        g = np.concatenate([gu[ui[0], ui[1]], gv[vi[0], vi[1]]])
        return e, P @ g

    x = np.zeros(nu + len(vf))
    f, g = fg(x)
    y, fy, gy = x, f, g
    t_prev = 1.0
    L = 1.0 / h**2
    accepted = [f]
    tol = gtol * (1.0 + np.linalg.norm(xi))
    gnorm = np.linalg.norm(g) / h
    it = 0
    for it in range(1, iters + 1):
        # backtracking on the gradient Lipschitz estimate; function values are
        # too flat near the minimizer to drive the test
        while True:
            x_new = y - gy / L
            f_new, g_new = fg(x_new)
            d = x_new - y
            if np.linalg.norm(g_new - gy) <= L * np.linalg.norm(d) * (1.0 + 1e-12):
                break
            L *= 2.0
        if f_new > f + 1e-14 * abs(f):
            # restart momentum whenever the objective would go up
            if t_prev == 1.0:
                L *= 2.0
            t_prev = 1.0
            y, fy, gy = x, f, g
            continue
        t = 0.5 * (1.0 + math.sqrt(1.0 + 4.0 * t_prev**2))
        y = x_new + ((t_prev - 1.0) / t) * (x_new - x)
        x, f, g = x_new, f_new, g_new
        accepted.append(f)
        fy, gy = fg(y)
        t_prev = t
        L *= 0.95
        gnorm = np.linalg.norm(g) / h
        if gnorm < tol:
            break
    u, v = unpack(x)
    fld = StaggeredField(u, v, np.zeros((n, n)), geom)
    with np.errstate(all="ignore"):
        e0, _, _ = _kernels.numpy_impl.periodic_energy(u, v, h, r, 0.0, 0.0, 0.0)
    return OracleResult(fld, float(r * e0), float(f), float(gnorm), it, bool(gnorm < tol), accepted)


# ---------------------------------------------------------------------------
# linear Poisson reference


def linear_poisson_reference(dom, f_x, f_y, coeff=1.0, tol=1e-13):
    """Solve  div(coeff (f - grad p)) = 0  with zero normal flux, five-point stencil.

    ``f_x`` has shape (nx+1, ny) on vertical faces and ``f_y`` shape (nx, ny+1)
    on horizontal faces; boundary-face values are ignored.  Returns the
    zero-mean cell pressure.
    """
    nx, ny = dom.nx, dom.ny
    hx, hy = dom.hx, dom.hy
    fx = np.array(f_x, dtype=float)
    fy = np.array(f_y, dtype=float)
    fx[[0, -1], :] = 0.0
    fy[:, [0, -1]] = 0.0

    def flux_div(qx, qy):
        return (qx[1:] - qx[:-1]) / hx + (qy[:, 1:] - qy[:, :-1]) / hy

    def apply(pv):
        p = pv.reshape(nx, ny)
        gx = np.zeros((nx + 1, ny))
        gy = np.zeros((nx, ny + 1))
        gx[1:-1] = (p[1:] - p[:-1]) / hx
        gy[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / hy
        # negated so the operator is positive; the mean term pins the constant mode
        return (-flux_div(coeff * gx, coeff * gy) + pv.mean()).ravel()

    rhs = -flux_div(coeff * fx, coeff * fy).ravel()
    rhs -= rhs.mean()
    A = spla.LinearOperator((nx * ny, nx * ny), matvec=apply, dtype=float)
    p, info = spla.cg(A, rhs, rtol=tol, atol=0.0, maxiter=20 * nx * ny)
    if info != 0:
        raise RuntimeError(f"CG did not converge (info={info})")
    p = p.reshape(nx, ny)
    return p - p.mean()
