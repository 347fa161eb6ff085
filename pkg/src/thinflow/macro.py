"""Lower-dimensional macroscopic models on a rectangle with zero normal flux.

All three models reduce to one finite-volume problem: find the zero-mean cell
pressure p minimizing the convex functional

    E(p) = sum_cells (hx hy / 4) sum_corners Phi(f - grad p),
    Phi(xi) = c |xi|^(e+1) / (e+1),

whose stationarity condition is  div U = 0  with face flux U equal to the
average of the four corner fluxes c |xi|^(e-1) xi.  For e = 1 this is the
standard five-point scheme.  Normal components on boundary faces are zero.
"""

from __future__ import annotations

import json
import logging
import math
from dataclasses import dataclass, field
from functools import lru_cache

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .core import FlowParams, conjugate_exponent
from .homog import DragCoefficient, MobilityMap

log = logging.getLogger(__name__)


class MacroConvergenceError(RuntimeError):
    pass


@dataclass(frozen=True, eq=False)
class MacroDomain:
    """Rectangle [0, Lx] x [0, Ly] with forcing on faces and cell centers.

    ``f_x`` lives on vertical faces (nx+1, ny), ``f_y`` on horizontal faces
    (nx, ny+1), ``f_cell`` at cell centers (2, nx, ny).
    """

    Lx: float
    Ly: float
    nx: int
    ny: int
    f_x: np.ndarray
    f_y: np.ndarray
    f_cell: np.ndarray

    def __post_init__(self):
        if self.Lx <= 0 or self.Ly <= 0 or self.nx < 2 or self.ny < 2:
            raise ValueError("invalid macroscopic domain")
        if self.f_x.shape != (self.nx + 1, self.ny) or self.f_y.shape != (self.nx, self.ny + 1):
            raise ValueError("face forcing has the wrong shape")
        if self.f_cell.shape != (2, self.nx, self.ny):
            raise ValueError("cell forcing has the wrong shape")

    @property
    def hx(self):
        return self.Lx / self.nx

    @property
    def hy(self):
        return self.Ly / self.ny

    @property
    def xc(self):
        return (np.arange(self.nx) + 0.5) * self.hx

    @property
    def yc(self):
        return (np.arange(self.ny) + 0.5) * self.hy

    @classmethod
    def from_function(cls, Lx, Ly, nx, ny, fn):
        """Sample ``fn(x, y) -> (fx, fy)`` at face and cell centers."""
        hx, hy = Lx / nx, Ly / ny
        xf, yf = np.arange(nx + 1) * hx, np.arange(ny + 1) * hy
        xc, yc = (np.arange(nx) + 0.5) * hx, (np.arange(ny) + 0.5) * hy
        X, Y = np.meshgrid(xf, yc, indexing="ij")
        fx = np.broadcast_to(np.asarray(fn(X, Y)[0], float), X.shape).copy()
        X, Y = np.meshgrid(xc, yf, indexing="ij")
        fy = np.broadcast_to(np.asarray(fn(X, Y)[1], float), X.shape).copy()
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        a, b = fn(X, Y)
        fc = np.stack([np.broadcast_to(np.asarray(a, float), X.shape), np.broadcast_to(np.asarray(b, float), X.shape)])
        return cls(Lx, Ly, nx, ny, fx, fy, fc)

    @classmethod
    def constant(cls, Lx, Ly, nx, ny, f):
        return cls.from_function(Lx, Ly, nx, ny, lambda X, Y: (np.full(X.shape, f[0]), np.full(X.shape, f[1])))

    @classmethod
    def from_potential(cls, Lx, Ly, nx, ny, phi):
        """Forcing equal to the discrete gradient of ``phi`` sampled at cell centers."""
        xc = (np.arange(nx) + 0.5) * Lx / nx
        yc = (np.arange(ny) + 0.5) * Ly / ny
        X, Y = np.meshgrid(xc, yc, indexing="ij")
        pc = np.asarray(phi(X, Y), dtype=float)
        dom = cls(Lx, Ly, nx, ny, np.zeros((nx + 1, ny)), np.zeros((nx, ny + 1)), np.zeros((2, nx, ny)))
        gx, gy = face_gradient(dom, pc)
        return cls(Lx, Ly, nx, ny, gx, gy, cell_gradient(dom, pc))

    @classmethod
    def from_cell_samples(cls, Lx, Ly, nx, ny, fc):
        """Cell-center forcing (2, nx, ny); faces get the average of their two cells."""
        fc = np.asarray(fc, dtype=float)
        fx = np.zeros((nx + 1, ny))
        fy = np.zeros((nx, ny + 1))
        fx[1:-1] = 0.5 * (fc[0, 1:] + fc[0, :-1])
        fx[0], fx[-1] = fc[0, 0], fc[0, -1]
        fy[:, 1:-1] = 0.5 * (fc[1, :, 1:] + fc[1, :, :-1])
        fy[:, 0], fy[:, -1] = fc[1, :, 0], fc[1, :, -1]
        return cls(Lx, Ly, nx, ny, fx, fy, fc.copy())

    def is_zero(self):
        return not (self.f_x.any() or self.f_y.any() or self.f_cell.any())


def face_gradient(dom: MacroDomain, p):
    gx = np.zeros((dom.nx + 1, dom.ny))
    gy = np.zeros((dom.nx, dom.ny + 1))
    gx[1:-1] = (p[1:] - p[:-1]) / dom.hx
    gy[:, 1:-1] = (p[:, 1:] - p[:, :-1]) / dom.hy
    return gx, gy


def cell_gradient(dom: MacroDomain, p):
    """Central differences inside, one-sided in boundary cells."""
    return np.stack([np.gradient(p, dom.hx, axis=0, edge_order=1),
                     np.gradient(p, dom.hy, axis=1, edge_order=1)])


@dataclass
class MacroSolution:
    model: str
    p: np.ndarray
    U_x: np.ndarray            # conservative flux on vertical faces
    U_y: np.ndarray            # conservative flux on horizontal faces
    U_cell: np.ndarray         # (2, nx, ny) constitutive law at cell centers
    mobility: MobilityMap
    iterations: int
    residual: float
    energies: list = field(default_factory=list)
    y3: np.ndarray | None = None
    profiles: np.ndarray | None = None   # (nx, ny, m+1, 2) horizontal velocity only
    summary: dict = field(default_factory=dict)

    def divergence(self, dom: MacroDomain):
        return (self.U_x[1:] - self.U_x[:-1]) / dom.hx + (self.U_y[:, 1:] - self.U_y[:, :-1]) / dom.hy

    def to_csv(self, dom: MacroDomain, path, header_comment=None):
        X, Y = np.meshgrid(dom.xc, dom.yc, indexing="ij")
        I, J = np.meshgrid(np.arange(dom.nx), np.arange(dom.ny), indexing="ij")
        with open(path, "w", newline="\n") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("i,j,x,y,p,Uav_x,Uav_y\n")
            for i, j, x, y, p, a, b in zip(I.ravel(), J.ravel(), X.ravel(), Y.ravel(), self.p.ravel(),
                                           self.U_cell[0].ravel(), self.U_cell[1].ravel()):
                fh.write(f"{i},{j},{x:.17g},{y:.17g},{p:.17g},{a:.17g},{b:.17g}\n")

    def profiles_to_csv(self, path, header_comment=None):
        if self.profiles is None:
            raise ValueError("no fiber profiles stored")
        nx, ny, m1, _ = self.profiles.shape
        with open(path, "w", newline="\n") as fh:
            if header_comment:
                fh.write(f"# {header_comment}\n")
            fh.write("i,j,k,y3,u1,u2\n")
            for i in range(nx):
                for j in range(ny):
                    for k in range(m1):
                        u1, u2 = self.profiles[i, j, k]
                        fh.write(f"{i},{j},{k},{self.y3[k]:.17g},{u1:.17g},{u2:.17g}\n")

    def summary_json(self, path, **extra):
        data = dict(self.summary)
        data.update(extra)
        with open(path, "w", newline="\n") as fh:
            json.dump(data, fh, indent=2, sort_keys=True)
            fh.write("\n")


# ---------------------------------------------------------------------------
# mobility constructors


def reynolds_mobility(xi, params: FlowParams):
    rc = params.r_conj
    c = 1.0 / (2.0 ** (rc / 2.0) * (rc + 1.0) * params.mu ** (rc - 1.0))
    return MobilityMap(c, rc - 1.0, "Reynolds")(xi)


def reynolds_map(params: FlowParams) -> MobilityMap:
    rc = params.r_conj
    return MobilityMap(1.0 / (2.0 ** (rc / 2.0) * (rc + 1.0) * params.mu ** (rc - 1.0)), rc - 1.0, "Reynolds")


def darcy_mobility(g: DragCoefficient, params: FlowParams) -> MobilityMap:
    if abs(g.r - params.r) > 1e-15:
        raise ValueError("drag coefficient was computed for a different flow index")
    e = 1.0 / (params.r - 1.0)
    return MobilityMap((params.mu * g.g_r) ** (-e), e, "Darcy")


# ---------------------------------------------------------------------------
# Darcy-form pressure solve


@lru_cache(maxsize=8)
def _corner_ops(nx, ny, hx, hy):
    """Sparse maps from cell pressure to the corner samples of the face gradients.

    Returns (Ax, Ay, Sx, Sy): Ax p is d p/dx on the x-face of every cell corner
    (4 N rows, corner-major) and Sx selects that x-face from the flattened
    face array; boundary faces map to zero rows.
    """
    N = nx * ny
    I, J = np.meshgrid(np.arange(nx), np.arange(ny), indexing="ij")
    cid = (I * ny + J).ravel()
    nfx = (nx + 1) * ny
    nfy = nx * (ny + 1)
    # face gradient operators on interior faces
    fi, fj = np.meshgrid(np.arange(1, nx), np.arange(ny), indexing="ij")
    rows = (fi * ny + fj).ravel()
    Gx = sp.csr_matrix(
        (np.concatenate([np.full(rows.size, 1 / hx), np.full(rows.size, -1 / hx)]),
         (np.concatenate([rows, rows]), np.concatenate([(fi * ny + fj).ravel(), ((fi - 1) * ny + fj).ravel()]))),
        shape=(nfx, N))
    fi, fj = np.meshgrid(np.arange(nx), np.arange(1, ny), indexing="ij")
    rows = (fi * (ny + 1) + fj).ravel()
    Gy = sp.csr_matrix(
        (np.concatenate([np.full(rows.size, 1 / hy), np.full(rows.size, -1 / hy)]),
         (np.concatenate([rows, rows]), np.concatenate([(fi * ny + fj).ravel(), (fi * ny + fj - 1).ravel()]))),
        shape=(nfy, N))
    Sx, Sy = [], []
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        xf = ((I + di) * ny + J).ravel()
        yf = (I * (ny + 1) + J + dj).ravel()
        Sx.append(sp.csr_matrix((np.ones(N), (np.arange(N), xf)), shape=(N, nfx)))
        Sy.append(sp.csr_matrix((np.ones(N), (np.arange(N), yf)), shape=(N, nfy)))
    Sx = sp.vstack(Sx).tocsr()
    Sy = sp.vstack(Sy).tocsr()
    # boundary faces carry no normal component
    mx = np.ones(nfx)
    mx[:ny] = 0.0
    mx[-ny:] = 0.0
    my = np.ones((nx, ny + 1))
    my[:, [0, -1]] = 0.0
    Sx = Sx @ sp.diags(mx)
    Sy = Sy @ sp.diags(my.ravel())
    A = sp.vstack([Sx @ Gx, Sy @ Gy]).tocsr()
    return A, sp.block_diag([Sx, Sy]).tocsr()


class _DarcyProblem:
    def __init__(self, dom: MacroDomain, mob: MobilityMap):
        self.dom = dom
        self.mob = mob
        self.A, self.S = _corner_ops(dom.nx, dom.ny, dom.hx, dom.hy)
        self.b = self.S @ np.concatenate([dom.f_x.ravel(), dom.f_y.ravel()])
        self.w = 0.25 * dom.hx * dom.hy
        self.M = dom.nx * dom.ny * 4
        # potential c|xi|^(e+1)/(e+1) written in the constitutive kernel's form
        self.kr = mob.exponent + 1.0

    def corners(self, p):
        return (self.b - self.A @ p).reshape(2, self.M)

    def energy(self, p):
        phi, _, _ = _kernels.active.constitutive(self.corners(p), self.kr, 0.0, False)
        return self.w * self.mob.coefficient * phi

    def grad_hess(self, p, hess=True, floor=0.0):
        xi = self.corners(p)
        phi, flux, _ = _kernels.active.constitutive(xi, self.kr, 0.0, False)
        c = self.mob.coefficient
        E = self.w * c * phi
        g = -self.w * c * (self.A.T @ flux.ravel())
        if not hess:
            return E, g, None
        _, _, H = _kernels.active.constitutive(xi, self.kr, floor, True)
        blocks = [[sp.diags(H[a, b]) for b in range(2)] for a in range(2)]
        Hm = sp.bmat(blocks, format="csr")
        return E, g, (self.w * c * (self.A.T @ (Hm @ self.A))).tocsc()

    def face_flux(self, p):
        """Face flux: average of the corner fluxes touching each face."""
        xi = self.corners(p)
        _, flux, _ = _kernels.active.constitutive(xi, self.kr, 0.0, False)
        F = self.S.T @ flux.ravel()
        cnt = self.S.T @ np.ones(self.S.shape[0])
        with np.errstate(invalid="ignore", divide="ignore"):
            F = np.where(cnt > 0, F / np.maximum(cnt, 1), 0.0) * self.mob.coefficient
        nfx = (self.dom.nx + 1) * self.dom.ny
        return F[:nfx].reshape(self.dom.nx + 1, self.dom.ny), F[nfx:].reshape(self.dom.nx, self.dom.ny + 1)


def _bordered_solve(H, rhs):
    N = H.shape[0]
    e = sp.csr_matrix(np.ones((N, 1)) / math.sqrt(N))
    K = sp.bmat([[H, e], [e.T, None]], format="csc")
    return spla.splu(K).solve(np.concatenate([rhs, [0.0]]))[:N]


def _linear_start(prob: _DarcyProblem):
    """Pressure of the e = 1 problem with the same forcing."""
    H = (prob.w * (prob.A.T @ prob.A)).tocsc()
    rhs = prob.w * (prob.A.T @ prob.b)
    return _bordered_solve(H, rhs)


def darcy_solve(dom: MacroDomain, mob: MobilityMap, tol=1e-10, max_iter=200, model="darcy",
                pressure_override=None) -> MacroSolution:
    """Zero-mean pressure and fluxes of  div mob(f - grad p) = 0  with zero normal flux.

    ``pressure_override`` skips the solve and evaluates the fluxes at the
    given pressure (test hook).
    """
    nx, ny = dom.nx, dom.ny
    prob = _DarcyProblem(dom, mob)
    energies = []
    it = 0
    res = 0.0
    if pressure_override is not None:
        p = np.asarray(pressure_override, dtype=float).ravel().copy()
    elif dom.is_zero():
        p = np.zeros(nx * ny)
    else:
        p = _linear_start(prob)
        p -= p.mean()
        # divergence residual is measured against the flux scale of the forcing
        ref = np.linalg.norm(prob.w * prob.mob.coefficient * (prob.A.T @ np.abs(
            _kernels.active.constitutive(prob.b.reshape(2, -1), prob.kr, 0.0, False)[1]).ravel()))
        ref = max(ref, np.finfo(float).tiny)
        while True:
            xi = prob.corners(p)
            floor = 1e-8 * math.sqrt(np.mean(np.sum(xi * xi, axis=0))) + 1e-300
            E, g, H = prob.grad_hess(p, True, floor)
            energies.append(E)
            res = np.linalg.norm(g) / ref
            if res <= tol:
                break
            if it >= max_iter:
                raise MacroConvergenceError(f"{model} solve: residual {res:.3e} after {it} iterations")
            d = _bordered_solve(H, -g)
            slope = g @ d
            alpha = 1.0
            blind = -slope < 1e-13 * max(abs(E), 1e-300)
            while not blind:
                En = prob.energy(p + alpha * d)
                if En <= E + 1e-4 * alpha * slope:
                    break
                alpha *= 0.5
                if alpha < 1e-12:
                    raise MacroConvergenceError(f"{model} solve: line search failed at residual {res:.3e}")
            p = p + alpha * d
            p -= p.mean()
            it += 1
    P = p.reshape(nx, ny)
    P = P - P.mean()
    Ux, Uy = prob.face_flux(P.ravel())
    xi_c = dom.f_cell - cell_gradient(dom, P)
    U_cell = mob(xi_c[0], xi_c[1])
    sol = MacroSolution(model, P, Ux, Uy, U_cell, mob, it, float(res), energies)
    sol.summary = dict(model=model, provenance=mob.provenance, coefficient=mob.coefficient,
                       exponent=mob.exponent, iterations=it, residual=float(res),
                       max_divergence=float(np.abs(sol.divergence(dom)).max()), nx=nx, ny=ny,
                       Lx=dom.Lx, Ly=dom.Ly)
    if mob.lam is not None:
        sol.summary["lambda"] = mob.lam
    return sol


def reynolds_solve(dom: MacroDomain, params: FlowParams, **kw) -> MacroSolution:
    return darcy_solve(dom, reynolds_map(params), model="reynolds", **kw)


# ---------------------------------------------------------------------------
# Brinkman fiber problem


@dataclass(frozen=True)
class FiberResult:
    y3: np.ndarray
    profile: np.ndarray        # (m+1, 2)
    average: np.ndarray        # (2,)
    iterations: int
    residual: float


def _g_value(g):
    if g is None:
        return 0.0
    return float(g.g_r) if isinstance(g, DragCoefficient) else float(g)


def fiber_diffusion(lam, params: FlowParams):
    # |d/dy3 of the symmetrized gradient| = 2^(-1/2)|d/dy3 u'|, hence the explicit 2^(-r/2)
    return params.mu * lam**params.r * 2.0 ** (-params.r / 2.0)


@lru_cache(maxsize=64)
def _unit_fiber(a, drag, r, m, tol=1e-9):
    """Scalar profile for unit forcing:  -a (|phi'|^(r-2) phi')' + drag |phi|^(r-2) phi = 1."""
    rc = r / (r - 1.0)
    scales = [(1.0 / a) ** (rc - 1.0) * 0.5**rc / rc]
    if drag > 0:
        scales.append(drag ** (-(rc - 1.0)))
    S = min(scales)
    h = 1.0 / m
    k = _kernels.active
    phi = np.zeros(m + 1)

    def energy(v, kap):
        d = np.diff(v)[None, :] / h
        e1 = k.constitutive(d, r, kap * S, False)[0]
        e2 = k.constitutive(v[None, 1:-1], r, kap * S, False)[0] if drag > 0 else 0.0
        return h * (a * e1 + drag * e2) - h * v[1:-1].sum()

    it = 0
    res = math.inf
    fnorm = math.sqrt(m - 1) * h
    # below ~1e-8 the flat core of strongly shear-thinning profiles is at roundoff level
    for kap in (1e-2, 1e-4, 1e-6, 1e-8):
        for _sweep in range(60):
            d = np.diff(phi)[None, :] / h
            _, fl, hd = k.constitutive(d, r, kap * S, True)
            grad = h * a * (fl[0, :-1] - fl[0, 1:]) / h - h
            diag = a * (hd[0, 0, :-1] + hd[0, 0, 1:]) / h
            off = -a * hd[0, 0, 1:-1] / h
            if drag > 0:
                _, f2, h2 = k.constitutive(phi[None, 1:-1], r, kap * S, True)
                grad = grad + h * drag * f2[0]
                diag = diag + h * drag * h2[0, 0]
            res = np.linalg.norm(grad) / fnorm
            if res < tol:
                break
            lower = np.concatenate([[0.0], off])
            upper = np.concatenate([off, [0.0]])
            step = -k.tridiag(lower, diag, upper, grad)
            E0 = energy(phi, kap)
            slope = grad @ step
            alpha = 1.0
            if -slope > 1e-13 * abs(E0):
                while alpha > 1e-12:
                    trial = phi.copy()
                    trial[1:-1] += alpha * step
                    if energy(trial, kap) <= E0 + 1e-4 * alpha * slope:
                        break
                    alpha *= 0.5
            phi[1:-1] += alpha * step
            it += 1
    return phi, it, res


def fiber_solve(zeta, lam, g, params: FlowParams, m=256) -> FiberResult:
    """Horizontal velocity profile across the gap for constant forcing ``zeta``."""
    if not lam > 0:
        raise ValueError("lambda must be positive")
    if m < 64:
        raise ValueError("fiber resolution m must be >= 64")
    zeta = np.asarray(zeta, dtype=float)
    y3 = np.linspace(0.0, 1.0, m + 1)
    mag = float(np.hypot(*zeta))
    if mag == 0.0:
        return FiberResult(y3, np.zeros((m + 1, 2)), np.zeros(2), 0, 0.0)
    phi, it, res = _unit_fiber(fiber_diffusion(lam, params), params.mu * _g_value(g), params.r, int(m))
    # both terms are homogeneous of degree r - 1 in the profile
    scale = mag ** (params.r_conj - 1.0)
    prof = np.outer(scale * phi, zeta / mag)
    avg = np.trapezoid(prof, y3, axis=0)
    return FiberResult(y3, prof, avg, it, res)


def brinkman_map(lam, g, params: FlowParams, m=256) -> MobilityMap:
    """Average-flux law of the fiber problem, as an isotropic mobility."""
    phi, _, _ = _unit_fiber(fiber_diffusion(lam, params), params.mu * _g_value(g), params.r, int(m))
    k_b = float(np.trapezoid(phi, dx=1.0 / m))
    return MobilityMap(k_b, params.r_conj - 1.0, "Brinkman", lam=float(lam))


def brinkman_solve(dom: MacroDomain, lam, g, params: FlowParams, m=256, keep_profiles=True, **kw) -> MacroSolution:
    """Coupled fiber / depth-averaged incompressibility system.

    The fiber flux law is exactly homogeneous, so one unit fiber solve fixes
    the averaged mobility; profiles are rebuilt cell by cell from it.
    """
    mob = brinkman_map(lam, g, params, m)
    sol = darcy_solve(dom, mob, model="brinkman", **kw)
    phi, fit, fres = _unit_fiber(fiber_diffusion(lam, params), params.mu * _g_value(g), params.r, int(m))
    y3 = np.linspace(0.0, 1.0, m + 1)
    xi_c = dom.f_cell - cell_gradient(dom, sol.p)
    mag = np.hypot(xi_c[0], xi_c[1])
    with np.errstate(invalid="ignore", divide="ignore"):
        amp = np.where(mag > 0, mag ** (params.r_conj - 2.0), 0.0)
    sol.y3 = y3
    if keep_profiles:
        sol.profiles = np.einsum("ij,k,cij->ijkc", amp, phi, xi_c)
    # cell fluxes are the trapezoid averages of the profiles
    sol.U_cell = np.trapezoid(phi, y3) * amp * xi_c
    sol.summary.update(fiber_iterations=fit, fiber_residual=float(fres), m=m, g_r=_g_value(g))
    return sol
