"""Hot pointwise/stencil kernels with a numba path and a pure-numpy path.

The numba path is used when numba imports and ``THINFLOW_NUMBA`` is not set
to ``0``.  Both paths are always importable as ``numpy_impl`` / ``numba_impl``
so they can be compared and benchmarked.
"""

from __future__ import annotations

import os
import types

import numpy as np

try:
    import numba
except ImportError:  # pragma: no cover
    numba = None


# --------------------------------------------------------------------------
# pure numpy


def _np_constitutive(s, r, kappa, want_hess):
    """Regularized power-law potential at quadrature points.

    s: (k, M) components with |D|^2 = sum_k s_k^2.  Returns
    (sum_m Phi, eta * s, hess) with Phi = (|s|^2 + kappa^2)^(r/2) / r and
    hess the (k, k, M) Hessian, or None.
    """
    q = np.einsum("km,km->m", s, s) + kappa * kappa
    with np.errstate(divide="ignore", invalid="ignore"):
        eta = np.where(q > 0, q ** ((r - 2.0) / 2.0), 0.0)
    phi = float(np.sum(np.where(q > 0, q ** (r / 2.0), 0.0))) / r
    flux = eta * s
    if not want_hess:
        return phi, flux, None
    k = s.shape[0]
    with np.errstate(divide="ignore", invalid="ignore"):
        c = np.where(q > 0, (r - 2.0) * eta / q, 0.0)
    hess = c[None, None, :] * s[:, None, :] * s[None, :, :]
    for a in range(k):
        hess[a, a] += eta
    return phi, flux, hess


def _np_tridiag(lower, diag, upper, rhs):
    """Solve a tridiagonal system (lower[0] and upper[-1] unused)."""
    n = diag.shape[0]
    cp = np.empty(n)
    dp = np.empty(n)
    cp[0] = upper[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        m = diag[i] - lower[i] * cp[i - 1]
        cp[i] = upper[i] / m
        dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
    x = np.empty(n)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def _np_periodic_energy(u, v, h, r, kappa, xi0, xi1):
    """Discrete functional and its gradient on a fully periodic MAC grid.

    Quadrature: each cell averages the potential over its four corners,
    pairing the cell-centered normal strains with the corner shear strain.
    """
    d11 = (np.roll(u, -1, 0) - u) / h
    d22 = (np.roll(v, -1, 1) - v) / h
    # shear at vertex (i, j): lower-left corner of cell (i, j)
    d12 = 0.5 * ((u - np.roll(u, 1, 1)) / h + (v - np.roll(v, 1, 0)) / h)
    e = 0.0
    g11 = np.zeros_like(u)
    g22 = np.zeros_like(u)
    g12 = np.zeros_like(u)
    for di, dj in ((0, 0), (1, 0), (0, 1), (1, 1)):
        c12 = np.roll(np.roll(d12, -di, 0), -dj, 1)
        q = d11 * d11 + d22 * d22 + 2.0 * c12 * c12 + kappa * kappa
        e += np.sum(q ** (r / 2.0)) / r
        eta = q ** ((r - 2.0) / 2.0)
        g11 += eta * d11
        g22 += eta * d22
        g12 += np.roll(np.roll(2.0 * eta * c12, di, 0), dj, 1)
    w = 0.25 * h * h
    energy = w * e - h * h * (xi0 * u.sum() + xi1 * v.sum())
    # chain rule back to face values
    gu = w * ((np.roll(g11, 1, 0) - g11) / h + 0.5 * (g12 - np.roll(g12, -1, 1)) / h) - h * h * xi0
    gv = w * ((np.roll(g22, 1, 1) - g22) / h + 0.5 * (g12 - np.roll(g12, -1, 0)) / h) - h * h * xi1
    return energy, gu, gv


numpy_impl = types.SimpleNamespace(
    constitutive=_np_constitutive,
    tridiag=_np_tridiag,
    periodic_energy=_np_periodic_energy,
    name="numpy",
)


# --------------------------------------------------------------------------
# numba

if numba is not None:
    _jit = numba.njit(cache=True, fastmath=False)

    @_jit
    def _nb_constitutive_core(s, r, kappa, want_hess):
        k, m = s.shape
        flux = np.empty((k, m))
        hess = np.zeros((k, k, m)) if want_hess else np.zeros((k, k, 0))
        phi = 0.0
        for p in range(m):
            q = kappa * kappa
            for a in range(k):
                q += s[a, p] * s[a, p]
            if q > 0.0:
                eta = q ** ((r - 2.0) / 2.0)
                phi += q ** (r / 2.0)
            else:
                eta = 0.0
            for a in range(k):
                flux[a, p] = eta * s[a, p]
            if want_hess:
                c = (r - 2.0) * eta / q if q > 0.0 else 0.0
                for a in range(k):
                    for b in range(k):
                        hess[a, b, p] = c * s[a, p] * s[b, p]
                    hess[a, a, p] += eta
        return phi / r, flux, hess

    def _nb_constitutive(s, r, kappa, want_hess):
        phi, flux, hess = _nb_constitutive_core(
            np.ascontiguousarray(s, dtype=np.float64), float(r), float(kappa), bool(want_hess)
        )
        return phi, flux, (hess if want_hess else None)

    @_jit
    def _nb_tridiag(lower, diag, upper, rhs):
        n = diag.shape[0]
        cp = np.empty(n)
        dp = np.empty(n)
        cp[0] = upper[0] / diag[0]
        dp[0] = rhs[0] / diag[0]
        for i in range(1, n):
            m = diag[i] - lower[i] * cp[i - 1]
            cp[i] = upper[i] / m
            dp[i] = (rhs[i] - lower[i] * dp[i - 1]) / m
        x = np.empty(n)
        x[n - 1] = dp[n - 1]
        for i in range(n - 2, -1, -1):
            x[i] = dp[i] - cp[i] * x[i + 1]
        return x

    @_jit
    def _nb_periodic_energy(u, v, h, r, kappa, xi0, xi1):
        n = u.shape[0]
        d11 = np.empty((n, n))
        d22 = np.empty((n, n))
        d12 = np.empty((n, n))
        for i in range(n):
            ip = (i + 1) % n
            im = (i - 1) % n
            for j in range(n):
                jp = (j + 1) % n
                jm = (j - 1) % n
                d11[i, j] = (u[ip, j] - u[i, j]) / h
                d22[i, j] = (v[i, jp] - v[i, j]) / h
                d12[i, j] = 0.5 * ((u[i, j] - u[i, jm]) / h + (v[i, j] - v[im, j]) / h)
        g11 = np.zeros((n, n))
        g22 = np.zeros((n, n))
        g12 = np.zeros((n, n))
        e = 0.0
        su = 0.0
        sv = 0.0
        for i in range(n):
            for j in range(n):
                su += u[i, j]
                sv += v[i, j]
                for di in range(2):
                    for dj in range(2):
                        a = (i + di) % n
                        b = (j + dj) % n
                        c12 = d12[a, b]
                        q = d11[i, j] ** 2 + d22[i, j] ** 2 + 2.0 * c12 * c12 + kappa * kappa
                        e += q ** (r / 2.0)
                        eta = q ** ((r - 2.0) / 2.0)
                        g11[i, j] += eta * d11[i, j]
                        g22[i, j] += eta * d22[i, j]
                        g12[a, b] += 2.0 * eta * c12
        w = 0.25 * h * h
        energy = w * e / r - h * h * (xi0 * su + xi1 * sv)
        gu = np.empty((n, n))
        gv = np.empty((n, n))
        for i in range(n):
            ip = (i + 1) % n
            im = (i - 1) % n
            for j in range(n):
                jp = (j + 1) % n
                jm = (j - 1) % n
                gu[i, j] = w * ((g11[im, j] - g11[i, j]) / h + 0.5 * (g12[i, j] - g12[i, jp]) / h) - h * h * xi0
                gv[i, j] = w * ((g22[i, jm] - g22[i, j]) / h + 0.5 * (g12[i, j] - g12[ip, j]) / h) - h * h * xi1
        return energy, gu, gv

    numba_impl = types.SimpleNamespace(
        constitutive=_nb_constitutive,
        tridiag=_nb_tridiag,
        periodic_energy=_nb_periodic_energy,
        name="numba",
    )
else:  # pragma: no cover
    numba_impl = None


def _select():
    flag = os.environ.get("THINFLOW_NUMBA", "1").strip().lower()
    if numba_impl is not None and flag not in ("0", "false", "no", "off"):
        return numba_impl
    return numpy_impl


active = _select()
