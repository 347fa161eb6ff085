import numpy as np
import pytest

from thinflow.core import FlowParams
from thinflow.grid import Disk, build_cell, build_exterior, zero_field
from thinflow.stokes_pl import SolverConfig, SolverError, dissipation_pairing, solve_cell, solve_exterior

R = 1.5


@pytest.fixture(scope="module")
def cell_solutions(cell32):
    return {xi: solve_cell(cell32, xi, FlowParams(R)) for xi in [(1.0, 0.0), (0.0, 1.0)]}


def test_config_invariants():
    with pytest.raises(ValueError):
        SolverConfig(kappa_schedule=(1e-3, 1e-2))
    with pytest.raises(ValueError):
        SolverConfig(kappa_schedule=(1e-2, -1.0))
    with pytest.raises(ValueError):
        SolverConfig(tol_rel=1e-10, tol_inner=1e-8)
    cfg = SolverConfig.geometric(1e-2, 1e-6, 5)
    assert cfg.kappa_schedule[0] == pytest.approx(1e-2) and cfg.kappa_final == pytest.approx(1e-6)


def test_zero_forcing(cell32):
    fld, rep = solve_cell(cell32, (0.0, 0.0), R)
    assert rep.converged and rep.energy == 0.0
    assert not fld.u.any() and not fld.v.any() and not fld.p.any()


def test_cell_solution_properties(cell_solutions, cell32):
    fld, rep = cell_solutions[(1.0, 0.0)]
    assert rep.converged and rep.final_residual <= SolverConfig().tol_rel
    assert rep.div_max <= SolverConfig().tol_rel
    assert not fld.u[cell32.u_blocked()].any() and not fld.v[cell32.v_blocked()].any()
    assert abs(fld.p[cell32.fluid].mean()) < 1e-12
    # energy identity: dissipation equals the work of the forcing
    work = fld.mean_velocity_integral()[0]
    assert rep.energy == pytest.approx(work, rel=1e-8)


def test_functional_never_increases_within_a_level(cell_solutions):
    _, rep = cell_solutions[(1.0, 0.0)]
    hist = rep.history
    for (k0, j0, _), (k1, j1, _) in zip(hist, hist[1:]):
        if k0 == k1:
            assert j1 <= j0 + 1e-12 * abs(j0)


def test_rotation_symmetry(cell_solutions):
    f1, _ = cell_solutions[(1.0, 0.0)]
    f2, _ = cell_solutions[(0.0, 1.0)]
    rot = f1.rotated()
    scale = np.abs(f1.u).max()
    assert np.abs(rot.u - f2.u).max() <= 1e-10 * max(scale, 1)
    assert np.abs(rot.v - f2.v).max() <= 1e-10 * max(scale, 1)


def test_pairing_properties(cell_solutions):
    f1, _ = cell_solutions[(1.0, 0.0)]
    f2, _ = cell_solutions[(0.0, 1.0)]
    z = zero_field(f1.grid)
    assert dissipation_pairing(f1, z, r=R) == 0.0
    assert dissipation_pairing(z, z, r=R) == 0.0
    assert dissipation_pairing(f1, f1, r=R) > 0
    a, b = dissipation_pairing(f1, f2, r=R), dissipation_pairing(f2, f1, r=R)
    assert abs(a - b) <= 1e-8 * dissipation_pairing(f1, f1, r=R)


def test_pairing_grid_mismatch(cell_solutions):
    f1, _ = cell_solutions[(1.0, 0.0)]
    other = zero_field(build_cell(Disk(0.25), 0.5, 16))
    with pytest.raises(ValueError):
        dissipation_pairing(f1, other, r=R)


def test_forcing_scaling(cell32, cell_solutions):
    f1, _ = cell_solutions[(1.0, 0.0)]
    t = 3.0
    ft, _ = solve_cell(cell32, (t, 0.0), R)
    np.testing.assert_allclose(ft.u, t ** (1 / (R - 1)) * f1.u, rtol=0, atol=1e-5 * np.abs(ft.u).max())


def test_picard_linearization_agrees(cell32, cell_solutions):
    _, rep = cell_solutions[(1.0, 0.0)]
    cfg = SolverConfig(linearization="picard", picard_max=400, kappa_schedule=(1e-2, 1e-3, 1e-4, 1e-5, 1e-6))
    _, rp = solve_cell(cell32, (1.0, 0.0), R, cfg)
    assert rp.energy == pytest.approx(rep.energy, rel=1e-6)


def test_non_convergence_is_reported(cell32):
    cfg = SolverConfig(picard_max=1, kappa_schedule=(1e-6,))
    with pytest.raises(SolverError) as exc:
        solve_cell(cell32, (1.0, 0.0), R, cfg)
    assert exc.value.report is not None and not exc.value.report.converged


def test_exterior_boundary_and_zero_data():
    g = build_exterior(Disk(0.25), 4, 64)
    fld, rep = solve_exterior(g, (0.0, 0.0), R)
    assert not fld.u.any()
    fld, rep = solve_exterior(g, (1.0, 0.5), R)
    assert rep.converged
    assert np.all(fld.u[[0, -1], :] == 1.0) and np.all(fld.v[:, [0, -1]] == 0.5)
    assert not fld.u[g.u_blocked()].any()
    assert rep.div_max < 1e-8
