import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from thinflow.core import FlowParams
from thinflow.homog import DragCoefficient, MobilityMap
from thinflow.macro import (MacroDomain, brinkman_map, brinkman_solve, darcy_mobility, darcy_solve, fiber_diffusion,
                            fiber_solve, reynolds_map, reynolds_mobility, reynolds_solve)
from thinflow.oracle import PoiseuilleSolution

P = FlowParams(1.5)
G = DragCoefficient(4.2, 1.5)


def phi(x, y):
    return np.sin(np.pi * x) * np.cos(np.pi * y)


def shear_forcing(n, Lx=1.0, Ly=1.0):
    return MacroDomain.from_function(Lx, Ly, n, n, lambda x, y: (np.sin(np.pi * y) + 0 * x, x * y))


def test_reynolds_mobility_values():
    assert reynolds_mobility((1.0, 0.0), P)[0] == pytest.approx(0.0883883476483184, abs=1e-14)
    assert not reynolds_mobility((0.0, 0.0), P).any()
    assert reynolds_mobility((1.0, 0.0), FlowParams(1.5, 2.0))[0] == pytest.approx(0.0883883476483184 / 4, rel=1e-14)


def test_darcy_mobility():
    m = darcy_mobility(G, P)
    assert m.exponent == 2.0 and m.provenance == "Darcy"
    assert not m((0.0, 0.0)).any()
    m2 = darcy_mobility(G, FlowParams(1.5, 2.0))
    np.testing.assert_allclose(m2((0.3, 0.4)), 2.0 ** (-2.0) * m((0.3, 0.4)), rtol=1e-14)
    with pytest.raises(ValueError):
        darcy_mobility(DragCoefficient(4.2, 1.4), P)


def test_domain_validation():
    with pytest.raises(ValueError):
        MacroDomain(1.0, 1.0, 4, 4, np.zeros((4, 4)), np.zeros((4, 5)), np.zeros((2, 4, 4)))


def test_fiber_zero_symmetric_and_darcy_plateau():
    fr = fiber_solve((0.0, 0.0), 0.5, G, P)
    assert not fr.profile.any()
    fr = fiber_solve((0.3, -0.4), 0.5, G, P, m=256)
    assert fr.profile[0].tolist() == [0.0, 0.0] and fr.profile[-1].tolist() == [0.0, 0.0]
    np.testing.assert_allclose(fr.profile, fr.profile[::-1], atol=1e-10)
    np.testing.assert_allclose(fr.average, np.trapezoid(fr.profile, fr.y3, axis=0), rtol=1e-14)
    # tiny lambda: mid-gap velocity is the pointwise Darcy value
    fr = fiber_solve((1.0, 0.0), 1e-3, G, P, m=256)
    darcy = darcy_mobility(G, P)((1.0, 0.0))[0]
    assert fr.profile[128, 0] == pytest.approx(darcy, rel=1e-2)
    with pytest.raises(ValueError):
        fiber_solve((1.0, 0.0), 0.0, G, P)
    with pytest.raises(ValueError):
        fiber_solve((1.0, 0.0), 1.0, G, P, m=32)


def test_fiber_matches_poiseuille_without_drag():
    fr = fiber_solve((2.0, 0.0), 0.7, 0.0, P, m=512)
    exact = PoiseuilleSolution(2.0, fiber_diffusion(0.7, P), 1.5)(fr.y3)
    assert np.abs(fr.profile[:, 0] - exact).max() < 1e-4 * exact.max()


@pytest.mark.parametrize("model", ["darcy", "reynolds", "brinkman"])
def test_gradient_forcing_is_absorbed(model):
    dom = MacroDomain.from_potential(1.0, 1.0, 32, 32, phi)
    if model == "darcy":
        sol = darcy_solve(dom, darcy_mobility(G, P))
    elif model == "reynolds":
        sol = reynolds_solve(dom, P)
    else:
        sol = brinkman_solve(dom, 0.5, G, P, m=64)
        assert np.abs(sol.profiles).max() < 1e-8
    ref = phi(dom.xc[:, None], dom.yc[None, :])
    assert np.abs(sol.U_x).max() < 1e-8 and np.abs(sol.U_cell).max() < 1e-8
    assert np.ptp(sol.p - ref) < 1e-8


def test_zero_forcing_returns_zero():
    dom = MacroDomain.constant(1.0, 1.0, 8, 8, (0.0, 0.0))
    sol = darcy_solve(dom, darcy_mobility(G, P))
    assert sol.iterations == 0 and not sol.p.any() and not sol.U_x.any()


def test_constant_forcing_gives_no_flow():
    # a constant field is a gradient: the pressure absorbs it completely
    dom = MacroDomain.constant(1.0, 1.0, 16, 16, (1.0, 0.0))
    sol = darcy_solve(dom, darcy_mobility(G, P))
    assert sol.residual <= 1e-8
    assert np.abs(sol.U_x).max() < 1e-10


def test_rotational_forcing_properties():
    dom = shear_forcing(32)
    sol = darcy_solve(dom, darcy_mobility(G, P))
    assert sol.residual <= 1e-8
    assert abs(sol.p.mean()) < 1e-14
    assert not sol.U_x[[0, -1]].any() and not sol.U_y[:, [0, -1]].any()
    assert np.abs(sol.divergence(dom)).max() < 1e-8
    e = np.array(sol.energies)
    assert np.all(np.diff(e) <= 1e-12 * np.abs(e[1:]))
    dissipation = np.sum(sol.U_x[1:-1] * (dom.f_x[1:-1] - np.diff(sol.p, axis=0) / dom.hx))
    assert dissipation > 0


def test_reynolds_is_darcy_with_reynolds_map():
    dom = shear_forcing(16)
    a = reynolds_solve(dom, P)
    b = darcy_solve(dom, reynolds_map(P), model="reynolds")
    assert np.array_equal(a.p, b.p) and np.array_equal(a.U_x, b.U_x)


def test_reynolds_pressure_override_hook():
    dom = MacroDomain.from_function(1.0, 1.0, 8, 8, lambda x, y: (1 + x, y - 0.5))
    sol = reynolds_solve(dom, P, pressure_override=np.zeros(64))
    np.testing.assert_allclose(sol.U_cell, reynolds_mobility(dom.f_cell, P), rtol=1e-14, atol=1e-300)


@settings(max_examples=5, deadline=None)
@given(st.floats(0.2, 5.0))
def test_homogeneity_pass_through(t):
    dom = shear_forcing(16)
    dom_t = MacroDomain(dom.Lx, dom.Ly, 16, 16, t * dom.f_x, t * dom.f_y, t * dom.f_cell)
    for solve in (lambda d: darcy_solve(d, darcy_mobility(G, P)), lambda d: reynolds_solve(d, P)):
        a, b = solve(dom), solve(dom_t)
        np.testing.assert_allclose(b.U_x, t**2.0 * a.U_x, rtol=1e-4, atol=1e-4 * np.abs(b.U_x).max())


def test_brinkman_profiles_and_averages():
    dom = shear_forcing(8)
    sol = brinkman_solve(dom, 0.5, G, P, m=64)
    assert sol.profiles.shape == (8, 8, 65, 2)
    assert not sol.profiles[:, :, [0, -1]].any()
    np.testing.assert_allclose(np.trapezoid(sol.profiles, sol.y3, axis=2), np.moveaxis(sol.U_cell, 0, -1),
                               rtol=1e-12, atol=1e-15)


def test_brinkman_without_drag_matches_reynolds():
    # lambda = 1 with the drag switched off reduces the fiber law to the Reynolds one
    dom = shear_forcing(16)
    b = brinkman_solve(dom, 1.0, 0.0, P, m=1024)
    r = reynolds_solve(dom, P)
    assert np.linalg.norm(b.U_cell - r.U_cell) / np.linalg.norm(r.U_cell) < 1e-3
    k = brinkman_map(1.0, 0.0, P, m=1024).coefficient
    assert k == pytest.approx(reynolds_map(P).coefficient, rel=1e-5)


def test_exports(tmp_path):
    dom = shear_forcing(4)
    sol = brinkman_solve(dom, 0.5, G, P, m=64)
    sol.to_csv(dom, tmp_path / "m.csv", "hdr")
    sol.profiles_to_csv(tmp_path / "p.csv")
    sol.summary_json(tmp_path / "s.json", regime="brinkman")
    lines = (tmp_path / "m.csv").read_text().splitlines()
    assert lines[0] == "# hdr" and lines[1] == "i,j,x,y,p,Uav_x,Uav_y" and len(lines) == 18
    assert (tmp_path / "p.csv").read_text().splitlines()[0] == "i,j,k,y3,u1,u2"
    import json
    data = json.loads((tmp_path / "s.json").read_text())
    assert data["lambda"] == 0.5 and data["regime"] == "brinkman"
