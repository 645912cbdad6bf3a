import numpy as np
import pytest

from hilbex.collision import CollisionBackend
from hilbex.euler import MeshSpec, Profile, build_spatial_grid, constant_background, derivative, solve_euler
from hilbex.interior import (
    FieldSampler,
    InteriorKinetics,
    build_interior_order,
    burnett_form_f2,
    compatible_interior_init,
    interior_sources,
    time_difference,
)

COARSE = MeshSpec(x_max=4.0, h_wall=0.02, growth=1.1, h_max=0.1)


@pytest.fixture(scope="module")
def euler():
    return solve_euler(Profile(), 0.1, 0.1, build_spatial_grid(COARSE))


def test_time_difference_exact_for_quadratics():
    t = np.linspace(0.0, 1.0, 11)
    f = lambda n: 2 - t[n] + 3 * t[n] ** 2
    for n in (0, 5, 10):
        assert time_difference(f, n, t.size, t[1] - t[0]) == pytest.approx(-1 + 6 * t[n], abs=1e-12)


def test_sampler_spline_mode_reproduces_nodes(euler):
    nodes = FieldSampler(euler)
    spline = FieldSampler(euler, points=euler.nodes[:40])
    for n in (0, 7):
        for a, b in zip(nodes.state(n), spline.state(n)):
            assert np.allclose(a[:40], b, atol=1e-14)
    with pytest.raises(ValueError):
        FieldSampler(euler, points=np.array([-0.1, 0.5]))


def test_interior_kinetics_need_constant_bgk(euler, small_grid):
    with pytest.raises(ValueError, match="constant"):
        InteriorKinetics(small_grid, CollisionBackend(nu_c0=1.0), FieldSampler(euler))


def test_first_order_has_no_micro_part(euler, small_grid, bgk):
    kin = InteriorKinetics(small_grid, bgk, FieldSampler(euler))
    assert np.max(np.abs(kin.micro(1, 3))) == 0
    f, g = interior_sources(kin, 1)
    assert np.max(np.abs(f)) == 0 and np.max(np.abs(g)) == 0


def test_generic_micro_matches_burnett_form(euler, vgrid, bgk):
    x = euler.nodes
    g = x * np.exp(-(x**2))
    init = (0.3 * g, np.stack([g, 0.5 * g, 0.7 * g], 1), -0.4 * g)
    s = FieldSampler(euler)
    kin = InteriorKinetics(vgrid, bgk, s)
    o1 = build_interior_order(euler, kin, 1, np.zeros(euler.times.size), init=init)
    s.add_order(1, o1.field)
    kin.clear()
    n = euler.times.size // 2
    rho, u, T = s.state(n)
    _, u1, th1 = s.order(1, n)
    ref = burnett_form_f2(vgrid, bgk, rho, u, T, derivative(u, s.points, axis=0), derivative(T, s.points), u1, th1)
    assert np.max(np.abs(kin.micro(2, n) - ref)) < 1e-12 * max(1.0, np.max(np.abs(ref)))


def test_constant_background_interior_order_is_zero(small_grid, bgk):
    eu = constant_background(build_spatial_grid(COARSE), 0.05)
    kin = InteriorKinetics(small_grid, bgk, FieldSampler(eu))
    order = build_interior_order(eu, kin, 2, np.zeros(eu.times.size))
    assert order.source_norm == 0
    assert np.max(np.abs(order.field.u)) == 0


def test_compatible_init_carries_wall_datum():
    x = np.linspace(0, 2, 41)
    rho, u, theta = compatible_interior_init(x, 0.3)
    assert u[0, 2] == 0.3 and np.all(u[x >= 1.0, 2] == 0) and not np.any(rho) and not np.any(theta)
