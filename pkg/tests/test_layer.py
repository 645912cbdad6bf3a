import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hilbex.collision import transport_values
from hilbex.layer import (
    LayerCoefficients,
    LayerCompatibilityError,
    LayerGridSpec,
    NeumannData,
    build_layer_grid,
    compatible_init,
    cumulative_from_far,
    derive_normal_velocity,
    layer_density,
    neumann_from_matching,
    solve_layer_parabolic,
    steady_profile_shooting,
    wall_flux_matrix,
    weighted_norm,
)

TIMES = np.linspace(0.0, 1.0, 101)


def test_layer_grid_shape():
    g = build_layer_grid(LayerGridSpec(), TIMES)
    assert g.y[0] == 0 and g.y_max == pytest.approx(20.0)
    assert np.all(np.diff(g.y) > 0)
    with pytest.raises(ValueError, match="Y_max"):
        build_layer_grid(LayerGridSpec(y_max=10.0), TIMES)


@given(st.tuples(*[st.floats(-2, 2)] * 3), st.tuples(*[st.floats(-1, 1)] * 3))
def test_compatible_init_matches_wall_slope(slope, amp):
    y = build_layer_grid(LayerGridSpec(), TIMES).y
    nm = NeumannData(np.tile(slope[:2], (TIMES.size, 1)), np.full(TIMES.size, slope[2]))
    v = compatible_init(nm, y, amp)
    x0, x1, x2 = y[:3]
    w = np.array([(-x1 - x2) / ((x0 - x1) * (x0 - x2)), (-x0 - x2) / ((x1 - x0) * (x1 - x2)), (-x0 - x1) / ((x2 - x0) * (x2 - x1))])
    assert np.allclose(w @ v[:3], slope, atol=1e-10)
    assert np.all(v[-1] == 0)


def test_zero_data_gives_zero_layer():
    g = build_layer_grid(LayerGridSpec(), TIMES)
    lf = solve_layer_parabolic(LayerCoefficients.frozen(TIMES), NeumannData.zeros(TIMES.size), g)
    assert np.max(np.abs(lf.stacked())) == 0


def test_incompatible_initial_profile_is_rejected():
    g = build_layer_grid(LayerGridSpec(), TIMES)
    nm = NeumannData(np.ones((TIMES.size, 2)), np.ones(TIMES.size))
    with pytest.raises(LayerCompatibilityError):
        solve_layer_parabolic(LayerCoefficients.frozen(TIMES), nm, g, init=np.zeros((g.y.size, 3)))


def test_layer_norm_stays_bounded_with_drift():
    g = build_layer_grid(LayerGridSpec(), TIMES)
    co = LayerCoefficients.frozen(TIMES, drift=0.5, div_u=0.2)
    nm = NeumannData(np.tile([0.3, -0.1], (TIMES.size, 1)), np.full(TIMES.size, 0.2))
    lf = solve_layer_parabolic(co, nm, g)
    assert np.all(np.isfinite(lf.stacked()))
    assert lf.meta["far_value"] == 0.0
    assert weighted_norm(lf.stacked()[-1], g.y) < 10.0


def test_steady_profile_matches_shooting_oracle():
    times = np.linspace(0.0, 30.0, 601)
    g = build_layer_grid(LayerGridSpec(), times)
    co = LayerCoefficients.frozen(times, div_u=1.5)  # reaction 2 div_u / 3 = 1 on theta
    nm = NeumannData(np.zeros((times.size, 2)), np.full(times.size, 0.5))
    lf = solve_layer_parabolic(co, nm, g)
    ref = steady_profile_shooting(1.0, 1.0, 0.5, g.y_max, g.y)
    assert np.max(np.abs(lf.theta[-1] - ref)) < 1e-4


def test_cumulative_from_far_integrates_exponential():
    y = np.linspace(0.0, 20.0, 4001)
    got = cumulative_from_far(np.exp(-y), y)
    assert np.allclose(got, np.exp(-y) - np.exp(-20.0), atol=1e-6)


def test_derived_normal_velocity_and_density():
    y = np.linspace(0.0, 20.0, 2001)
    rho0 = np.full(TIMES.size, 1.25)
    rho_bar = TIMES[:, None] * np.exp(-y)[None, :]
    u3, wall, _, _ = derive_normal_velocity(rho_bar, rho0, TIMES, y)
    assert np.allclose(u3, np.exp(-y) / 1.25, atol=1e-5)
    assert np.allclose(wall, 1 / 1.25, atol=1e-5)
    theta = np.exp(-y)[None, :] * np.ones((TIMES.size, 1))
    rho = layer_density(theta, np.zeros_like(theta), rho0, np.full(TIMES.size, 0.8))
    assert np.allclose(rho, -1.25 * theta / (3 * 0.8))


def test_wall_flux_matrix_is_transport_diagonal(wide_grid, bgk):
    rho, u, T = np.array([1.1, 0.9]), np.array([[0.1, -0.2, 0.0], [0.0, 0.3, 0.0]]), np.array([0.9, 1.2])
    W = wall_flux_matrix(wide_grid, bgk, rho, u, T)
    mu, kappa, _ = transport_values(bgk, wide_grid, rho, u, T)
    for i in range(2):
        assert np.allclose(W[i, :, :3], np.diag([mu[i], mu[i], kappa[i]]), atol=1e-12)
        assert np.allclose(W[i, :, 3], 0.0, atol=1e-12)


@given(st.lists(st.floats(-3, 3), min_size=6, max_size=6))
def test_neumann_with_diagonal_flux_is_division(vals):
    nt = 2
    co = LayerCoefficients.frozen(np.arange(nt), mu=0.8, kappa=1.7)
    a = np.array(vals[:4]).reshape(nt, 2)
    b = np.array(vals[4:])
    plain = neumann_from_matching(co, a, b)
    flux = np.zeros((nt, 3, 4))
    flux[:, [0, 1, 2], [0, 1, 2]] = [0.8, 0.8, 1.7]
    closed = neumann_from_matching(co, a, b, flux=flux)
    assert np.allclose(plain.stacked(), closed.stacked(), atol=1e-12)
    assert np.allclose(plain.b, a / 0.8) and np.allclose(plain.a, b / 1.7)
