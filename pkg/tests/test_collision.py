import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hilbex.collision import (
    CollisionBackend,
    NotMicroscopicError,
    apply_L_values,
    bgk_transport_closed_form,
    coercivity_constant,
    collision_series,
    discrete_maxwellian,
    invert_L_values,
    model_collision,
    operator_data,
    transport_values,
)
from hilbex.velocity import FluidPoint, build_grid, maxwellian_values, moment_array

GRID = build_grid(6.0, 12)
WIDE = build_grid(10.0, 32)

states = st.tuples(
    st.floats(0.5, 2.0),
    st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.just(0.0)),
    st.floats(0.7, 1.4),
)


def _random_fields(grid, sq, seed, count=2):
    r = np.random.default_rng(seed)
    return [r.standard_normal(grid.size) * sq for _ in range(count)]


def test_backend_dict_round_trip():
    for be in (CollisionBackend(), CollisionBackend(nu_bar=2.5), CollisionBackend(nu_c0=0.7), CollisionBackend("hard-sphere-quad", n_polar=4, n_azimuth=8)):
        back = CollisionBackend.from_dict(be.to_dict())
        assert back.to_dict() == be.to_dict()
    with pytest.raises(ValueError, match="unknown"):
        CollisionBackend("maxwell-molecules")
    with pytest.raises(ValueError):
        CollisionBackend(nu_bar=0.0)


@pytest.mark.parametrize("backend", [CollisionBackend(), CollisionBackend(nu_c0=0.5)], ids=["constant", "affine"])
@given(state=states)
def test_bgk_operator_is_symmetric_with_exact_null_space(backend, state):
    rho, u, T = state
    op = operator_data(backend, GRID, rho, np.asarray(u), T)
    assert np.max(GRID.norm(apply_L_values(op, op.basis.e))) < 1e-12
    g, h = _random_fields(GRID, op.basis.sqrt_mu, 7)
    lhs = GRID.inner(apply_L_values(op, g), h)
    rhs = GRID.inner(g, apply_L_values(op, h))
    assert lhs == pytest.approx(rhs, rel=1e-10, abs=1e-12)
    assert GRID.inner(apply_L_values(op, g), g) > 0


@pytest.mark.parametrize("backend", [CollisionBackend(), CollisionBackend(nu_c0=0.5)], ids=["constant", "affine"])
def test_invert_L_round_trip(backend):
    op = operator_data(backend, GRID, 1.2, np.array([0.1, 0.0, 0.0]), 0.9)
    (g,) = _random_fields(GRID, op.basis.sqrt_mu, 3, 1)
    g = op.basis.micro(g)
    h, res, _ = invert_L_values(op, g, backend)
    assert res <= backend.tol_solve
    assert np.max(np.abs(op.basis.project(h))) < 1e-10
    assert np.allclose(apply_L_values(op, h), g, atol=1e-7 * np.max(np.abs(g)))


def test_invert_L_rejects_macroscopic_data(bgk):
    op = operator_data(bgk, GRID, 1.0, np.zeros(3), 1.0)
    with pytest.raises(NotMicroscopicError):
        invert_L_values(op, op.basis.e[0], bgk)


@given(state=states, nu_bar=st.floats(0.2, 5.0))
def test_bgk_transport_matches_closed_form(state, nu_bar):
    rho, u, T = state
    be = CollisionBackend(nu_bar=nu_bar)
    mu, kappa, diag = transport_values(be, WIDE, rho, np.asarray(u), T)
    ref = bgk_transport_closed_form(rho, T, nu_bar)
    assert mu == pytest.approx(ref.mu, rel=1e-10)
    assert kappa == pytest.approx(ref.kappa, rel=1e-10)
    assert diag == pytest.approx(4 * ref.mu / 3, rel=1e-10)


def test_model_collision_conserves_and_vanishes_on_maxwellians(bgk):
    mu = maxwellian_values(GRID, 1.1, np.array([0.2, 0.0, -0.1]), 0.9)
    assert np.max(np.abs(model_collision(mu, GRID, bgk))) < 1e-12
    F = mu * (1 + 0.2 * np.sin(GRID.nodes[:, 0]) + 0.05 * GRID.nodes[:, 2] ** 2)
    q = model_collision(F, GRID, bgk)
    assert np.max(np.abs(moment_array(q, GRID))) < 1e-12


def test_discrete_maxwellian_reproduces_moments(bgk):
    F = maxwellian_values(GRID, 1.0, np.zeros(3), 1.0) * (1 + 0.1 * GRID.nodes[:, 0])
    M, _ = discrete_maxwellian(GRID, F)
    assert np.allclose(moment_array(M, GRID), moment_array(F, GRID), atol=1e-12)


def test_first_series_coefficient_is_linearized_operator(bgk):
    rho, u, T = 1.1, np.array([0.2, -0.1, 0.0]), 0.95
    op = operator_data(bgk, GRID, rho, u, T)
    sq = op.basis.sqrt_mu
    (g,) = _random_fields(GRID, sq, 11, 1)
    q1 = collision_series([sq**2, g * sq], GRID, bgk, (rho, u, T), 1)[1]
    assert np.allclose(q1, -sq * apply_L_values(op, g), atol=1e-12)


def test_coercivity_is_positive(bgk):
    c = coercivity_constant(bgk, GRID, FluidPoint(1.0, (0.0, 0.0, 0.0), 1.0), samples=20)
    assert c == pytest.approx(1.0, rel=1e-10)


def test_hard_sphere_operator_small_grid():
    g = build_grid(5.0, 8)
    be = CollisionBackend("hard-sphere-quad")
    op = operator_data(be, g, 1.0, np.zeros(3), 1.0)
    assert np.max(g.norm(apply_L_values(op, op.basis.e))) < 1e-12
    (f,) = _random_fields(g, op.basis.sqrt_mu, 5, 1)
    assert g.inner(apply_L_values(op, f), f) > 0
    mu, kappa, _ = transport_values(be, g, 1.0, np.zeros(3), 1.0)
    assert mu > 0 and kappa > 0
