import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hilbex.velocity import (
    FluidPoint,
    GridSpec,
    build_grid,
    grid_from_spec,
    macro_basis,
    maxwellian,
    maxwellian_values,
    moment_array,
    moments,
    truncation_tail,
)

WIDE = build_grid(10.0, 32)

states = st.tuples(
    st.floats(0.5, 2.0),
    st.tuples(st.floats(-0.3, 0.3), st.floats(-0.3, 0.3), st.floats(-0.3, 0.3)),
    st.floats(0.7, 1.4),
)


def test_grid_rejects_bad_parameters():
    with pytest.raises(ValueError, match="odd"):
        build_grid(6.0, 15)
    with pytest.raises(ValueError, match="radius"):
        build_grid(-1.0, 16)
    with pytest.raises(ValueError, match="scheme"):
        build_grid(6.0, 16, "sparse")


@pytest.mark.parametrize("scheme", ["uniform-tensor", "gauss-tensor"])
def test_reflection_is_an_involution(scheme):
    g = build_grid(5.0, 10, scheme)
    assert np.array_equal(g.reflect[g.reflect], np.arange(g.size))
    assert np.allclose(g.nodes[g.reflect] * [1, 1, -1], g.nodes)
    assert not np.any(g.v3 == 0)


def test_spec_round_trip():
    spec = GridSpec(7.0, 12, "gauss-tensor")
    assert GridSpec.from_dict(spec.to_dict()) == spec
    assert grid_from_spec(spec).spec == spec


@given(states)
def test_maxwellian_moments_recover_state(state):
    rho, u, T = state
    g = WIDE
    m = moments(maxwellian(FluidPoint(rho, u, T), g), g)
    assert m.mass == pytest.approx(rho, rel=1e-12)
    assert np.allclose(m.momentum, rho * np.asarray(u), atol=1e-12)
    assert m.energy == pytest.approx(0.5 * rho * (np.dot(u, u) + 3 * T), rel=1e-12)


def test_truncation_tail_bounds_default_grid(vgrid):
    m = moment_array(maxwellian_values(vgrid, 1.0, np.zeros(3), 1.0), vgrid)
    assert abs(m[0] - 1.0) <= truncation_tail(vgrid.radius)


@given(states)
def test_basis_is_orthonormal_and_projection_idempotent(state):
    rho, u, T = state
    g = build_grid(6.0, 12)
    b = macro_basis(g, rho, np.asarray(u), T)
    gram = np.einsum("kn,jn->kj", b.e * g.weights, b.e)
    assert np.allclose(gram, np.eye(5), atol=1e-12)
    f = np.sin(g.nodes @ np.array([0.3, -0.7, 1.1])) * b.sqrt_mu
    assert np.allclose(b.project(b.project(f)), b.project(f), atol=1e-12)
    assert np.max(np.abs(b.project(b.micro(f)))) < 1e-12


@given(states, st.tuples(*[st.floats(-1, 1)] * 5))
def test_fluid_macro_round_trip(state, pert):
    rho, u, T = state
    g = WIDE
    b = macro_basis(g, rho, np.asarray(u), T)
    f = b.macro_from_fluid(pert[0], np.array(pert[1:4]), pert[4])
    r1, u1, t1 = b.fluid_from_macro(f)
    assert np.allclose([r1, *u1, t1], pert, atol=1e-10)
