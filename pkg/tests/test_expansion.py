import math

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from hilbex.collision import CollisionBackend
from hilbex.euler import MeshSpec, Profile
from hilbex.expansion import Expansion, ExpansionConfig, fit_slope
from hilbex.velocity import GridSpec

TINY = dict(horizon=0.05, mesh=MeshSpec(x_max=4.0, h_wall=0.02, h_max=0.1), velocity=GridSpec(5.0, 8), eval_fractions=(0.5,))


@pytest.mark.parametrize(
    "kwargs, message",
    [
        (dict(N=3), "not supported"),
        (dict(N=0), "at least 1"),
        (dict(epsilons=(0.05, 0.1)), "decreasing"),
        (dict(epsilons=()), "decreasing"),
        (dict(delta=0.0), "delta"),
        (dict(backend=CollisionBackend("hard-sphere-quad")), "constant collision frequency"),
        (dict(eval_fractions=(0.0, 0.5)), "fractions"),
    ],
)
def test_config_validation(kwargs, message):
    with pytest.raises(ValueError, match=message):
        ExpansionConfig(**kwargs)


def test_config_dict_is_json_ready():
    d = ExpansionConfig().to_dict()
    assert d["N"] == 2 and d["backend"]["kind"] == "bgk-model"
    assert d["epsilons"] == [0.1, 0.05, 0.025]


@given(st.floats(-3, 3), st.floats(0.01, 100.0))
def test_fit_slope_recovers_power_law(slope, scale):
    p = [0.1, 0.05, 0.025, 0.0125]
    fit = fit_slope(p, [scale * x**slope for x in p])
    assert fit["slope"] == pytest.approx(slope, abs=1e-9)
    if abs(slope) > 0.05:  # r^2 is undefined for flat data
        assert fit["r2"] == pytest.approx(1.0, abs=1e-9)


def test_fit_slope_rejects_degenerate_input():
    with pytest.raises(ValueError, match="three"):
        fit_slope([0.1, 0.05], [1.0, 0.5])
    with pytest.raises(ValueError, match="positive"):
        fit_slope([0.1, 0.05, 0.025], [1.0, 0.0, 0.5])


def test_constant_state_expansion_is_exact():
    ex = Expansion(ExpansionConfig(N=2, profile=Profile(kind="zero"), **TINY))
    bundles = ex.build()
    assert len(bundles) == 2
    for b in bundles:
        assert b.max_mismatch == 0.0
        assert np.max(np.abs(b.solvability)) == 0.0
        assert np.max(np.abs(b.layer.stacked())) == 0.0
        assert all(s.zeta == math.inf for s in b.knudsen.values())
    comp = ex.assemble_composite(0.1)
    rep = ex.evaluate_defect(comp)
    assert rep.l2 < 1e-12 and comp.wall_mismatch(ex.vgrid) < 1e-14
    summary = bundles[1].summary()
    assert summary["order"] == 2 and summary["wall_mismatch"]


def test_orders_are_built_in_sequence():
    ex = Expansion(ExpansionConfig(N=2, profile=Profile(kind="zero"), **TINY))
    with pytest.raises(ValueError, match="sequence"):
        ex.build_order_k(2)


def test_evaluation_points_resolve_both_layers():
    ex = Expansion(ExpansionConfig(N=1, profile=Profile(kind="zero"), **TINY))
    eps = 0.1
    pts = ex.evaluation_points(eps)
    assert pts[0] == 0 and np.all(np.diff(pts) > 0)
    assert np.count_nonzero(pts < eps * eps) >= 5
    assert np.count_nonzero(pts < eps) >= 20


@pytest.mark.slow
def test_first_order_truncation_defect_does_not_shrink():
    """Negative control: without the second order the defect stays O(1) in eps."""
    cfg = ExpansionConfig(N=1, interior_init=0.5, eval_fractions=(0.5,))
    ex = Expansion(cfg)
    ex.build()
    l2 = [ex.evaluate_defect(ex.assemble_composite(e)).l2 for e in cfg.epsilons]
    assert fit_slope(cfg.epsilons, l2)["slope"] < 0.5
