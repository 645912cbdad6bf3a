"""Acceptance criteria 1-12. Each test prints one PASS/FAIL line; the lines are repeated in the
terminal summary under "acceptance criteria"."""

import json
import math
import time

import numpy as np
import pytest
from click.testing import CliRunner
from conftest import record_criterion

from hilbex.cli import main
from hilbex.collision import CollisionBackend, apply_L_values, bgk_transport_closed_form, burnett_values, hs_bilinear, model_collision, operator_data, transport_values
from hilbex.euler import HyperbolicCoefficients, MeshSpec, Profile, acoustic_solution, build_spatial_grid, constant_background, solve_euler, solve_linear_hyperbolic
from hilbex.expansion import Expansion, ExpansionConfig, acoustic_gap, fit_slope
from hilbex.knudsen import HalfSpaceProblem, build_correction, eta_grid, pure_absorption_solution, solve_halfspace
from hilbex.layer import LayerCoefficients, LayerGridSpec, NeumannData, build_layer_grid, solve_layer_parabolic, steady_profile_shooting
from hilbex.velocity import build_grid, maxwellian_values, moment_array

from test_knudsen import WALL, solvable_problem

TOL_QUAD = 1e-6
TOL_SOLVE = 1e-8
TOL_MATCH = 1e-6


def random_states(count, seed):
    r = np.random.default_rng(seed)
    out = []
    for _ in range(count):
        u = r.uniform(-0.2, 0.2, 3)
        u[2] = 0.0
        out.append((r.uniform(0.8, 1.2), u, r.uniform(0.8, 1.2)))
    return out


def perturbed_maxwellian(grid):
    return maxwellian_values(grid, 1.0, np.zeros(3), 1.0) * (1 + 0.1 * np.sin(grid.nodes[:, 0]) + 0.05 * grid.nodes[:, 2])


def null_space_checks(grid, backend, state):
    op = operator_data(backend, grid, *state)
    l_chi = float(np.max(grid.norm(apply_L_values(op, op.basis.e))))
    f = np.cos(grid.nodes @ np.array([0.4, -0.3, 0.9])) * op.basis.sqrt_mu
    pf = op.basis.project(f)
    idem = float(np.max(np.abs(op.basis.project(pf) - pf)))
    return l_chi, idem, op


# ---------------------------------------------------------------- 1


def test_criterion_01_collision_identities(vgrid):
    state = (1.1, np.array([0.1, -0.2, 0.0]), 0.9)
    t0 = time.perf_counter()
    bgk = CollisionBackend()
    l_chi, idem, _ = null_space_checks(vgrid, bgk, state)
    q_inv = float(np.max(np.abs(moment_array(model_collision(perturbed_maxwellian(vgrid), vgrid, bgk), vgrid))))
    t_bgk = time.perf_counter() - t0
    ok_bgk = l_chi <= 1e-12 and idem <= 1e-12 and q_inv <= 1e-10 and t_bgk < 1.0

    t0 = time.perf_counter()
    hs = CollisionBackend("hard-sphere-quad")
    tol_l = 1e-4
    hl_chi, hidem, op = null_space_checks(vgrid, hs, state)
    F = perturbed_maxwellian(vgrid)
    hq_inv = float(np.max(np.abs(moment_array(hs_bilinear(F, F, vgrid, hs), vgrid))))
    t_hs = time.perf_counter() - t0
    ok_hs = hl_chi <= tol_l and hidem <= tol_l and hq_inv <= tol_l and t_hs < 120.0

    ok = ok_bgk and ok_hs
    record_criterion(
        1,
        ok,
        f"bgk |L chi|={l_chi:.1e} idem={idem:.1e} Q-inv={q_inv:.1e} t={t_bgk:.2f}s; "
        f"hard-sphere |L chi|={hl_chi:.1e} idem={hidem:.1e} Q-inv={hq_inv:.1e} (raw kernel defect {op.raw_null_defect:.2e}) t={t_hs:.0f}s",
    )
    assert ok


# ---------------------------------------------------------------- 2


def test_criterion_02_burnett_identities(wide_grid):
    states = random_states(5, 2)
    norm_err = 0.0
    for rho, u, T in states:
        A, _ = burnett_values(wide_grid, rho, u, T)
        for i in range(3):
            for j in range(3):
                target = 4 * rho / 3 if i == j else rho
                norm_err = max(norm_err, abs(float(wide_grid.inner(A[i, j], A[i, j])) - target))
    bgk_err = 0.0
    for st in states:
        mu, _, diag = transport_values(CollisionBackend(), wide_grid, *st)
        bgk_err = max(bgk_err, abs(float(diag) - 4 * float(mu) / 3))
    hs_grid = build_grid(8.0, 20)  # dense hard-sphere operator; truncation below 1e-9
    hs_err = 0.0
    for st in states:
        mu, _, diag = transport_values(CollisionBackend("hard-sphere-quad"), hs_grid, *st)
        hs_err = max(hs_err, abs(float(diag) - 4 * float(mu) / 3))
    ok = norm_err <= TOL_QUAD and bgk_err <= 2 * TOL_SOLVE and hs_err <= 2 * TOL_SOLVE
    record_criterion(2, ok, f"Burnett norms err={norm_err:.1e} (tol {TOL_QUAD:.0e}); A33 identity bgk err={bgk_err:.1e}, hard-sphere err={hs_err:.1e} (tol {2 * TOL_SOLVE:.0e})")
    assert ok


# ---------------------------------------------------------------- 3


def test_criterion_03_bgk_transport_closed_form(wide_grid):
    err = 0.0
    for nu_bar in (0.5, 1.0, 2.0):
        for rho, u, T in random_states(5, 3):
            mu, kappa, _ = transport_values(CollisionBackend(nu_bar=nu_bar), wide_grid, rho, u, T)
            ref = bgk_transport_closed_form(rho, T, nu_bar)
            err = max(err, abs(float(mu) - ref.mu), abs(float(kappa) - ref.kappa))
    ok = err <= 1e-10
    record_criterion(3, ok, f"max |mu - rho T/nu|, |kappa - 5 rho T/(3 nu)| = {err:.1e} (tol 1e-10)")
    assert ok


# ---------------------------------------------------------------- 4, 5


@pytest.fixture(scope="module")
def order_one():
    t0 = time.perf_counter()
    ex = Expansion(ExpansionConfig(N=1, interior_init=0.5))
    ex.build()
    return ex, time.perf_counter() - t0


def test_criterion_04_boussinesq_pair(order_one):
    ex, _ = order_one
    b = ex.bundles[0]
    u13 = float(np.max(np.abs(b.layer_u3)))
    p1 = float(np.max(np.abs(b.layer_pressure)))
    ok = u13 <= 1e-10 and p1 <= 1e-10 and np.max(np.abs(b.layer.stacked())) > 1e-3
    record_criterion(4, ok, f"max|u_bar_13|={u13:.1e} max|p_bar_1|={p1:.1e} (tol 1e-10, non-trivial layer)")
    assert ok


def test_criterion_05_order_one_boundary_formulas(order_one):
    ex, elapsed = order_one
    b = ex.bundles[0]
    tr = ex.trace
    ref = np.concatenate([-tr.d3u[:, :2], -3 * tr.d3T[:, None]], axis=1)
    nm_err = float(np.max(np.abs(b.neumann.stacked() - ref)))
    kn = max((float(np.max(np.abs(s.values))) for s in b.knudsen.values()), default=0.0)
    ok = nm_err <= TOL_SOLVE and kn <= TOL_SOLVE and elapsed < 300
    record_criterion(5, ok, f"Neumann err={nm_err:.1e} max|f_hat_1|={kn:.1e} (tol {TOL_SOLVE:.0e}); order-1 build {elapsed:.1f}s (< 300s)")
    assert ok


# ---------------------------------------------------------------- 6


def test_criterion_06_correction_function(wide_grid):
    eta = eta_grid()
    rho, u, T = WALL
    r = np.random.default_rng(6)
    worst = 0.0
    for _ in range(10):
        c = r.standard_normal((5, 4))
        prof = lambda p: (p[0] + p[1] * eta + p[2] * eta**2) * np.exp(-(1.0 + abs(p[3])) * eta)
        cf = build_correction(wide_grid, rho, u, T, eta, prof(c[0]), np.stack([prof(c[1]), prof(c[2]), prof(c[3])], 1), prof(c[4]))
        worst = max(worst, float(np.max(cf.defect_projection)))
    al, be, ga = 0.7, np.array([0.3, -0.5, 0.2]), -0.4
    e = np.exp(-eta)
    cf = build_correction(wide_grid, rho, u, T, eta, al * e, np.outer(e, be), ga * e)
    closed = max(
        float(np.max(np.abs(cf.A + (2 * al / T + 3 * ga) * e))),
        float(np.max(np.abs(cf.B - np.stack([-be[0] / T * e, -be[1] / T * e, -be[2] * e], 1)))),
        float(np.max(np.abs(cf.C - al / (5 * T * T) * e))),
    )
    ok = worst <= 1e-8 and closed <= 1e-8
    record_criterion(6, ok, f"max |P0 defect| over 10 sources={worst:.1e}; e^-eta closed-form err={closed:.1e} (tol 1e-8)")
    assert ok


# ---------------------------------------------------------------- 7


def test_criterion_07_knudsen_oracles(vgrid):
    bgk = CollisionBackend()
    eta = eta_grid()
    zero = solve_halfspace(HalfSpaceProblem(vgrid, *WALL, eta), bgk)
    z = float(np.max(np.abs(zero.values)))
    p = solvable_problem(vgrid, seed=3)
    absorb = solve_halfspace(p, bgk, gain=False, check=False)
    ref = pure_absorption_solution(eta, vgrid.v3, np.ones(vgrid.size), p.source[0], p.f_b, vgrid.reflect, eta[-1])
    ab = float(np.max(np.abs(absorb.values - ref)))
    runs = [solve_halfspace(solvable_problem(vgrid, seed=s), bgk) for s in (1, 2)]
    res = max(s.residual for s in runs)
    zetas = [s.zeta for s in runs + [zero]]
    ok = z == 0 and ab <= 1e-8 and all(s.converged for s in runs) and res <= TOL_SOLVE and all(zt > 0 for zt in zetas)
    record_criterion(7, ok, f"zero={z:.1e} absorption err={ab:.1e} residual={res:.1e} zeta={[round(zt, 3) if math.isfinite(zt) else zt for zt in zetas]}")
    assert ok


# ---------------------------------------------------------------- 8, 9


@pytest.fixture(scope="module")
def order_two():
    t0 = time.perf_counter()
    cfg = ExpansionConfig(N=2, interior_init=0.5, eval_fractions=(0.5,))
    ex = Expansion(cfg)
    ex.build()
    return ex, time.perf_counter() - t0


def test_criterion_08_specular_matching(order_two):
    ex, _ = order_two
    mism = {b.k: b.max_mismatch for b in ex.bundles}
    solv = float(np.max(np.abs(ex.bundles[1].solvability)))
    ok = max(mism.values()) <= TOL_MATCH and solv <= TOL_MATCH
    per_order = ", ".join(f"order {k}: {v:.1e}" for k, v in mism.items())
    record_criterion(8, ok, f"wall mismatch {per_order}; g_hat_2 moments={solv:.1e} (tol {TOL_MATCH:.0e})")
    assert ok


def test_criterion_09_defect_slope(order_two):
    ex, built = order_two
    t0 = time.perf_counter()
    eps = ex.config.epsilons
    l2 = [ex.evaluate_defect(ex.assemble_composite(e)).l2 for e in eps]
    elapsed = built + time.perf_counter() - t0
    fit = fit_slope(eps, l2)
    ok = abs(fit["slope"] - 1.0) <= 0.3 and fit["r2"] >= 0.95 and elapsed < 1800
    record_criterion(9, ok, f"L2 defects={[f'{v:.2e}' for v in l2]} slope={fit['slope']:.3f} r2={fit['r2']:.5f} runtime={elapsed:.0f}s")
    assert ok


# ---------------------------------------------------------------- 10


def test_criterion_10_acoustic_limit():
    deltas = (0.02, 0.01, 0.005)
    mesh = MeshSpec(h_max=0.025)
    profile = Profile()
    fluid, kinetic = [], []
    for d in deltas:
        eu = solve_euler(profile, d, 0.5, build_spatial_grid(mesh))
        ex = Expansion(ExpansionConfig(N=1, delta=d, epsilons=(d * d,), mesh=mesh), eu)
        ex.build()
        gap = acoustic_gap(eu, profile, d, ex.assemble_composite(d * d, levels=ex.eval_levels), ex.vgrid)
        fluid.append(gap["fluid"]["sup"])
        kinetic.append(gap["kinetic"]["sup"])
    sf = fit_slope(deltas, fluid)["slope"]
    sk = fit_slope(deltas, kinetic)["slope"]
    ok = abs(sf - 2.0) <= 0.2 and abs(sk - 1.0) <= 0.3
    record_criterion(10, ok, f"fluid gap slope={sf:.3f} (2 +- 0.2); kinetic gap slope (eps = delta^2)={sk:.3f} (1 +- 0.3)")
    assert ok


# ---------------------------------------------------------------- 11


def test_criterion_11_linear_solver_cross_checks():
    h = 0.00125
    profile = Profile()
    eu = constant_background(build_spatial_grid(MeshSpec(h_wall=h, growth=1.0, h_max=h)), 0.5)
    phi0, vel0, vt0 = profile.evaluate(eu.nodes)
    c = HyperbolicCoefficients.zeros(eu)
    c.init_rho, c.init_u, c.init_theta = phi0, vel0, 3 * vt0  # theta_k carries 3x the temperature
    p = solve_linear_hyperbolic(eu, c)
    hyp = 0.0
    for n in range(0, eu.times.size, max(1, eu.times.size // 20)):
        phi, vel, vt = acoustic_solution(profile, eu.times[n], eu.nodes)
        hyp = max(hyp, float(np.max(np.abs(p.rho[n] - phi))), float(np.max(np.abs(p.u[n] - vel))), float(np.max(np.abs(p.theta[n] / 3 - vt))))

    times = np.linspace(0.0, 30.0, 601)
    grid = build_layer_grid(LayerGridSpec(), times)
    co = LayerCoefficients.frozen(times, div_u=1.5)
    nm = NeumannData(np.tile([0.0, 0.0], (times.size, 1)), np.full(times.size, 0.5))
    lf = solve_layer_parabolic(co, nm, grid)
    par = float(np.max(np.abs(lf.theta[-1] - steady_profile_shooting(1.0, 1.0, 0.5, grid.y_max, grid.y))))
    ok = hyp <= 1e-6 and par <= 1e-4
    record_criterion(11, ok, f"hyperbolic vs acoustic={hyp:.1e} (tol 1e-6, h={h}); parabolic steady vs shooting={par:.1e} (tol 1e-4)")
    assert ok


# ---------------------------------------------------------------- 12


def test_criterion_12_determinism(tmp_path):
    cfg = {
        "schema_version": 1,
        "name": "determinism",
        "expansion": {
            "N": 2,
            "horizon": 0.05,
            "mesh": {"x_max": 4.0, "h_wall": 0.02, "h_max": 0.1},
            "velocity": {"radius": 5.0, "n_per_axis": 8},
            "eval_fractions": [0.5],
        },
    }
    path = tmp_path / "cfg.json"
    path.write_text(json.dumps(cfg))
    outs = []
    for tag in ("a", "b"):
        out = tmp_path / tag
        res = CliRunner().invoke(main, ["run", str(path), "--out", str(out)])
        assert res.exit_code == 0, res.output
        outs.append(out)
    names = sorted(p.name for p in outs[0].iterdir() if p.name != "manifest.json")
    same = [n for n in names if (outs[0] / n).read_bytes() == (outs[1] / n).read_bytes()]
    sums = [json.loads((o / "manifest.json").read_text())["files"] for o in outs]
    ok = len(same) == len(names) and sums[0] == sums[1] and len(names) >= 8
    record_criterion(12, ok, f"{len(same)}/{len(names)} report files byte-identical; manifest checksums equal={sums[0] == sums[1]}")
    assert ok
