"""Mesh convergence of the linear hyperbolic solver against the exact acoustic solution."""

import argparse

import numpy as np

from hilbex.euler import HyperbolicCoefficients, MeshSpec, Profile, acoustic_solution, build_spatial_grid, constant_background, solve_linear_hyperbolic


def error_at(h, horizon, profile):
    eu = constant_background(build_spatial_grid(MeshSpec(h_wall=h, growth=1.0, h_max=h)), horizon)
    phi0, vel0, vt0 = profile.evaluate(eu.nodes)
    c = HyperbolicCoefficients.zeros(eu)
    c.init_rho, c.init_u, c.init_theta = phi0, vel0, 3 * vt0
    p = solve_linear_hyperbolic(eu, c)
    phi, vel, vt = acoustic_solution(profile, eu.times[-1], eu.nodes)
    return max(np.max(np.abs(p.rho[-1] - phi)), np.max(np.abs(p.u[-1] - vel)), np.max(np.abs(p.theta[-1] / 3 - vt)))


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--h", type=float, nargs="+", default=[0.01, 0.005, 0.0025])
    ap.add_argument("--horizon", type=float, default=0.5)
    args = ap.parse_args()
    prev = None
    for h in args.h:
        err = error_at(h, args.horizon, Profile())
        rate = "" if prev is None else f" rate={np.log(prev[1] / err) / np.log(prev[0] / h):.2f}"
        print(f"h={h:<8g} max error={err:.3e}{rate}")
        prev = (h, err)


if __name__ == "__main__":
    main()
