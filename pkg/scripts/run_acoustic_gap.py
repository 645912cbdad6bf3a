"""Fluid and kinetic distance to the acoustic limit over a delta sweep (eps = delta^2)."""

import argparse

from hilbex.euler import MeshSpec, Profile, build_spatial_grid, solve_euler
from hilbex.expansion import Expansion, ExpansionConfig, acoustic_gap, fit_slope


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--delta", type=float, nargs="+", default=[0.02, 0.01, 0.005])
    ap.add_argument("--h-max", type=float, nargs="+", default=[0.05, 0.025])
    ap.add_argument("--horizon", type=float, default=0.5)
    args = ap.parse_args()
    profile = Profile()
    for h in args.h_max:
        mesh = MeshSpec(h_max=h, h_wall=min(0.01, h))
        fluid, kinetic = [], []
        for d in args.delta:
            eu = solve_euler(profile, d, args.horizon, build_spatial_grid(mesh))
            ex = Expansion(ExpansionConfig(N=1, delta=d, epsilons=(d * d,), mesh=mesh, horizon=args.horizon), eu)
            ex.build()
            gap = acoustic_gap(eu, profile, d, ex.assemble_composite(d * d, levels=ex.eval_levels), ex.vgrid)
            fluid.append(gap["fluid"]["sup"])
            kinetic.append(gap["kinetic"]["sup"])
            print(f"h_max={h:<7g} delta={d:<7g} fluid={fluid[-1]:.4e} kinetic={kinetic[-1]:.4e}")
        if len(args.delta) >= 3:
            print(f"h_max={h:<7g} fluid slope={fit_slope(args.delta, fluid)['slope']:.3f} kinetic slope={fit_slope(args.delta, kinetic)['slope']:.3f}")


if __name__ == "__main__":
    main()
