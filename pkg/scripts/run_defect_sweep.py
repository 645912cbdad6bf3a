"""Build the second-order expansion once and fit the composite defect against eps."""

import argparse
import json
import logging
import time

from hilbex.euler import MeshSpec
from hilbex.expansion import Expansion, ExpansionConfig, fit_slope


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--eps", type=float, nargs="+", default=[0.1, 0.05, 0.025])
    ap.add_argument("--order", type=int, default=2, choices=[1, 2])
    ap.add_argument("--h-max", type=float, default=0.05, help="coarsest fluid cell")
    ap.add_argument("--interior-init", type=float, default=0.5, help="amplitude of the non-trivial interior initial data")
    ap.add_argument("--out", default=None, help="write the sweep as JSON")
    args = ap.parse_args()
    logging.basicConfig(level=logging.INFO, format="%(asctime)s %(message)s")

    t0 = time.perf_counter()
    cfg = ExpansionConfig(N=args.order, epsilons=tuple(args.eps), mesh=MeshSpec(h_max=args.h_max), interior_init=args.interior_init, eval_fractions=(0.5,))
    ex = Expansion(cfg)
    ex.build()
    logging.info("orders built in %.1fs", time.perf_counter() - t0)

    rows = []
    for eps in cfg.epsilons:
        rep = ex.evaluate_defect(ex.assemble_composite(eps))
        rows.append(rep.to_dict())
        print(f"eps={eps:<8g} L2={rep.l2:.4e} sup={rep.sup:.4e} min F={rep.positivity_min:.2e}")
    fit = fit_slope(cfg.epsilons, [r["l2"] for r in rows]) if len(rows) >= 3 else None
    if fit:
        print(f"slope={fit['slope']:.3f} r2={fit['r2']:.5f}")
    if args.out:
        with open(args.out, "w") as fh:
            json.dump({"config": cfg.to_dict(), "reports": rows, "fit": fit}, fh, indent=2, default=str)


if __name__ == "__main__":
    main()
