"""Ring capacity sweep and the regime-model ratio spread for several p.

    python scripts/sandwich_sweep.py --n 3 --cells 40 --p 1.5 2 3
"""

import argparse
import time

from greenlab.capacity import check_capacity_sandwich, ring_capacity_sweep
from greenlab.mmspace import build_grid, dyadic_radii, estimate_pointwise_dimension


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2, choices=[2, 3])
    ap.add_argument("--cells", type=int, default=128, help="R/h")
    ap.add_argument("--alpha", type=float, default=0.0)
    ap.add_argument("--p", type=float, nargs="+", default=[1.5, 2.0, 3.0])
    ap.add_argument("--rows", type=int, default=5)
    args = ap.parse_args()

    R, h = 1.0, 1.0 / args.cells
    s = build_grid(args.n, R + 2 * h, h, args.alpha)
    c = s.nearest_vertex([0.0] * args.n)
    dim = estimate_pointwise_dimension(s, c, dyadic_radii(R, h, min_cells=2))
    radii = [R / 2 ** (k + 1) for k in range(args.rows)]
    print(f"# Q(x0) = {dim.log_mass_slope:.4f}, global {dim.global_q:.4f}, "
          f"{s.num_vertices} vertices")
    print("p,regime,spread,ratios,seconds")
    for p in args.p:
        t = time.perf_counter()
        prof = ring_capacity_sweep(s, c, radii, R, p, pointwise_q=dim.log_mass_slope,
                                   global_q=dim.global_q, min_cells=0.5)
        rep = check_capacity_sandwich(prof, threshold=3.0)
        ratios = " ".join(f"{x:.4g}" for x in rep.ratios)
        print(f"{p:g},{rep.regime},{rep.spread:.4f},{ratios},{time.perf_counter() - t:.1f}",
              flush=True)


if __name__ == "__main__":
    main()
