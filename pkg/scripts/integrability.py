"""Integrals of |G|^q and |grad G|^q near the pole under mesh refinement.

    python scripts/integrability.py --p 2 --q 1 2 4
"""

import argparse
import time

from greenlab.asympt import classify_expected, integrability_scan
from greenlab.mmspace import build_grid


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=3, choices=[2, 3])
    ap.add_argument("--p", type=float, default=2.0)
    ap.add_argument("--q", type=float, nargs="+", default=[1.0, 2.0, 4.0])
    ap.add_argument("--cells", type=int, nargs="+", default=[16, 32, 64], help="1/h per mesh")
    ap.add_argument("--r", type=float, default=0.25)
    ap.add_argument("--domain", type=float, default=0.5)
    args = ap.parse_args()

    t = time.perf_counter()
    spaces = [build_grid(args.n, args.domain + 3 / k, 1 / k) for k in args.cells]
    reports = integrability_scan(spaces, [0.0] * args.n, args.p, args.q, args.r,
                                 domain_radius=args.domain)
    print("quantity,q,criticalQ,trend,expected," + ",".join(f"h=1/{k}" for k in args.cells))
    for rep in reports:
        norms = ",".join(f"{x:.6g}" for x in rep.norms)
        print(f"{rep.quantity},{rep.q:g},{rep.critical_q:.4f},{rep.trend},"
              f"{classify_expected(rep) or 'none'},{norms}")
    print(f"# {time.perf_counter() - t:.1f}s")


if __name__ == "__main__":
    main()
