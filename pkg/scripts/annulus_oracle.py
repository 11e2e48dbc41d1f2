"""Ring capacities of the annulus against the closed-form p = 2 values.

    python scripts/annulus_oracle.py --h 0.015625 0.0078125
"""

import argparse
import math
import time

from greenlab.capacity import ring_capacity
from greenlab.mmspace import build_grid


def exact(n, r, R):
    if n == 2:
        return 2 * math.pi / math.log(R / r)
    return 4 * math.pi / (1 / r - 1 / R)


def main():
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--n", type=int, default=2, choices=[2, 3])
    ap.add_argument("--h", type=float, nargs="+", default=[1 / 32, 1 / 64])
    ap.add_argument("--r", type=float, default=0.1)
    ap.add_argument("--R", type=float, default=0.4)
    args = ap.parse_args()
    ref = exact(args.n, args.r, args.R)
    print("h,cap,exact,relErr,seconds")
    for h in args.h:
        t = time.perf_counter()
        s = build_grid(args.n, args.R + 4 * h, h)
        c = s.nearest_vertex([0.0] * args.n)
        cap = ring_capacity(s, c, args.r, args.R, 2.0)
        print(f"{h:.6g},{cap:.8g},{ref:.8g},{abs(cap - ref) / ref:.3e},"
              f"{time.perf_counter() - t:.2f}")


if __name__ == "__main__":
    main()
