"""Grid refinement of the exp-OU put price against a Monte Carlo reference."""

import argparse
import math
import time

from complab import make_builtin_model, price_mc
from complab.pde import GridSpec, solve_pde
from complab.pricing import Asset


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--mc-samples", type=int, default=200_000)
    ap.add_argument("--mc-steps", type=int, default=50)
    args = ap.parse_args()

    params = {"s0": 100.0, "y0": math.log(0.2), "kappa": 1.0, "theta": math.log(0.2),
              "gamma": 0.5, "rho": -0.5, "r": 0.0}
    m = make_builtin_model("expou_sv", params)
    put = Asset("european_stock", "put", 1.0, strike=100.0)
    x0, y0 = m.x0
    prev = None
    for nx, ny, nt in ((81, 41, 100), (121, 61, 200), (161, 81, 300), (241, 121, 600)):
        t0 = time.perf_counter()
        v = float(solve_pde(m, put, GridSpec((x0 - 2.5, y0 - 1.8), (x0 + 2.5, y0 + 1.8), (nx, ny), nt))
                  .price(0.0, m.x0_array))
        change = "" if prev is None else f"  change {v - prev:+.4f}"
        print(f"{nx:4d}x{ny:<4d} {nt:4d} steps  {v:.4f}  ({time.perf_counter() - t0:.1f}s){change}")
        prev = v
    mc, se = price_mc(m, put, 0.0, m.x0_array, args.mc_samples, seed=1, n_steps=args.mc_steps)
    print(f"Monte Carlo: {mc:.4f} +- {se:.4f}")


if __name__ == "__main__":
    main()
