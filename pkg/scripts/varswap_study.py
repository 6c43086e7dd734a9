"""Variance swap value at inception and pathwise replication error."""

import argparse
import math

import numpy as np

from complab import make_builtin_model, quadratic_variation, simulate_paths, varswap_price
from complab.hedging import varswap_terminal


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=6)
    args = ap.parse_args()

    for r in (0.0, 0.05):
        m = make_builtin_model("gbm", {"s0": 100.0, "sigma": 0.2, "r": r})
        print(f"gbm r={r}: V0 = {varswap_price(m):.6f}, exp(-rT) vol^2 T = {math.exp(-r) * 0.04:.6f}")
    params = {"s0": 100.0, "y0": math.log(0.2), "kappa": 1.0, "theta": math.log(0.2),
              "gamma": 0.5, "rho": -0.5, "r": 0.0}
    m = make_builtin_model("expou_sv", params)
    print("n_steps  median rel gap  share within 2/sqrt(n)")
    for n in (25, 50, 100, 250, 1000):
        paths = simulate_paths(m, args.paths, n, args.seed)
        qv = quadratic_variation(paths).terminal
        rel = np.abs(varswap_terminal(paths) - qv) / qv
        print(f"{n:7d}  {np.median(rel):14.5f}  {np.mean(rel <= 2 / math.sqrt(n)):10.3f}")


if __name__ == "__main__":
    main()
