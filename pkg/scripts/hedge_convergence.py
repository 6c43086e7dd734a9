"""Delta hedging a Black-Scholes call: RMS terminal error against rebalance count."""

import argparse

from complab import make_builtin_model, simulate_paths
from complab.hedging import hedge_sweep
from complab.pricing import Asset, ClosedFormPricer, stock


def main():
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--paths", type=int, default=10_000)
    ap.add_argument("--steps", default="25,50,100,200,400")
    ap.add_argument("--sigma", type=float, default=0.2)
    ap.add_argument("--rate", type=float, default=0.0)
    ap.add_argument("--seed", type=int, default=5)
    args = ap.parse_args()

    steps = [int(s) for s in args.steps.split(",")]
    m = make_builtin_model("gbm", {"s0": 100.0, "sigma": args.sigma, "r": args.rate})
    paths = simulate_paths(m, args.paths, max(steps), args.seed)
    call = ClosedFormPricer(m, Asset("european_stock", "call", 1.0, strike=100.0))
    reports, slope = hedge_sweep(m, [ClosedFormPricer(m, stock(1.0))], call, paths, steps)
    print("steps        dt    mean_err    rms_err")
    for r in reports:
        print(f"{r.rebalance_steps:5d}  {r.dt:8.5f}  {r.mean_error:+9.5f}  {r.rms_error:9.5f}")
    print(f"log-log slope: {slope:.3f}")


if __name__ == "__main__":
    main()
