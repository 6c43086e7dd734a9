"""Command-line entry point.

    complab <subcommand> --config FILE --out DIR [--seed N] [--strict]
            [--dump-paths FILE] [--dump-increments] [--sweep-steps a,b,c]

Exit codes: 0 success, 2 configuration error (nothing written), 3 numerical
or output failure, 4 INCONCLUSIVE verdict under ``--strict``.  Errors are
also printed to stderr as one JSON object.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import math
import sys
import time
from pathlib import Path

import numpy as np

from complab import __version__
from complab.completeness import (
    INCONCLUSIVE,
    build_G,
    completeness_along_paths,
    incompleteness_witness,
    single_point_test,
)
from complab.config import AnalysisConfig, grid_from_dict
from complab.errors import ConfigError, DomainError, NumericalError, OutputError
from complab.factor_models import ProbePlan, validate_ellipticity
from complab.hedging import hedge_sweep, varswap_price, varswap_rank_check, varswap_terminal
from complab.paths import quadratic_variation, simulate_paths, write_paths_csv
from complab.pricing import make_pricer, price_mc

SUBCOMMANDS = ("validate", "simulate", "price", "completeness", "witness", "hedge", "varswap")

EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_INCONCLUSIVE = 0, 2, 3, 4


def _jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.generic):
        return obj.item()
    return obj


def _csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v for v in row])
    return buf.getvalue()


class Run:
    """State shared by the subcommand handlers."""

    def __init__(self, cfg: AnalysisConfig, args):
        self.cfg = cfg
        self.args = args
        self.model = cfg.build_model()
        self.run = cfg.run
        self.timings: dict = {}
        self.warnings: list = []
        self.tables: dict = {}
        self.exit_code = EXIT_OK

    def stage(self, name, fn, *a, **kw):
        t0 = time.perf_counter()
        out = fn(*a, **kw)
        self.timings[name] = round(time.perf_counter() - t0, 6)
        return out

    def pricer(self, i):
        asset = self.cfg.build_claim() if i is None else self.cfg.build_assets()[i]
        backend = self.cfg.asset_backend(i)
        kw = {"n_samples": self.run["mc_samples"], "seed": self.cfg.seed or 0} if backend == "mc" else {}
        return make_pricer(self.model, asset, backend, grid=self.cfg.asset_grid(i), **kw)

    def pricers(self):
        return [self.stage(f"price_asset_{i + 1}", self.pricer, i) for i in range(len(self.cfg.assets))]

    def paths(self, n_steps=None):
        paths = self.stage("simulate", simulate_paths, self.model, int(self.run["n_paths"]),
                           int(n_steps or self.run["n_steps"]), self.cfg.seed)
        if paths.warning:
            self.warnings.append(f"{100 * paths.flagged.mean():.3f}% of paths were clamped at the domain boundary")
        if self.args.dump_paths:
            with open(self.args.dump_paths, "w", newline="") as fh:
                write_paths_csv(paths, fh, include_dw=self.args.dump_increments)
        return paths

    def probes(self):
        raw = self.run["probes"]
        if not raw:
            return [(0.5 * self.model.horizon, self.model.x0_array)]
        return [(float(p["t"]), np.asarray(p["x"], dtype=float)) for p in raw]


def cmd_validate(r: Run) -> dict:
    plan = ProbePlan(kind="paths", n_points=int(r.run["probe_points"]), seed=r.cfg.seed or 0)
    rep = r.stage("validate", validate_ellipticity, r.model, plan)
    if not rep.passed:
        r.exit_code = EXIT_NUMERICAL
        r.warnings.append(f"ellipticity failed at {len(rep.failures)} probes")
    return {"family": r.model.family, "d": r.model.d, "validation": rep.to_dict()}


def cmd_simulate(r: Run) -> dict:
    paths = r.paths()
    d = r.model.d
    term = paths.states[:, -1]
    r.tables["terminal_states.csv"] = _csv(["path"] + [f"xi_{j + 1}" for j in range(d)],
                                           ([n] + list(term[n]) for n in range(paths.n_paths)))
    return {"n_paths": paths.n_paths, "n_steps": paths.n_steps, "dt": paths.dt,
            "terminal_mean": term.mean(axis=0), "terminal_std": term.std(axis=0, ddof=1),
            "flagged_share": float(paths.flagged.mean())}


def cmd_price(r: Run) -> dict:
    points = r.run["price_points"] or [{"t": 0.0, "x": list(r.model.x0)}]
    d = r.model.d
    rows, out = [], []
    for i, asset in enumerate(r.cfg.build_assets()):
        pricer = r.stage(f"price_asset_{i + 1}", r.pricer, i)
        for p in points:
            t, x = float(p["t"]), np.asarray(p["x"], dtype=float)
            value = float(np.asarray(pricer.price(t, x[None, :]))[0])
            mc, se = r.stage(f"mc_asset_{i + 1}", price_mc, r.model, asset, t, x,
                             int(r.run["mc_samples"]), r.cfg.seed or 0)
            rows.append([i + 1, asset.label, pricer.backend, t] + list(x) + [value, 0.0])
            rows.append([i + 1, asset.label, "mc", t] + list(x) + [mc, se])
            out.append({"asset": i + 1, "label": asset.label, "t": t, "x": x, "backend": pricer.backend,
                        "price": value, "mc_price": mc, "mc_stderr": se,
                        "gap_in_stderr": abs(value - mc) / se if se > 0 else None})
    r.tables["prices.csv"] = _csv(["asset", "label", "backend", "t"] + [f"x_{j + 1}" for j in range(d)]
                                  + ["price", "stderr"], rows)
    return {"prices": out}


def cmd_completeness(r: Run) -> dict:
    pricers = r.pricers()
    probes = r.probes()
    tol = float(r.run["tolerance"])
    t, x = probes[0]
    ev = build_G(pricers, t, x, tol)
    point = {"t": t, "x": x, "G": ev.G, "det": ev.det, "singular_values": ev.singular_values,
             "singularity_ratio": ev.singularity_ratio, "rank": ev.rank}
    if r.run["method"] == "single_point":
        verdict = r.stage("single_point", single_point_test, r.model, pricers, probes,
                          bool(r.run["analyticity_assumed"]), tol)
    else:
        paths = r.paths()
        verdict = r.stage("occupation", completeness_along_paths, r.model, pricers, paths, tol, probes,
                          bool(r.run["analyticity_assumed"]))
        r.tables["occupation.csv"] = _csv(["path", "occupation_fraction"], enumerate(verdict.occupation))
    if verdict.verdict == INCONCLUSIVE and r.args.strict:
        r.exit_code = EXIT_INCONCLUSIVE
    return {"verdict": verdict.to_dict(), "probe": point}


def cmd_witness(r: Run) -> dict:
    pricers = r.pricers()
    paths = r.paths()
    claim = r.stage("witness", incompleteness_witness, r.model, pricers, paths, float(r.run["tolerance"]))
    r.tables["witness.csv"] = _csv(["path", "H", "occupation_time"],
                                   ([n, claim.H[n], claim.occupation_time[n]] for n in range(paths.n_paths)))
    return {"witness": claim.summary()}


def _sweep(r: Run) -> list[int]:
    if r.args.sweep_steps:
        try:
            steps = [int(s) for s in r.args.sweep_steps.split(",") if s.strip()]
        except ValueError as exc:
            raise ConfigError(f"bad --sweep-steps {r.args.sweep_steps!r}") from exc
    elif r.run["sweep_steps"]:
        steps = [int(s) for s in r.run["sweep_steps"]]
    else:
        steps = [int(r.run["rebalance_steps"] or r.run["n_steps"])]
    if not steps or min(steps) < 1:
        raise ConfigError("rebalance steps must be positive integers")
    return sorted(set(steps))


def cmd_hedge(r: Run) -> dict:
    steps = _sweep(r)
    pricers = r.pricers()
    claim = r.stage("price_claim", r.pricer, None)
    n_steps = math.lcm(*steps)
    if r.run["n_steps"] % n_steps == 0:
        n_steps = int(r.run["n_steps"])
    paths = r.paths(n_steps)
    reports, slope = r.stage("replicate", hedge_sweep, r.model, pricers, claim, paths, steps)
    fine = reports[-1]
    r.tables["hedge_errors.csv"] = _csv(["path", "terminal_error", "singular_events"],
                                        ([n, fine.terminal_error[n], int(fine.singular_events[n])]
                                         for n in range(paths.n_paths)))
    results = {"claim_price": fine.initial_price, "reports": [rep.summary() for rep in reports]}
    if len(reports) > 1:
        results["convergence_slope"] = slope
        r.tables["sweep_summary.csv"] = _csv(
            ["rebalance_steps", "dt", "mean_error", "rms_error", "max_abs_error", "singular_events"],
            ([s["rebalance_steps"], s["dt"], s["mean_error"], s["rms_error"], s["max_abs_error"],
              s["singular_events"]] for s in results["reports"]))
    if any(rep.singular_events.any() for rep in reports):
        r.warnings.append("G was singular at some rebalance points; holdings were set to zero there")
    return results


def cmd_varswap(r: Run) -> dict:
    model = r.model
    if model.price_index is None:
        raise ConfigError("varswap needs a model with a log-price coordinate")
    T = model.horizon
    v0 = r.stage("varswap_price", varswap_price, model, T, backend=r.run["backend"],
                 grid=grid_from_dict(r.run["grid"]))
    results = {"V0": v0}
    if model.family == "gbm":
        vol = model.params["sigma"]
        results["V0_deterministic_qv"] = math.exp(-model.rate * T) * vol * vol * T
    paths = r.paths()
    vt = varswap_terminal(paths)
    qv = quadratic_variation(paths, model.price_index).terminal
    rel = np.abs(vt - qv) / qv
    band = 2.0 / math.sqrt(paths.n_steps)
    results["pathwise"] = {"band": band, "share_within_band": float(np.mean(rel <= band)),
                           "max_relative_gap": float(rel.max())}
    r.tables["varswap.csv"] = _csv(["path", "varswap_terminal", "realized_qv", "relative_gap"],
                                   ([n, vt[n], qv[n], rel[n]] for n in range(paths.n_paths)))
    assets = r.cfg.build_assets()
    if assets and assets[-1].kind == "log_contract" and len(assets) == model.d:
        pricers = r.pricers()
        t, x = r.probes()[0]
        ev = build_G(pricers, t, x, float(r.run["tolerance"]))
        v1 = float(np.asarray(pricers[0].price(t, x[None, :]))[0])
        before, after, equal = varswap_rank_check(ev, v1, t, T, model.rate, float(r.run["tolerance"]))
        results["rank_check"] = {"t": t, "x": x, "rank_before": before, "rank_after": after, "equal": equal}
    return results


HANDLERS = {
    "validate": cmd_validate,
    "simulate": cmd_simulate,
    "price": cmd_price,
    "completeness": cmd_completeness,
    "witness": cmd_witness,
    "hedge": cmd_hedge,
    "varswap": cmd_varswap,
}


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="complab", description="Completeness analysis for factor-diffusion markets.")
    p.add_argument("subcommand", choices=SUBCOMMANDS)
    p.add_argument("--config", required=True, help="JSON run configuration")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--seed", type=int, default=None, help="override the config seed")
    p.add_argument("--strict", action="store_true", help="exit 4 on an INCONCLUSIVE verdict")
    p.add_argument("--dump-paths", default=None, help="write simulated paths to this CSV")
    p.add_argument("--dump-increments", action="store_true", help="include dW columns in --dump-paths")
    p.add_argument("--sweep-steps", default=None, help="comma-separated rebalance counts for hedge")
    return p


def _fail(code: int, exc: Exception) -> int:
    print(json.dumps({"error": type(exc).__name__, "message": str(exc), "exit_code": code}), file=sys.stderr)
    return code


def run(subcommand: str, config_path, out_dir, argv_args=None) -> int:
    args = argv_args or build_parser().parse_args([subcommand, "--config", str(config_path), "--out", str(out_dir)])
    try:
        cfg = AnalysisConfig.from_json(Path(config_path).read_text())
        if args.seed is not None:
            if args.seed < 0:
                raise ConfigError("seed must be non-negative")
            cfg.seed = args.seed
        cfg.check_for(subcommand)
        if args.sweep_steps is not None and subcommand == "hedge":
            # parse early so a bad list is a config error with nothing written
            _sweep(Run(cfg, args))
    except OSError as exc:
        return _fail(EXIT_CONFIG, ConfigError(f"cannot read config: {exc}"))
    except (ConfigError, ValueError, TypeError, KeyError) as exc:
        return _fail(EXIT_CONFIG, exc)

    state = Run(cfg, args)
    try:
        results = HANDLERS[subcommand](state)
    except ConfigError as exc:
        return _fail(EXIT_CONFIG, exc)
    except (NumericalError, DomainError, OutputError, FloatingPointError, np.linalg.LinAlgError) as exc:
        return _fail(EXIT_NUMERICAL, exc)

    from complab.reports import RunReport, emit_report

    report = RunReport(subcommand, cfg.to_dict(), cfg.digest, __version__, state.timings,
                       _jsonable(results), state.warnings)
    try:
        emit_report(report, out_dir, state.tables)
    except OutputError as exc:
        return _fail(EXIT_NUMERICAL, exc)
    if state.exit_code:
        detail = {"error": "verdict", "message": "; ".join(state.warnings) or "INCONCLUSIVE verdict",
                  "exit_code": state.exit_code}
        print(json.dumps(detail), file=sys.stderr)
    return state.exit_code


def main(argv=None) -> int:
    logging.basicConfig(level=logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    args = build_parser().parse_args(argv)
    return run(args.subcommand, args.config, args.out, args)


if __name__ == "__main__":
    sys.exit(main())
