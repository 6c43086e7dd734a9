"""JSON configuration documents.

A run configuration looks like::

    {
      "model": {"family": "expou_sv", "params": {...}, "horizon": 1.0},
      "assets": [{"kind": "european_stock", "payoff": "stock", "maturity": 1.5}, ...],
      "claim": {"kind": "european_stock", "payoff": "put", "strike": 120.0, "maturity": 1.0},
      "seed": 7,
      "run": {"n_paths": 2000, "n_steps": 100, ...}
    }

Factor coordinates in asset documents are 1-based (``"coordinate": 1``).
"""

from __future__ import annotations

import copy
import hashlib
import json
from dataclasses import dataclass, field

from complab.errors import ConfigError
from complab.factor_models import FactorModel, make_builtin_model
from complab.pde import GridSpec
from complab.pricing import Asset

RUN_DEFAULTS = {
    "n_paths": 1000,
    "n_steps": 100,
    "tolerance": 1e-8,
    "backend": "auto",
    "method": "pathwise",
    "analyticity_assumed": True,
    "probes": None,
    "grid": None,
    "rebalance_steps": None,
    "sweep_steps": None,
    "mc_samples": 20000,
    "price_points": None,
    "probe_points": 1000,
}

_ASSET_FIELDS = ("kind", "payoff", "maturity", "strike", "coordinate", "a", "b", "s_ref", "offset",
                 "components", "name", "grid", "backend")


def asset_from_dict(doc: dict) -> Asset:
    if not isinstance(doc, dict):
        raise ConfigError("asset entries must be JSON objects")
    unknown = set(doc) - set(_ASSET_FIELDS) - {"weight"}
    if unknown:
        raise ConfigError(f"unknown asset fields: {sorted(unknown)}")
    if "kind" not in doc or "maturity" not in doc:
        raise ConfigError("asset needs 'kind' and 'maturity'")
    kind = doc["kind"]
    maturity = float(doc["maturity"])
    if kind == "portfolio":
        comps = tuple((float(c["weight"]), asset_from_dict(c["asset"])) for c in doc.get("components", []))
        return Asset("portfolio", "portfolio", maturity, components=comps, name=doc.get("name", ""))
    payoff = doc.get("payoff", "log" if kind == "log_contract" else None)
    if payoff is None:
        raise ConfigError("asset needs a 'payoff'")
    coordinate = int(doc.get("coordinate", 1)) - 1
    if coordinate < 0:
        raise ConfigError("asset coordinates are 1-based")
    return Asset(
        kind=kind, payoff=payoff, maturity=maturity,
        strike=None if doc.get("strike") is None else float(doc["strike"]),
        coordinate=coordinate, a=float(doc.get("a", 0.0)), b=float(doc.get("b", 1.0)),
        s_ref=float(doc.get("s_ref", 1.0)), offset=float(doc.get("offset", 0.0)),
        name=doc.get("name", ""),
    )


def grid_from_dict(doc: dict | None) -> GridSpec | None:
    if doc is None:
        return None
    try:
        return GridSpec(tuple(float(v) for v in doc["lower"]), tuple(float(v) for v in doc["upper"]),
                        tuple(int(v) for v in doc["nodes"]), int(doc.get("n_time_steps", 200)),
                        int(doc.get("rannacher_steps", 4)), float(doc.get("cross_cfl", 1.0)))
    except (KeyError, TypeError) as exc:
        raise ConfigError(f"bad grid config: {exc}") from exc


def model_from_dict(doc: dict) -> FactorModel:
    if not isinstance(doc, dict) or "family" not in doc:
        raise ConfigError("model document needs a 'family'")
    return make_builtin_model(doc["family"], doc.get("params", {}), float(doc.get("horizon", 1.0)))


@dataclass
class AnalysisConfig:
    model: dict
    assets: list = field(default_factory=list)
    claim: dict | None = None
    seed: int | None = None
    run: dict = field(default_factory=dict)

    @classmethod
    def from_dict(cls, doc) -> "AnalysisConfig":
        if not isinstance(doc, dict):
            raise ConfigError("configuration must be a JSON object")
        if "family" in doc:
            doc = {"model": doc}
        unknown = set(doc) - {"model", "assets", "claim", "seed", "run"}
        if unknown:
            raise ConfigError(f"unknown top-level fields: {sorted(unknown)}")
        if "model" not in doc:
            raise ConfigError("configuration needs a 'model'")
        run = dict(RUN_DEFAULTS)
        extra = set(doc.get("run", {})) - set(RUN_DEFAULTS)
        if extra:
            raise ConfigError(f"unknown run fields: {sorted(extra)}")
        run.update(doc.get("run", {}))
        model = copy.deepcopy(doc["model"])
        model.setdefault("horizon", 1.0)
        model.setdefault("params", {})
        seed = doc.get("seed")
        if seed is not None and (not isinstance(seed, int) or seed < 0):
            raise ConfigError("seed must be a non-negative integer")
        cfg = cls(model, copy.deepcopy(doc.get("assets", [])), copy.deepcopy(doc.get("claim")), seed, run)
        cfg.build_model()
        cfg.build_assets()
        return cfg

    @classmethod
    def from_json(cls, text: str) -> "AnalysisConfig":
        try:
            doc = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"malformed JSON: {exc}") from exc
        return cls.from_dict(doc)

    def to_dict(self) -> dict:
        return {"model": copy.deepcopy(self.model), "assets": copy.deepcopy(self.assets),
                "claim": copy.deepcopy(self.claim), "seed": self.seed, "run": copy.deepcopy(self.run)}

    @property
    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()

    def build_model(self) -> FactorModel:
        return model_from_dict(self.model)

    def build_assets(self) -> list[Asset]:
        return [asset_from_dict(a) for a in self.assets]

    def build_claim(self) -> Asset | None:
        return None if self.claim is None else asset_from_dict(self.claim)

    def asset_grid(self, i: int | None) -> GridSpec | None:
        doc = self.claim if i is None else self.assets[i]
        return grid_from_dict(doc.get("grid") or self.run.get("grid"))

    def asset_backend(self, i: int | None) -> str:
        doc = self.claim if i is None else self.assets[i]
        return doc.get("backend", self.run["backend"])

    def check_for(self, subcommand: str) -> None:
        """Invariants that only some subcommands need."""
        model = self.build_model()
        if subcommand in ("simulate", "completeness", "witness", "hedge", "varswap") and self.seed is None:
            raise ConfigError(f"{subcommand} needs an explicit seed")
        assets = self.build_assets()
        if subcommand in ("completeness", "witness", "hedge") and len(assets) != model.d:
            raise ConfigError(f"{subcommand} needs exactly d={model.d} assets, got {len(assets)}")
        for a in assets:
            if a.maturity < model.horizon:
                raise ConfigError(f"asset {a.label} matures before the horizon {model.horizon}")
        if subcommand == "hedge":
            claim = self.build_claim()
            if claim is None:
                raise ConfigError("hedge needs a 'claim'")
            if claim.maturity != model.horizon:
                raise ConfigError("claim maturity must equal the horizon")
        if subcommand == "price" and not assets:
            raise ConfigError("price needs at least one asset")
