"""Run reports and atomic output writing."""

from __future__ import annotations

import hashlib
import json
import os
import tempfile
from dataclasses import dataclass, field
from pathlib import Path

from complab.errors import OutputError

MANIFEST = "manifest.json"


@dataclass
class RunReport:
    """Everything needed to reproduce and audit one CLI run.

    ``results`` must hold only deterministic numbers; timings live apart so
    that two runs with the same config and seed share ``results.json``.
    """

    subcommand: str
    config: dict
    config_hash: str
    version: str
    timings: dict = field(default_factory=dict)
    results: dict = field(default_factory=dict)
    warnings: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "subcommand": self.subcommand,
            "version": self.version,
            "config_hash": self.config_hash,
            "config": self.config,
            "timings": self.timings,
            "results": self.results,
            "warnings": self.warnings,
        }


def _dumps(obj) -> str:
    return json.dumps(obj, indent=2, sort_keys=True, allow_nan=True) + "\n"


def atomic_write(path: Path, data: bytes) -> None:
    path = Path(path)
    fd, tmp = tempfile.mkstemp(dir=path.parent, prefix=f".{path.name}.", suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def emit_report(report: RunReport, out_dir, tables: dict | None = None) -> dict:
    """Write ``report.json``, ``results.json`` and the CSV ``tables``, then
    a manifest with the size and sha256 of every file.  Returns the manifest."""
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        files = {"report.json": _dumps(report.to_dict()).encode(),
                 "results.json": _dumps(report.results).encode()}
        for name, text in (tables or {}).items():
            files[name] = text.encode() if isinstance(text, str) else bytes(text)
        manifest = {}
        for name in sorted(files):
            atomic_write(out / name, files[name])
            manifest[name] = {"size": len(files[name]), "sha256": hashlib.sha256(files[name]).hexdigest()}
        atomic_write(out / MANIFEST, _dumps({"files": manifest}).encode())
    except OSError as exc:
        raise OutputError(f"cannot write outputs to {out}: {exc}") from exc
    return manifest
