"""Counter-based Gaussian substreams.

Paths are grouped in fixed blocks of ``BLOCK`` consecutive indices.  Each
block owns an independent Philox stream whose 256-bit counter starts at
``(0, 0, stream, block_index)`` under the run key ``seed`` and always draws
the full block.  The draws for path ``n`` therefore depend only on
``(seed, stream, n, n_steps, dim)`` and never on how many paths were
requested or how many workers produced them.
"""

from __future__ import annotations

import os
from concurrent.futures import ThreadPoolExecutor

import numpy as np

# stream ids keep path simulation, MC pricing and probe sampling disjoint
PATH_STREAM = 0
PRICING_STREAM = 1
PROBE_STREAM = 2

_MASK64 = (1 << 64) - 1
BLOCK = 64


def _generator(seed: int, stream: int, index: int) -> np.random.Generator:
    if seed < 0:
        raise ValueError(f"seed must be non-negative, got {seed}")
    bitgen = np.random.Philox(key=seed & ((1 << 128) - 1), counter=[0, 0, stream & _MASK64, index & _MASK64])
    return np.random.Generator(bitgen)


def worker_count() -> int:
    """Worker cap from ``COMPLAB_THREADS`` (default 1)."""
    raw = os.environ.get("COMPLAB_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def path_normals(seed: int, n_paths: int, n_steps: int, dim: int,
                 stream: int = PATH_STREAM, first_path: int = 0,
                 workers: int | None = None) -> np.ndarray:
    """Standard normal draws of shape ``(n_paths, n_steps, dim)``.

    Row ``n`` holds the draws of global path index ``first_path + n``.
    """
    out = np.empty((n_paths, n_steps, dim))
    workers = worker_count() if workers is None else max(1, workers)
    last = first_path + n_paths
    blocks = list(range(first_path // BLOCK, (last - 1) // BLOCK + 1))

    def fill(b: int) -> None:
        draws = _generator(seed, stream, b).standard_normal((BLOCK, n_steps, dim))
        lo, hi = max(b * BLOCK, first_path), min((b + 1) * BLOCK, last)
        out[lo - first_path:hi - first_path] = draws[lo - b * BLOCK:hi - b * BLOCK]

    if workers == 1 or len(blocks) < 2:
        for b in blocks:
            fill(b)
    else:
        with ThreadPoolExecutor(max_workers=workers) as pool:
            list(pool.map(fill, blocks))
    return out


def uniform_draws(seed: int, size, stream: int = PROBE_STREAM, index: int = 0) -> np.ndarray:
    return _generator(seed, stream, index).random(size)
