"""Timing harness for the correlation lookups.

Compares the direct path, which rebuilds the sampling index structure on
every call, against the precomputed-table path, per backend.  Used by the
``bench`` CLI command and by the acceptance suite (the table path must beat
the direct path on a 64x128 map over 32 iterations).
"""

from __future__ import annotations

import time
from dataclasses import dataclass

import numpy as np

from . import kernels
from .config import LookupConfig
from .correlation import (build_pyramid, precompute_lookup_indexes,
                          pyramid_lookup, scale_lookup)
from .ops import DTYPE


@dataclass(frozen=True)
class LookupBenchResult:
    backend: str
    scheme: str
    shape: tuple[int, int]
    iters: int
    direct_s: float
    precomputed_s: float

    @property
    def speedup(self) -> float:
        return self.direct_s / self.precomputed_s

    def format_row(self) -> str:
        return (f"{self.backend:>6} {self.scheme:>8} {self.shape[0]}x{self.shape[1]}"
                f" x{self.iters:<3} direct {self.direct_s * 1e3:8.2f} ms"
                f"  precomputed {self.precomputed_s * 1e3:8.2f} ms"
                f"  speedup {self.speedup:5.2f}x")


def _random_states(height, width, iters, seed):
    rng = np.random.default_rng(seed)
    volume = rng.standard_normal((height, width, width)).astype(DTYPE)
    base = rng.uniform(0.05, width / 2, size=(height, width)).astype(DTYPE)
    states = [base]
    for _ in range(iters - 1):
        step = rng.uniform(0.9, 1.1, size=(height, width))
        states.append(np.maximum(states[-1] * step, 0.05))
    return volume, states


def benchmark_lookup(height: int = 64, width: int = 128, iters: int = 32,
                     repeats: int = 5, seed: int = 0, scheme: str = "pyramid",
                     cfg: LookupConfig | None = None,
                     backend: str | None = None) -> LookupBenchResult:
    """Best-of-``repeats`` wall time for ``iters`` lookups on one map."""
    cfg = cfg or LookupConfig()
    backend = backend or kernels.BACKEND
    volume, states = _random_states(height, width, iters, seed)
    with kernels.use_backend(backend):
        pyr = build_pyramid(volume, cfg.num_levels)
        table = precompute_lookup_indexes(cfg, (height, width))
        if scheme == "pyramid":
            direct = lambda d, t: pyramid_lookup(pyr, d, cfg, t)
        elif scheme == "scale":
            direct = lambda d, t: scale_lookup(volume, d, cfg, t)
        else:
            raise ValueError(f"unknown scheme {scheme!r}")
        direct(states[0], None)  # warm any JIT compilation outside the clock
        direct(states[0], table)

        def run(tbl):
            best = float("inf")
            for _ in range(repeats):
                t0 = time.perf_counter()
                for d in states:
                    direct(d, tbl)
                best = min(best, time.perf_counter() - t0)
            return best

        direct_s = run(None)
        precomputed_s = run(table)
    return LookupBenchResult(backend=backend, scheme=scheme,
                             shape=(height, width), iters=iters,
                             direct_s=direct_s, precomputed_s=precomputed_s)


def compare_backends(height: int = 64, width: int = 128, iters: int = 32,
                     repeats: int = 5, seed: int = 0) -> list[LookupBenchResult]:
    results = []
    backends = ["numpy"] + (["numba"] if kernels.HAS_NUMBA else [])
    for backend in backends:
        for scheme in ("pyramid", "scale"):
            results.append(benchmark_lookup(height, width, iters, repeats,
                                            seed, scheme, backend=backend))
    return results
