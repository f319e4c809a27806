"""Loop-fusion microbenchmark: three vector updates as separate or merged loops.

run1: three independent loops (9N element transfers)
run2: one loop with the first two updates (5N transfers)
run3: one loop with all three updates (5N transfers, 1.5x the flops of run2)
"""

from __future__ import annotations

import hashlib
import logging
import statistics
import time
from dataclasses import dataclass
from pathlib import Path

import numba
import numpy as np

log = logging.getLogger(__name__)

A, B, C = 0.5, 0.5, 0.25


@numba.njit(cache=True)
def _run1(x, y, z, a, b, c):
    n = x.shape[0]
    for i in range(n):
        y[i] = a * x[i] + b * y[i]
    for i in range(n):
        z[i] = b * x[i] + a * z[i]
    for i in range(n):
        z[i] = b * y[i] + c * z[i]


@numba.njit(cache=True)
def _run2(x, y, z, a, b, c):
    for i in range(x.shape[0]):
        y[i] = a * x[i] + b * y[i]
        z[i] = b * x[i] + a * z[i]


@numba.njit(cache=True)
def _run3(x, y, z, a, b, c):
    for i in range(x.shape[0]):
        y[i] = a * x[i] + b * y[i]
        z[i] = b * x[i] + a * z[i]
        z[i] = b * y[i] + c * z[i]


@numba.njit(parallel=True, cache=True)
def _run1_par(x, y, z, a, b, c):
    n = x.shape[0]
    for i in numba.prange(n):
        y[i] = a * x[i] + b * y[i]
    for i in numba.prange(n):
        z[i] = b * x[i] + a * z[i]
    for i in numba.prange(n):
        z[i] = b * y[i] + c * z[i]


@numba.njit(parallel=True, cache=True)
def _run2_par(x, y, z, a, b, c):
    for i in numba.prange(x.shape[0]):
        y[i] = a * x[i] + b * y[i]
        z[i] = b * x[i] + a * z[i]


@numba.njit(parallel=True, cache=True)
def _run3_par(x, y, z, a, b, c):
    for i in numba.prange(x.shape[0]):
        y[i] = a * x[i] + b * y[i]
        z[i] = b * x[i] + a * z[i]
        z[i] = b * y[i] + c * z[i]


KERNELS = {1: (_run1, _run1_par), 2: (_run2, _run2_par), 3: (_run3, _run3_par)}
TRANSFERS_PER_ELEMENT = {1: 9, 2: 5, 3: 5}


def llc_bytes(default: int = 32 * 2**20) -> int:
    """Size of the largest CPU cache reported by sysfs."""
    best = 0
    for idx in Path("/sys/devices/system/cpu/cpu0/cache").glob("index*"):
        try:
            text = (idx / "size").read_text().strip()
        except OSError:
            continue
        mult = {"K": 2**10, "M": 2**20, "G": 2**30}.get(text[-1:], 1)
        digits = text[:-1] if text[-1:] in "KMG" else text
        if digits.isdigit():
            best = max(best, int(digits) * mult)
    return best or default


def default_length(cache_multiple: float = 4.0) -> int:
    """Vector length whose three-vector working set is ``cache_multiple`` x the LLC."""
    return int(cache_multiple * llc_bytes() / (3 * 8)) + 1


@dataclass
class FusionResult:
    n: int
    repetitions: int
    times: dict[int, list[float]]
    digests: dict[int, dict[str, str]]

    def median(self, run: int) -> float:
        return statistics.median(self.times[run])

    @property
    def ratio_1_2(self) -> float:
        return self.median(1) / self.median(2)

    @property
    def ratio_3_2(self) -> float:
        return self.median(3) / self.median(2)

    def rows(self) -> list[dict]:
        return [
            {
                "run": r,
                "median_ms": 1e3 * self.median(r),
                "min_ms": 1e3 * min(self.times[r]),
                "transfers_per_element": TRANSFERS_PER_ELEMENT[r],
                "effective_GBps": TRANSFERS_PER_ELEMENT[r] * 8 * self.n / self.median(r) / 1e9,
            }
            for r in (1, 2, 3)
        ]


def _digest(a: np.ndarray) -> str:
    return hashlib.blake2b(a.tobytes(), digest_size=16).hexdigest()


def fusion_bench(n: int | None = None, repetitions: int = 5, seed: int = 0, threads: int = 1) -> FusionResult:
    """Time the three loop variants on vectors of length ``n``.

    Each variant starts from the same seeded x, y, z and is applied ``repetitions``
    times; digests of the final y and z are kept so runs can be compared bitwise.
    """
    if n is None:
        n = default_length()
    if n < 1 or repetitions < 1:
        raise ValueError("n and repetitions must be positive")
    parallel = threads > 1
    if parallel:
        numba.set_num_threads(min(threads, numba.config.NUMBA_NUM_THREADS))
    rng = np.random.default_rng(seed)
    x = rng.random(n)
    y0 = rng.random(n)
    z0 = rng.random(n)
    y = np.empty_like(y0)
    z = np.empty_like(z0)
    times: dict[int, list[float]] = {}
    digests: dict[int, dict[str, str]] = {}
    for run in (1, 2, 3):
        kernel = KERNELS[run][1 if parallel else 0]
        # compile outside the timed region
        kernel(x[:8], y0[:8].copy(), z0[:8].copy(), A, B, C)
        y[:] = y0
        z[:] = z0
        samples = []
        for _ in range(repetitions):
            t0 = time.perf_counter()
            kernel(x, y, z, A, B, C)
            samples.append(time.perf_counter() - t0)
        times[run] = samples
        digests[run] = {"y": _digest(y), "z": _digest(z)}
        log.info("run %d: median %.2f ms", run, 1e3 * statistics.median(samples))
    return FusionResult(n, repetitions, times, digests)
