"""Deterministic in-process parallel map over a worker pool.

Callers pass pure, picklable functions; results come back in input order no
matter how many workers ran, and per-item failures are collected instead of
aborting the batch.
"""

from __future__ import annotations

import contextlib
import math
import os
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from typing import Any, Callable, Sequence

ENV_THREADS = "VOCALKIT_THREADS"


def _single_threaded_blas():
    """Linear-algebra backends must not spawn their own threads here: the
    pool owns the cores, and nested BLAS pools oversubscribe them."""
    try:
        from threadpoolctl import threadpool_limits

        return threadpool_limits(limits=1)
    except ImportError:
        return contextlib.nullcontext()


@dataclass(frozen=True)
class JobSpec:
    items: Sequence
    worker_count: int = 1
    chunk_size: int | None = None

    def __post_init__(self):
        if self.worker_count < 1:
            raise ValueError(f"worker_count must be >= 1, got {self.worker_count}")
        if self.chunk_size is not None and self.chunk_size < 1:
            raise ValueError(f"chunk_size must be >= 1, got {self.chunk_size}")

    def effective_chunk_size(self) -> int:
        if self.chunk_size is not None:
            return self.chunk_size
        n = len(self.items)
        return max(1, math.ceil(n / (4 * self.worker_count)))


@dataclass
class ParMapResult:
    """values[i] is f(items[i]) or None when item i failed; failures hold (index, message)."""

    values: list
    failures: list[tuple[int, str]]

    @property
    def ok(self) -> bool:
        return not self.failures


def default_worker_count() -> int:
    """CLI default: --threads flag beats the environment beats cpu_count."""
    env = os.environ.get(ENV_THREADS)
    if env:
        try:
            return max(1, int(env))
        except ValueError:
            pass
    return os.cpu_count() or 1


def _run_chunk(f: Callable, base: int, items: list) -> list[tuple[int, Any, str | None]]:
    out = []
    with _single_threaded_blas():
        for offset, item in enumerate(items):
            try:
                out.append((base + offset, f(item), None))
            except Exception as exc:  # collected, not raised: engine never fails fast
                out.append((base + offset, None, f"{type(exc).__name__}: {exc}"))
    return out


def par_map(job: JobSpec, f: Callable) -> ParMapResult:
    """Map f over job.items, preserving input order independent of worker count."""
    items = list(job.items)
    n = len(items)
    values: list = [None] * n
    failures: list[tuple[int, str]] = []

    if n == 0:
        return ParMapResult(values=[], failures=[])

    if job.worker_count == 1:
        triples = _run_chunk(f, 0, items)
    else:
        chunk = job.effective_chunk_size()
        bases = range(0, n, chunk)
        triples = []
        with ProcessPoolExecutor(max_workers=min(job.worker_count, n)) as pool:
            futures = [pool.submit(_run_chunk, f, b, items[b : b + chunk]) for b in bases]
            for fut in futures:
                triples.extend(fut.result())

    for idx, value, err in triples:
        if err is None:
            values[idx] = value
        else:
            failures.append((idx, err))
    failures.sort()
    return ParMapResult(values=values, failures=failures)
