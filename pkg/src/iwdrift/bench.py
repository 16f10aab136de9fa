"""Throughput benchmark for batched stepping."""

from __future__ import annotations

import hashlib
import os
import time
from dataclasses import dataclass

import numpy as np

from . import dynamics
from .params import TireParams, VehicleParams
from .rng import stream

DEFAULT_SIZES = (1, 64, 1024, 8192)


@dataclass
class BenchRow:
    instances: int
    workers: int
    steps: int
    seconds: float
    steps_per_sec: float | None
    state_hash: str


def random_batch(n: int, seed: int = 0):
    """Plausible driving states, controls and tires for ``n`` vehicles."""
    g = stream(seed, "bench", n)
    V = g.uniform(0.5, 3.0, n)
    beta = g.uniform(-0.8, 0.8, n)
    psi = g.uniform(-np.pi, np.pi, n)
    states = np.column_stack([g.normal(0, 1, n), g.normal(0, 1, n), psi,
                              V * np.cos(psi + beta), V * np.sin(psi + beta), g.uniform(-2, 2, n)])
    controls = np.column_stack([g.uniform(-0.46, 0.46, n), g.uniform(10, 80, (n, 4))])
    tires = np.tile(TireParams().as_array(), (n, 1))
    return states, controls, tires


def state_hash(states: np.ndarray) -> str:
    return hashlib.sha256(np.ascontiguousarray(states, dtype="<f8").tobytes()).hexdigest()[:16]


def run_batch(n: int, n_steps: int, workers: int = 1, seed: int = 0, params=VehicleParams()):
    states, controls, tires = random_batch(n, seed)
    t0 = time.perf_counter()
    for _ in range(n_steps):
        states, _ = dynamics.step_batch(states, controls, params, tires, workers=workers)
    return states, time.perf_counter() - t0


def run_sequential(n: int, n_steps: int, seed: int = 0, params=VehicleParams()):
    """Same work as :func:`run_batch` but one vehicle per call."""
    states, controls, tires = random_batch(n, seed)
    out = states.copy()
    t0 = time.perf_counter()
    for i in range(n):
        s = states[i:i + 1]
        for _ in range(n_steps):
            s, _ = dynamics.step_batch(s, controls[i:i + 1], params, tires[i:i + 1])
        out[i] = s[0]
    return out, time.perf_counter() - t0


def available_workers() -> int:
    try:
        return len(os.sched_getaffinity(0))
    except AttributeError:
        return os.cpu_count() or 1


def bench(sizes=DEFAULT_SIZES, n_steps: int = 100, workers=None, seed: int = 0):
    """Time ``step_batch`` for every size and worker count.

    A zero step count gives rows with ``steps_per_sec = None``.
    """
    if workers is None:
        workers = sorted({1, available_workers()})
    rows = []
    for n in sizes:
        for w in workers:
            states, secs = run_batch(n, n_steps, w, seed)
            sps = n * n_steps / secs if n_steps > 0 and secs > 0 else None
            rows.append(BenchRow(n, w, n_steps, secs, sps, state_hash(states)))
    return rows


def equivalence_check(n: int = 1024, n_steps: int = 10, seed: int = 0) -> dict:
    """Hashes of batched vs one-at-a-time stepping of the same vehicles."""
    b, tb = run_batch(n, n_steps, 1, seed)
    s, ts = run_sequential(n, n_steps, seed)
    return {"instances": n, "steps": n_steps, "batch_hash": state_hash(b), "sequential_hash": state_hash(s),
            "equal": state_hash(b) == state_hash(s), "batch_seconds": tb, "sequential_seconds": ts}
