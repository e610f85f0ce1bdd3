"""Seeding and small statistical helpers shared by the modules."""

from __future__ import annotations

import os
from typing import NamedTuple

import numpy as np

#: Seed used whenever the caller does not supply one.
DEFAULT_SEED = 20240517
SEED_ENV_VAR = "FITNESS_IFS_SEED"


def default_seed() -> int:
    value = os.environ.get(SEED_ENV_VAR)
    if value is None or value.strip() == "":
        return DEFAULT_SEED
    return int(value)


def make_rng(seed: int | None = None, *key: int) -> np.random.Generator:
    """Generator for ``seed`` and an optional sub-stream key.

    Distinct keys give statistically independent streams; the same
    ``(seed, key)`` always gives the same stream.
    """
    if seed is None:
        seed = default_seed()
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=tuple(key)))


class Estimate(NamedTuple):
    """Monte Carlo estimate with its standard error."""

    mean: float
    stderr: float

    def agrees_with(self, value: float, k: float = 3.0) -> bool:
        return abs(self.mean - value) <= k * self.stderr

    def agrees_with_estimate(self, other: "Estimate", k: float = 3.0) -> bool:
        return abs(self.mean - other.mean) <= k * float(np.hypot(self.stderr, other.stderr))


def mean_stderr(x) -> Estimate:
    x = np.asarray(x, dtype=float)
    if x.size < 2:
        raise ValueError("need at least two observations for a standard error")
    return Estimate(float(x.mean()), float(x.std(ddof=1) / np.sqrt(x.size)))


def check_probability(name: str, value: float, *, closed: bool = False) -> float:
    value = float(value)
    ok = 0.0 <= value <= 1.0 if closed else 0.0 < value < 1.0
    if not ok:
        interval = "[0, 1]" if closed else "(0, 1)"
        raise ValueError(f"{name} must lie in {interval}, got {value!r}")
    return value
