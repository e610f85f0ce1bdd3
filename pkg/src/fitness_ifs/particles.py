"""Finite-site fitness process driven by a shared good/bad environment.

Every step draws one environment bit ``B`` (1 = good with probability ``p``)
and one uniform per site.  A good step replaces each fitness by the maximum of
itself and its uniform, a bad step by the minimum.

Random streams are derived from one master seed: a single stream for the
environment word, and one stream per block of :data:`SITE_BLOCK` sites for
the per-site uniforms.  Full blocks are always drawn, so site ``n`` sees the
same uniforms whatever the total number of sites, and every consumer of a
``(seed, p, horizon)`` triple sees the same environment word bit for bit.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterator, Sequence, Union

import numpy as np

from ._util import DEFAULT_SEED, Estimate, check_probability

SITE_BLOCK = 4096

InitSpec = Union[str, float, Sequence[float], np.ndarray]


class DimensionError(ValueError):
    """Raised when a per-site vector does not match the number of sites."""


@dataclass(frozen=True)
class ModelParams:
    p: float
    num_sites: int
    seed: int = DEFAULT_SEED
    horizon: int = 0

    def __post_init__(self):
        check_probability("p", self.p)
        if int(self.num_sites) != self.num_sites or self.num_sites < 1:
            raise ValueError(f"num_sites must be a positive integer, got {self.num_sites!r}")
        if int(self.horizon) != self.horizon or self.horizon < 0:
            raise ValueError(f"horizon must be a non-negative integer, got {self.horizon!r}")


@dataclass
class FitnessState:
    fitness: np.ndarray
    time: int = 0

    def __post_init__(self):
        self.fitness = np.asarray(self.fitness, dtype=float)
        if self.fitness.ndim != 1:
            raise DimensionError("fitness must be a one-dimensional vector")
        if np.any((self.fitness < 0) | (self.fitness > 1)):
            raise ValueError("fitness values must lie in [0, 1]")

    @property
    def num_sites(self) -> int:
        return self.fitness.size

    def empirical_cdf(self, u) -> np.ndarray:
        """Fraction of sites with fitness <= u, for each u."""
        srt = np.sort(self.fitness)
        return np.searchsorted(srt, np.asarray(u, dtype=float), side="right") / srt.size


def step(state: FitnessState, b: int, uniforms) -> FitnessState:
    uniforms = np.asarray(uniforms, dtype=float)
    if uniforms.shape != state.fitness.shape:
        raise DimensionError(
            f"expected {state.fitness.size} uniforms, got shape {uniforms.shape}"
        )
    if b not in (0, 1):
        raise ValueError(f"environment bit must be 0 or 1, got {b!r}")
    update = np.maximum if b == 1 else np.minimum
    return FitnessState(update(state.fitness, uniforms), state.time + 1)


class _Streams:
    """Environment word and per-block uniform streams for one run."""

    def __init__(self, params: ModelParams):
        root = np.random.SeedSequence(params.seed)
        env_ss, init_ss, site_ss = root.spawn(3)
        nblocks = -(-params.num_sites // SITE_BLOCK)
        self.n = params.num_sites
        self.bits = (np.random.default_rng(env_ss).random(params.horizon) < params.p).astype(np.int8)
        self._init = [np.random.default_rng(s) for s in init_ss.spawn(nblocks)]
        self._sites = [np.random.default_rng(s) for s in site_ss.spawn(nblocks)]

    @staticmethod
    def _draw(gens) -> np.ndarray:
        return np.concatenate([g.random(SITE_BLOCK) for g in gens])

    def initial_uniforms(self) -> np.ndarray:
        return self._draw(self._init)[: self.n]

    def uniforms(self) -> np.ndarray:
        return self._draw(self._sites)[: self.n]


def _initial_state(init: InitSpec, streams: _Streams) -> FitnessState:
    n = streams.n
    if isinstance(init, str):
        if init != "uniform":
            raise ValueError(f"unknown initial distribution {init!r}; use 'uniform', a constant or a vector")
        return FitnessState(streams.initial_uniforms())
    arr = np.asarray(init, dtype=float)
    if arr.ndim == 0:
        check_probability("initial constant", float(arr), closed=True)
        return FitnessState(np.full(n, float(arr)))
    if arr.shape != (n,):
        raise DimensionError(f"initial vector has shape {arr.shape}, expected ({n},)")
    return FitnessState(arr.copy())


def _evolve(params: ModelParams, init: InitSpec) -> Iterator[tuple[int | None, FitnessState]]:
    streams = _Streams(params)
    state = _initial_state(init, streams)
    yield None, state
    for b in streams.bits:
        state = step(state, int(b), streams.uniforms())
        yield int(b), state


def environment_word(params: ModelParams) -> np.ndarray:
    """The bits ``B_1..B_T`` every run with these parameters will use."""
    return _Streams(params).bits.copy()


@dataclass
class Trajectory:
    fitness: np.ndarray  # (horizon + 1, num_sites)
    bits: np.ndarray  # (horizon,)

    def __len__(self) -> int:
        return self.fitness.shape[0]

    def __getitem__(self, t: int) -> FitnessState:
        t = range(len(self))[t]
        return FitnessState(self.fitness[t], t)

    @property
    def final(self) -> FitnessState:
        return self[-1]

    def rows(self):
        for t, row in enumerate(self.fitness):
            for site, value in enumerate(row):
                yield {"t": t, "site": site, "fitness": float(value)}


def simulate(params: ModelParams, init: InitSpec = "uniform") -> Trajectory:
    """Run the system for ``params.horizon`` steps.

    ``init`` is ``"uniform"`` (IID uniform fitnesses), a constant in [0, 1]
    or an explicit vector of length ``num_sites``.
    """
    states = []
    for _, state in _evolve(params, init):
        states.append(state.fitness)
    return Trajectory(np.vstack(states), environment_word(params))


@dataclass
class CouplingTrace:
    u_grid: np.ndarray
    bits: np.ndarray
    empirical: np.ndarray  # (horizon + 1, len(u_grid))
    theta: np.ndarray = field(repr=False)

    @property
    def deviation(self) -> np.ndarray:
        return np.abs(self.empirical - self.theta)

    @property
    def max_deviation(self) -> float:
        return float(self.deviation.max())

    def rows(self):
        dev = self.deviation
        for t in range(self.empirical.shape[0]):
            for i, u in enumerate(self.u_grid):
                yield {
                    "t": t,
                    "u": float(u),
                    "empirical": float(self.empirical[t, i]),
                    "theta": float(self.theta[t, i]),
                    "deviation": float(dev[t, i]),
                }


def _check_u_grid(u_grid) -> np.ndarray:
    u = np.atleast_1d(np.asarray(u_grid, dtype=float))
    if u.size == 0:
        raise ValueError("u_grid must be non-empty")
    if np.any((u <= 0) | (u >= 1)):
        raise ValueError("u_grid values must lie in (0, 1)")
    if np.any(np.diff(u) <= 0):
        raise ValueError("u_grid must be strictly increasing")
    return u


def theta_step(theta, u, b: int):
    """One step of the site-fraction recursion at level ``u``."""
    if b == 1:
        return theta * u
    return theta + (1.0 - theta) * u


def coupled_run(params: ModelParams, u_grid, init: InitSpec = "uniform") -> CouplingTrace:
    """Track site fractions below each ``u`` against the fraction recursion.

    The recursion starts from the empirical fraction at time 0 and is driven
    by the same environment bits as the sites.
    """
    u = _check_u_grid(u_grid)
    emp, theta, bits = [], [], []
    th = None
    for b, state in _evolve(params, init):
        frac = state.empirical_cdf(u)
        th = frac.copy() if b is None else theta_step(th, u, b)
        if b is not None:
            bits.append(b)
        emp.append(frac)
        theta.append(th)
    return CouplingTrace(u, np.asarray(bits, dtype=np.int8), np.vstack(emp), np.vstack(theta))


def pair_cdf_longrun(
    params: ModelParams,
    u1: float,
    u2: float,
    burn_in: int = 100,
    batches: int = 50,
    init: InitSpec = "uniform",
) -> Estimate:
    """Long-run estimate of ``P(eta(1) <= u1, eta(2) <= u2)``.

    At each step after ``burn_in`` the probability is estimated by the
    average over ordered pairs of distinct sites, which is unbiased by
    exchangeability.  The time average over ``horizon - burn_in`` steps gets a
    batch-means standard error.
    """
    if params.num_sites < 2:
        raise ValueError("need at least two sites for a pair estimate")
    if not 0 <= burn_in < params.horizon:
        raise ValueError("burn_in must be smaller than the horizon")
    n = params.num_sites
    lo = min(u1, u2)
    values = []
    for b, state in _evolve(params, init):
        if state.time <= burn_in:
            continue
        x = state.fitness
        c1 = np.count_nonzero(x <= u1)
        c2 = np.count_nonzero(x <= u2)
        both = np.count_nonzero(x <= lo)
        values.append((c1 * c2 - both) / (n * (n - 1)))
    values = np.asarray(values)
    usable = values[: values.size - values.size % batches]
    means = usable.reshape(batches, -1).mean(axis=1)
    return Estimate(float(values.mean()), float(means.std(ddof=1) / np.sqrt(batches)))


def single_site_replicas(p: float, replicas: int, horizon: int, seed: int = DEFAULT_SEED) -> np.ndarray:
    """Final fitness of one site in each of ``replicas`` independent systems.

    Each replica has its own environment word, so the returned values are
    IID draws of the single-site law at time ``horizon`` (IID uniform start).
    """
    check_probability("p", p)
    rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(7,)))
    x = rng.random(replicas)
    for _ in range(horizon):
        good = rng.random(replicas) < p
        v = rng.random(replicas)
        x = np.where(good, np.maximum(x, v), np.minimum(x, v))
    return x
