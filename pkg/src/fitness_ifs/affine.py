"""Markov chains driven by IID random affine contractions of [0, 1].

A family holds ``K + 1`` maps ``x -> a_j + b_j x`` chosen with probabilities
``p_0..p_K``.  Reading the random word backwards turns the forward orbit into
the partial sums of a series whose limit is a draw from the stationary law;
the series is truncated with the certified bound
``E|partial_t - limit| <= rho**t (2 - rho) / (1 - rho)`` where
``rho = sum_j p_j b_j``.

Map indices of the two presets:

* ``fitness(u, p)``: index 0 is ``(0, u)`` (good environment, probability p),
  index 1 is ``(u, 1 - u)`` (bad environment, probability 1 - p).
* ``erdos(u, p)``: index 0 is ``(1 - u, u)`` with probability 1 - p,
  index 1 is ``(0, u)`` with probability p.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from decimal import Decimal, localcontext
from typing import Sequence

import numpy as np

from ._util import check_probability

DEFAULT_MAX_DEPTH = 100_000


class TruncationBudgetError(RuntimeError):
    """The requested accuracy needs more steps than the budget allows."""

    def __init__(self, message: str, achieved_bound: float):
        super().__init__(message)
        self.achieved_bound = achieved_bound


@dataclass(frozen=True, eq=False)
class AffineFamily:
    probs: np.ndarray
    a: np.ndarray
    b: np.ndarray
    kind: str = "custom"
    u: float | None = None

    def __post_init__(self):
        probs = np.asarray(self.probs, dtype=float)
        a = np.asarray(self.a, dtype=float)
        b = np.asarray(self.b, dtype=float)
        if probs.ndim != 1 or probs.size < 2 or a.shape != probs.shape or b.shape != probs.shape:
            raise ValueError("need at least two maps with matching probability and coefficient vectors")
        if np.any(probs <= 0) or abs(probs.sum() - 1.0) > 1e-12:
            raise ValueError("probabilities must be positive and sum to 1")
        if np.any(a < 0) or np.any(b < 0) or np.any(a + b > 1 + 1e-15):
            raise ValueError("coefficients must satisfy 0 <= a_j <= a_j + b_j <= 1")
        if len(set(zip(a.tolist(), b.tolist()))) != a.size:
            raise ValueError("maps must be pairwise distinct")
        if np.all(b == 1):
            raise ValueError("family does not contract: every b_j equals 1")
        object.__setattr__(self, "probs", probs)
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @classmethod
    def fitness(cls, u: float, p: float) -> "AffineFamily":
        check_probability("p", p)
        if not 0.0 <= u < 1.0:
            raise ValueError(f"u must lie in [0, 1), got {u!r}")
        return cls([p, 1.0 - p], [0.0, u], [u, 1.0 - u], kind="fitness", u=u)

    @classmethod
    def erdos(cls, u: float, p: float) -> "AffineFamily":
        check_probability("p", p)
        check_probability("u", u)
        return cls([1.0 - p, p], [1.0 - u, 0.0], [u, u], kind="erdos", u=u)

    @classmethod
    def custom(cls, probs: Sequence[float], coeffs: Sequence[tuple[float, float]]) -> "AffineFamily":
        a, b = zip(*coeffs)
        return cls(probs, a, b)

    @property
    def K(self) -> int:
        return self.probs.size - 1

    def apply(self, j: int, x):
        if not 0 <= j <= self.K:
            raise IndexError(f"map index {j} outside 0..{self.K}")
        return self.a[j] + self.b[j] * x

    def draw_indices(self, rng: np.random.Generator, size) -> np.ndarray:
        cum = np.cumsum(self.probs)
        idx = np.searchsorted(cum, rng.random(size), side="right")
        return np.minimum(idx, self.K)


@dataclass
class ChainState:
    value: float
    time: int = 0
    counts: tuple[int, ...] = field(default=())

    def __post_init__(self):
        if not 0.0 <= self.value <= 1.0:
            raise ValueError(f"chain value must lie in [0, 1], got {self.value!r}")


def forward_step(state: ChainState, family: AffineFamily, j: int) -> ChainState:
    value = float(family.apply(j, state.value))
    counts = list(state.counts) or [0] * (family.K + 1)
    counts[j] += 1
    return ChainState(min(max(value, 0.0), 1.0), state.time + 1, tuple(counts))


def rho(family: AffineFamily) -> float:
    """Mean contraction factor ``sum_j p_j b_j``."""
    return float(np.dot(family.probs, family.b))


def truncation_bound(r: float, depth: int) -> float:
    return r**depth * (2.0 - r) / (1.0 - r)


def truncation_depth(r: float, epsilon: float) -> int:
    """Smallest depth whose certified bound is at most ``epsilon``."""
    if epsilon <= 0:
        raise ValueError("epsilon must be positive")
    if truncation_bound(r, 0) <= epsilon:
        return 0
    if r == 0.0:
        return 1
    t = max(int(math.ceil(math.log(epsilon * (1.0 - r) / (2.0 - r)) / math.log(r))), 0)
    while t > 0 and truncation_bound(r, t - 1) <= epsilon:
        t -= 1
    while truncation_bound(r, t) > epsilon:
        t += 1
    return t


def reversed_partial_sum(family: AffineFamily, word: Sequence[int], theta0: float) -> float:
    """``sum_s a_{w_s} prod_{r<s} b_{w_r} + theta0 prod_r b_{w_r}``.

    For any word this equals forward iteration from ``theta0`` along the
    reversed word.
    """
    total = 0.0
    prod = 1.0
    for j in word:
        if not 0 <= j <= family.K:
            raise IndexError(f"map index {j} outside 0..{family.K}")
        total += family.a[j] * prod
        prod *= family.b[j]
    return total + theta0 * prod


@dataclass
class LimitSample:
    """Draw(s) of the stationary law with a certified truncation error.

    ``value`` and ``error_bound`` are floats for a single draw and arrays
    when a ``size`` was requested.
    """

    value: float | np.ndarray
    truncation_depth: int
    error_bound: float | np.ndarray

    def rows(self):
        values = np.atleast_1d(self.value)
        bounds = np.broadcast_to(np.asarray(self.error_bound, dtype=float), values.shape)
        for i, (v, e) in enumerate(zip(values, bounds)):
            yield {
                "sample_id": i,
                "value": float(v),
                "truncation_depth": int(self.truncation_depth),
                "error_bound": float(e),
            }


def sample_limit(
    family: AffineFamily,
    epsilon: float,
    rng: np.random.Generator,
    size: int | None = None,
    max_depth: int = DEFAULT_MAX_DEPTH,
) -> LimitSample:
    """Sample the limit series truncated at the certified depth for ``epsilon``."""
    r = rho(family)
    depth = truncation_depth(r, epsilon)
    if depth > max_depth:
        achieved = truncation_bound(r, max_depth)
        raise TruncationBudgetError(
            f"epsilon={epsilon:g} needs {depth} steps, budget is {max_depth} (bound {achieved:.3g})",
            achieved,
        )
    shape = () if size is None else (size,)
    total = np.zeros(shape)
    prod = np.ones(shape)
    for _ in range(depth):
        j = family.draw_indices(rng, shape)
        total += family.a[j] * prod
        prod *= family.b[j]
    value = np.clip(total, 0.0, 1.0)
    if size is None:
        value = float(value)
    return LimitSample(value, depth, truncation_bound(r, depth))


def partial_sum_paths(
    family: AffineFamily,
    depths: Sequence[int],
    theta0: float,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Reversed-chain partial sums at several depths along shared paths.

    Returns an array of shape ``(size, len(depths))``.
    """
    depths = [int(d) for d in depths]
    out = np.empty((size, len(depths)))
    wanted = {d: i for i, d in enumerate(depths)}
    total = np.zeros(size)
    prod = np.ones(size)
    for t in range(max(depths) + 1):
        if t in wanted:
            out[:, wanted[t]] = total + theta0 * prod
        j = family.draw_indices(rng, size)
        total += family.a[j] * prod
        prod *= family.b[j]
    return out


def geometric_clock(success: float, kmax: int, rng: np.random.Generator, size=()) -> np.ndarray:
    """Partial sums ``T_0 < T_1 < ...`` of IID geometric variables on {1, 2, ...}."""
    shape = (size, kmax) if isinstance(size, int) else tuple(size) + (kmax,)
    return np.cumsum(rng.geometric(success, size=shape), axis=-1)


def _clock_maps(family: AffineFamily) -> tuple[int, int]:
    if family.K != 1:
        raise ValueError("the geometric representation needs exactly two maps")
    zero = [j for j in (0, 1) if family.a[j] == 0.0]
    if not zero:
        raise ValueError("the geometric representation needs a map with zero intercept")
    z = zero[0]
    if family.b[z] <= 0.0:
        raise ValueError("the zero-intercept map must have a positive slope")
    return z, 1 - z


def sample_limit_geometric(
    family: AffineFamily,
    kmax: int,
    rng: np.random.Generator,
    size: int | None = None,
) -> LimitSample:
    """Sample the limit through the geometric clock of the non-scaling map.

    With ``z`` the zero-intercept map and ``o`` the other one, the limit is
    ``(a_o / b_z) sum_k b_z**T_k (b_o / b_z)**k`` where the clock increments
    are geometric with success probability ``p_o``.  Term ``k`` is evaluated
    as ``a_o b_z**(T_k - 1 - k) b_o**k`` so nothing is divided.

    The reported bound is pathwise: ``T_k - k`` is nondecreasing, hence the
    omitted tail is at most ``a_o b_z**(T_{kmax-1} - kmax) b_o**kmax / (1 - b_o)``.
    """
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    z, o = _clock_maps(family)
    a_o, b_o, b_z = family.a[o], family.b[o], family.b[z]
    shape = () if size is None else (size,)
    clock = geometric_clock(family.probs[o], kmax, rng, shape)
    k = np.arange(kmax)
    terms = a_o * b_z ** (clock - 1 - k) * b_o**k
    value = np.clip(terms.sum(axis=-1), 0.0, 1.0)
    if a_o == 0.0:
        bound = np.zeros(shape)
    else:
        bound = a_o * b_z ** (clock[..., -1] - kmax) * b_o**kmax / (1.0 - b_o)
    if size is None:
        return LimitSample(float(value), kmax, float(bound))
    return LimitSample(value, kmax, bound)


def sample_random_cdf(
    u_values: Sequence[float],
    p: float,
    epsilon: float,
    rng: np.random.Generator,
    size: int,
) -> np.ndarray:
    """Joint draws of the stationary random CDF at several levels.

    One environment word drives the series at every ``u``, which is what
    makes the coordinates carry the right dependence.  Shape
    ``(size, len(u_values))``.
    """
    us = np.asarray(u_values, dtype=float)
    fams = [AffineFamily.fitness(float(u), p) for u in us]
    depth = max(truncation_depth(rho(f), epsilon) for f in fams)
    a = np.stack([f.a for f in fams], axis=1)  # (2, n_u)
    b = np.stack([f.b for f in fams], axis=1)
    total = np.zeros((size, us.size))
    prod = np.ones((size, us.size))
    for _ in range(depth):
        j = (rng.random(size) >= p).astype(np.intp)  # 0 good w.p. p, 1 bad
        total += a[j] * prod
        prod *= b[j]
    return np.clip(total, 0.0, 1.0)


def _decimal_coeffs(family: AffineFamily) -> tuple[list[Decimal], list[Decimal]]:
    # The presets are rebuilt from u so that 1 - u is exact, not the rounded double.
    if family.kind == "fitness":
        u = Decimal(family.u)
        return [Decimal(0), u], [u, 1 - u]
    if family.kind == "erdos":
        u = Decimal(family.u)
        return [1 - u, Decimal(0)], [u, u]
    return [Decimal(float(x)) for x in family.a], [Decimal(float(x)) for x in family.b]


def sample_limit_precise(
    family: AffineFamily,
    depth: int,
    rng: np.random.Generator,
    digits: int,
    size: int = 1,
    tail_epsilon: float = 1e-15,
) -> tuple[list[Decimal], np.ndarray]:
    """Stationary draws ``S_{w_1} o ... o S_{w_depth}(X')`` in decimal arithmetic.

    ``X'`` is an independent double-precision draw and ``w`` an IID word of
    map indices; each value's coding to depth ``depth`` is its word, which is
    returned alongside (shape ``(size, depth)``).  ``digits`` is the decimal
    precision and must resolve intervals of size ``prod b_{w_i}``.
    """
    words = family.draw_indices(rng, (size, depth))
    tails = np.atleast_1d(sample_limit(family, tail_epsilon, rng, size=size).value)
    values = []
    with localcontext() as ctx:
        ctx.prec = digits
        a, b = _decimal_coeffs(family)
        for word, tail in zip(words.tolist(), tails.tolist()):
            x = Decimal(tail)
            for j in reversed(word):
                x = a[j] + b[j] * x
            values.append(x)
    return values, words
