"""Local exponents of the self-similar law and its binary interval coding.

Conventions follow the two maps ``S_0(x) = u + (1 - u) x`` (digit 0,
probability 1 - p) and ``S_1(x) = u x`` (digit 1, probability p).  A word
``e_1..e_t`` names the interval ``S_{e_1} o ... o S_{e_t}([0, 1])`` of length
``(1-u)**(t-|e|) u**|e|`` and mass ``(1-p)**(t-|e|) p**|e|``.  In the
fitness family of :mod:`fitness_ifs.affine` the digit is ``1 - index``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from decimal import Decimal, localcontext
from typing import Sequence

import numpy as np
from scipy import stats

from ._util import Estimate, check_probability, mean_stderr
from .affine import AffineFamily, sample_limit, sample_limit_precise
from .stationary import canonical_code, d_point, is_admissible

MAX_DEPTH = 200
# Below this smallest-interval size the double-precision locate is not trusted.
DOUBLE_RESOLUTION = 1e-12


@dataclass(frozen=True)
class IntervalCode:
    word: tuple[int, ...]
    u: float
    left: float
    right: float
    log_length: float

    @property
    def depth(self) -> int:
        return len(self.word)

    @property
    def ones(self) -> int:
        return sum(self.word)

    @property
    def length(self) -> float:
        return math.exp(self.log_length)

    def log_mass(self, p: float) -> float:
        return self.ones * math.log(p) + (self.depth - self.ones) * math.log1p(-p)

    def mass(self, p: float) -> float:
        return math.exp(self.log_mass(p))

    def contains(self, x) -> bool:
        return self.left <= float(x) <= self.right


def interval_of(word: Sequence[int], u: float) -> IntervalCode:
    word = tuple(int(e) for e in word)
    if len(word) > MAX_DEPTH:
        raise ValueError(f"depth {len(word)} exceeds the cap of {MAX_DEPTH}")
    left, right = 0.0, 1.0
    for e in reversed(word):
        if e == 0:
            left, right = u + (1.0 - u) * left, u + (1.0 - u) * right
        else:
            left, right = u * left, u * right
    ones = sum(word)
    log_length = ones * math.log(u) + (len(word) - ones) * math.log1p(-u)
    return IntervalCode(word, u, left, right, log_length)


def locate(x, u: float, t: int) -> IntervalCode:
    """The depth-``t`` interval containing ``x``; ``x = u`` takes digit 1.

    ``x`` may be a float or a :class:`~decimal.Decimal`; decimals are
    processed in the active decimal context, which must carry enough digits
    for intervals of size ``min(u, 1-u)**t``.
    """
    if t < 1 or t > MAX_DEPTH:
        raise ValueError(f"depth must lie in 1..{MAX_DEPTH}")
    if isinstance(x, Decimal):
        uu, one, zero = Decimal(u), Decimal(1), Decimal(0)
    else:
        x = float(x)
        uu, one, zero = u, 1.0, 0.0
    if not zero <= x <= one:
        raise ValueError("x must lie in [0, 1]")
    word = []
    for _ in range(t):
        if x <= uu:
            word.append(1)
            x = x / uu
        else:
            word.append(0)
            x = min((x - uu) / (one - uu), one)
    return interval_of(word, u)


def locate_digits(x, u: float, t: int) -> np.ndarray:
    """Vectorised digits of :func:`locate` for an array of floats, shape ``(n, t)``."""
    x = np.array(x, dtype=float)
    out = np.empty(x.shape + (t,), dtype=np.int8)
    for i in range(t):
        low = x <= u
        out[..., i] = low
        x = np.where(low, x / u, np.minimum((x - u) / (1.0 - u), 1.0))
    return out


def partition(u: float, p: float, t: int) -> dict[str, np.ndarray]:
    """All ``2**t`` depth-``t`` intervals in left-to-right order."""
    left = np.array([0.0])
    right = np.array([1.0])
    ones = np.array([0])
    for _ in range(t):
        left = np.concatenate([u * left, u + (1.0 - u) * left])
        right = np.concatenate([u * right, u + (1.0 - u) * right])
        ones = np.concatenate([ones + 1, ones])
    return {
        "left": left,
        "right": right,
        "length": u**ones * (1.0 - u) ** (t - ones),
        "mass": p**ones * (1.0 - p) ** (t - ones),
        "ones": ones,
    }


def _decimal_digits(u: float, t: int) -> int:
    return int(math.ceil(t * -math.log10(min(u, 1.0 - u)))) + 20


def _sample_digits(u: float, p: float, samples: int, t: int, rng: np.random.Generator) -> np.ndarray:
    """Digits of ``samples`` stationary draws, shape ``(samples, t)``.

    When double precision cannot resolve depth-``t`` intervals the draws are
    composed and located in decimal arithmetic instead.
    """
    fam = AffineFamily.fitness(u, p)
    if min(u, 1.0 - u) ** t >= DOUBLE_RESOLUTION:
        x = sample_limit(fam, 1e-15, rng, size=samples).value
        return locate_digits(x, u, t)
    digits = _decimal_digits(u, t)
    values, _ = sample_limit_precise(fam, t, rng, digits, size=samples)
    out = np.empty((samples, t), dtype=np.int8)
    with localcontext() as ctx:
        ctx.prec = digits
        for i, x in enumerate(values):
            out[i] = locate(x, u, t).word
    return out


@dataclass
class DigitLawReport:
    u: float
    p: float
    samples: int
    depth: int
    freq_one: float
    freq_stderr: float
    marginal_pvalue: float
    pair_pvalue: float
    pair_counts: dict[str, int]
    level: float = 0.01

    @property
    def ok(self) -> bool:
        return self.marginal_pvalue > self.level and self.pair_pvalue > self.level


def digit_law_check(
    u: float, p: float, samples: int, t: int, rng: np.random.Generator, level: float = 0.01
) -> DigitLawReport:
    """Chi-square tests that the digits of stationary draws are IID Bernoulli(p).

    Marginals are pooled over all positions; pairs use the disjoint blocks
    ``(e_1, e_2), (e_3, e_4), ...`` so that the pair counts are independent.
    """
    check_probability("u", u)
    check_probability("p", p)
    if t < 2:
        raise ValueError("need depth t >= 2 for the pair test")
    d = _sample_digits(u, p, samples, t, rng)
    n1 = int(d.sum())
    total = d.size
    marginal = stats.chisquare([total - n1, n1], [total * (1 - p), total * p])
    pairs = d[:, : t - t % 2].reshape(samples, -1, 2)
    code = 2 * pairs[..., 0].astype(int) + pairs[..., 1]
    counts = np.bincount(code.ravel(), minlength=4)
    probs = np.array([(1 - p) ** 2, (1 - p) * p, p * (1 - p), p**2])
    pair = stats.chisquare(counts, counts.sum() * probs)
    freq = n1 / total
    return DigitLawReport(
        u,
        p,
        samples,
        t,
        freq,
        math.sqrt(p * (1 - p) / total),
        float(marginal.pvalue),
        float(pair.pvalue),
        {k: int(c) for k, c in zip(("00", "01", "10", "11"), counts)},
        level,
    )


def ae_exponent(u, p):
    """Almost-sure local exponent ``(p ln p + (1-p) ln(1-p)) / (p ln u + (1-p) ln(1-u))``."""
    u = np.asarray(u, dtype=float)
    p = np.asarray(p, dtype=float)
    out = (p * np.log(p) + (1 - p) * np.log1p(-p)) / (p * np.log(u) + (1 - p) * np.log1p(-u))
    return float(out) if out.ndim == 0 else out


def exponent_ratios(ones, t: int, u: float, p: float) -> np.ndarray:
    """``ln mass / ln length`` of depth-``t`` intervals with ``ones`` digits equal to 1.

    Computed from the counts, so nothing underflows.
    """
    ones = np.asarray(ones, dtype=float)
    zeros = t - ones
    return (ones * math.log(p) + zeros * math.log1p(-p)) / (ones * math.log(u) + zeros * math.log1p(-u))


def empirical_exponent(
    u: float, p: float, samples: int, t: int, rng: np.random.Generator, return_values: bool = False
):
    """Monte Carlo estimate of the a.s. exponent at depth ``t``.

    Returns an :class:`Estimate`, plus the per-sample ratios when
    ``return_values`` is set.
    """
    check_probability("u", u)
    check_probability("p", p)
    if t < 1 or t > MAX_DEPTH:
        raise ValueError(f"depth must lie in 1..{MAX_DEPTH}")
    d = _sample_digits(u, p, samples, t, rng)
    ratios = exponent_ratios(d.sum(axis=1), t, u, p)
    est = mean_stderr(ratios)
    return (est, ratios) if return_values else est


@dataclass
class DPointExponents:
    code: tuple[int, ...]
    right_slope: float
    right_stderr: float
    left_slope: float
    left_stderr: float
    right_theory: float
    left_theory: float


def _g_increment(plus: Sequence[int], minus: Sequence[int], p: float) -> float:
    terms = [p**n * (1 - p) ** l for l, n in enumerate(plus)]
    terms += [-(p**n) * (1 - p) ** l for l, n in enumerate(minus)]
    return math.fsum(terms)


def d_point_exponents(code: Sequence[int], u: float, p: float, k_range: Sequence[int] = range(1, 21)) -> DPointExponents:
    """One-sided exponents at a point of D from exact CDF increments.

    Right side: ``delta = u**(n_m+k) (1-u)**m`` reaches the point whose code
    appends ``n_m + k``.  Left side: ``delta = u**n_m (1-u)**(m+k-1)`` reaches
    the point whose code replaces ``n_m`` by ``k`` copies of ``n_m + 1``.  The
    slopes of ``ln |dG|`` against ``ln delta`` are fitted by least squares.
    """
    check_probability("u", u)
    check_probability("p", p)
    code = tuple(int(c) for c in code)
    if not is_admissible(code):
        raise ValueError(f"code {code} violates the exponent constraints")
    code = canonical_code(code)
    if len(code) < 2:
        raise ValueError("one-sided exponents are computed for codes with m >= 2 only")
    ks = [int(k) for k in k_range]
    if len(ks) < 3 or min(ks) < 1:
        raise ValueError("k_range needs at least three positive values")
    m, nm = len(code), code[-1]
    base = d_point(code, u, p)

    right_x, right_y, left_x, left_y = [], [], [], []
    for k in ks:
        ext = d_point(code + (nm + k,), u, p)
        right_x.append((nm + k) * math.log(u) + m * math.log1p(-u))
        right_y.append(math.log(_g_increment(ext.code, base.code, p)))
        lower = d_point(code[:-1] + (nm + 1,) * k, u, p)
        left_x.append(nm * math.log(u) + (m + k - 1) * math.log1p(-u))
        left_y.append(math.log(_g_increment(base.code, lower.code, p)))
    r = stats.linregress(right_x, right_y)
    l = stats.linregress(left_x, left_y)
    return DPointExponents(
        code,
        float(r.slope),
        float(r.stderr),
        float(l.slope),
        float(l.stderr),
        math.log(p) / math.log(u),
        math.log1p(-p) / math.log1p(-u),
    )


def d_exponent_min(u, p: float):
    """Smaller one-sided exponent on D, capped at 1: ``ln p / ln u`` for u <= p, else ``ln(1-p) / ln(1-u)``."""
    u = np.asarray(u, dtype=float)
    out = np.where(
        u <= p,
        np.minimum(np.log(p) / np.log(u), 1.0),
        np.minimum(np.log1p(-p) / np.log1p(-u), 1.0),
    )
    return float(out) if out.ndim == 0 else out


def exponent_curves(p: float, u_grid: Sequence[float]) -> list[dict]:
    check_probability("p", p)
    rows = []
    for u in u_grid:
        check_probability("u", u)
        rows.append({"u": float(u), "d_exponent_min": d_exponent_min(u, p), "ae_exponent": ae_exponent(u, p)})
    return rows


def exponent_rows(
    u: float,
    p: float,
    rng: np.random.Generator,
    samples: int = 10_000,
    t: int = 50,
    code: Sequence[int] = (1, 1),
    k_range: Sequence[int] = range(1, 21),
) -> list[dict]:
    """Theoretical and estimated exponents for the ``exponents`` table."""
    dp = d_point_exponents(code, u, p, k_range)
    ae: Estimate = empirical_exponent(u, p, samples, t, rng)
    return [
        {"u": u, "p": p, "side": "right", "theoretical": dp.right_theory, "empirical": dp.right_slope, "stderr": dp.right_stderr},
        {"u": u, "p": p, "side": "left", "theoretical": dp.left_theory, "empirical": dp.left_slope, "stderr": dp.left_stderr},
        {"u": u, "p": p, "side": "ae", "theoretical": ae_exponent(u, p), "empirical": ae.mean, "stderr": ae.stderr},
    ]
