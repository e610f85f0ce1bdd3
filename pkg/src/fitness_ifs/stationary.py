"""Exact and semi-exact facts about the stationary law of the site fraction.

For fixed ``u`` the stationary law ``mu_u`` is self-similar under
``S_1(x) = u x`` (probability p) and ``S_0(x) = u + (1 - u) x``
(probability 1 - p).  Its CDF ``G_u`` is known in closed form on the dense
set ``D`` of points

    y = sum_{l=1..m} u**n_l (1 - u)**(l - 1),   G_u(y) = sum_{l=1..m} p**n_l (1 - p)**(l - 1)

with exponent codes ``(n_1, ..., n_m)`` satisfying ``n_1 >= 0`` if m = 1 and
otherwise ``1 <= n_1 <= ... <= n_{m-1} <= n_m + 1``, ``n_m >= 0``.

Codes correspond to words over {S_0, S_1}: ``y = S_{w_1} o ... o S_{w_d}(1)``
where every ``S_0`` opens a new term and every ``S_1`` raises all exponents
by one.  The word length ``d = n_m + m - 1`` is the *depth* of the code, and
enumeration proceeds depth by depth through the maps, which yields D
already sorted.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Iterable, Iterator, Sequence

import numpy as np
from scipy.integrate import trapezoid

from ._util import Estimate, check_probability, mean_stderr
from .affine import sample_random_cdf

DEFAULT_MAX_M = 12
DEFAULT_MAX_N = 25
Y_DEDUP_RTOL = 1e-13
G_DEDUP_ATOL = 1e-12
IDENTITY_TOL = 1e-12


# --------------------------------------------------------------------------
# codes and single points


def is_admissible(code: Sequence[int]) -> bool:
    n = [int(c) for c in code]
    if not n or any(c < 0 for c in n):
        return False
    if len(n) == 1:
        return True
    head = n[:-1]
    return head[0] >= 1 and all(x <= y for x, y in zip(head, head[1:])) and head[-1] <= n[-1] + 1


def canonical_code(code: Sequence[int]) -> tuple[int, ...]:
    """Shortest code of the same point.

    A code ending in ``(..., n + 1, n)`` describes the same point as
    ``(..., n)`` because ``u**(n+1) + (1 - u) u**n = u**n``.
    """
    n = [int(c) for c in code]
    while len(n) >= 2 and n[-2] == n[-1] + 1:
        last = n.pop()
        n[-1] = last
    return tuple(n)


@dataclass(frozen=True)
class DPoint:
    code: tuple[int, ...]
    y: float
    g: float

    @property
    def m(self) -> int:
        return len(self.code)

    @property
    def code_str(self) -> str:
        return "-".join(str(n) for n in self.code)


def _code_sum(base: float, code: Sequence[int]) -> float:
    return math.fsum(base**n * (1.0 - base) ** l for l, n in enumerate(code))


def d_point(code: Sequence[int], u: float, p: float) -> DPoint:
    """Point of D for ``code`` with its exact CDF value (compensated sums)."""
    code = tuple(int(c) for c in code)
    if not is_admissible(code):
        raise ValueError(f"code {code} violates the exponent constraints")
    return DPoint(code, _code_sum(u, code), _code_sum(p, code))


def _code_sums(base: float, codes: np.ndarray) -> np.ndarray:
    """Vectorised Neumaier sum of ``base**n_l (1 - base)**(l-1)`` over padded rows.

    Padding entries are negative.
    """
    nmax = int(codes.max(initial=0))
    powers = base ** np.arange(nmax + 2, dtype=float)
    total = np.zeros(codes.shape[0])
    comp = np.zeros(codes.shape[0])
    coef = 1.0
    for l in range(codes.shape[1]):
        col = codes[:, l]
        term = np.where(col >= 0, powers[np.maximum(col, 0)] * coef, 0.0)
        t = total + term
        comp += np.where(np.abs(total) >= np.abs(term), (total - t) + term, (term - t) + total)
        total = t
        coef *= 1.0 - base
    return total + comp


# --------------------------------------------------------------------------
# enumeration


@dataclass
class DenseSet:
    """Sorted enumeration of D within a budget.

    Behaves as a read-only sequence of :class:`DPoint`; the arrays ``y`` and
    ``g`` hold the coordinates and ``words``/``depths`` the map words from
    which codes are rebuilt on demand (bit ``i`` of a word is the letter at
    position ``i`` counted from the outside, 1 for ``S_1``).
    """

    u: float
    p: float
    y: np.ndarray
    g: np.ndarray
    words: np.ndarray = field(repr=False)
    depths: np.ndarray = field(repr=False)
    merged: int = 0
    # neighbours closer than the y tolerance whose exact CDF values differ
    close_distinct: int = 0

    def __len__(self) -> int:
        return self.y.size

    def codes(self, start: int = 0, stop: int | None = None) -> np.ndarray:
        """Padded code matrix (entries -1 past ``m``) for a slice of points."""
        return words_to_codes(self.words[start:stop], self.depths[start:stop])

    def code(self, i: int) -> tuple[int, ...]:
        row = self.codes(i, i + 1)[0]
        return tuple(int(c) for c in row[row >= 0])

    def __getitem__(self, i: int) -> DPoint:
        i = range(len(self))[i]
        return DPoint(self.code(i), float(self.y[i]), float(self.g[i]))

    def __iter__(self) -> Iterator[DPoint]:
        chunk = 1 << 16
        for start in range(0, len(self), chunk):
            codes = self.codes(start, start + chunk)
            for k, row in enumerate(codes):
                i = start + k
                yield DPoint(tuple(int(c) for c in row[row >= 0]), float(self.y[i]), float(self.g[i]))

    def rows(self):
        for pt in self:
            yield {"u": self.u, "p": self.p, "y": pt.y, "g": pt.g, "code": pt.code_str}


def words_to_codes(words: np.ndarray, depths: np.ndarray) -> np.ndarray:
    words = np.asarray(words, dtype=np.uint64)
    depths = np.asarray(depths, dtype=np.int64)
    n = words.size
    dmax = int(depths.max(initial=0))
    codes = np.full((n, dmax + 1), -1, dtype=np.int16)
    rows = np.arange(n)
    ones = np.zeros(n, dtype=np.int16)
    slot = np.zeros(n, dtype=np.int64)
    for i in range(dmax):
        active = i < depths
        letter = ((words >> np.uint64(i)) & np.uint64(1)).astype(bool)
        shift = active & ~letter
        codes[rows[shift], slot[shift]] = ones[shift] + 1
        slot += shift
        ones += active & letter
    codes[rows, slot] = ones
    width = int(slot.max(initial=0)) + 1
    return codes[:, :width]


def enumerate_D(
    u: float,
    p: float,
    max_m: int = DEFAULT_MAX_M,
    max_n: int = DEFAULT_MAX_N,
    max_depth: int | None = None,
) -> DenseSet:
    """All points of D with ``m <= max_m``, every ``n_l <= max_n`` and depth ``<= max_depth``.

    ``max_depth`` defaults to ``max_n``.  Points are built by applying the
    two maps to the depth-``(d-1)`` set, so y and g are obtained by the same
    affine recursions and come out sorted by y.  Adjacent points closer than
    ``1e-13`` relative whose g agree to 1e-12 are merged.  Neighbours that
    close with different g are distinct points of D below double resolution
    (small u and deep codes); they are kept, since their codes and the order
    of construction still identify them, and counted in ``close_distinct``.
    """
    check_probability("u", u)
    check_probability("p", p)
    if max_m < 1 or max_n < 0:
        raise ValueError("need max_m >= 1 and max_n >= 0")
    depth = max_n if max_depth is None else int(max_depth)
    if not 0 <= depth <= 62:
        raise ValueError("max_depth must lie in 0..62")

    y = np.array([1.0])
    g = np.array([1.0])
    m = np.array([1], dtype=np.int16)
    top = np.array([0], dtype=np.int16)  # largest exponent in the code
    wtype = np.uint32 if depth <= 32 else np.uint64
    one_bit = wtype(1)
    words = np.array([0], dtype=wtype)
    depths = np.array([0], dtype=np.uint8)
    for _ in range(depth):
        # S_0 on the point 1 gives 1 again; that copy keeps the empty word.
        one = np.zeros(y.size, dtype=bool)
        one[-1] = True
        y = np.concatenate([u * y, u + (1.0 - u) * y])
        g = np.concatenate([p * g, p + (1.0 - p) * g])
        m = np.concatenate([m, np.where(one, m, m + 1)])
        top = np.concatenate([top + 1, np.where(one, top, np.maximum(top, 1))])
        words = np.concatenate([(words << one_bit) | one_bit, np.where(one, words, words << one_bit)])
        depths = np.concatenate([depths + 1, np.where(one, depths, depths + 1)]).astype(np.uint8)
        keep = (m <= max_m) & (top <= max_n)
        if not keep.all():
            y, g, m, top, words, depths = (a[keep] for a in (y, g, m, top, words, depths))

    close = np.flatnonzero(np.diff(y) <= Y_DEDUP_RTOL * y[1:])
    same = np.abs(g[close + 1] - g[close]) <= G_DEDUP_ATOL
    dup = close[same]
    if dup.size:
        keep = np.ones(y.size, dtype=bool)
        keep[dup + 1] = False
        y, g, words, depths = y[keep], g[keep], words[keep], depths[keep]
    return DenseSet(u, p, y, g, words, depths, merged=int(dup.size), close_distinct=int(close.size - dup.size))


def cdf_bracket(
    u: float,
    p: float,
    x,
    max_m: int = DEFAULT_MAX_M,
    max_n: int = DEFAULT_MAX_N,
    max_depth: int | None = None,
    points: DenseSet | None = None,
):
    """Lower and upper bounds on ``G_u(x)`` from the neighbouring points of D.

    ``x`` may be a scalar or an array.  When ``x`` coincides with a point of
    D (relative tolerance 1e-13) both bounds equal its exact value.  Below
    the smallest enumerated point the lower bound is ``G_u(0) = 0``.
    """
    xa = np.asarray(x, dtype=float)
    if np.any((xa < 0) | (xa > 1)) or np.any(np.isnan(xa)):
        raise ValueError("x must lie in [0, 1]")
    pts = points if points is not None else enumerate_D(u, p, max_m, max_n, max_depth)
    y, g = pts.y, pts.g
    tol = Y_DEDUP_RTOL * np.maximum(xa, np.finfo(float).tiny)
    lo_i = np.searchsorted(y, xa, side="right") - 1
    hi_i = np.minimum(np.searchsorted(y, xa, side="left"), y.size - 1)
    lower = np.where(lo_i >= 0, g[np.maximum(lo_i, 0)], 0.0)
    upper = g[hi_i]
    hit_lo = (lo_i >= 0) & (np.abs(xa - y[np.maximum(lo_i, 0)]) <= tol)
    hit_hi = np.abs(y[hi_i] - xa) <= tol
    upper = np.where(hit_lo, lower, upper)
    lower = np.where(hit_hi & ~hit_lo, upper, lower)
    if xa.ndim == 0:
        return float(lower), float(upper)
    return lower, upper


def moment_from_cdf(points: DenseSet, k: int) -> float:
    """``E[X**k] = int_0^1 k y**(k-1) (1 - G(y)) dy`` by trapezoid on the D grid."""
    y = np.concatenate([[0.0], points.y])
    g = np.concatenate([[0.0], points.g])
    return float(trapezoid(k * y ** (k - 1) * (1.0 - g), y))


# --------------------------------------------------------------------------
# moments and the single-site law


@dataclass
class MomentTable:
    u: float
    p: float
    values: list[float]

    def __getitem__(self, k: int) -> float:
        return self.values[k]

    @property
    def kmax(self) -> int:
        return len(self.values) - 1


def moments(u: float, p: float, kmax: int) -> MomentTable:
    """``E[X**k]`` for ``k = 0..kmax`` from the self-similarity recursion."""
    check_probability("u", u)
    check_probability("p", p)
    if kmax < 1:
        raise ValueError("kmax must be at least 1")
    m = [1.0]
    for k in range(1, kmax + 1):
        denom = 1.0 - p * u**k - (1.0 - p) * (1.0 - u) ** k
        assert denom > 0.0, "moment denominator vanished"
        s = math.fsum(math.comb(k, j) * u ** (k - j) * (1.0 - u) ** j * m[j] for j in range(k))
        m.append((1.0 - p) * s / denom)
    return MomentTable(u, p, m)


def mean_closed_form(u, p):
    u = np.asarray(u, dtype=float)
    return (1.0 - p) * u / ((1.0 - p) * u + p * (1.0 - u))


def single_site_cdf(p, u):
    """Stationary CDF of one site, ``(1-p) u / ((1-p) u + p (1-u))``."""
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    out = (1.0 - p) * u / ((1.0 - p) * u + p * (1.0 - u))
    return float(out) if out.ndim == 0 else out


def single_site_density(p, u):
    """Derivative of :func:`single_site_cdf`, ``p (1-p) / ((1-2p) u + p)**2``.

    The squared term in the denominator is linear in u; a version with
    ``u**2`` in place of ``u`` does not differentiate back to the CDF.
    """
    p = np.asarray(p, dtype=float)
    u = np.asarray(u, dtype=float)
    out = p * (1.0 - p) / ((1.0 - 2.0 * p) * u + p) ** 2
    return float(out) if out.ndim == 0 else out


# --------------------------------------------------------------------------
# functional equations


@dataclass
class FunctionalEquationReport:
    u: float
    p: float
    checked: int
    max_error: dict[str, float]
    violations: list[tuple[tuple[int, ...], str, float]]
    tol: float = IDENTITY_TOL

    @property
    def ok(self) -> bool:
        return not self.violations


def _as_code_batches(u, p, points) -> Iterator[tuple[np.ndarray, np.ndarray, np.ndarray]]:
    if isinstance(points, DenseSet):
        if (points.u, points.p) != (u, p):
            raise ValueError("points were enumerated for different (u, p)")
        chunk = 1 << 20
        for start in range(0, len(points), chunk):
            stop = start + chunk
            yield points.codes(start, stop), points.y[start:stop], points.g[start:stop]
        return
    pts = list(points)
    if not pts:
        return
    width = max(pt.m for pt in pts)
    codes = np.full((len(pts), width), -1, dtype=np.int16)
    for i, pt in enumerate(pts):
        codes[i, : pt.m] = pt.code
    yield codes, np.array([pt.y for pt in pts]), np.array([pt.g for pt in pts])


def verify_functional_equations(
    u: float, p: float, points: DenseSet | Iterable[DPoint], tol: float = IDENTITY_TOL
) -> FunctionalEquationReport:
    """Check ``G(u z) = p G(z)`` and ``G(u + (1-u) z) = p + (1-p) G(z)`` on D.

    For every code the scaled code (all exponents + 1) and the shifted code
    (a leading exponent 1 prepended) are evaluated from the closed-form sums
    and compared with the right-hand sides.  The stored coordinates are
    also compared with the closed-form sums of their own codes.  The point
    ``z = 1`` (code ``(0,)``) is shifted onto itself and checked through
    ``G(1) = 1``.
    """
    names = ("formula_y", "formula_g", "scaling_y", "scaling_g", "shifting_y", "shifting_g")
    max_error = dict.fromkeys(names, 0.0)
    violations: list[tuple[tuple[int, ...], str, float]] = []
    checked = 0
    for codes, y, g in _as_code_batches(u, p, points):
        checked += codes.shape[0]
        yz = _code_sums(u, codes)
        gz = _code_sums(p, codes)
        scaled = np.where(codes >= 0, codes + 1, codes)
        is_one = codes[:, 0] == 0  # only the one-term code (0,) can start at 0
        shifted = np.concatenate([np.ones((codes.shape[0], 1), dtype=codes.dtype), codes], axis=1)
        ys = np.where(is_one, 1.0, _code_sums(u, shifted))
        gs = np.where(is_one, 1.0, _code_sums(p, shifted))
        errors = {
            "formula_y": np.abs(yz - y),
            "formula_g": np.abs(gz - g),
            "scaling_y": np.abs(_code_sums(u, scaled) - u * yz),
            "scaling_g": np.abs(_code_sums(p, scaled) - p * gz),
            "shifting_y": np.abs(ys - (u + (1.0 - u) * yz)),
            "shifting_g": np.abs(gs - (p + (1.0 - p) * gz)),
        }
        for name, err in errors.items():
            max_error[name] = max(max_error[name], float(err.max(initial=0.0)))
            for i in np.flatnonzero(err > tol)[:20]:
                row = codes[i]
                violations.append((tuple(int(c) for c in row[row >= 0]), name, float(err[i])))
    return FunctionalEquationReport(u, p, checked, max_error, violations, tol)


# --------------------------------------------------------------------------
# joint law of the random CDF


def joint_moment(
    u_list: Sequence[float],
    p: float,
    samples: int,
    rng: np.random.Generator,
    epsilon: float = 1e-10,
) -> Estimate:
    """Monte Carlo ``E[prod_n X(u_n)]`` for the stationary random CDF ``X``.

    By exchangeability this equals the stationary probability that sites
    ``1..N`` have fitness below ``u_1..u_N`` respectively.
    """
    us = [check_probability("u", v) for v in u_list]
    if not us:
        raise ValueError("u_list must be non-empty")
    draws = sample_random_cdf(us, p, epsilon, rng, samples)
    return mean_stderr(draws.prod(axis=1))
