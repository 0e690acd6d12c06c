"""Gelfand-Tsetlin patterns, weights, duals and the irrep bookkeeping of SU(m).

Patterns are stored bottom row first: ``rows[j - 1]`` is row ``j`` and has
``j`` entries, so ``rows[-1]`` is the shape (top row).  Entry ``M_{i,j}`` is
``rows[j - 1][i - 1]``.
"""

from __future__ import annotations

from dataclasses import dataclass
from fractions import Fraction
from functools import lru_cache
from itertools import product as _cartesian
from math import comb
from typing import Iterator, Sequence

from .errors import ArgumentError, ShapeError


@dataclass(frozen=True, order=True)
class IrrepLabel:
    """The irrep lambda_k of SU(m), with Young diagram (2k, k, ..., k, 0)."""

    k: int
    m: int

    def __post_init__(self) -> None:
        if self.k < 0 or self.m < 2:
            raise ArgumentError(f"invalid irrep label k={self.k}, m={self.m}")

    @property
    def shape(self) -> tuple[int, ...]:
        return lambda_shape(self.k, self.m)


@dataclass(frozen=True, order=True)
class GTPattern:
    """A Gelfand-Tsetlin pattern, rows stored from the bottom (length 1) up."""

    rows: tuple[tuple[int, ...], ...]

    @property
    def m(self) -> int:
        return len(self.rows)

    @property
    def shape(self) -> tuple[int, ...]:
        return self.rows[-1]

    def entry(self, i: int, j: int) -> int:
        """M_{i,j} with 1-based column i and row j."""
        return self.rows[j - 1][i - 1]

    def row_sum(self, j: int) -> int:
        if j <= 0 or j > self.m:
            return 0
        return sum(self.rows[j - 1])

    def flat(self) -> tuple[int, ...]:
        return tuple(x for row in self.rows for x in row)

    def is_valid(self) -> bool:
        for j in range(1, self.m):
            lower, upper = self.rows[j - 1], self.rows[j]
            for i in range(j):
                if not (upper[i] >= lower[i] >= upper[i + 1]):
                    return False
        return True

    def __str__(self) -> str:
        return " | ".join(" ".join(str(x) for x in row) for row in reversed(self.rows))


def check_shape(shape: Sequence[int]) -> tuple[int, ...]:
    shape = tuple(int(x) for x in shape)
    if len(shape) < 1:
        raise ShapeError("empty shape")
    if any(a < b for a, b in zip(shape, shape[1:])):
        raise ShapeError(f"shape {shape} is not weakly decreasing")
    if shape[-1] != 0:
        raise ShapeError(f"shape {shape} must end in 0")
    return shape


def lambda_shape(k: int, m: int) -> tuple[int, ...]:
    if m < 2 or k < 0:
        raise ArgumentError(f"invalid irrep label k={k}, m={m}")
    return (2 * k,) + (k,) * (m - 2) + (0,)


def symmetric_shape(n: int, m: int) -> tuple[int, ...]:
    """Shape of the completely symmetric irrep carried by the n-particle sector."""
    return (n,) + (0,) * (m - 1)


def dual_symmetric_shape(n: int, m: int) -> tuple[int, ...]:
    """Shape (n, ..., n, 0) of the conjugate of the symmetric irrep."""
    return (n,) * (m - 1) + (0,)


def _lower_rows(upper: tuple[int, ...]) -> Iterator[tuple[int, ...]]:
    ranges = [range(upper[i + 1], upper[i] + 1) for i in range(len(upper) - 1)]
    for row in _cartesian(*ranges):
        yield tuple(row)


@lru_cache(maxsize=256)
def _enumerate(shape: tuple[int, ...]) -> tuple[GTPattern, ...]:
    partial = [(shape,)]
    for _ in range(len(shape) - 1):
        partial = [(low,) + rows for rows in partial for low in _lower_rows(rows[0])]
    patterns = [GTPattern(rows) for rows in partial]
    patterns.sort(key=GTPattern.flat)
    return tuple(patterns)


def enumerate_patterns(shape: Sequence[int]) -> list[GTPattern]:
    """All GT patterns with the given top row, in canonical order.

    Canonical order is lexicographic on the flattened entries with the
    bottom row most significant.
    """
    return list(_enumerate(check_shape(shape)))


@lru_cache(maxsize=256)
def pattern_index(shape: tuple[int, ...]) -> dict[GTPattern, int]:
    return {p: i for i, p in enumerate(_enumerate(check_shape(shape)))}


def dim_weyl(shape: Sequence[int]) -> int:
    shape = check_shape(shape)
    m = len(shape)
    value = Fraction(1)
    for i in range(m):
        for j in range(i + 1, m):
            value *= Fraction(j - i + shape[i] - shape[j], j - i)
    assert value.denominator == 1
    return int(value)


def dim_lambda(k: int, m: int) -> int:
    if m < 2 or k < 0:
        raise ArgumentError(f"dim_lambda needs m >= 2 and k >= 0, got k={k}, m={m}")
    c = comb(k + m - 2, k)
    num = (2 * k + m - 1) * c * c
    assert num % (m - 1) == 0
    return num // (m - 1)


def dim_sector(n: int, m: int) -> int:
    if n < 0 or m < 1:
        raise ArgumentError(f"invalid sector n={n}, m={m}")
    return comb(n + m - 1, n)


def weight(M: GTPattern) -> tuple[int, ...]:
    """w_j = 2 S_j - S_{j-1} - S_{j+1}, j = 1..m-1, with S_j the sum of row j."""
    return tuple(2 * M.row_sum(j) - M.row_sum(j - 1) - M.row_sum(j + 1) for j in range(1, M.m))


def tableau_weight(M: GTPattern) -> tuple[int, ...]:
    """Occupation of each label in the associated semistandard tableau."""
    return tuple(M.row_sum(j) - M.row_sum(j - 1) for j in range(1, M.m + 1))


def highest_weight_pattern(shape: Sequence[int]) -> GTPattern:
    shape = check_shape(shape)
    return GTPattern(tuple(shape[:j] for j in range(1, len(shape) + 1)))


def dual_pattern(M: GTPattern) -> GTPattern:
    """Dual pattern with entries M_{1,m} - M_{l-i+1,l}."""
    top = M.entry(1, M.m)
    return GTPattern(tuple(tuple(top - M.entry(l - i + 1, l) for i in range(1, l + 1)) for l in range(1, M.m + 1)))


def _bottom_sum(M: GTPattern, k: int) -> int:
    return sum(M.row_sum(j) for j in range(1, k + 1))


def dual_phase(M: GTPattern) -> int:
    """Signed phase exponent; only its parity is ever used."""
    hw = highest_weight_pattern(M.shape)
    return _bottom_sum(M, M.m - 1) - _bottom_sum(hw, M.m - 1)


def phase_sign(M: GTPattern) -> int:
    return -1 if dual_phase(M) % 2 else 1


# Fock states ---------------------------------------------------------------

def check_fock(v: Sequence[int], n: int | None = None, m: int | None = None) -> tuple[int, ...]:
    v = tuple(int(x) for x in v)
    if any(x < 0 for x in v):
        raise ArgumentError(f"negative occupation in {v}")
    if m is not None and len(v) != m:
        raise ArgumentError(f"Fock vector {v} has {len(v)} modes, expected {m}")
    if n is not None and sum(v) != n:
        raise ArgumentError(f"Fock vector {v} has {sum(v)} particles, expected {n}")
    return v


def fock_to_gt(v: Sequence[int]) -> GTPattern:
    v = check_fock(v)
    rows = []
    running = 0
    for j, nj in enumerate(v, start=1):
        running += nj
        rows.append((running,) + (0,) * (j - 1))
    return GTPattern(tuple(rows))


def gt_to_fock(M: GTPattern) -> tuple[int, ...]:
    if any(x != 0 for row in M.rows for x in row[1:]):
        raise ArgumentError(f"pattern {M} does not belong to a symmetric irrep")
    leading = [row[0] for row in M.rows]
    return tuple(b - a for a, b in zip([0] + leading[:-1], leading))


@lru_cache(maxsize=64)
def _sector(n: int, m: int) -> tuple[tuple[int, ...], ...]:
    return tuple(gt_to_fock(p) for p in _enumerate(symmetric_shape(n, m)))


def sector_states(n: int, m: int) -> list[tuple[int, ...]]:
    """Fock basis of the (n, m) sector in the canonical pattern order."""
    if n < 0 or m < 1:
        raise ArgumentError(f"invalid sector n={n}, m={m}")
    if m == 1:
        return [(n,)]
    return list(_sector(n, m))


# decompositions --------------------------------------------------------------

def decompose_omega(n: int, m: int) -> list[IrrepLabel]:
    """The irreps lambda_0..lambda_n of the adjoint action on the n-particle sector."""
    if n < 0 or m < 2:
        raise ArgumentError(f"invalid sector n={n}, m={m}")
    return [IrrepLabel(k, m) for k in range(n + 1)]


def tensor_square_multiplicity(k: int, l: int, m: int) -> int:
    """Multiplicity of lambda_l inside lambda_k x lambda_k."""
    if m < 2 or k < 0 or l < 0:
        raise ArgumentError(f"invalid arguments k={k}, l={l}, m={m}")
    if l > 2 * k:
        return 0
    if m == 2:
        return 1
    return l + 1 if l <= k else 2 * k - l + 1


def zero_weight_multiplicity(k: int, m: int) -> int:
    if m < 2 or k < 0:
        raise ArgumentError(f"invalid irrep label k={k}, m={m}")
    return comb(k + m - 2, k)


def zero_weight_patterns(shape: Sequence[int]) -> list[GTPattern]:
    return [p for p in enumerate_patterns(shape) if not any(weight(p))]
