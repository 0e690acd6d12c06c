from fractions import Fraction
from itertools import product
from math import comb

import pytest
from hypothesis import given, settings, strategies as st

from passive_rb import repcore
from passive_rb.errors import ArgumentError, ShapeError
from passive_rb.repcore import GTPattern


def brute_patterns(shape):
    """Every triangular array with the given top row that interlaces, found by brute force."""
    m = len(shape)
    top = max(shape)
    cells = [(j, i) for j in range(1, m) for i in range(j)]
    found = []
    for values in product(range(top + 1), repeat=len(cells)):
        rows = [list(values[sum(range(1, j)) : sum(range(1, j)) + j]) for j in range(1, m)] + [list(shape)]
        ok = all(rows[j][i] >= rows[j - 1][i] >= rows[j][i + 1] for j in range(1, m) for i in range(j))
        if ok:
            found.append(GTPattern(tuple(tuple(r) for r in rows)))
    return found


def hook_content_dim(shape, m):
    """Stanley's hook-content formula, an independent route to the Weyl dimension."""
    value = Fraction(1)
    cols = [sum(1 for r in shape if r > c) for c in range(shape[0])] if shape[0] else []
    for i, length in enumerate(shape):
        for j in range(length):
            hook = (length - j - 1) + (cols[j] - i - 1) + 1
            value *= Fraction(m + j - i, hook)
    return int(value)


def test_enumeration_small_cases():
    assert len(repcore.enumerate_patterns((1, 0))) == 2
    assert len(repcore.enumerate_patterns((0, 0))) == 1
    assert len(repcore.enumerate_patterns((2, 1, 0))) == 8


@pytest.mark.parametrize("shape", [(2, 1, 0), (3, 1, 0), (2, 2, 1, 0), (3, 0, 0, 0), (4, 2, 2, 0)])
def test_enumeration_matches_brute_force(shape):
    ours = repcore.enumerate_patterns(shape)
    assert sorted(ours, key=GTPattern.flat) == sorted(brute_patterns(shape), key=GTPattern.flat)
    assert len(ours) == repcore.dim_weyl(shape)
    assert all(p.is_valid() for p in ours)


def test_enumeration_order_is_lexicographic_bottom_first():
    pats = repcore.enumerate_patterns((4, 2, 1, 0))
    flats = [p.flat() for p in pats]
    assert flats == sorted(flats)
    assert len(set(flats)) == len(flats)


def test_bad_shape_rejected():
    with pytest.raises(ShapeError):
        repcore.enumerate_patterns((1, 2, 0))
    with pytest.raises(ShapeError):
        repcore.enumerate_patterns((2, 1))


@pytest.mark.parametrize("shape,dim", [((5, 0), 6), ((2, 1, 0), 8), ((4, 2, 0), 27), ((6, 3, 0), 64), ((2, 1, 1, 0), 15)])
def test_dim_weyl_values(shape, dim):
    assert repcore.dim_weyl(shape) == dim


@settings(max_examples=60, deadline=None)
@given(st.integers(2, 6), st.lists(st.integers(0, 4), min_size=1, max_size=5))
def test_dim_weyl_agrees_with_hook_content(m, parts):
    parts = sorted(parts, reverse=True)[: m - 1]
    shape = tuple(parts) + (0,) * (m - len(parts))
    assert repcore.dim_weyl(shape) == hook_content_dim(shape, m)


def test_dim_lambda_values():
    assert repcore.dim_lambda(0, 5) == 1
    assert repcore.dim_lambda(1, 3) == 8
    assert repcore.dim_lambda(1, 2) == 3
    with pytest.raises(ArgumentError):
        repcore.dim_lambda(1, 1)


@pytest.mark.parametrize("m", range(2, 7))
def test_dim_lambda_is_weyl_dimension(m):
    for k in range(7):
        assert repcore.dim_lambda(k, m) == repcore.dim_weyl(repcore.lambda_shape(k, m))


def test_dim_sector():
    assert repcore.dim_sector(2, 2) == 3
    assert repcore.dim_sector(4, 4) == 35
    assert repcore.dim_sector(0, 7) == 1


def test_weight_of_zero_and_fock_patterns():
    zero = GTPattern(((0,), (0, 0), (0, 0, 0)))
    assert repcore.weight(zero) == (0, 0)
    for v in repcore.sector_states(3, 4):
        M = repcore.fock_to_gt(v)
        wt = repcore.tableau_weight(M)
        assert wt == v
        assert repcore.weight(M) == tuple(wt[j] - wt[j + 1] for j in range(3))


@pytest.mark.parametrize("n,m", [(n, m) for m in range(2, 5) for n in range(0, 5)])
def test_dual_weight_cancels(n, m):
    for M in repcore.enumerate_patterns(repcore.symmetric_shape(n, m)):
        D = repcore.dual_pattern(M)
        assert D.is_valid()
        assert D.shape == repcore.dual_symmetric_shape(n, m)
        assert all(a + b == 0 for a, b in zip(repcore.weight(M), repcore.weight(D)))


def test_dual_of_dual_is_identity_for_su_m_shapes():
    for M in repcore.enumerate_patterns((3, 1, 0)):
        assert repcore.dual_pattern(repcore.dual_pattern(M)) == M
    zero = GTPattern(((0,), (0, 0)))
    assert repcore.dual_pattern(zero) == zero


def test_fock_gt_round_trip():
    M = repcore.fock_to_gt((3, 2, 1))
    assert [M.entry(1, j) for j in (1, 2, 3)] == [3, 5, 6]
    assert repcore.fock_to_gt((0, 0, 0)) == GTPattern(((0,), (0, 0), (0, 0, 0)))
    for v in repcore.sector_states(3, 3):
        assert repcore.gt_to_fock(repcore.fock_to_gt(v)) == v
    with pytest.raises(ArgumentError):
        repcore.gt_to_fock(GTPattern(((1,), (1, 0), (2, 1, 0))))


def test_sector_states_cover_the_sector():
    states = repcore.sector_states(3, 4)
    assert len(states) == repcore.dim_sector(3, 4)
    assert set(states) == {v for v in product(range(4), repeat=4) if sum(v) == 3}


def test_dual_phase():
    for shape in [(2, 1, 0), (4, 2, 2, 0)]:
        assert repcore.dual_phase(repcore.highest_weight_pattern(shape)) == 0
    # SU(2): |j, mz> has phase exponent -(j - mz)
    n = 5
    for v in repcore.sector_states(n, 2):
        mz = v[0] - n / 2
        assert repcore.dual_phase(repcore.fock_to_gt(v)) == -round(n / 2 - mz)


def test_decompose_omega():
    labels = repcore.decompose_omega(3, 3)
    assert [lab.shape for lab in labels] == [(0, 0, 0), (2, 1, 0), (4, 2, 0), (6, 3, 0)]
    assert [lab.k for lab in repcore.decompose_omega(0, 4)] == [0]


def test_tensor_square_multiplicity_values():
    assert repcore.tensor_square_multiplicity(2, 1, 4) == 2
    assert repcore.tensor_square_multiplicity(1, 3, 3) == 0
    assert repcore.tensor_square_multiplicity(2, 1, 2) == 1
    assert repcore.tensor_square_multiplicity(2, 3, 5) == 2


@pytest.mark.parametrize("m", range(2, 6))
def test_zero_weight_multiplicity_brute_force(m):
    for k in range(5):
        count = sum(1 for p in repcore.enumerate_patterns(repcore.lambda_shape(k, m)) if not any(repcore.weight(p)))
        assert repcore.zero_weight_multiplicity(k, m) == count == comb(k + m - 2, k)


def test_irrep_label_validation():
    assert repcore.IrrepLabel(2, 3).shape == (4, 2, 0)
    with pytest.raises(ArgumentError):
        repcore.IrrepLabel(-1, 3)
