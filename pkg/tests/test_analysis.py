import math
from fractions import Fraction

import numpy as np
import pytest

from passive_rb import analysis, linopt, repcore
from passive_rb import filter as filt
from passive_rb.errors import ArgumentError, FitError
from oracles import su2_second_moment


def signal(lengths, values, stderr=None):
    stderr = [0.0] * len(values) if stderr is None else stderr
    return filt.RBSignal("test", list(lengths), list(values), list(stderr), [1] * len(values))


@pytest.mark.parametrize("A", [0.1, -0.1, 1.0, -1.0])
@pytest.mark.parametrize("r", [0.5, 0.9, 0.99])
def test_fit_recovers_exact_decay(A, r):
    ls = np.arange(1, 11)
    res = analysis.fit_exponential(signal(ls, A * r**ls))
    assert abs(res.A - A) < 1e-12
    assert abs(res.r - r) < 1e-12
    assert not res.at_bound


def test_fit_weighted_example():
    ls = np.arange(1, 11)
    res = analysis.fit_exponential(signal(ls, 0.7 * 0.9**ls, [0.01] * 10))
    assert res.A == pytest.approx(0.7, abs=1e-12) and res.r == pytest.approx(0.9, abs=1e-12)


def test_fit_constant_and_growing_signals():
    ls = np.arange(1, 6)
    res = analysis.fit_exponential(signal(ls, [0.4] * 5, [0.01] * 5))
    assert res.r == pytest.approx(1.0, abs=1e-9)
    grow = analysis.fit_exponential(signal(ls, 0.4 * 1.01**ls, [0.01] * 5))
    assert grow.at_bound and grow.r == 1.0
    assert grow.A == pytest.approx(np.mean(0.4 * 1.01**ls))


def test_fit_needs_two_lengths():
    with pytest.raises(FitError):
        analysis.fit_exponential(signal([3], [0.5]))
    with pytest.raises(FitError):
        analysis.fit_exponential(signal([1, 2], [0.0, 0.0]))


def test_fit_is_deterministic():
    rng = np.random.default_rng(0)
    ls = np.arange(1, 9)
    y = 0.8 * 0.93**ls + rng.normal(0, 0.01, len(ls))
    assert analysis.fit_exponential(signal(ls, y, [0.01] * 8)) == analysis.fit_exponential(signal(ls, y, [0.01] * 8))


def test_transmittivity_from_rate():
    assert analysis.transmittivity_from_rate(0.95**8, 4) == pytest.approx(0.95)


def test_rb_fidelity():
    n, m = 3, 4
    F, covered = analysis.rb_fidelity({k: 1.0 for k in range(n + 1)}, n, m)
    assert F == pytest.approx(1.0) and covered == pytest.approx(1.0)
    F, covered = analysis.rb_fidelity({2: 0.9}, n, m)
    assert F == pytest.approx(repcore.dim_lambda(2, m) * 0.9 / repcore.dim_sector(n, m) ** 2)
    _, covered = analysis.rb_fidelity({5: 1.0, 4: 1.0, 3: 1.0}, 5, 10)
    assert covered == pytest.approx(0.999245, abs=1e-6)
    with pytest.raises(ArgumentError):
        analysis.rb_fidelity({4: 1.0}, 3, 4)


def test_combined_weight():
    assert analysis.combined_weight(4, 6, 5) == 1.0
    assert analysis.combined_weight(5, 10, 3) == pytest.approx(0.999245, abs=1e-6)
    for m in range(2, 7):
        for n in range(1, m + 1):
            dim2 = repcore.dim_sector(n, m) ** 2
            for u in range(1, n + 2):
                direct = Fraction(sum(repcore.dim_lambda(n - i, m) for i in range(u)), dim2)
                assert analysis.combined_weight_exact(n, m, u) == direct
    with pytest.raises(ArgumentError):
        analysis.combined_weight(3, 3, 0)


def test_sequence_length_bound():
    assert analysis.min_sequence_length(0.2, math.exp(-2), 0, 3) == 5
    assert analysis.d_over_s(1, 2) == 9
    assert analysis.d_over_s(0, 5) == 1
    lengths = [analysis.min_sequence_length(d, 0.01, 2, 4) for d in (0.05, 0.1, 0.15, 0.2)]
    assert lengths == sorted(lengths) and lengths[0] < lengths[-1]
    with pytest.raises(ArgumentError):
        analysis.min_sequence_length(0.3, 0.1, 1, 3)


def test_sample_complexity():
    assert analysis.sample_complexity(0.0, 0.1, 0.05) == 0
    assert analysis.sample_complexity(1.0, 0.1, 0.05) == 2000
    assert analysis.sample_complexity(1.0, 0.2, 0.05) < analysis.sample_complexity(1.0, 0.1, 0.05)
    assert analysis.sample_complexity(1.0, 0.1, 0.1) < analysis.sample_complexity(1.0, 0.1, 0.05)
    with pytest.raises(ArgumentError):
        analysis.sample_complexity(-1, 0.1, 0.1)


def test_first_moment_values():
    assert analysis.first_moment(1, 1, 2, (1, 0)) == pytest.approx(0.5)
    assert analysis.first_moment(1, 3, 3, (1, 1, 1)) == 0.0


@pytest.mark.parametrize("n,m", [(n, m) for m in range(2, 5) for n in range(1, m + 1)])
def test_first_moments_sum_to_purity(n, m):
    for inp in repcore.sector_states(n, m)[:: max(1, repcore.dim_sector(n, m) // 4)]:
        total = sum(analysis.first_moment(k, n, m, inp) for k in range(n + 1))
        assert abs(total - 1) < 1e-10


def test_second_moment_su2_closed_form():
    for n in (1, 2, 3):
        for inp in [(a, n - a) for a in range(n + 1)]:
            for k in range(n + 1):
                assert abs(analysis.second_moment(k, n, 2, inp) - su2_second_moment(k, n, inp)) < 1e-8


@pytest.mark.parametrize("n,m", [(1, 2), (2, 2), (2, 3), (3, 3)])
def test_second_moment_bounds(n, m):
    inp = (1,) * n + (0,) * (m - n)
    for k in range(n + 1):
        first = analysis.first_moment(k, n, m, inp)
        second = analysis.second_moment(k, n, m, inp)
        assert second >= first**2 - 1e-12
        assert second <= analysis.second_moment_bound(k, m) + 1e-12


def test_second_moment_monte_carlo():
    n = m = 2
    cfg = linopt.SimConfig(n=n, m=m, lengths=(1,), shots=10_000, seed=17)
    recs = linopt.simulate(cfg)
    ctx = filt.FilterContext.build(n, m, (1, 1))
    values = filt.filter_values(ctx, 2, recs) ** 2
    se = values.std(ddof=1) / np.sqrt(len(values))
    assert abs(values.mean() - analysis.second_moment(2, n, m, (1, 1))) < 5 * se


def test_fit_result_to_dict():
    res = analysis.fit_exponential(signal([1, 2, 3], [0.5, 0.25, 0.125]))
    d = res.to_dict()
    assert set(d) == {"A", "r", "residual", "stderr_A", "stderr_r", "iterations", "at_bound"}
