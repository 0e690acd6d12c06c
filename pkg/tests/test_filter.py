import io
import warnings
from fractions import Fraction

import numpy as np
import pytest

from passive_rb import cg, linopt, repcore
from passive_rb import filter as filt
from passive_rb.errors import ArgumentError, DataError
from oracles import casimir_projectors, filter_direct, sector_basis, su2_filter


def test_frame_eigenvalue_values():
    for k in range(6):
        assert filt.frame_eigenvalue_pnr(k, 2) == Fraction(1, 2 * k + 1)
        assert filt.frame_eigenvalue_pnr(0, k + 2) == 1
    assert filt.frame_eigenvalue_pnr(2, 3) == Fraction(1, 9)
    with pytest.raises(ArgumentError):
        filt.frame_eigenvalue_pnr(1, 1)


@pytest.mark.parametrize("n,m", [(n, m) for m in range(2, 4) for n in range(1, m + 1)])
def test_frame_eigenvalue_from_tables(n, m):
    for k in range(n + 1):
        s = filt.frame_eigenvalue_from_table(cg.fock_table(n, m, k), n, m)
        assert abs(s - float(filt.frame_eigenvalue_pnr(k, m))) < 1e-10


def test_trivial_irrep_filter_is_uniform():
    ctx = filt.FilterContext.build(2, 2, (1, 1))
    rng = np.random.default_rng(0)
    for _ in range(5):
        g = linopt.haar_unitary(2, rng)
        for x in repcore.sector_states(2, 2):
            assert filt.filter_pnr(ctx, 0, x, g) == pytest.approx(1 / 3, abs=1e-13)
    assert filt.filter_pnr(ctx, 2, (1, 0), np.eye(2)) == 0.0
    with pytest.raises(ArgumentError):
        filt.filter_pnr(ctx, 3, (1, 1), np.eye(2))


@pytest.mark.parametrize("n,m,inp", [(1, 2, (1, 0)), (2, 2, (1, 1)), (2, 3, (2, 0, 0)), (3, 3, (1, 1, 1)), (2, 3, (0, 1, 1))])
def test_filter_matches_projector_oracle(n, m, inp):
    """Compare with s^-1 <x|tau P(rho) tau^dag|x>, P built from the Casimir, no CG tables involved."""
    states = sector_basis(n, m)
    P = casimir_projectors(n, m, states)
    ctx = filt.FilterContext.build(n, m, inp)
    rng = np.random.default_rng(n * 10 + m)
    for _ in range(3):
        g = linopt.haar_unitary(m, rng)
        for x in states[:6]:
            for k in range(n + 1):
                ref = filter_direct(P[k], float(ctx.frame[k]), g, n, x, inp, states)
                assert abs(filt.filter_pnr(ctx, k, x, g) - ref) < 1e-10


def test_su2_filter_formula():
    rng = np.random.default_rng(4)
    for n in (1, 2, 3):
        for inp in [(a, n - a) for a in range(n + 1)]:
            ctx = filt.FilterContext.build(n, 2, inp)
            for _ in range(10):
                g = linopt.haar_unitary(2, rng)
                for x in repcore.sector_states(n, 2):
                    for J in range(n + 1):
                        assert abs(filt.filter_pnr(ctx, J, x, g) - su2_filter(J, x, g, n, inp)) < 1e-8


def test_sign_convention_invariance():
    n, m, inp = 2, 3, (1, 1, 0)
    states = repcore.sector_states(n, m)
    i0 = states.index(inp)
    phases = filt.sector_phases(n, m)
    for k in range(n + 1):
        vecs, _ = filt.overlap_vectors(cg.fock_table(n, m, k), n, m)
        flips = np.where(np.arange(vecs.shape[1]) % 2, -1.0, 1.0)
        a = phases[i0] * phases * (vecs @ vecs[i0])
        b = phases[i0] * phases * ((vecs * flips) @ (vecs * flips)[i0])
        assert np.array_equal(a, b)


def test_collision_free_input_misses_adjoint():
    for n in (2, 3, 4):
        ctx = filt.FilterContext.build(n, n, None, ks=[1])
        assert np.all(ctx.input_overlap[1] == 0)
        assert np.all(ctx.sector_vector[1] == 0)


def test_indicator():
    assert filt.filter_indicator((1, 1, 0), 2) == 1
    assert filt.filter_indicator((0, 0, 0), 2) == 0
    assert filt.filter_indicator((0, 1, 0), 2) == 0


def _records(outcomes, l=1, inp=(1, 1), g=None):
    g = np.eye(len(inp), dtype=complex) if g is None else g
    return [linopt.ExperimentRecord(l, g, tuple(o), sum(o) == sum(inp), inp) for o in outcomes]


def test_indicator_signal_is_survival_fraction():
    recs = _records([(1, 1), (1, 0), (0, 0), (2, 0)])
    sig = filt.estimate_signal(recs, None)
    assert sig.estimates == [0.5]
    assert sig.counts == [4]
    assert sig.filter_id == "indicator"


def test_identical_records_have_zero_error():
    recs = _records([(1, 1)] * 10)
    sig = filt.estimate_signal(recs, 2)
    assert sig.stderr == [0.0]
    assert sig.estimates[0] == pytest.approx(filt.filter_pnr(filt.FilterContext.build(2, 2, (1, 1)), 2, (1, 1), np.eye(2)))


def test_postselection_denominators():
    recs = _records([(1, 1), (1, 1), (1, 0), (0, 0)])
    ctx = filt.FilterContext.build(2, 2, (1, 1), [0])
    kept = filt.estimate_signal(recs, 0, ctx=ctx)
    full = filt.estimate_signal(recs, 0, post_select=False, ctx=ctx)
    assert kept.counts == [2] and full.counts == [4]
    assert kept.estimates[0] == pytest.approx(1 / 3)
    assert full.estimates[0] == pytest.approx(1 / 6)
    assert full.filter_id == "irrep0-all"


def test_missing_length_is_reported():
    recs = _records([(1, 1), (1, 1)], l=1) + _records([(1, 0), (0, 1)], l=2)
    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always")
        sig = filt.estimate_signal(recs, 2)
    assert sig.lengths == [1] and sig.missing == [2]
    assert any("length 2" in str(w.message) for w in caught)


def test_mixed_streams_rejected():
    recs = _records([(1, 1)]) + _records([(2, 0)], inp=(2, 0))
    with pytest.raises(DataError):
        filt.estimate_signal(recs, 0)
    with pytest.raises(DataError):
        filt.estimate_signal([], 0)


def test_filter_values_batch_matches_single():
    cfg = linopt.SimConfig(n=3, m=3, lengths=(2,), shots=60, seed=5,
                           loss=linopt.LossModel("uniform", sqrt_p=0.9))
    recs = linopt.simulate(cfg)
    ctx = filt.FilterContext.build(3, 3, (1, 1, 1))
    values = filt.filter_values_all(ctx, recs, threads=2, chunk=7)
    for k in ctx.ks:
        single = [filt.filter_pnr(ctx, k, r.outcome, r.product) for r in recs]
        assert np.allclose(values[k], single, atol=1e-13)


def test_noiseless_mean_matches_overlap():
    cfg = linopt.SimConfig(n=2, m=3, lengths=(1, 3), shots=5000, seed=1)
    recs = linopt.simulate(cfg)
    ctx = filt.FilterContext.build(2, 3, (1, 1, 0))
    for k in ctx.ks:
        sig = filt.estimate_signal(recs, k, ctx=ctx)
        for est, err in zip(sig.estimates, sig.stderr):
            assert abs(est - ctx.first_moment(k)) <= 4 * err + 1e-12


def test_signal_csv_round_trip():
    sig = filt.RBSignal("irrep2", [1, 2], [0.5, 1 / 3], [0.01, 0.02], [10, 9])
    buf = io.StringIO()
    sig.write_csv(buf)
    assert buf.getvalue().splitlines()[0] == "seq_len,estimate,stderr,count_used,filter_id"
    back = filt.RBSignal.read_csv(io.StringIO(buf.getvalue()))
    assert back.estimates == sig.estimates and back.lengths == sig.lengths and back.filter_id == "irrep2"
    with pytest.raises(DataError):
        filt.RBSignal.read_csv(io.StringIO("a,b\n1,2\n"))
