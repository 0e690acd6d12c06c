"""Frame eigenvalues, PNR and indicator filters, and the RB mean estimator."""

from __future__ import annotations

import csv
import logging
import warnings
from collections import defaultdict
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from fractions import Fraction
from math import comb
from typing import IO, Iterable, Sequence

import numpy as np

from . import cg, linopt, repcore
from .errors import ArgumentError, DataError

log = logging.getLogger(__name__)

ZERO_COEFF = 1e-12


def frame_eigenvalue_pnr(k: int, m: int) -> Fraction:
    """(m-1) / ((2k+m-1) C(k+m-2, k)), exact."""
    if m < 2 or k < 0:
        raise ArgumentError(f"invalid irrep label k={k}, m={m}")
    return Fraction(m - 1, (2 * k + m - 1) * comb(k + m - 2, k))


def coupling_rows(n: int, m: int) -> np.ndarray:
    """Product-space row index of |N> x |dual N> for every sector state N."""
    sym = repcore.pattern_index(repcore.symmetric_shape(n, m))
    dual = repcore.pattern_index(repcore.dual_symmetric_shape(n, m))
    d2 = len(dual)
    rows = []
    for state in repcore.sector_states(n, m):
        N = repcore.fock_to_gt(state)
        rows.append(sym[N] * d2 + dual[repcore.dual_pattern(N)])
    return np.array(rows, dtype=np.int64)


def sector_phases(n: int, m: int) -> np.ndarray:
    return np.array([repcore.phase_sign(repcore.fock_to_gt(s)) for s in repcore.sector_states(n, m)], dtype=float)


def overlap_vectors(table: cg.CGTable, n: int, m: int) -> tuple[np.ndarray, list[int]]:
    """C_{N,dual N}^M for every sector state N and every zero-weight M.

    Returns an array of shape (dim_sector, #zero-weight patterns) and the
    target indices of those zero-weight patterns.
    """
    irt = table.irt
    zero = [i for i in range(irt.dim) if not irt.weights[i].any()]
    sub = table.matrix[coupling_rows(n, m), :][:, zero].toarray()
    sub[np.abs(sub) < ZERO_COEFF] = 0.0
    return sub, zero


def frame_eigenvalue_from_table(table: cg.CGTable, n: int, m: int) -> float:
    """(1/d) sum_N sum_M (C_{N,dual N}^M)^2 straight from a CG table."""
    vecs, _ = overlap_vectors(table, n, m)
    return float((vecs**2).sum() / table.irt.dim)


@dataclass
class FilterContext:
    """Everything about (n, m, input) that does not depend on the data."""

    n: int
    m: int
    input: tuple[int, ...]
    ks: tuple[int, ...]
    frame: dict[int, Fraction]
    input_overlap: dict[int, np.ndarray]
    sector_vector: dict[int, np.ndarray] = field(repr=False)

    @classmethod
    def build(cls, n: int, m: int, input: Sequence[int] | None = None, ks: Iterable[int] | None = None,
              cache: str | None = None) -> "FilterContext":
        if input is None:
            if n > m:
                raise ArgumentError("default collision-free input needs n <= m")
            input = (1,) * n + (0,) * (m - n)
        input = repcore.check_fock(input, n, m)
        ks = tuple(range(n + 1)) if ks is None else tuple(ks)
        if any(k < 0 or k > n for k in ks):
            raise ArgumentError(f"irreps must lie in 0..{n}")
        states = repcore.sector_states(n, m)
        i0 = states.index(input)
        phases = sector_phases(n, m)
        frame, overlap, vectors = {}, {}, {}
        for k in ks:
            table = cg.fock_table(n, m, k, cache)
            vecs, _ = overlap_vectors(table, n, m)
            s = frame_eigenvalue_pnr(k, m)
            frame[k] = s
            overlap[k] = vecs[i0]
            vectors[k] = phases[i0] * phases * (vecs @ vecs[i0]) / float(s)
        return cls(n, m, input, ks, frame, overlap, vectors)

    def first_moment(self, k: int) -> float:
        return float(self.input_overlap[k] @ self.input_overlap[k])

    def check_k(self, k: int) -> None:
        if k not in self.sector_vector:
            raise ArgumentError(f"context for n={self.n}, m={self.m} has no irrep k={k}")


def filter_pnr(ctx: FilterContext, k: int, outcome: Sequence[int], g: np.ndarray) -> float:
    """f_k(outcome, g) for a single record; zero off the n-particle sector."""
    ctx.check_k(k)
    outcome = repcore.check_fock(outcome, m=ctx.m)
    if sum(outcome) != ctx.n:
        return 0.0
    probs = linopt.transition_rows(np.asarray(g, dtype=complex), outcome)
    return float(ctx.sector_vector[k] @ probs)


def filter_indicator(outcome: Sequence[int], n: int) -> int:
    return int(sum(outcome) == n)


def filter_values(ctx: FilterContext, k: int, records: Sequence[linopt.ExperimentRecord], threads: int = 1) -> np.ndarray:
    """Vectorized filter_pnr over records; records with lost particles give 0."""
    ctx.check_k(k)
    return filter_values_all(ctx, records, threads)[k]


def filter_values_all(ctx: FilterContext, records: Sequence[linopt.ExperimentRecord], threads: int = 1,
                      chunk: int = 4096) -> dict[int, np.ndarray]:
    """Filter values for every irrep in the context (one permanent pass)."""
    out = {k: np.zeros(len(records)) for k in ctx.ks}
    groups: dict[tuple[int, ...], list[int]] = defaultdict(list)
    for i, rec in enumerate(records):
        if sum(rec.outcome) == ctx.n:
            groups[tuple(rec.outcome)].append(i)
    jobs = []
    for outcome, idx in groups.items():
        for start in range(0, len(idx), chunk):
            jobs.append((outcome, idx[start : start + chunk]))

    def run(job):
        outcome, idx = job
        stack = np.stack([records[i].product for i in idx])
        return idx, linopt.transition_rows(stack, outcome)

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            results = list(pool.map(run, jobs))
    else:
        results = [run(job) for job in jobs]
    for idx, probs in results:
        for k in ctx.ks:
            out[k][idx] = probs @ ctx.sector_vector[k]
    return out


# ---------------------------------------------------------------------------
# estimator

@dataclass
class RBSignal:
    filter_id: str
    lengths: list[int]
    estimates: list[float]
    stderr: list[float]
    counts: list[int]
    missing: list[int] = field(default_factory=list)

    def write_csv(self, fh: IO[str]) -> None:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["seq_len", "estimate", "stderr", "count_used", "filter_id"])
        for l, e, s, c in zip(self.lengths, self.estimates, self.stderr, self.counts):
            writer.writerow([l, format(e, ".17g"), format(s, ".17g"), c, self.filter_id])

    @classmethod
    def read_csv(cls, fh: IO[str]) -> "RBSignal":
        reader = csv.DictReader(fh)
        need = {"seq_len", "estimate", "stderr", "count_used", "filter_id"}
        if reader.fieldnames is None or not need <= set(reader.fieldnames):
            raise DataError(f"signal CSV needs columns {sorted(need)}")
        rows = list(reader)
        ids = {r["filter_id"] for r in rows}
        if len(ids) > 1:
            raise DataError(f"signal CSV mixes filters {sorted(ids)}")
        try:
            return cls(
                ids.pop() if ids else "",
                [int(r["seq_len"]) for r in rows],
                [float(r["estimate"]) for r in rows],
                [float(r["stderr"]) for r in rows],
                [int(r["count_used"]) for r in rows],
            )
        except ValueError as exc:
            raise DataError(f"malformed signal CSV: {exc}") from exc


def records_sector(records: Sequence[linopt.ExperimentRecord]) -> tuple[int, int, tuple[int, ...]]:
    """(n, m, input) shared by every record, or a DataError."""
    if not records:
        raise DataError("no records")
    inputs = {rec.input for rec in records}
    if None in inputs:
        raise DataError("records do not carry their input state")
    if len(inputs) != 1:
        raise DataError(f"records mix input states {sorted(inputs)}")
    inp = inputs.pop()
    for rec in records:
        if len(rec.outcome) != len(inp) or rec.product.shape != (len(inp), len(inp)):
            raise DataError("records mix mode numbers")
    return sum(inp), len(inp), inp


def _mean_and_error(values: np.ndarray) -> tuple[float, float]:
    mean = float(np.mean(values))
    err = float(np.std(values, ddof=1) / np.sqrt(len(values))) if len(values) > 1 else 0.0
    return mean, err


def estimate_signal(records: Sequence[linopt.ExperimentRecord], k: int | None = None, post_select: bool = True,
                    ctx: FilterContext | None = None, threads: int = 1, cache: str | None = None) -> RBSignal:
    """Per-length mean of the filter values.

    ``k=None`` selects the particle-number indicator.  For irrep filters,
    post-selection keeps only records with all particles detected and divides
    by their number; without it the denominator is the full shot count.
    """
    n, m, inp = records_sector(records)
    if k is None:
        values = np.array([filter_indicator(rec.outcome, n) for rec in records], dtype=float)
        keep = np.ones(len(records), dtype=bool)
        filter_id = "indicator"
    else:
        if ctx is None:
            ctx = FilterContext.build(n, m, inp, [k], cache=cache)
        elif (ctx.n, ctx.m, ctx.input) != (n, m, inp):
            raise DataError("filter context does not match the record sector")
        values = filter_values(ctx, k, records, threads)
        survived = np.array([sum(rec.outcome) == n for rec in records])
        keep = survived if post_select else np.ones(len(records), dtype=bool)
        filter_id = f"irrep{k}" + ("" if post_select else "-all")
    by_len: dict[int, list[int]] = defaultdict(list)
    for i, rec in enumerate(records):
        by_len[rec.seq_len].append(i)
    signal = RBSignal(filter_id, [], [], [], [])
    for l in sorted(by_len):
        idx = np.array(by_len[l])
        idx = idx[keep[idx]]
        if len(idx) == 0:
            warnings.warn(f"no usable records at length {l}; reported as missing")
            signal.missing.append(l)
            continue
        mean, err = _mean_and_error(values[idx])
        signal.lengths.append(l)
        signal.estimates.append(mean)
        signal.stderr.append(err)
        signal.counts.append(len(idx))
    return signal
