"""Balanced heterodyne (coherent-state POVM) variant of the filtered RB protocol.

Conventions: frame eigenvalues follow the Lebesgue measure d^2 alpha on C^m,
as in the closed forms.  Sampled heterodyne records follow the normalized
Husimi density pi^-m <alpha|sigma|alpha>, so ``filter_het`` carries an extra
pi^m; with that choice its mean over sampled records is Tr[rho P_k(rho)],
exactly as in the number-resolving case.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from math import factorial, lgamma, log, pi, sqrt
from typing import IO, Iterable, Iterator, Sequence

import numpy as np
from scipy.special import gammaln

from . import cg, linopt, repcore
from .errors import ArgumentError, ConfigError, DataError, NumericalError
from .filter import RBSignal, overlap_vectors, sector_phases


# ---------------------------------------------------------------------------
# Gaussian moments

def single_mode_moment(conj: int, unconj: int, eta: float) -> float:
    """int d^2 alpha exp(-eta |alpha|^2) conj(alpha)^conj alpha^unconj."""
    if conj != unconj:
        return 0.0
    return pi * factorial(conj) * eta ** (-(conj + 1))


def gaussian_moment(indices: Sequence[Sequence[int]]) -> float:
    """I({n_i}) for K Fock multi-indices; the first K/2 enter conjugated.

    Evaluated mode by mode from the single-mode integral with eta = K/2 and
    divided by sqrt(prod_i n_i!).
    """
    K = len(indices)
    if K % 2:
        raise ArgumentError(f"gaussian_moment needs an even number of indices, got {K}")
    if K == 0:
        return 1.0
    m = len(indices[0])
    if any(len(v) != m for v in indices):
        raise ArgumentError("all multi-indices need the same number of modes")
    eta = K / 2
    conj = np.sum(indices[: K // 2], axis=0)
    unconj = np.sum(indices[K // 2 :], axis=0)
    value = 1.0
    for a, b in zip(conj, unconj):
        value *= single_mode_moment(int(a), int(b), eta)
        if value == 0.0:
            return 0.0
    norm = 1
    for v in indices:
        norm *= linopt.fock_factorial(v)
    return value / sqrt(norm)


def moment_tensor(n: int, m: int, conj_slots: Sequence[int], K: int) -> np.ndarray:
    """I over all sector states in every slot, as a dense K-index array.

    ``conj_slots`` lists the slots whose exponents enter conjugated.
    """
    states = np.array(repcore.sector_states(n, m))
    D = len(states)
    logfact = gammaln(states + 1).sum(axis=1)
    eta = K / 2
    shape = [D] * K

    def along(slot: int, arr: np.ndarray) -> np.ndarray:
        view = [1] * K
        view[slot] = D
        return arr.reshape(view + list(arr.shape[1:]))

    conj = sum(along(s, states) for s in conj_slots)
    unconj = sum(along(s, states) for s in range(K) if s not in conj_slots)
    balanced = np.all(conj == unconj, axis=-1)
    mode_terms = gammaln(conj + 1).sum(axis=-1)
    total_exp = len(conj_slots) * n + m  # sum over modes of (a_i + 1)
    log_norm = 0.5 * sum(along(s, logfact) for s in range(K))
    value = np.exp(m * log(pi) - total_exp * log(eta) + mode_terms - log_norm)
    return np.broadcast_to(np.where(balanced, value, 0.0), shape).copy()


# ---------------------------------------------------------------------------
# operator basis of lambda_k inside B(H_n)

def operator_basis(n: int, m: int, k: int, cache: str | None = None) -> np.ndarray:
    """E_M[a, b] = (-1)^phi(b) C^M_{A, dual B}: the operator carried by |M> of lambda_k."""
    table = cg.fock_table(n, m, k, cache)
    states = repcore.sector_states(n, m)
    sym = repcore.pattern_index(repcore.symmetric_shape(n, m))
    dual = repcore.pattern_index(repcore.dual_symmetric_shape(n, m))
    d2 = len(dual)
    pats = [repcore.fock_to_gt(s) for s in states]
    ia = np.array([sym[p] for p in pats])
    ib = np.array([dual[repcore.dual_pattern(p)] for p in pats])
    rows = (ia[:, None] * d2 + ib[None, :]).ravel()
    dense = table.matrix[rows, :].toarray()  # (D*D, d_k)
    D = len(states)
    phases = sector_phases(n, m)
    E = dense.T.reshape(-1, D, D) * phases[None, None, :]
    return E


def frame_eigenvalue_het(k: int, n: int, m: int, cache: str | None = None) -> float:
    """s_k for the coherent-state POVM, Lebesgue measure on C^m.

    s = d^-1 sum_M sum I(b, c | a, e) E_M[a, b] E_M[c, e] with conjugated
    slots b, c; all four Fock indices run freely.
    """
    if m < 2:
        raise ArgumentError("heterodyne frame eigenvalues need m >= 2")
    E = operator_basis(n, m, k, cache)
    I4 = moment_tensor(n, m, conj_slots=(1, 2), K=4)  # slots (a, b, c, e)
    return float(np.einsum("Mab,abce,Mce->", E, I4, E, optimize=True) / E.shape[0])


def frame_eigenvalue_het_diagonal(k: int, n: int, m: int, cache: str | None = None) -> float:
    """The reduced double sum that keeps only a = b and c = e; kept for comparison."""
    E = operator_basis(n, m, k, cache)
    I4 = moment_tensor(n, m, conj_slots=(1, 2), K=4)
    D = E.shape[1]
    idx = np.arange(D)
    diagE = E[:, idx, idx]
    I2 = I4[idx[:, None], idx[:, None], idx[None, :], idx[None, :]]
    return float(np.einsum("Ma,ac,Mc->", diagE, I2, diagE) / E.shape[0])


# ---------------------------------------------------------------------------
# filter

def coherent_overlaps(alpha: np.ndarray, n: int) -> np.ndarray:
    """<alpha|n> restricted to the n sector, for a stack of alpha (..., m)."""
    alpha = np.asarray(alpha, dtype=complex)
    m = alpha.shape[-1]
    states = np.array(repcore.sector_states(n, m))
    norms = np.exp(0.5 * gammaln(states + 1).sum(axis=1))
    mono = np.prod(np.conj(alpha)[..., None, :] ** states, axis=-1)
    damp = np.exp(-0.5 * np.sum(np.abs(alpha) ** 2, axis=-1))
    return damp[..., None] * mono / norms


@dataclass
class HetContext:
    n: int
    m: int
    input: tuple[int, ...]
    frame: dict[int, float]
    overlap: dict[int, np.ndarray]
    vector: dict[int, np.ndarray]  # sum_M C_{N0} C_{N'} with phases, over the sector

    @classmethod
    def build(cls, n: int, m: int, input: Sequence[int], ks: Iterable[int] | None = None,
              cache: str | None = None) -> "HetContext":
        input = repcore.check_fock(input, n, m)
        ks = range(n + 1) if ks is None else ks
        states = repcore.sector_states(n, m)
        i0 = states.index(input)
        phases = sector_phases(n, m)
        frame, overlap, vector = {}, {}, {}
        for k in ks:
            vecs, _ = overlap_vectors(cg.fock_table(n, m, k, cache), n, m)
            frame[k] = frame_eigenvalue_het(k, n, m, cache)
            overlap[k] = vecs[i0]
            vector[k] = phases[i0] * phases * (vecs @ vecs[i0])
        return cls(n, m, input, frame, overlap, vector)


def filter_het(ctx: HetContext, k: int, alpha: np.ndarray, g: np.ndarray) -> np.ndarray:
    """Heterodyne filter for Husimi-sampled outcomes (batched over leading axes)."""
    if k not in ctx.vector:
        raise ArgumentError(f"context has no irrep k={k}")
    g = np.asarray(g, dtype=complex)
    bra = coherent_overlaps(alpha, ctx.n)  # <alpha|n>
    T = _sector_matrices(g, ctx.n)
    amps = np.einsum("...a,...ab->...b", bra, T)  # <alpha|tau(g)|n'>
    value = (np.abs(amps) ** 2) @ ctx.vector[k]
    return pi**ctx.m * value / ctx.frame[k]


def _sector_matrices(g: np.ndarray, n: int) -> np.ndarray:
    m = g.shape[-1]
    states = repcore.sector_states(n, m)
    batch = g.shape[:-2]
    flat = g.reshape(-1, m, m)
    out = np.empty((flat.shape[0], len(states), len(states)), dtype=complex)
    for a, s in enumerate(states):
        rows = np.repeat(np.arange(m), s)
        for b, t in enumerate(states):
            cols = np.repeat(np.arange(m), t)
            out[:, a, b] = linopt.permanents(flat[:, rows[:, None], cols[None, :]])
            out[:, a, b] /= sqrt(linopt.fock_factorial(s) * linopt.fock_factorial(t))
    return out.reshape(batch + (len(states), len(states)))


# ---------------------------------------------------------------------------
# moments

def first_moment_het(k: int, n: int, m: int, input: Sequence[int], cache: str | None = None) -> float:
    """Mean filter value: (d s)^-1 sum_M C_{N0}^2 times the four-index I/CG sum."""
    input = repcore.check_fock(input, n, m)
    states = repcore.sector_states(n, m)
    vecs, _ = overlap_vectors(cg.fock_table(n, m, k, cache), n, m)
    weight = float(vecs[states.index(input)] @ vecs[states.index(input)])
    E = operator_basis(n, m, k, cache)
    I4 = moment_tensor(n, m, conj_slots=(1, 2), K=4)
    inner = float(np.einsum("Mab,abce,Mce->", E, I4, E, optimize=True))
    return weight * inner / (E.shape[0] * frame_eigenvalue_het(k, n, m, cache))


def second_moment_het(k: int, n: int, m: int, input: Sequence[int], cache: str | None = None) -> float:
    """Mean squared filter value for Husimi-sampled records.

    Slots are (n1, m1, n2, m2, n3, m3); m1, m2 and n3 enter conjugated.  The
    group average pairs lambda_l blocks of lambda_k x lambda_k with the
    lambda_l component of the state, weighted by 1/d_l.
    """
    input = repcore.check_fock(input, n, m)
    states = repcore.sector_states(n, m)
    i0 = states.index(input)
    phases = sector_phases(n, m)
    s = frame_eigenvalue_het(k, n, m, cache)
    u_k, zero_k = overlap_vectors(cg.fock_table(n, m, k, cache), n, m)
    E_k = operator_basis(n, m, k, cache)
    dk = E_k.shape[0]
    I6 = moment_tensor(n, m, conj_slots=(1, 3, 4), K=6)
    zero_k = np.asarray(zero_k)
    u0 = u_k[i0]
    total = 0.0
    for l in range(0, min(n, 2 * k) + 1):
        table = cg.square_table(k, l, m, cache)
        dl = table.irt.dim
        u_l, zero_l = overlap_vectors(cg.fock_table(n, m, l, cache), n, m)
        E_l = operator_basis(n, m, l, cache)
        J = np.einsum("abcdef,Ref->abcdR", I6, E_l, optimize=True)
        Kt = np.einsum("Lab,abcdR->LcdR", E_k, J, optimize=True)
        Z = np.einsum("Mcd,LcdR->LMR", E_k, Kt, optimize=True)  # (L, L', R')
        W = table.matrix.toarray().reshape(dk, dk, table.multiplicity, dl)
        b = np.einsum("LMrR,LMR->rR", W, Z)  # W^T (x1 x x2) contracted with x3
        Wz = W[np.ix_(zero_k, zero_k)][:, :, :, zero_l]
        a = np.einsum("LMrR,L,M->rR", Wz, u0, u0) @ u_l[i0]  # (mult,)
        total += float(a @ b.sum(axis=1)) / dl
    value = phases[i0] * total / s**2
    return pi**m * value


# ---------------------------------------------------------------------------
# sampling

def husimi_density(alpha: np.ndarray, psi: np.ndarray, n: int) -> np.ndarray:
    """pi^-m |<alpha|psi>|^2 for an n-particle state psi (canonical order)."""
    m = np.asarray(alpha).shape[-1]
    amp = coherent_overlaps(alpha, n) @ psi
    return np.abs(amp) ** 2 / pi**m


def sample_husimi(psi: np.ndarray, n: int, m: int, rng: np.random.Generator,
                  max_rounds: int = 10_000) -> np.ndarray:
    """One Husimi-distributed alpha per state in ``psi`` (shape (..., dim_sector)).

    Rejection sampling against a complex Gaussian envelope with per-mode
    variance v = (n + m) / m.  The bound uses Q <= pi^-m e^-R R^n / n!.
    """
    psi = np.asarray(psi, dtype=complex)
    batch = psi.shape[:-1]
    flat = psi.reshape(-1, psi.shape[-1])
    v = (n + m) / m
    if n == 0:
        log_bound = m * log(v)
    else:
        Rstar = n / (1 - 1 / v)
        log_bound = m * log(v) - Rstar * (1 - 1 / v) + n * log(Rstar) - lgamma(n + 1)
    out = np.empty((len(flat), m), dtype=complex)
    todo = np.arange(len(flat))
    for _ in range(max_rounds):
        if len(todo) == 0:
            break
        z = np.sqrt(v / 2) * (rng.standard_normal((len(todo), m)) + 1j * rng.standard_normal((len(todo), m)))
        R = np.sum(np.abs(z) ** 2, axis=1)
        amp = np.einsum("ba,ba->b", coherent_overlaps(z, n), flat[todo])
        # log of Q / (bound * envelope)
        log_ratio = np.log(np.abs(amp) ** 2 + 1e-300) + R / v + m * log(v) - log_bound
        accept = np.log(rng.random(len(todo))) < log_ratio
        out[todo[accept]] = z[accept]
        todo = todo[~accept]
    else:
        raise NumericalError("Husimi rejection sampler did not finish")
    return out.reshape(batch + (m,))


@dataclass
class HetRecord:
    seq_len: int
    product: np.ndarray
    alpha: np.ndarray
    input: tuple[int, ...]


def het_record_line(rec: HetRecord) -> str:
    fmt = linopt._fmt
    return (
        f'{{"seq_len":{rec.seq_len},'
        '"product":[' + ",".join(fmt(v) for v in linopt._interleave(rec.product)) + "],"
        '"alpha":[' + ",".join(fmt(v) for v in linopt._interleave(rec.alpha)) + "],"
        '"input":[' + ",".join(str(v) for v in rec.input) + "]}"
    )


def simulate_heterodyne(cfg: linopt.SimConfig) -> list[HetRecord]:
    """Noiseless heterodyne RB records, one Husimi sample per sequence.

    No loss model is offered for this detector, so a lossy config is rejected.
    """
    if cfg.loss.kind != "none":
        raise ConfigError("heterodyne simulation does not support particle loss")
    states = repcore.sector_states(cfg.n, cfg.m)
    i0 = states.index(tuple(cfg.input))
    records = []
    for li, l in enumerate(cfg.lengths):
        rngs = [linopt.shot_rng(cfg.seed, li, shot) for shot in range(cfg.shots)]
        if cfg.measure == "haar":
            gates = np.stack([linopt.haar_unitaries(cfg.m, l, rng) for rng in rngs])
        elif cfg.measure == "composite-local":
            gates = np.stack([linopt.local_unitaries(cfg.m, l, rng) for rng in rngs])
        else:
            gates = np.broadcast_to(np.eye(cfg.m, dtype=complex), (cfg.shots, l, cfg.m, cfg.m))
        product = gates[:, 0]
        for j in range(1, l):
            product = gates[:, j] @ product
        psi = _sector_matrices(product, cfg.n)[:, :, i0]
        for t, rng in enumerate(rngs):
            alpha = sample_husimi(psi[t], cfg.n, cfg.m, rng)
            records.append(HetRecord(l, product[t], alpha, tuple(cfg.input)))
    return records


def write_het_records(records: Iterable[HetRecord], fh: IO[str]) -> int:
    count = 0
    for rec in records:
        fh.write(het_record_line(rec) + "\n")
        count += 1
    return count


def read_het_records(lines: Iterable[str]) -> Iterator[HetRecord]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            a = np.asarray(obj["alpha"], dtype=float)
            if a.size % 2:
                raise ValueError("alpha needs an even number of doubles")
            alpha = a[0::2] + 1j * a[1::2]
            product = linopt._deinterleave(obj["product"], len(alpha))
            rec = HetRecord(int(obj["seq_len"]), product, alpha, tuple(int(x) for x in obj["input"]))
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed heterodyne record on line {lineno}: {exc}") from exc
        yield rec


def estimate_signal_het(records: Sequence[HetRecord], k: int, ctx: HetContext | None = None,
                        cache: str | None = None) -> RBSignal:
    """Per-length mean of filter_het over heterodyne records."""
    if not records:
        raise DataError("no records")
    inputs = {rec.input for rec in records}
    if len(inputs) != 1:
        raise DataError(f"records mix input states {sorted(inputs)}")
    inp = inputs.pop()
    n, m = sum(inp), len(inp)
    if ctx is None:
        ctx = HetContext.build(n, m, inp, [k], cache)
    elif (ctx.n, ctx.m, ctx.input) != (n, m, inp):
        raise DataError("filter context does not match the record sector")
    alpha = np.stack([rec.alpha for rec in records])
    product = np.stack([rec.product for rec in records])
    if alpha.shape[1] != m or product.shape[1:] != (m, m):
        raise DataError("records mix mode numbers")
    values = filter_het(ctx, k, alpha, product)
    lengths = np.array([rec.seq_len for rec in records])
    signal = RBSignal(f"het-irrep{k}", [], [], [], [])
    for l in sorted(set(lengths.tolist())):
        v = values[lengths == l]
        signal.lengths.append(int(l))
        signal.estimates.append(float(v.mean()))
        signal.stderr.append(float(v.std(ddof=1) / np.sqrt(len(v))) if len(v) > 1 else 0.0)
        signal.counts.append(len(v))
    return signal
