"""Linear optics: permanents, Fock amplitudes, Haar sampling, loss and the RB simulator."""

from __future__ import annotations

import json
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from math import factorial, prod, sqrt
from typing import IO, Iterable, Iterator, Literal, Sequence

import numpy as np

from . import repcore
from .errors import ArgumentError, ConfigError, DataError, SizeError

SECTOR_CAP = 10**5


# ---------------------------------------------------------------------------
# permanents

def _gray_flips(r: int) -> tuple[np.ndarray, np.ndarray]:
    """Column flipped at each Gray-code step and whether it is added (+1) or removed (-1)."""
    steps = np.arange(1, 2**r)
    cols = np.array([(int(s) & -int(s)).bit_length() - 1 for s in steps], dtype=np.int64)
    gray = steps ^ (steps >> 1)
    signs = np.where((gray >> cols) & 1, 1, -1)
    return cols, signs


def permanent(A: np.ndarray) -> complex:
    """Ryser's formula with Gray-code subset order, O(r 2^r)."""
    A = np.asarray(A, dtype=complex)
    if A.ndim != 2 or A.shape[0] != A.shape[1]:
        raise ArgumentError(f"permanent needs a square matrix, got shape {A.shape}")
    return complex(permanents(A[None])[0])


def permanents(A: np.ndarray) -> np.ndarray:
    """Batched Ryser permanents of a stack of r x r matrices, shape (..., r, r)."""
    A = np.asarray(A, dtype=complex)
    if A.shape[-1] != A.shape[-2]:
        raise ArgumentError(f"permanent needs square matrices, got shape {A.shape}")
    r = A.shape[-1]
    batch = A.shape[:-2]
    if r == 0:
        return np.ones(batch, dtype=complex)
    flat = A.reshape(-1, r, r)
    cols, signs = _gray_flips(r)
    row_sums = np.zeros((flat.shape[0], r), dtype=complex)
    total = np.zeros(flat.shape[0], dtype=complex)
    parity = 1
    for c, s in zip(cols, signs):
        row_sums += s * flat[:, :, c]
        parity = -parity
        total += parity * np.prod(row_sums, axis=1)
    # subsets of size |S| carry (-1)^{|S|}; the full set has (-1)^r
    total *= (-1) ** r
    return total.reshape(batch)


def permanent_naive(A: np.ndarray) -> complex:
    """Direct sum over permutations; test oracle only."""
    from itertools import permutations

    A = np.asarray(A, dtype=complex)
    r = A.shape[0]
    return complex(sum(prod(A[i, p[i]] for i in range(r)) for p in permutations(range(r)))) if r else 1.0


# ---------------------------------------------------------------------------
# amplitudes

def _check_unitary(U: np.ndarray, tol: float = 1e-10) -> np.ndarray:
    U = np.asarray(U, dtype=complex)
    if U.ndim != 2 or U.shape[0] != U.shape[1]:
        raise ArgumentError(f"expected a square matrix, got shape {U.shape}")
    dev = np.abs(U.conj().T @ U - np.eye(U.shape[0])).max()
    if dev > tol:
        raise ArgumentError(f"matrix is not unitary (deviation {dev:.2e})")
    return U


def _expand(v: Sequence[int]) -> np.ndarray:
    return np.repeat(np.arange(len(v)), v)


def submatrix(g: np.ndarray, n_out: Sequence[int], n_in: Sequence[int]) -> np.ndarray:
    """Row i repeated n_out[i] times, column j repeated n_in[j] times."""
    if sum(n_out) != sum(n_in):
        raise ArgumentError(f"particle numbers differ: {n_out} vs {n_in}")
    return np.asarray(g)[np.ix_(_expand(n_out), _expand(n_in))]


def fock_factorial(v: Sequence[int]) -> int:
    return prod(factorial(x) for x in v)


def amplitude(g: np.ndarray, n_out: Sequence[int], n_in: Sequence[int]) -> complex:
    """<n_out| tau(g) |n_in>."""
    return permanent(submatrix(g, n_out, n_in)) / sqrt(fock_factorial(n_out) * fock_factorial(n_in))


def _sector_checked(n: int, m: int, cap: int) -> list[tuple[int, ...]]:
    if repcore.dim_sector(n, m) > cap:
        raise SizeError(f"sector n={n}, m={m} exceeds the cap {cap}")
    return repcore.sector_states(n, m)


def transition_rows(g: np.ndarray, fixed: Sequence[int], cap: int = SECTOR_CAP) -> np.ndarray:
    """|<fixed| tau(g) |n'>|^2 for every n' in the sector, for a stack of g.

    ``g`` may carry leading batch dimensions.  The result has shape
    (..., dim_sector) and follows the canonical sector order.
    """
    g = np.asarray(g, dtype=complex)
    fixed = tuple(fixed)
    n, m = sum(fixed), g.shape[-1]
    states = _sector_checked(n, m, cap)
    rows = _expand(fixed)
    subs = np.stack([g[..., rows[:, None], _expand(s)[None, :]] for s in states], axis=-3)
    norms = np.array([fock_factorial(fixed) * fock_factorial(s) for s in states], dtype=float)
    return np.abs(permanents(subs)) ** 2 / norms


def transition_columns(g: np.ndarray, n_in: Sequence[int], cap: int = SECTOR_CAP) -> np.ndarray:
    """|<n_out| tau(g) |n_in>|^2 for every n_out, batched like transition_rows."""
    g = np.asarray(g, dtype=complex)
    return transition_rows(np.swapaxes(g, -1, -2), n_in, cap)


def outcome_distribution(g: np.ndarray, n_in: Sequence[int], cap: int = SECTOR_CAP) -> np.ndarray:
    """Born-rule distribution over the sector in canonical order."""
    g = _check_unitary(g)
    probs = transition_columns(g, n_in, cap)
    total = probs.sum()
    if abs(total - 1) > 1e-9:
        raise ArgumentError(f"outcome distribution not normalized ({total})")
    return probs / total


def sector_matrix(g: np.ndarray, n: int, cap: int = SECTOR_CAP) -> np.ndarray:
    """Matrix of tau_n(g) on the sector, built entrywise from permanents."""
    g = np.asarray(g, dtype=complex)
    states = _sector_checked(n, g.shape[0], cap)
    out = np.empty((len(states), len(states)), dtype=complex)
    for a, s in enumerate(states):
        for b, t in enumerate(states):
            out[a, b] = amplitude(g, s, t)
    return out


# ---------------------------------------------------------------------------
# random passive transformations

def haar_unitary(m: int, rng: np.random.Generator) -> np.ndarray:
    """Haar-distributed U(m) element via QR of a Ginibre matrix."""
    return haar_unitaries(m, 1, rng)[0]


def haar_unitaries(m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    z = (rng.standard_normal((count, m, m)) + 1j * rng.standard_normal((count, m, m))) / sqrt(2)
    return _qr_haar(z)


def _qr_haar(z: np.ndarray) -> np.ndarray:
    q, r = np.linalg.qr(z)
    d = np.diagonal(r, axis1=-2, axis2=-1)
    return q * (d / np.abs(d))[..., None, :]


def local_unitaries(m: int, count: int, rng: np.random.Generator) -> np.ndarray:
    """Random beam splitter on a random adjacent mode pair followed by random phases."""
    out = np.zeros((count, m, m), dtype=complex)
    idx = np.arange(m)
    out[:, idx, idx] = 1
    pair = rng.integers(0, m - 1, size=count)
    theta = np.arccos(np.sqrt(rng.random(count)))
    phi = rng.random(count) * 2 * np.pi
    phases = np.exp(2j * np.pi * rng.random((count, m)))
    c, s = np.cos(theta), np.sin(theta)
    rows = np.arange(count)
    out[rows, pair, pair] = c
    out[rows, pair, pair + 1] = -np.exp(-1j * phi) * s
    out[rows, pair + 1, pair] = np.exp(1j * phi) * s
    out[rows, pair + 1, pair + 1] = c
    return phases[:, :, None] * out


def compose(factors: Sequence[np.ndarray]) -> np.ndarray:
    """g_l ... g_1 for factors given in application order g_1, ..., g_l."""
    if len(factors) == 0:
        raise ArgumentError("compose needs at least one factor")
    m = np.asarray(factors[0]).shape[0]
    out = np.eye(m, dtype=complex)
    for g in factors:
        g = np.asarray(g, dtype=complex)
        if g.shape != (m, m):
            raise ArgumentError(f"factor shape {g.shape} does not match m={m}")
        out = g @ out
    dev = np.abs(out.conj().T @ out - np.eye(m)).max()
    if dev > 1e-9:
        raise ArgumentError(f"composite is not unitary (deviation {dev:.2e})")
    return out


# ---------------------------------------------------------------------------
# configuration and records

@dataclass(frozen=True)
class LossModel:
    kind: Literal["none", "uniform", "gate-random"] = "none"
    sqrt_p: float = 1.0
    range: tuple[float, float] = (1.0, 1.0)
    sqrt_p_SP: float = 1.0
    sqrt_p_M: float = 1.0

    def __post_init__(self) -> None:
        if self.kind not in ("none", "uniform", "gate-random"):
            raise ConfigError(f"unknown loss kind {self.kind!r}")
        values = [self.sqrt_p, self.sqrt_p_SP, self.sqrt_p_M, *self.range]
        if any(not 0 < v <= 1 for v in values):
            raise ConfigError("transmittivities must lie in (0, 1]")
        if self.range[0] > self.range[1]:
            raise ConfigError("loss range must be increasing")


@dataclass(frozen=True)
class SimConfig:
    n: int
    m: int
    lengths: tuple[int, ...]
    shots: int
    input: tuple[int, ...] | None = None
    loss: LossModel = field(default_factory=LossModel)
    seed: int = 0
    measure: Literal["haar", "composite-local", "identity"] = "haar"
    store_factors: bool = False
    detector: Literal["pnr", "heterodyne"] = "pnr"

    def __post_init__(self) -> None:
        if self.m < 2 or self.n < 0:
            raise ConfigError(f"invalid sector n={self.n}, m={self.m}")
        if self.input is None:
            if self.n > self.m:
                raise ConfigError("the default collision-free input needs n <= m")
            object.__setattr__(self, "input", (1,) * self.n + (0,) * (self.m - self.n))
        try:
            repcore.check_fock(self.input, self.n, self.m)
        except ArgumentError as exc:
            raise ConfigError(str(exc)) from exc
        if not self.lengths or any(l < 1 for l in self.lengths):
            raise ConfigError("lengths must be a non-empty list of positive integers")
        if self.shots < 1:
            raise ConfigError("shots must be positive")
        if self.measure not in ("haar", "composite-local", "identity"):
            raise ConfigError(f"unknown measure {self.measure!r}")
        if self.detector not in ("pnr", "heterodyne"):
            raise ConfigError(f"unknown detector {self.detector!r}")

    @classmethod
    def from_dict(cls, data: dict) -> "SimConfig":
        data = dict(data)
        try:
            loss = data.pop("loss", {}) or {}
            if "range" in loss:
                loss["range"] = tuple(loss["range"])
            cfg = cls(
                n=int(data.pop("n")),
                m=int(data.pop("m")),
                lengths=tuple(int(x) for x in data.pop("lengths")),
                shots=int(data.pop("shots")),
                input=tuple(data.pop("input")) if data.get("input") is not None else data.pop("input", None),
                loss=LossModel(**loss),
                seed=int(data.pop("seed", 0)),
                measure=data.pop("measure", "haar"),
                store_factors=bool(data.pop("store_factors", False)),
                detector=data.pop("detector", "pnr"),
            )
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"bad simulation config: {exc}") from exc
        if data:
            raise ConfigError(f"unknown config fields {sorted(data)}")
        return cfg

    def to_dict(self) -> dict:
        out = asdict(self)
        out["lengths"] = list(self.lengths)
        out["input"] = list(self.input)
        out["loss"]["range"] = list(self.loss.range)
        return out


@dataclass
class ExperimentRecord:
    seq_len: int
    product: np.ndarray
    outcome: tuple[int, ...]
    survived: bool
    input: tuple[int, ...]
    factors: np.ndarray | None = None

    def to_json(self) -> str:
        obj = {
            "seq_len": self.seq_len,
            "product": _interleave(self.product),
            "outcome": list(self.outcome),
            "survived": self.survived,
            "input": list(self.input),
        }
        if self.factors is not None:
            obj["factors"] = [_interleave(f) for f in self.factors]
        return json.dumps(obj, separators=(",", ":"))


def _interleave(U: np.ndarray) -> list[float]:
    flat = np.asarray(U, dtype=complex).ravel()
    return [float(x) for x in np.column_stack([flat.real, flat.imag]).ravel()]


def _deinterleave(values: Sequence[float], m: int) -> np.ndarray:
    arr = np.asarray(values, dtype=float)
    if arr.size != 2 * m * m:
        raise DataError(f"product has {arr.size} doubles, expected {2 * m * m}")
    return (arr[0::2] + 1j * arr[1::2]).reshape(m, m)


def _fmt(x: float) -> str:
    return format(x, ".17g")


def record_line(rec: ExperimentRecord) -> str:
    """JSON line with doubles written to 17 significant digits."""
    parts = [
        f'"seq_len":{rec.seq_len}',
        '"product":[' + ",".join(_fmt(v) for v in _interleave(rec.product)) + "]",
        '"outcome":[' + ",".join(str(v) for v in rec.outcome) + "]",
        f'"survived":{"true" if rec.survived else "false"}',
        '"input":[' + ",".join(str(v) for v in rec.input) + "]",
    ]
    if rec.factors is not None:
        facs = ",".join("[" + ",".join(_fmt(v) for v in _interleave(f)) + "]" for f in rec.factors)
        parts.append(f'"factors":[{facs}]')
    return "{" + ",".join(parts) + "}"


def write_records(records: Iterable[ExperimentRecord], fh: IO[str]) -> int:
    count = 0
    for rec in records:
        fh.write(record_line(rec) + "\n")
        count += 1
    return count


def read_records(lines: Iterable[str]) -> Iterator[ExperimentRecord]:
    for lineno, line in enumerate(lines, start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
            outcome = tuple(int(x) for x in obj["outcome"])
            m = len(outcome)
            product = _deinterleave(obj["product"], m)
            factors = None
            if obj.get("factors") is not None:
                factors = np.array([_deinterleave(f, m) for f in obj["factors"]])
            inp = tuple(int(x) for x in obj["input"]) if "input" in obj else None
            rec = ExperimentRecord(int(obj["seq_len"]), product, outcome, bool(obj["survived"]), inp, factors)
        except (KeyError, TypeError, ValueError, json.JSONDecodeError) as exc:
            raise DataError(f"malformed record on line {lineno}: {exc}") from exc
        yield rec


# ---------------------------------------------------------------------------
# simulation

def shot_rng(seed: int, length_index: int, shot: int) -> np.random.Generator:
    """Independent stream per (length, shot); results do not depend on scheduling."""
    return np.random.Generator(np.random.PCG64(np.random.SeedSequence(entropy=seed, spawn_key=(length_index, shot))))


@dataclass
class _ShotDraws:
    gates: np.ndarray  # (l, m, m)
    transmissions: np.ndarray  # per-gate sqrt(p)
    u_outcome: float
    u_loss: np.ndarray  # one uniform per particle


def _draw_shot(cfg: SimConfig, l: int, rng: np.random.Generator) -> _ShotDraws:
    m = cfg.m
    if cfg.measure == "haar":
        z = (rng.standard_normal((l, m, m)) + 1j * rng.standard_normal((l, m, m))) / sqrt(2)
        gates = z  # orthonormalized in bulk later
    elif cfg.measure == "composite-local":
        gates = local_unitaries(m, l, rng)
    else:
        gates = np.broadcast_to(np.eye(m, dtype=complex), (l, m, m)).copy()
    if cfg.loss.kind == "gate-random":
        a, b = cfg.loss.range
        trans = rng.uniform(a, b, size=l)
    elif cfg.loss.kind == "uniform":
        trans = np.full(l, cfg.loss.sqrt_p)
    else:
        trans = np.ones(l)
    return _ShotDraws(gates, trans, float(rng.random()), rng.random(cfg.n))


def _simulate_chunk(cfg: SimConfig, li: int, l: int, shots: range) -> list[ExperimentRecord]:
    draws = [_draw_shot(cfg, l, shot_rng(cfg.seed, li, s)) for s in shots]
    gates = np.stack([d.gates for d in draws])  # (T, l, m, m)
    if cfg.measure == "haar":
        gates = _qr_haar(gates)
    product = gates[:, 0]
    for j in range(1, l):
        product = gates[:, j] @ product
    probs = transition_columns(product, cfg.input)
    probs = probs / probs.sum(axis=1, keepdims=True)
    cdf = np.cumsum(probs, axis=1)
    states = repcore.sector_states(cfg.n, cfg.m)
    records = []
    base = cfg.loss.sqrt_p_SP * cfg.loss.sqrt_p_M
    for t, d in enumerate(draws):
        idx = min(int(np.searchsorted(cdf[t], d.u_outcome * cdf[t, -1], side="right")), len(states) - 1)
        ideal = states[idx]
        # each particle independently survives with probability q; uniform loss
        # commutes with the passive evolution, so thinning the ideal sample is exact
        q = (base * float(np.prod(d.transmissions))) ** 2
        kept = d.u_loss < q
        owners = _expand(ideal)
        outcome = tuple(int(x) for x in np.bincount(owners[kept], minlength=cfg.m)) if cfg.n else ideal
        survived = bool(kept.all())
        records.append(
            ExperimentRecord(
                l, product[t], outcome, survived, tuple(cfg.input), gates[t].copy() if cfg.store_factors else None
            )
        )
    return records


def simulate(cfg: SimConfig, threads: int = 1, chunk: int = 2000) -> list[ExperimentRecord]:
    """All records, ordered by length then shot index."""
    jobs = []
    for li, l in enumerate(cfg.lengths):
        for start in range(0, cfg.shots, chunk):
            jobs.append((li, l, range(start, min(start + chunk, cfg.shots))))
    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            parts = list(pool.map(lambda job: _simulate_chunk(cfg, *job), jobs))
    else:
        parts = [_simulate_chunk(cfg, *job) for job in jobs]
    return [rec for part in parts for rec in part]


def survival_probability(cfg: SimConfig, transmissions: Sequence[float]) -> float:
    """(p_SP p_M prod_j p_j)^n for a sequence with the given per-gate sqrt(p_j)."""
    base = cfg.loss.sqrt_p_SP * cfg.loss.sqrt_p_M * float(np.prod(transmissions))
    return base ** (2 * cfg.n)
