"""SU(m) Clebsch-Gordan tables in the Gelfand-Tsetlin basis.

Tables are built numerically: the highest-weight vectors of the target irrep
inside the product space are found as the common null space of the raising
operators, and every other coupled state follows from the lowering operators
one weight space at a time.  Ladder-operator matrix elements are the standard
Gelfand-Tsetlin ones.
"""

from __future__ import annotations

import hashlib
import logging
import os
from dataclasses import dataclass, field
from functools import lru_cache
from math import sqrt
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np
import scipy.sparse as sp

from . import repcore
from .errors import ArgumentError, CouplingError, NumericalError
from .repcore import GTPattern

log = logging.getLogger(__name__)

CACHE_ENV = "PASSIVE_RB_CACHE"
PRUNE = 1e-14
RANK_TOL = 1e-9
RESIDUAL_TOL = 1e-9
DENSE_NULL_LIMIT = 1500


# ---------------------------------------------------------------------------
# single irreps

@dataclass(frozen=True)
class IrrepData:
    shape: tuple[int, ...]
    patterns: tuple[GTPattern, ...]
    weights: np.ndarray  # (dim, m-1) integer
    lowering: tuple[sp.csr_matrix, ...]  # F_l = E_{l+1,l}, l = 1..m-1

    @property
    def dim(self) -> int:
        return len(self.patterns)

    @property
    def m(self) -> int:
        return len(self.shape)

    def raising(self, l: int) -> sp.csr_matrix:
        return self.lowering[l - 1].T.tocsr()

    def cartan(self, l: int) -> np.ndarray:
        return self.weights[:, l - 1].astype(float)


def _lowering_element(M: GTPattern, k: int, l: int) -> float:
    """<M - e_{k,l}| E_{l+1,l} |M> in the Gelfand-Tsetlin basis."""

    def p(i: int, j: int) -> int:
        return M.entry(i, j) - i

    pk = p(k, l)
    num = 1
    for kk in range(1, l + 2):
        num *= p(kk, l + 1) - pk + 1
    for kk in range(1, l):
        num *= p(kk, l - 1) - pk
    den = 1
    for kk in range(1, l + 1):
        if kk != k:
            den *= (p(kk, l) - pk + 1) * (p(kk, l) - pk)
    value = -num / den
    if value < 0:
        raise NumericalError(f"negative squared ladder element at {M}, k={k}, l={l}")
    return sqrt(value)


@lru_cache(maxsize=64)
def irrep_data(shape: tuple[int, ...]) -> IrrepData:
    shape = repcore.check_shape(shape)
    patterns = tuple(repcore.enumerate_patterns(shape))
    index = repcore.pattern_index(shape)
    m = len(shape)
    weights = np.array([repcore.weight(p) for p in patterns], dtype=np.int64).reshape(len(patterns), m - 1)
    ops = []
    for l in range(1, m):
        rows, cols, vals = [], [], []
        for col, M in enumerate(patterns):
            for k in range(1, l + 1):
                lowered = list(M.rows[l - 1])
                lowered[k - 1] -= 1
                rows_new = M.rows[: l - 1] + (tuple(lowered),) + M.rows[l:]
                target = GTPattern(rows_new)
                if not target.is_valid():
                    continue
                rows.append(index[target])
                cols.append(col)
                vals.append(_lowering_element(M, k, l))
        ops.append(sp.csr_matrix((vals, (rows, cols)), shape=(len(patterns),) * 2))
    return IrrepData(shape, patterns, weights, tuple(ops))


# ---------------------------------------------------------------------------
# couplings and tables

@dataclass(frozen=True)
class Coupling:
    factor1: tuple[int, ...]
    factor2: tuple[int, ...]
    target: tuple[int, ...]

    def __post_init__(self) -> None:
        for s in (self.factor1, self.factor2, self.target):
            repcore.check_shape(s)
        if not (len(self.factor1) == len(self.factor2) == len(self.target)):
            raise ArgumentError("coupling shapes must have the same number of rows")
        if sum(self.factor1) + sum(self.factor2) - sum(self.target) < 0 or (
            sum(self.factor1) + sum(self.factor2) - sum(self.target)
        ) % len(self.target):
            raise CouplingError(f"target {self.target} cannot occur in {self.factor1} x {self.factor2}")

    @property
    def m(self) -> int:
        return len(self.target)

    @property
    def key(self) -> str:
        def s(x: Sequence[int]) -> str:
            return ",".join(str(v) for v in x)

        return f"m={self.m};f1={s(self.factor1)};f2={s(self.factor2)};t={s(self.target)}"

    @classmethod
    def fock(cls, n: int, m: int, k: int) -> "Coupling":
        """tau_n x conj(tau_n) -> lambda_k, with the conjugate on the dual shape."""
        if not 0 <= k <= n:
            raise CouplingError(f"lambda_{k} does not occur in the n={n} sector")
        return cls(repcore.symmetric_shape(n, m), repcore.dual_symmetric_shape(n, m), repcore.lambda_shape(k, m))

    @classmethod
    def square(cls, k: int, l: int, m: int) -> "Coupling":
        """lambda_k x lambda_k -> lambda_l."""
        if repcore.tensor_square_multiplicity(k, l, m) == 0:
            raise CouplingError(f"lambda_{l} does not occur in lambda_{k} x lambda_{k} for m={m}")
        s = repcore.lambda_shape(k, m)
        return cls(s, s, repcore.lambda_shape(l, m))


@dataclass
class CGTable:
    """Coefficients C_{M1,M2}^{M,r} stored as a sparse isometry.

    Column ``(r - 1) * dim(target) + index(M)`` holds the coupled vector
    |M, r> expanded over product states ``index(M1) * d2 + index(M2)``.
    """

    coupling: Coupling
    multiplicity: int
    matrix: sp.csc_matrix
    _dense_cache: dict = field(default_factory=dict, repr=False, compare=False)

    @property
    def ir1(self) -> IrrepData:
        return irrep_data(self.coupling.factor1)

    @property
    def ir2(self) -> IrrepData:
        return irrep_data(self.coupling.factor2)

    @property
    def irt(self) -> IrrepData:
        return irrep_data(self.coupling.target)

    def column(self, M_index: int, r: int = 1) -> int:
        if not 1 <= r <= self.multiplicity:
            raise ArgumentError(f"multiplicity index {r} out of range 1..{self.multiplicity}")
        return (r - 1) * self.irt.dim + M_index

    def _index(self, shape: tuple[int, ...], M: GTPattern) -> int:
        if M.shape != shape:
            raise ArgumentError(f"pattern {M} does not belong to shape {shape}")
        return repcore.pattern_index(shape)[M]

    def coefficient(self, M1: GTPattern, M2: GTPattern, M: GTPattern, r: int = 1) -> float:
        i1 = self._index(self.coupling.factor1, M1)
        i2 = self._index(self.coupling.factor2, M2)
        iM = self._index(self.coupling.target, M)
        col = self.column(iM, r)
        if np.any(self.ir1.weights[i1] + self.ir2.weights[i2] != self.irt.weights[iM]):
            return 0.0
        return float(self.matrix[i1 * self.ir2.dim + i2, col])

    def block(self, M_index: int, r: int = 1) -> np.ndarray:
        """Dense (d1, d2) array of C_{M1,M2}^{M,r} for one target state."""
        col = self.column(M_index, r)
        dense = self.matrix[:, col].toarray().ravel()
        return dense.reshape(self.ir1.dim, self.ir2.dim)

    def dense(self) -> np.ndarray:
        """Dense (mult, dim_t, d1, d2) array; only sensible for small couplings."""
        if "all" not in self._dense_cache:
            arr = self.matrix.toarray().T.reshape(self.multiplicity, self.irt.dim, self.ir1.dim, self.ir2.dim)
            self._dense_cache["all"] = arr
        return self._dense_cache["all"]

    def items(self) -> Iterable[tuple[int, int, int, int, float]]:
        """(i1, i2, iM, r, value) rows in canonical order."""
        coo = self.matrix.tocoo()
        d2, dt = self.ir2.dim, self.irt.dim
        order = np.lexsort((coo.row, coo.col))
        for idx in order:
            flat, col, val = int(coo.row[idx]), int(coo.col[idx]), float(coo.data[idx])
            yield flat // d2, flat % d2, col % dt, col // dt + 1, val

    def __eq__(self, other: object) -> bool:
        if not isinstance(other, CGTable):
            return NotImplemented
        if self.coupling != other.coupling or self.multiplicity != other.multiplicity:
            return False
        a, b = self.matrix.tocsr(), other.matrix.tocsr()
        a.sort_indices()
        b.sort_indices()
        return (
            a.shape == b.shape
            and np.array_equal(a.indptr, b.indptr)
            and np.array_equal(a.indices, b.indices)
            and np.array_equal(a.data, b.data)
        )


def _product_lowering(ir1: IrrepData, ir2: IrrepData, l: int) -> sp.csr_matrix:
    F1, F2 = ir1.lowering[l - 1], ir2.lowering[l - 1]
    return (sp.kron(F1, sp.identity(ir2.dim), format="csr") + sp.kron(sp.identity(ir1.dim), F2, format="csr")).tocsr()


def _weight_blocks(weights: np.ndarray) -> tuple[dict[tuple[int, ...], np.ndarray], np.ndarray]:
    """Group row indices by weight; also return each row's position in its block."""
    uniq, inverse = np.unique(weights, axis=0, return_inverse=True)
    inverse = inverse.ravel()
    order = np.argsort(inverse, kind="stable")
    bounds = np.searchsorted(inverse[order], np.arange(len(uniq) + 1))
    blocks = {}
    position = np.empty(len(weights), dtype=np.int64)
    for u in range(len(uniq)):
        members = order[bounds[u] : bounds[u + 1]]
        blocks[tuple(int(x) for x in uniq[u])] = members
        position[members] = np.arange(len(members))
    return blocks, position


def _restrict(op_csc: sp.csc_matrix, cols: np.ndarray, rows: np.ndarray, position: np.ndarray) -> sp.csr_matrix:
    """op[rows, cols] given that every nonzero in op[:, cols] lies in ``rows``."""
    sub = op_csc[:, cols].tocoo()
    if sub.nnz and not np.all(np.isin(sub.row, rows)):
        raise NumericalError("lowering operator leaves the expected weight block")
    return sp.csr_matrix((sub.data, (position[sub.row], sub.col)), shape=(len(rows), len(cols)))


def _sparse_null_space(A: sp.spmatrix) -> np.ndarray:
    """Null space of a large sparse A from the bottom of the spectrum of A^T A."""
    from scipy.sparse.linalg import eigsh

    gram = (A.T @ A).tocsc()
    n = gram.shape[0]
    want = 8
    while True:
        want = min(want, n - 1)
        start = np.cos(np.arange(n) * 0.7071) + 1.5  # fixed start vector keeps builds bit-reproducible
        vals, vecs = eigsh(gram, k=want, sigma=-0.5, which="LM", tol=0, v0=start)
        order = np.argsort(vals)
        vals, vecs = vals[order], vecs[:, order]
        null = vecs[:, vals < RANK_TOL * max(1.0, abs(gram).max())]
        if null.shape[1] < want or want == n - 1:
            break
        want *= 2
    # one step of orthogonal refinement keeps the basis orthonormal to rounding
    q, _ = np.linalg.qr(null)
    return q


def _highest_weight_basis(A: sp.spmatrix) -> np.ndarray:
    """Null space of A in echelon form with positive pivots.

    Projections of the canonical basis vectors onto the null space are
    Gram-Schmidt orthonormalized in canonical order, so the first nonzero
    entry of every returned vector is positive and the result does not
    depend on how the SVD happened to rotate the null space.
    """
    ncols = A.shape[1]
    if A.shape[0] == 0:
        null = np.eye(ncols)
    elif ncols <= DENSE_NULL_LIMIT:
        _, svals, vh = np.linalg.svd(A.toarray(), full_matrices=True)
        scale = svals[0] if len(svals) and svals[0] > 0 else 1.0
        rank = int(np.sum(svals > RANK_TOL * scale))
        null = vh[rank:].T
    else:
        null = _sparse_null_space(A)
    mult = null.shape[1]
    basis: list[np.ndarray] = []
    for p in range(ncols):
        if len(basis) == mult:
            break
        v = null @ null[p]
        for b in basis:
            v = v - (b @ v) * b
        norm = np.linalg.norm(v)
        if norm > 1e-6:
            basis.append(v / norm)
    if len(basis) != mult:
        raise NumericalError("could not orthonormalize the highest-weight space")
    return np.array(basis).reshape(mult, ncols)


def build_table(coupling: Coupling) -> CGTable:
    ir1 = irrep_data(coupling.factor1)
    ir2 = irrep_data(coupling.factor2)
    irt = irrep_data(coupling.target)
    m = coupling.m
    d1, d2 = ir1.dim, ir2.dim

    prod_weights = (ir1.weights[:, None, :] + ir2.weights[None, :, :]).reshape(d1 * d2, m - 1)
    blocks, position = _weight_blocks(prod_weights)
    lower = [_product_lowering(ir1, ir2, l).tocsc() for l in range(1, m)]

    # highest weight vectors
    hw = tuple(int(x) for x in irt.weights[_hw_index(irt)])
    if hw not in blocks:
        raise CouplingError(f"target {coupling.target} does not occur in the product")
    hw_block = blocks[hw]
    raise_rows = []
    for l in range(1, m):
        raising = lower[l - 1].T.tocsr()[:, hw_block]
        raise_rows.append(raising[raising.getnnz(axis=1) > 0])
    A = sp.vstack(raise_rows).tocsr() if raise_rows else sp.csr_matrix((0, len(hw_block)))
    hw_vectors = _highest_weight_basis(A)
    mult = hw_vectors.shape[0]
    if mult and A.shape[0]:
        null_resid = float(np.abs(A @ hw_vectors.T).max())
        if null_resid > RESIDUAL_TOL:
            raise NumericalError(f"highest-weight solve residual {null_resid:.3e} for {coupling.key}")
    if mult == 0:
        raise CouplingError(f"target {coupling.target} does not occur in {coupling.factor1} x {coupling.factor2}")

    # group target patterns by weight and order by depth below the highest weight
    t_blocks, t_position = _weight_blocks(irt.weights)
    depth = {w: -repcore.dual_phase(irt.patterns[idx[0]]) for w, idx in t_blocks.items()}
    order = sorted(t_blocks, key=lambda w: (depth[w], tuple(-x for x in w)))

    # vectors[w] has shape (mult, len(t_blocks[w]), len(blocks[w]))
    vectors: dict[tuple[int, ...], np.ndarray] = {}
    vectors[hw] = hw_vectors[:, None, :]
    t_lower_csc = [F.tocsc() for F in irt.lowering]
    worst = 0.0
    for w in order[1:]:
        targets = t_blocks[w]
        block = blocks.get(w)
        if block is None:
            raise NumericalError(f"weight {w} of the target is missing from the product")
        a_rows, b_rows = [], []
        for l in range(1, m):
            F = t_lower_csc[l - 1]
            sub = F[targets, :]
            parents = np.unique(sub.tocoo().col)
            if len(parents) == 0:
                continue
            pw = tuple(int(x) for x in irt.weights[parents[0]])
            src = vectors[pw]
            src_block = blocks[pw]
            op = _restrict(lower[l - 1], src_block, block, position)
            parent_pos = t_position[parents]
            coeff = sub[:, parents].toarray().T  # (n_parents, n_targets)
            moved = np.stack([(op @ src[r, parent_pos].T).T for r in range(mult)])  # (mult, n_parents, |block|)
            a_rows.append(coeff)
            b_rows.append(moved)
        A_sys = np.vstack(a_rows)
        B_sys = np.concatenate(b_rows, axis=1)  # (mult, rows, |block|)
        nrow = A_sys.shape[0]
        rhs = B_sys.transpose(1, 0, 2).reshape(nrow, mult * len(block))
        sol, *_ = np.linalg.lstsq(A_sys, rhs, rcond=None)
        resid = np.abs(A_sys @ sol - rhs).max() if rhs.size else 0.0
        worst = max(worst, float(resid))
        if resid > RESIDUAL_TOL:
            raise NumericalError(f"lowering system inconsistent at weight {w}: residual {resid:.3e}")
        vectors[w] = sol.reshape(len(targets), mult, len(block)).transpose(1, 0, 2)

    rows, cols, vals = [], [], []
    for w, targets in t_blocks.items():
        block = blocks[w]
        arr = vectors[w]
        for r in range(mult):
            for j, iM in enumerate(targets):
                vec = arr[r, j]
                keep = np.abs(vec) > PRUNE
                rows.append(block[keep])
                cols.append(np.full(int(keep.sum()), r * irt.dim + iM))
                vals.append(vec[keep])
    matrix = sp.csc_matrix(
        (np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(d1 * d2, mult * irt.dim)
    )
    matrix.sort_indices()
    log.debug("built %s: multiplicity %d, worst residual %.2e", coupling.key, mult, worst)
    return CGTable(coupling, mult, matrix)


def _hw_index(ir: IrrepData) -> int:
    return repcore.pattern_index(ir.shape)[repcore.highest_weight_pattern(ir.shape)]


# ---------------------------------------------------------------------------
# verification

@dataclass
class VerifyReport:
    orthonormality: float
    completeness: float | None
    selection_violations: int
    intertwining: float
    worst_location: str
    tolerance: float = 1e-10

    @property
    def passed(self) -> bool:
        ok = self.orthonormality < self.tolerance and self.selection_violations == 0
        ok = ok and self.intertwining < self.tolerance * 10
        if self.completeness is not None:
            ok = ok and self.completeness < self.tolerance
        return ok


def _selection_violations(table: CGTable) -> int:
    coo = table.matrix.tocoo()
    d2, dt = table.ir2.dim, table.irt.dim
    w = table.ir1.weights[coo.row // d2] + table.ir2.weights[coo.row % d2]
    wt = table.irt.weights[coo.col % dt]
    return int(np.any(w != wt, axis=1).sum())


def _intertwining(table: CGTable) -> float:
    """max |F12 W - W F_target| over the lowering and raising operators."""
    ir1, ir2, irt = table.ir1, table.ir2, table.irt
    W = table.matrix.tocsr()
    worst = 0.0
    for l in range(1, table.coupling.m):
        F12 = _product_lowering(ir1, ir2, l)
        Ft = sp.block_diag([irt.lowering[l - 1]] * table.multiplicity, format="csr")
        for a, b in ((F12, Ft), (F12.T.tocsr(), Ft.T.tocsr())):
            diff = a @ W - W @ b
            if diff.nnz:
                worst = max(worst, float(np.abs(diff.data).max()))
    return worst


def verify_table(table: CGTable, tolerance: float = 1e-10) -> VerifyReport:
    """Check the column orthonormality relation, selection rules and intertwining."""
    W = table.matrix
    gram = (W.T @ W).toarray() - np.eye(W.shape[1])
    idx = np.unravel_index(np.argmax(np.abs(gram)), gram.shape) if gram.size else (0, 0)
    ortho = float(np.abs(gram).max()) if gram.size else 0.0
    dt = table.irt.dim
    loc = f"columns (M={idx[0] % dt}, r={idx[0] // dt + 1}) / (M={idx[1] % dt}, r={idx[1] // dt + 1})"
    return VerifyReport(ortho, None, _selection_violations(table), _intertwining(table), loc, tolerance)


def verify_decomposition(tables: Sequence[CGTable], complete: bool, tolerance: float = 1e-10) -> VerifyReport:
    """Check a family of tables for one product space.

    The stacked isometry must have orthonormal columns across tables.  When
    ``complete`` is true the tables exhaust the product and the first
    relation sum_{M,r} C C = delta is checked in full.
    """
    if not tables:
        raise ArgumentError("no tables to verify")
    f1, f2 = tables[0].coupling.factor1, tables[0].coupling.factor2
    if any(t.coupling.factor1 != f1 or t.coupling.factor2 != f2 for t in tables):
        raise ArgumentError("tables belong to different products")
    W = sp.hstack([t.matrix for t in tables]).tocsc()
    gram = (W.T @ W).toarray() - np.eye(W.shape[1])
    ortho = float(np.abs(gram).max())
    completeness = None
    if complete:
        if W.shape[1] != W.shape[0]:
            completeness = float("inf")
        else:
            completeness = float(np.abs((W @ W.T).toarray() - np.eye(W.shape[0])).max())
    reports = [verify_table(t, tolerance) for t in tables]
    return VerifyReport(
        max(ortho, max(r.orthonormality for r in reports)),
        completeness,
        sum(r.selection_violations for r in reports),
        max(r.intertwining for r in reports),
        "stacked tables",
        tolerance,
    )


# ---------------------------------------------------------------------------
# on-disk cache

def cache_dir(explicit: str | os.PathLike | None = None) -> Path | None:
    if explicit is not None:
        return Path(explicit)
    env = os.environ.get(CACHE_ENV)
    return Path(env) if env else None


def cache_path(coupling: Coupling, directory: str | os.PathLike) -> Path:
    def s(x: Sequence[int]) -> str:
        return "-".join(str(v) for v in x)

    name = f"cg_m{coupling.m}_{s(coupling.factor1)}_{s(coupling.factor2)}_{s(coupling.target)}.txt"
    return Path(directory) / name


def _payload(table: CGTable) -> str:
    return "".join(f"{i1} {i2} {iM} {r} {v:.17g}\n" for i1, i2, iM, r, v in table.items())


def cache_store(table: CGTable, directory: str | os.PathLike) -> Path:
    path = cache_path(table.coupling, directory)
    path.parent.mkdir(parents=True, exist_ok=True)
    payload = _payload(table)
    digest = hashlib.sha256(payload.encode()).hexdigest()
    header = f"# key={table.coupling.key} mult={table.multiplicity} count={table.matrix.nnz} sha256={digest}\n"
    tmp = path.with_suffix(".tmp")
    tmp.write_text(header + payload)
    tmp.replace(path)
    return path


def cache_load(coupling: Coupling, directory: str | os.PathLike) -> CGTable | None:
    """Load a cached table, or None on any mismatch (treated as a cache miss)."""
    path = cache_path(coupling, directory)
    try:
        text = path.read_text()
    except OSError:
        return None
    header, _, payload = text.partition("\n")
    try:
        fields = dict(item.split("=", 1) for item in header.lstrip("# ").split(" "))
        if fields["key"] != coupling.key:
            return None
        if hashlib.sha256(payload.encode()).hexdigest() != fields["sha256"]:
            log.warning("checksum mismatch in %s, rebuilding", path)
            return None
        mult, count = int(fields["mult"]), int(fields["count"])
        data = np.loadtxt(payload.splitlines(), ndmin=2) if payload else np.zeros((0, 5))
        if data.shape[0] != count:
            return None
        d2 = irrep_data(coupling.factor2).dim
        dt = irrep_data(coupling.target).dim
        d1 = irrep_data(coupling.factor1).dim
        rows = data[:, 0].astype(np.int64) * d2 + data[:, 1].astype(np.int64)
        cols = (data[:, 3].astype(np.int64) - 1) * dt + data[:, 2].astype(np.int64)
        vals = data[:, 4]
    except (KeyError, ValueError, IndexError):
        log.warning("unreadable cache file %s, rebuilding", path)
        return None
    matrix = sp.csc_matrix((vals, (rows, cols)), shape=(d1 * d2, mult * dt))
    matrix.sort_indices()
    return CGTable(coupling, mult, matrix)


_MEMO: dict[Coupling, CGTable] = {}


def get_table(coupling: Coupling, directory: str | os.PathLike | None = None) -> CGTable:
    """Memoized table lookup: memory, then disk cache, then a fresh build."""
    where = cache_dir(directory)
    if coupling in _MEMO:
        table = _MEMO[coupling]
        # a table built before a cache was configured still gets written out
        if where is not None and not cache_path(coupling, where).exists():
            cache_store(table, where)
        return table
    table = cache_load(coupling, where) if where is not None else None
    if table is None:
        table = build_table(coupling)
        if where is not None:
            cache_store(table, where)
    _MEMO[coupling] = table
    return table


def fock_table(n: int, m: int, k: int, directory: str | os.PathLike | None = None) -> CGTable:
    return get_table(Coupling.fock(n, m, k), directory)


def square_table(k: int, l: int, m: int, directory: str | os.PathLike | None = None) -> CGTable:
    return get_table(Coupling.square(k, l, m), directory)
