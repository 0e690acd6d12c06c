"""Decay fitting, fidelity aggregation, length and sampling bounds, and filter moments."""

from __future__ import annotations

import math
from dataclasses import asdict, dataclass
from fractions import Fraction
from math import comb
from typing import Mapping, Sequence

import numpy as np

from . import cg, repcore
from .errors import ArgumentError, FitError
from .filter import FilterContext, RBSignal, frame_eigenvalue_pnr, overlap_vectors, sector_phases

R_MAX = 1 + 1e-6


@dataclass
class FitResult:
    A: float
    r: float
    residual: float
    stderr_A: float
    stderr_r: float
    iterations: int
    at_bound: bool = False

    def to_dict(self) -> dict:
        return asdict(self)


def _usable(signal: RBSignal) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    l = np.asarray(signal.lengths, dtype=float)
    y = np.asarray(signal.estimates, dtype=float)
    s = np.asarray(signal.stderr, dtype=float)
    ok = np.isfinite(y) & np.isfinite(s)
    l, y, s = l[ok], y[ok], s[ok]
    if len(np.unique(l)) < 2:
        raise FitError("need at least two distinct lengths with finite estimates")
    if np.all(s > 0):
        w = 1 / s**2
    else:
        w = np.ones_like(y)
    return l, y, w


def fit_exponential(signal: RBSignal, max_iter: int = 200, tol: float = 1e-10) -> FitResult:
    """Fit A r^l by weighted least squares.

    Starts from a weighted log-linear fit on |y| (sign carried by A) and
    refines with damped Gauss-Newton on the original scale.
    """
    l, y, w = _usable(signal)
    nz = y != 0
    if nz.sum() < 2 or len(np.unique(l[nz])) < 2:
        raise FitError("need at least two nonzero estimates to initialize the fit")
    sign = 1.0 if np.sum(w * y) >= 0 else -1.0
    # var(log|y|) ~ stderr^2 / y^2
    lw = w[nz] * y[nz] ** 2
    X = np.column_stack([np.ones(nz.sum()), l[nz]])
    coef = np.linalg.lstsq(X * np.sqrt(lw)[:, None], np.log(np.abs(y[nz])) * np.sqrt(lw), rcond=None)[0]
    A, r = sign * math.exp(coef[0]), math.exp(coef[1])

    def residuals(A: float, r: float) -> np.ndarray:
        return np.sqrt(w) * (y - A * r**l)

    lam = 1e-3
    cost = float(residuals(A, r) @ residuals(A, r))
    it = 0
    for it in range(1, max_iter + 1):
        model = r**l
        J = np.sqrt(w)[:, None] * np.column_stack([model, A * l * r ** (l - 1)])
        res = residuals(A, r)
        grad = J.T @ res
        H = J.T @ J
        scale = max(abs(cost), np.finfo(float).tiny)
        if np.linalg.norm(grad) * max(1.0, abs(A), abs(r)) <= tol * max(scale, 1e-300) ** 0.5 * max(
            np.linalg.norm(J), 1.0
        ) or np.linalg.norm(grad) == 0:
            break
        improved = False
        while lam < 1e16:
            step = np.linalg.solve(H + lam * np.diag(np.diag(H) + 1e-300), grad)
            A_new, r_new = A + step[0], r + step[1]
            if r_new <= 0:
                lam *= 10
                continue
            new_cost = float(residuals(A_new, r_new) @ residuals(A_new, r_new))
            if new_cost <= cost:
                converged = abs(step[0]) <= 1e-15 * max(1.0, abs(A)) and abs(step[1]) <= 1e-15 * max(1.0, abs(r))
                A, r, cost = A_new, r_new, new_cost
                lam = max(lam / 10, 1e-12)
                improved = True
                break
            lam *= 10
        if not improved or converged:
            break
    else:
        raise FitError(f"Gauss-Newton did not converge in {max_iter} iterations")

    at_bound = False
    if r > R_MAX:
        # the data prefer growth; report the boundary value with the matching amplitude
        r, at_bound = 1.0, True
        A = float(np.sum(w * y) / np.sum(w))
        cost = float(residuals(A, r) @ residuals(A, r))
    model = r**l
    J = np.sqrt(w)[:, None] * np.column_stack([model, A * l * r ** (l - 1)])
    try:
        cov = np.linalg.inv(J.T @ J)
    except np.linalg.LinAlgError:
        cov = np.full((2, 2), np.nan)
    if not np.all(np.asarray(signal.stderr, dtype=float) > 0):
        # unweighted fit: scale the covariance by the residual variance
        dof = max(len(y) - 2, 1)
        cov = cov * cost / dof
    return FitResult(
        float(A), float(r), float(math.sqrt(cost)), float(math.sqrt(max(cov[0, 0], 0))),
        float(math.sqrt(max(cov[1, 1], 0))), it, at_bound,
    )


def transmittivity_from_rate(r: float, n: int) -> float:
    """sqrt(p) from an indicator decay rate r = p^n."""
    return r ** (1 / (2 * n))


# ---------------------------------------------------------------------------
# aggregation and bounds

def rb_fidelity(rates: Mapping[int, float], n: int, m: int) -> tuple[float, float]:
    """(F, covered weight) with F = dim^-2 sum_k d_k r_k over the provided irreps."""
    dim2 = repcore.dim_sector(n, m) ** 2
    for k in rates:
        if not 0 <= k <= n:
            raise ArgumentError(f"irrep {k} is not part of the n={n} sector")
    F = sum(repcore.dim_lambda(k, m) * r for k, r in rates.items()) / dim2
    covered = Fraction(sum(repcore.dim_lambda(k, m) for k in rates), dim2)
    return float(F), float(covered)


def combined_weight_exact(n: int, m: int, u: int) -> Fraction:
    if not 1 <= u <= n + 1:
        raise ArgumentError(f"u must lie in 1..{n + 1}")
    prod = Fraction(1)
    for i in range(1, u + 1):
        prod *= Fraction(n - i + 1, n + m - i)
    return 1 - prod**2


def combined_weight(n: int, m: int, u: int) -> float:
    """Share of dim^2 carried by the u largest irreps lambda_n, ..., lambda_{n-u+1}."""
    return float(combined_weight_exact(n, m, u))


def d_over_s(k: int, m: int) -> Fraction:
    return Fraction(2 * k + m - 1, m - 1) ** 2 * comb(k + m - 2, k) ** 3


def min_sequence_length(delta: float, alpha: float, k: int, m: int) -> int:
    if not 0 < delta <= 0.2:
        raise ArgumentError("the length bound needs 0 < delta <= 1/5")
    if not 0 < alpha < 1:
        raise ArgumentError("alpha must lie in (0, 1)")
    num = math.log(d_over_s(k, m)) + 2 * math.log(1 / alpha) + 4
    return math.ceil(num / (2 * math.log(1 / (2 * delta))) - 1e-12)


def sample_complexity(variance: float, eps: float, delta: float) -> int:
    """Chebyshev shot count ceil(variance / (eps^2 delta))."""
    if variance < 0 or not 0 < eps < 1 or not 0 < delta < 1:
        raise ArgumentError("need variance >= 0 and eps, delta in (0, 1)")
    value = variance / (eps * eps * delta)
    return math.ceil(round(value, 9))


# ---------------------------------------------------------------------------
# moments

def first_moment(k: int, n: int, m: int, input: Sequence[int], cache: str | None = None) -> float:
    """Tr[rho P_k(rho)] = sum_M (C_{N0, dual N0}^M)^2."""
    return FilterContext.build(n, m, input, [k], cache=cache).first_moment(k)


def _zero_columns(table: cg.CGTable) -> tuple[np.ndarray, np.ndarray]:
    zero = np.flatnonzero(~table.irt.weights.any(axis=1))
    cols = np.concatenate([r * table.irt.dim + zero for r in range(table.multiplicity)])
    return zero, cols


def second_moment(k: int, n: int, m: int, input: Sequence[int], cache: str | None = None) -> float:
    """E[f_k^2] under Haar-random g and Born-rule outcomes."""
    input = repcore.check_fock(input, n, m)
    states = repcore.sector_states(n, m)
    i0 = states.index(input)
    phases = sector_phases(n, m)
    s = float(frame_eigenvalue_pnr(k, m))
    u_k, _ = overlap_vectors(cg.fock_table(n, m, k, cache), n, m)  # (D, z_k)
    zero_k = np.flatnonzero(~cg.irrep_data(repcore.lambda_shape(k, m)).weights.any(axis=1))
    dk = len(cg.irrep_data(repcore.lambda_shape(k, m)).patterns)
    pair_rows = (zero_k[:, None] * dk + zero_k[None, :]).ravel()
    uu = np.einsum("na,nb->nab", u_k, u_k).reshape(len(states), -1)  # (D, z_k^2)
    total = np.zeros(len(states))
    for l in range(0, min(n, 2 * k) + 1):
        table = cg.square_table(k, l, m, cache)
        _, cols = _zero_columns(table)
        sub = table.matrix[pair_rows, :][:, cols].toarray()  # (z_k^2, mult * z_l)
        z_l = len(cols) // table.multiplicity
        X = (uu @ sub).reshape(len(states), table.multiplicity, z_l)
        u_l, _ = overlap_vectors(cg.fock_table(n, m, l, cache), n, m)  # (D, z_l)
        proj = np.einsum("nrz,nz->nr", X, u_l)  # (D, mult)
        total += (proj @ proj[i0]) / table.irt.dim
    value = phases[i0] * float(phases @ total) / s**2
    return value


def second_moment_bound(k: int, m: int) -> float:
    """Trivial upper bound s^-2."""
    return float(1 / frame_eigenvalue_pnr(k, m) ** 2)
