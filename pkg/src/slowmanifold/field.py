"""The Swift-Hohenberg vector field in cosine-mode coordinates.

u_t = -beta1 u_xxxx + beta2 u_xx + u - u^3 on [0, pi] with Neumann
conditions becomes a_k' = mu_k a_k - (a*a*a)_k with
mu_k = -beta1 k^4 - beta2 k^2 + 1.  This module evaluates the field and
its derivative rigorously, finds equilibria by a float Newton iteration,
certifies them a posteriori, and counts unstable eigenvalues.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace
from fractions import Fraction

import numpy as np

from .intervals import (
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    _frac_to_float_down,
    _frac_to_float_up,
    isum,
    mat_inverse_enclosure,
)
from .sequences import CosSeries, conv, conv_matrix, cubic, norm_l1nu, weight_vector


class NoConvergence(IntervalError):
    pass


class ValidationFailed(IntervalError):
    pass


class Inconclusive(IntervalError):
    def __init__(self, gap: float):
        super().__init__(f"eigenvalue enclosure straddles 0 (enclosure width {gap})")
        self.gap = gap


@dataclass(frozen=True)
class SHParams:
    beta1: float
    beta2: float
    N: int
    nu: float

    def __post_init__(self):
        if not self.beta1 > 0.0:
            raise IntervalError("beta1 must be positive")
        if self.nu < 1.0:
            raise IntervalError("nu must be >= 1")
        if self.N < 1:
            raise IntervalError("N must be >= 1")
        k = self.N + 1
        mu = linear_eigenvalue(self, k)
        if not mu.hi < 0.0:
            raise IntervalError(f"linear rate at mode {k} not negative: {mu!r}")
        # Decreasing beyond N: mu_k - mu_{k+1} >= k*(4 beta1 k^2 - 3|beta2|) > 0
        # for all k >= N+1 once it holds at k = N+1.
        margin = Interval(4.0) * Interval(self.beta1) * Interval(k).pow_int(2) - (
            Interval(3.0) * Interval(self.beta2).abs()
        )
        if not margin.lo > 0.0:
            raise IntervalError("linear rates not provably decreasing beyond N")


def linear_eigenvalue(p: SHParams, k: int) -> Interval:
    kk = Interval(float(k))
    return (
        Interval(1.0)
        - Interval(p.beta2) * kk.pow_int(2)
        - Interval(p.beta1) * kk.pow_int(4)
    )


def linear_eigenvalues_float(p: SHParams, upto: int) -> np.ndarray:
    k = np.arange(upto + 1, dtype=float)
    return -p.beta1 * k**4 - p.beta2 * k**2 + 1.0


def linear_diag(p: SHParams, degree: int) -> IntervalVector:
    return IntervalVector.from_intervals(
        [linear_eigenvalue(p, k) for k in range(degree + 1)]
    )


def apply_lin(p: SHParams, a: CosSeries) -> CosSeries:
    """The diagonal part, defined on explicitly represented modes only."""
    if a.tail.hi != 0.0:
        raise IntervalError("diagonal linear part is unbounded on tail mass")
    return CosSeries(a.nu, a.coeffs * linear_diag(p, a.degree))


def apply_F(p: SHParams, a: CosSeries) -> CosSeries:
    return apply_lin(p, a) - cubic(a)


def apply_DF(p: SHParams, a: CosSeries, h: CosSeries) -> CosSeries:
    return apply_lin(p, h) - conv(conv(a, a), h).scale(3.0)


# ----------------------------------------------------------------------
# Float Galerkin helpers (non-rigorous, for Newton and eigenvectors).

def _conv_full(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    ea = np.concatenate([a[:0:-1], a])
    eb = np.concatenate([b[:0:-1], b])
    full = np.convolve(ea, eb)
    mid = len(a) - 1 + len(b) - 1
    return full[mid:]


def galerkin_F(p: SHParams, a: np.ndarray) -> np.ndarray:
    lam = linear_eigenvalues_float(p, len(a) - 1)
    cub = _conv_full(_conv_full(a, a), a)
    return lam * a - cub[: len(a)]


def conv_matrix_float(b: np.ndarray, rows: int, cols: int) -> np.ndarray:
    out = np.zeros((rows, cols))
    d = len(b) - 1

    def at(m: int) -> float:
        return b[m] if m <= d else 0.0

    for k in range(rows):
        out[k, 0] = at(k)
        for j in range(1, cols):
            out[k, j] = at(abs(k - j)) + at(k + j)
    return out


def galerkin_DF(p: SHParams, a: np.ndarray) -> np.ndarray:
    n = len(a)
    lam = linear_eigenvalues_float(p, n - 1)
    sq = _conv_full(a, a)
    return np.diag(lam) - 3.0 * conv_matrix_float(sq, n, n)


def galerkin_DF_interval(p: SHParams, a: CosSeries) -> IntervalMatrix:
    """Enclosure of the Galerkin Jacobian at a point series of degree N."""
    N = a.degree
    sq = conv(a, a)
    return IntervalMatrix(np.diag(linear_eigenvalues_float(p, N))) - conv_matrix(
        sq, N + 1, N + 1
    ).scale(3.0)


def newton_equilibrium(
    p: SHParams, guess: np.ndarray, tol: float = 1e-14, max_iter: int = 50
) -> np.ndarray:
    a = np.asarray(guess, dtype=float).copy()
    if len(a) != p.N + 1:
        raise IntervalError(f"guess must have length {p.N + 1}")
    for _ in range(max_iter):
        r = galerkin_F(p, a)
        if np.max(np.abs(r)) <= tol:
            return a
        a = a - np.linalg.solve(galerkin_DF(p, a), r)
    r = galerkin_F(p, a)
    if np.max(np.abs(r)) <= tol:
        return a
    raise NoConvergence(f"residual {np.max(np.abs(r)):.3e} after {max_iter} iterations")


# ----------------------------------------------------------------------
# A-posteriori validation (radii polynomial on the weighted space).

def _exact_residual(p: SHParams, a: np.ndarray) -> list[Fraction]:
    """F(a) on modes 0..3N in exact rational arithmetic."""
    N = len(a) - 1
    af = [Fraction(x) for x in a]
    ext = af[:0:-1] + af  # modes -N..N
    sq = [Fraction(0)] * (4 * N + 1)  # modes -2N..2N
    for i, x in enumerate(ext):
        if x == 0:
            continue
        for j, y in enumerate(ext):
            sq[i + j] += x * y
    cub = [Fraction(0)] * (3 * N + 1)
    for m in range(3 * N + 1):
        s = Fraction(0)
        for i in range(-2 * N, 2 * N + 1):
            j = m - i
            if -N <= j <= N:
                s += sq[i + 2 * N] * ext[j + N]
        cub[m] = s
    b1, b2 = Fraction(p.beta1), Fraction(p.beta2)
    out = []
    for k in range(3 * N + 1):
        lin = (-b1 * k**4 - b2 * k**2 + 1) * (af[k] if k <= N else 0)
        out.append(lin - cub[k])
    return out


def _frac_interval(q: Fraction) -> Interval:
    return Interval(_frac_to_float_down(q), _frac_to_float_up(q))


@dataclass(frozen=True)
class ValidatedEquilibrium:
    a_bar: CosSeries
    eps: Interval
    morse_index: int | None = None


def _weighted_colnorm_upper(M: IntervalMatrix, w: IntervalVector) -> Interval:
    """max_j sum_k w_k |M_kj| / w_j over the columns of M."""
    best = Interval(0.0)
    for j in range(M.shape[1]):
        col = M.col(j)
        s = IntervalVector(col.mig(), col.mag()) * IntervalVector(w.lo, w.hi)
        best = best.imax(s.abs_upper_sum() / w[j])
    return best


def validate_equilibrium(p: SHParams, a_bar) -> ValidatedEquilibrium:
    if isinstance(a_bar, CosSeries):
        series = a_bar
    else:
        series = CosSeries.from_floats(p.nu, np.asarray(a_bar, dtype=float))
    if series.degree != p.N:
        raise IntervalError("equilibrium must be represented at degree N")
    if series.tail.hi != 0.0 or np.any(series.coeffs.lo != series.coeffs.hi):
        raise IntervalError("candidate equilibrium must have point coefficients")
    N = p.N
    w3 = weight_vector(p.nu, 3 * N)
    wN = w3[: N + 1]

    sq = conv(series, series)
    DFN = IntervalMatrix(np.diag(linear_eigenvalues_float(p, N))) - conv_matrix(
        sq, N + 1, N + 1
    ).scale(3.0)
    AN = np.linalg.inv(galerkin_DF(p, series.coeffs.mid()))
    AN_iv = IntervalMatrix(AN)

    lam_tail = [linear_eigenvalue(p, k) for k in range(N + 1, 3 * N + 1)]
    lam_edge = linear_eigenvalue(p, N + 1).abs()

    # Y: weighted norm of the approximate-inverse applied residual.  The
    # residual itself is evaluated in exact arithmetic so Y sits at the
    # Newton floor instead of accumulating interval rounding slack.
    Fexact = _exact_residual(p, series.coeffs.mid())
    terms = []
    for k in range(N + 1):
        yk = sum((Fraction(AN[k, j]) * Fexact[j] for j in range(N + 1)), Fraction(0))
        terms.append((_frac_interval(yk).abs() * wN[k]).hi)
    terms += [
        (_frac_interval(Fexact[N + 1 + i]).abs() / lam_tail[i].abs() * w3[N + 1 + i]).hi
        for i in range(2 * N)
    ]
    Y = Interval(0.0, isum(terms).hi)

    # Z0: finite-block defect of the approximate inverse.
    R0 = IntervalMatrix.eye(N + 1) - (AN_iv @ DFN)
    Z0 = Interval(0.0, _weighted_colnorm_upper(R0, wN).hi)

    # Z1: truncation coupling.  M3 holds the entries of h -> 3*(abar^2)*h
    # on modes 0..3N; A acts as AN on the head and diagonally on the rest.
    M3 = conv_matrix(sq, 3 * N + 1, 3 * N + 1).scale(3.0)
    nrm_sq = norm_l1nu(sq)
    z1_terms = []
    for j in range(N + 1):
        parts = [
            (M3[N + 1 + i, j].abs() / lam_tail[i].abs() * w3[N + 1 + i]).hi
            for i in range(2 * N)
        ]
        z1_terms.append((isum(parts) / wN[j]).hi)
    tail_tail = (Interval(3.0) * nrm_sq / lam_edge).hi
    for j in range(N + 1, 3 * N + 1):
        head = AN_iv @ M3[: N + 1, j]
        parts = [(head[k].abs() * wN[k]).hi for k in range(N + 1)]
        z1_terms.append(((isum(parts) / w3[j]) + Interval(tail_tail)).hi)
    Z1 = Interval(0.0, max(max(z1_terms), tail_tail))

    norm_A = Interval(
        max(_weighted_colnorm_upper(AN_iv, wN).hi, (Interval(1.0) / lam_edge).hi)
    )
    norm_a = norm_l1nu(series)

    base = (Interval(1.0) - Z0 - Z1).lo
    if base <= 0.0:
        raise ValidationFailed(f"first-order defect Z0+Z1 >= 1 (Y={Y.hi:.3e})")
    for mult in (1.2, 1.5, 2.0, 4.0, 16.0, 256.0):
        r = max(mult * Y.hi / base, 1e-300)
        rv = Interval(r)
        Z = Z0 + Z1 + Interval(3.0) * norm_A * rv * (Interval(2.0) * norm_a + rv)
        if (Y + (Z - Interval(1.0)) * rv).hi < 0.0 and Z.hi < 1.0:
            v = ValidatedEquilibrium(series, Interval(0.0, r))
            return replace(v, morse_index=verify_morse_index(p, v))
    raise ValidationFailed(
        f"radii polynomial has no verified positive root (Y={Y.hi:.3e}, "
        f"Z0={Z0.hi:.3e}, Z1={Z1.hi:.3e})"
    )


# ----------------------------------------------------------------------
# Morse index via weighted-column Gershgorin discs.

def _gershgorin_components(discs: list[tuple[float, float]]) -> list[tuple[float, float, int]]:
    """Merge overlapping intervals; return (lo, hi, count) components."""
    items = sorted(discs)
    out: list[tuple[float, float, int]] = []
    for lo, hi in items:
        if out and lo <= out[-1][1]:
            plo, phi, c = out[-1]
            out[-1] = (plo, max(phi, hi), c + 1)
        else:
            out.append((lo, hi, 1))
    return out


def verify_morse_index(p: SHParams, v: ValidatedEquilibrium) -> int:
    N = p.N
    series = v.a_bar
    eps = Interval(0.0, v.eps.hi)
    sq = conv(series, series)
    norm_a = norm_l1nu(series)
    # |atilde^2 - abar^2| <= eps (2|abar| + eps) mode by mode through 1/w_k.
    defect_norm = eps * (Interval(2.0) * norm_a + eps)
    w3 = weight_vector(p.nu, 3 * N + 1)
    wN = w3[: N + 1]

    DFN = IntervalMatrix(np.diag(linear_eigenvalues_float(p, N))) - conv_matrix(
        sq, N + 1, N + 1
    ).scale(3.0)
    pad_lo = np.empty((N + 1, N + 1))
    pad_hi = np.empty((N + 1, N + 1))
    for k in range(N + 1):
        for j in range(N + 1):
            mult = 1 if j == 0 else 2
            slack = (
                Interval(3.0 * mult) * defect_norm / w3[min(abs(k - j), k + j)]
            ).hi
            pad_lo[k, j] = -slack
            pad_hi[k, j] = slack
    DFN_t = DFN + IntervalMatrix(pad_lo, pad_hi)

    # Symmetrize (exact similarity), then diagonalize approximately.
    wdiag = np.ones(N + 1)
    wdiag[0] = 1.0 / math.sqrt(2.0)
    S_f = wdiag[:, None] * galerkin_DF(p, series.coeffs.mid()) / wdiag[None, :]
    S_f = 0.5 * (S_f + S_f.T)
    _, V = np.linalg.eigh(S_f)
    Vfull = V / wdiag[:, None]  # approximate eigenvectors of DF_N
    Vinv = mat_inverse_enclosure(IntervalMatrix(Vfull))
    G = Vinv @ (DFN_t @ IntervalMatrix(Vfull))

    # Weights for the Gershgorin column sums: eigenvector column norms on
    # the head, w_k on the tail.
    u = []
    for j in range(N + 1):
        col = CosSeries(p.nu, IntervalMatrix(Vfull).col(j))
        u.append(norm_l1nu(col))
    Bnorm_terms = []
    for k in range(N + 1):
        colk = Vinv.col(k)
        s = isum((colk[i].abs() * u[i] for i in range(N + 1)))
        Bnorm_terms.append((s / wN[k]).hi)
    B_norm = Interval(max(max(Bnorm_terms), 1.0))

    sq_mag = norm_l1nu(sq) + defect_norm  # |atilde*atilde| upper
    discs: list[tuple[float, float]] = []
    for j in range(N + 1):
        center = G[j, j]
        rad = isum((u[i] * G[i, j].abs() for i in range(N + 1) if i != j))
        # Coupling of this column into the tail modes.
        colj = CosSeries(p.nu, IntervalMatrix(Vfull).col(j))
        prod = conv(sq, colj).scale(3.0)
        tail_terms = [
            (prod.coeffs[k].abs() * w3[k]).hi for k in range(N + 1, prod.degree + 1)
        ]
        tail_part = isum(tail_terms) + Interval(3.0) * defect_norm * norm_l1nu(colj)
        rad = (rad + tail_part) / u[j]
        discs.append(((center - rad.abs()).lo, (center + rad.abs()).hi))

    # One disc covers every tail column k > N uniformly.
    tail_center_hi = (linear_eigenvalue(p, N + 1) + Interval(3.0) * sq_mag).hi
    tail_rad = (Interval(3.0) * sq_mag * (Interval(1.0) + B_norm)).hi
    if not tail_center_hi + tail_rad < 0.0:
        raise Inconclusive(tail_center_hi + tail_rad)

    index = 0
    for lo, hi, count in _gershgorin_components(discs):
        if lo > 0.0:
            index += count
        elif hi >= 0.0:
            raise Inconclusive(hi - lo)
    return index
