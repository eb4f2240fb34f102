"""Exponential-norm bounds for fast-slow block operators.

Two tools: a crude perturbation bound ||e^{(A+B)t}|| <= k e^{(lam+k||B||)t},
and a sharper fast-slow estimate that first (approximately) removes the
off-diagonal coupling between a small slow block and a strongly decaying
fast block.  The change of basis is triangular with corrections W_b, W_c
built from resolvents of the fast block, and only norms of the coupling
enter the final constants.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .intervals import (
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    NotContractive,
    _mul_arrays,
    mat_inverse_enclosure,
)


class SemigroupHypothesisFailed(IntervalError):
    def __init__(self, which: int, detail: str):
        super().__init__(f"fast-slow hypothesis {which} failed: {detail}")
        self.which = which


class SpectraOverlap(IntervalError):
    pass


class SingularResolvent(IntervalError):
    pass


@dataclass(frozen=True)
class FastSlowInput:
    mu1: Interval
    mu_inf: Interval
    C1: Interval
    C_inf: Interval
    delta_a: Interval
    delta_b: Interval
    delta_c: Interval
    delta_d: Interval
    lambda_inv_norm: Interval
    sigma_L1: list[Interval]

    def __post_init__(self):
        for name in ("delta_a", "delta_b", "delta_c", "delta_d"):
            if getattr(self, name).lo < 0.0:
                raise IntervalError(f"{name} must be nonnegative")
        if not self.sigma_L1:
            raise IntervalError("slow spectrum must be nonempty")


@dataclass(frozen=True)
class SemigroupBound:
    Cs: Interval
    lambda_s: Interval


def perturbation_bound(k: Interval, lam: Interval, B_norm: Interval) -> SemigroupBound:
    if k.lo < 1.0:
        raise IntervalError("prefactor must be at least 1")
    if B_norm.lo < 0.0:
        raise IntervalError("perturbation norm must be nonnegative")
    return SemigroupBound(Cs=k, lambda_s=lam + k * B_norm)


def fast_slow_bound(inp: FastSlowInput, p_norm_is_1: bool = False) -> SemigroupBound:
    one = Interval(1.0)
    linv = inp.lambda_inv_norm
    db, dc, dd = inp.delta_b, inp.delta_c, inp.delta_d

    sup_lam = Interval(0.0)
    for lam in inp.sigma_L1:
        sup_lam = sup_lam.imax(lam.abs())
    h1 = linv * (dd + sup_lam)
    if not h1.hi < 1.0:
        raise SemigroupHypothesisFailed(1, f"resolvent smallness bound is {h1!r}")

    eps = Interval(0.0)
    for lam in inp.sigma_L1:
        den = one - linv * (dd + lam.abs())
        if not den.lo > 0.0:
            raise SemigroupHypothesisFailed(1, f"resolvent series diverges at {lam!r}")
        eps = eps + linv / den

    ebc = eps * db * dc
    h2_lhs = inp.mu_inf + inp.C_inf * (dd + ebc * (one + eps * ebc * eps))
    if not h2_lhs.hi < inp.mu1.lo:
        raise SemigroupHypothesisFailed(
            2, f"fast decay {h2_lhs!r} does not dominate slow rate {inp.mu1!r}"
        )

    cmax = inp.C1.imax(inp.C_inf)
    Cs = (one + eps * db).pow_int(2) * (one + eps * dc).pow_int(2) * cmax
    if p_norm_is_1:
        delta = ebc * (
            (one + eps * dc * (one + eps * db)).imax(
                eps * db * (Interval(2.0) + eps * eps * db * dc)
            )
        )
    else:
        delta = ebc * (
            one + eps * (Interval(2.0) * db + dc) + eps * ebc * (one + eps * db)
        )
    lam_s = inp.mu1 + Cs * inp.delta_a + delta * cmax
    return SemigroupBound(Cs=Cs, lambda_s=lam_s)


# ----------------------------------------------------------------------
# Rigorous eigenpair enclosures for small real matrices (Krawczyk on the
# bordered system), used by the approximate block diagonalization.

def _krawczyk_eigenpair(
    A: IntervalMatrix, lam_hat: float, v_hat: np.ndarray
) -> tuple[Interval, IntervalVector]:
    n = A.shape[0]
    anchor = int(np.argmax(np.abs(v_hat)))
    v_hat = v_hat / v_hat[anchor]

    Am = A.mid()
    J = np.zeros((n + 1, n + 1))
    J[:n, :n] = Am - lam_hat * np.eye(n)
    J[:n, n] = -v_hat
    J[n, anchor] = 1.0
    try:
        Y = np.linalg.inv(J)
    except np.linalg.LinAlgError as exc:
        raise SingularResolvent(f"bordered Jacobian singular: {exc}") from None
    Y_iv = IntervalMatrix(Y)

    def residual(v: IntervalVector, lam: Interval) -> IntervalVector:
        r = (A @ v) - v.scale(lam)
        parts = list(r) + [v[anchor] - Interval(1.0)]
        return IntervalVector.from_intervals(parts)

    r0 = Y_iv @ residual(IntervalVector(v_hat, v_hat.copy()), Interval(lam_hat))
    rad = 4.0 * max(r0.mag().max(), 1e-15 * (1.0 + abs(lam_hat)))
    for _ in range(8):
        X_lo = np.concatenate([v_hat, [lam_hat]]) - rad
        X_hi = np.concatenate([v_hat, [lam_hat]]) + rad
        X = IntervalVector(X_lo, X_hi)
        vX = IntervalVector(X_lo[:n], X_hi[:n])
        lamX = X[n]
        # Jacobian over the box.
        JX_lo = np.zeros((n + 1, n + 1))
        JX_hi = np.zeros((n + 1, n + 1))
        block = A + IntervalMatrix.eye(n).scale(-lamX)
        JX_lo[:n, :n] = block.lo
        JX_hi[:n, :n] = block.hi
        JX_lo[:n, n] = (-vX).lo
        JX_hi[:n, n] = (-vX).hi
        JX_lo[n, anchor] = JX_hi[n, anchor] = 1.0
        K_delta = (IntervalMatrix.eye(n + 1) - (Y_iv @ IntervalMatrix(JX_lo, JX_hi))) @ (
            X - IntervalVector(np.concatenate([v_hat, [lam_hat]]), np.concatenate([v_hat, [lam_hat]]))
        )
        K = K_delta - r0
        inside = np.all(np.concatenate([v_hat, [lam_hat]]) + K.lo > X_lo) and np.all(
            np.concatenate([v_hat, [lam_hat]]) + K.hi < X_hi
        )
        if inside:
            lo = np.concatenate([v_hat, [lam_hat]]) + K.lo
            hi = np.concatenate([v_hat, [lam_hat]]) + K.hi
            return Interval(lo[n], hi[n]), IntervalVector(lo[:n], hi[:n])
        rad *= 8.0
    raise SingularResolvent("eigenpair enclosure did not verify (defective or clustered)")


def enclose_real_eigensystem(A: IntervalMatrix) -> tuple[list[Interval], IntervalMatrix, IntervalMatrix]:
    """Enclose eigenvalues, eigenvectors, and the dual basis of A.

    Requires a real spectrum with distinct eigenvalues.  Columns of the
    returned V enclose right eigenvectors; rows of U enclose the dual
    basis, with U V = I exactly for the true objects.
    """
    n = A.shape[0]
    vals, vecs = np.linalg.eig(A.mid())
    if np.max(np.abs(vals.imag)) > 0.0:
        raise SingularResolvent("complex spectrum not supported")
    order = np.argsort(vals.real)[::-1]
    lams: list[Interval] = []
    cols_lo = np.zeros((n, n))
    cols_hi = np.zeros((n, n))
    for j, idx in enumerate(order):
        lam, v = _krawczyk_eigenpair(A, float(vals.real[idx]), vecs.real[:, idx])
        lams.append(lam)
        cols_lo[:, j] = v.lo
        cols_hi[:, j] = v.hi
    V = IntervalMatrix(cols_lo, cols_hi)
    U = mat_inverse_enclosure(V)
    return lams, V, U


def approx_diagonalize(
    A: IntervalMatrix, B: IntervalMatrix, C: IntervalMatrix, D: IntervalMatrix
) -> tuple[IntervalMatrix, IntervalMatrix, list[IntervalMatrix]]:
    """Triangular corrections W_b, W_c and the conjugation defect E.

    For M1 = [[A, B], [C, D]] with separated spectra, returns (W_b, W_c,
    E blocks [E11, E12, E21, E22]) such that conjugating M1 by the
    triangular change of basis leaves diag(A, D) + E.
    """
    n = A.shape[0]
    m = D.shape[0]
    if B.shape != (n, m) or C.shape != (m, n):
        raise IntervalError("off-diagonal block shapes do not match")
    lams, V, U = enclose_real_eigensystem(A)

    Wb = IntervalMatrix.zeros(n, m)
    Wc = IntervalMatrix.zeros(m, n)
    for k in range(n):
        try:
            Rk = mat_inverse_enclosure(D - IntervalMatrix.eye(m).scale(lams[k]))
        except NotContractive as exc:
            raise SpectraOverlap(
                f"eigenvalue {lams[k]!r} too close to the fast spectrum"
            ) from exc
        vk = V.col(k)
        uk = U.row(k)
        row = Rk.transpose() @ (B.transpose() @ uk)  # u_k B (D - lam_k)^(-1)
        Wb = Wb + _outer(vk, row)
        col = Rk @ (C @ vk)
        Wc = Wc + _outer(col, uk).scale(-1.0)

    In = IntervalMatrix.eye(n)
    Im = IntervalMatrix.eye(m)
    BWc = B @ Wc
    WcB = Wc @ B
    E11 = (In + Wb @ Wc) @ BWc
    E12 = BWc @ Wb + (Wb @ (WcB @ (Im + Wc @ Wb)))
    E21 = (WcB @ Wc).scale(-1.0)
    E22 = (WcB @ (Im + Wc @ Wb)).scale(-1.0)
    return Wb, Wc, [E11, E12, E21, E22]


def _outer(col: IntervalVector, row: IntervalVector) -> IntervalMatrix:
    lo, hi = _mul_arrays(
        col.lo[:, None], col.hi[:, None], row.lo[None, :], row.hi[None, :]
    )
    return IntervalMatrix(lo, hi)
