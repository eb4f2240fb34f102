"""Approximate eigenframe of the linearization and the adapted norms.

The finite Galerkin block is diagonalized in floating point.  Everything
downstream treats the numerical eigenvectors as an exact change of basis
and absorbs the diagonalization error into rigorously computed defect
tensors, so the frame itself only has to provide enclosures of inverse
and column norms, plus the operator-norm formulas between the adapted
space X and the ambient weighted sequence space.

The X-norm of a vector with head coefficients phi_0..phi_N (coordinates
in the eigenvector basis) and tail phi_inf is
|phi|_X = sum_n |phi_n| |q_n| + |phi_inf|.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .field import SHParams, ValidatedEquilibrium, galerkin_DF, linear_eigenvalue
from .intervals import Interval, IntervalError, IntervalMatrix, IntervalVector, isum, mat_inverse_enclosure
from .sequences import CosSeries, conv, conv_matrix, norm_l1nu, weight_vector


class OrderingViolation(IntervalError):
    pass


class ShapeMismatch(IntervalError):
    pass


SEPARATION_MARGIN = 1e-6


@dataclass(frozen=True)
class SubspaceSplit:
    n_u: int
    n_theta: int
    n_f: int
    N: int

    def __post_init__(self):
        if self.n_u < 1 or self.n_f < 1:
            raise ShapeMismatch("need at least one unstable and one stable mode")
        if self.n_u + self.n_f != self.N + 1:
            raise ShapeMismatch("n_u + n_f must equal N + 1")
        if self.n_theta not in (0, 1):
            raise ShapeMismatch("only n_theta in {0, 1} is supported")
        if self.n_theta > self.n_f:
            raise ShapeMismatch("n_theta exceeds the stable dimension")

    @property
    def m_s(self) -> int:
        return 2 if self.n_theta == 0 else 3

    def stable_blocks(self) -> list[tuple[str, slice]]:
        """Finite stable blocks as (name, slice into stable column index)."""
        if self.n_theta == 0:
            return [("f", slice(0, self.n_f))]
        return [("theta", slice(0, self.n_theta)), ("f", slice(self.n_theta, self.n_f))]

    def block_names(self) -> list[str]:
        """All block names, unstable first, tail last."""
        return ["u"] + [name for name, _ in self.stable_blocks()] + ["inf"]


@dataclass(frozen=True)
class EigenFrame:
    params: SHParams
    split: SubspaceSplit
    mu_unstable: list[Interval]
    mu_stable: list[Interval]
    Q_u: np.ndarray
    Q_f: np.ndarray
    QN: np.ndarray
    BN: IntervalMatrix
    col_norms: list[Interval]
    lam: dict[str, Interval]
    model_mu: np.ndarray

    @property
    def nu(self) -> float:
        return self.params.nu

    def rate(self, name: str) -> float:
        """Upper growth rate of the diagonal model on block `name`."""
        return self.lam[name].hi

    def column_slice(self, name: str) -> slice:
        """Columns of QN belonging to a finite block."""
        n_u = self.split.n_u
        if name == "u":
            return slice(0, n_u)
        for bname, sl in self.split.stable_blocks():
            if bname == name:
                return slice(n_u + sl.start, n_u + sl.stop)
        raise ShapeMismatch(f"unknown finite block {name!r}")

    def to_json_dict(self) -> dict:
        return {
            "split": {
                "n_u": self.split.n_u,
                "n_theta": self.split.n_theta,
                "n_f": self.split.n_f,
                "N": self.split.N,
            },
            "mu_unstable": [[m.lo, m.hi] for m in self.mu_unstable],
            "mu_stable": [[m.lo, m.hi] for m in self.mu_stable],
            "QN": self.QN.tolist(),
            "col_norms": [[c.lo, c.hi] for c in self.col_norms],
            "lambda": {k: [v.lo, v.hi] for k, v in self.lam.items()},
            "model_mu": self.model_mu.tolist(),
        }


def _weighted_series(nu: float, col) -> CosSeries:
    if isinstance(col, IntervalVector):
        return CosSeries(nu, col)
    return CosSeries.from_floats(nu, np.asarray(col, dtype=float))


def build_frame(p: SHParams, v: ValidatedEquilibrium, split: SubspaceSplit) -> EigenFrame:
    if split.N != p.N:
        raise ShapeMismatch("split truncation differs from field truncation")
    N = p.N
    a = v.a_bar.coeffs.mid()

    wdiag = np.ones(N + 1)
    wdiag[0] = 1.0 / math.sqrt(2.0)
    DF_f = galerkin_DF(p, a)
    S_f = wdiag[:, None] * DF_f / wdiag[None, :]
    S_f = 0.5 * (S_f + S_f.T)
    vals, V = np.linalg.eigh(S_f)
    order = np.argsort(vals)[::-1]
    vals = vals[order]
    QN = (V / wdiag[:, None])[:, order]

    w = weight_vector(p.nu, N)
    for k in range(N + 1):
        nrm = float(np.dot(np.abs(QN[:, k]), w.mid()))
        QN[:, k] /= nrm
        if QN[np.argmax(np.abs(QN[:, k])), k] < 0.0:
            QN[:, k] = -QN[:, k]

    n_pos = int(np.sum(vals > 0.0))
    if n_pos != split.n_u:
        raise OrderingViolation(
            f"{n_pos} positive eigenvalues but split expects {split.n_u}"
        )
    if v.morse_index is not None and v.morse_index != split.n_u:
        raise OrderingViolation("split disagrees with the verified Morse index")

    BN = mat_inverse_enclosure(IntervalMatrix(QN))
    col_norms = [norm_l1nu(_weighted_series(p.nu, QN[:, k])) for k in range(N + 1)]

    # Fatten the numerical eigenvalues by Gershgorin discs of the
    # conjugated rigorous Jacobian.
    sq = conv(v.a_bar, v.a_bar)
    eps = Interval(0.0, v.eps.hi)
    fat = eps * (Interval(2.0) * norm_l1nu(v.a_bar) + eps)
    w3 = weight_vector(p.nu, 2 * N)
    diag_lo = np.zeros((N + 1, N + 1))
    diag_hi = np.zeros((N + 1, N + 1))
    for k in range(N + 1):
        lk = linear_eigenvalue(p, k)
        diag_lo[k, k] = lk.lo
        diag_hi[k, k] = lk.hi
    pad_lo = np.empty((N + 1, N + 1))
    pad_hi = np.empty((N + 1, N + 1))
    for k in range(N + 1):
        for j in range(N + 1):
            mult = 1 if j == 0 else 2
            slack = (Interval(3.0 * mult) * fat / w3[min(abs(k - j), k + j)]).hi
            pad_lo[k, j] = -slack
            pad_hi[k, j] = slack
    DFN = (
        IntervalMatrix(diag_lo, diag_hi)
        - conv_matrix(sq, N + 1, N + 1).scale(3.0)
        + IntervalMatrix(pad_lo, pad_hi)
    )
    Z = BN @ (DFN @ IntervalMatrix(QN))
    mu = []
    for k in range(N + 1):
        rad = isum(
            ((col_norms[i] * Z[i, k].abs()) for i in range(N + 1) if i != k)
        ) / col_norms[k]
        mu.append(Interval((Z[k, k] - rad.abs()).lo, (Z[k, k] + rad.abs()).hi))

    n_u = split.n_u
    mu_unstable = mu[:n_u]
    mu_stable = mu[n_u:]

    def separated(upper: Interval, lower: Interval, what: str):
        if not upper.lo > lower.hi + SEPARATION_MARGIN:
            raise OrderingViolation(
                f"eigenvalue separation at {what} below margin: "
                f"{upper!r} vs {lower!r}"
            )

    separated(mu_unstable[-1], Interval(0.0), "stability boundary")
    if not mu_stable[0].hi < 0.0:
        raise OrderingViolation("leading stable eigenvalue not negative")
    lam_tail = linear_eigenvalue(p, N + 1)
    lam: dict[str, Interval] = {"u": Interval(float(vals[n_u - 1]))}
    blocks = split.stable_blocks()
    for bi, (name, sl) in enumerate(blocks):
        lam[name] = Interval(float(vals[n_u + sl.start]))
        nxt = (
            mu_stable[blocks[bi + 1][1].start] if bi + 1 < len(blocks) else lam_tail
        )
        separated(mu_stable[sl.stop - 1], nxt, f"block {name}")
    lam["inf"] = lam_tail

    return EigenFrame(
        params=p,
        split=split,
        mu_unstable=mu_unstable,
        mu_stable=mu_stable,
        Q_u=QN[:, :n_u].copy(),
        Q_f=QN[:, n_u:].copy(),
        QN=QN,
        BN=BN,
        col_norms=col_norms,
        lam=lam,
        model_mu=vals.copy(),
    )


# ----------------------------------------------------------------------
# Norms.

def x_norm(frame: EigenFrame, head: IntervalVector, tail: Interval = Interval(0.0)) -> Interval:
    """X-norm from eigen-basis head coefficients and a tail norm bound."""
    if len(head) != frame.split.N + 1:
        raise ShapeMismatch("head length must be N + 1")
    s = isum((head[k].abs() * frame.col_norms[k] for k in range(len(head))))
    return s + tail.abs()


def frame_coordinates(frame: EigenFrame, a: CosSeries) -> tuple[IntervalVector, Interval]:
    """Split a sequence into eigen-basis head coefficients and tail norm."""
    N = frame.split.N
    if a.nu != frame.nu:
        raise ShapeMismatch("weight mismatch between series and frame")
    padded = a.padded(max(a.degree, N))
    head = frame.BN @ padded.coeffs[: N + 1]
    d = padded.degree
    w = weight_vector(frame.nu, d)
    tail_terms = [(padded.coeffs[k].abs() * w[k]).hi for k in range(N + 1, d + 1)]
    tail = isum(tail_terms) + Interval(0.0, padded.tail.hi)
    return head, tail


OP_SIGNATURES = ("X:X", "X:l1", "l1:X")


def opnorm(
    frame: EigenFrame,
    M: IntervalMatrix,
    signature: str,
    tail: Interval | None = None,
) -> Interval:
    """Operator norm upper bound from weighted column maxima.

    M is the finite (N+1)x(N+1) block; `tail` is an optional scalar c for
    a c*identity action on the tail modes (None means the operator is
    zero there).  Columns of M are indexed by eigenvectors on an X source
    and by modes on an l1 source, and likewise for rows on the target.
    """
    if signature not in OP_SIGNATURES:
        raise ShapeMismatch(f"unknown signature {signature!r}")
    N = frame.split.N
    if M.shape != (N + 1, N + 1):
        raise ShapeMismatch(f"expected block of shape {(N + 1, N + 1)}")
    w = weight_vector(frame.nu, N)
    best = Interval(0.0)
    for k in range(N + 1):
        colmag = IntervalVector(M.col(k).mig(), M.col(k).mag())
        if signature == "X:X":
            num = isum((colmag[i] * frame.col_norms[i] for i in range(N + 1)))
            den = frame.col_norms[k]
        elif signature == "X:l1":
            num = isum((colmag[i] * w[i] for i in range(N + 1)))
            den = frame.col_norms[k]
        else:
            num = isum((colmag[i] * frame.col_norms[i] for i in range(N + 1)))
            den = w[k]
        best = best.imax(num / den)
    if tail is not None:
        best = best.imax(tail.abs())
    return Interval(0.0, best.hi)
