"""Taylor charts of the slow stable manifold and rigorous defect bounds.

The chart consists of a polynomial curve P(theta) solving the invariance
equation of the Galerkin field by power matching, together with polynomial
frame bundles Q_f(theta), Q_u(theta) solving the attached eigenvalue
equations.  Coefficients are floats; rigor enters afterwards, when the
conjugacy defects of the full (untruncated) field are enclosed over
theta in [-delta, delta] by interval evaluation of the polynomial
compositions.

Stored defect norms carry no domain weights: consumers divide by the
chart's slow-column weight once per theta-derivative slot.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .field import SHParams, _conv_full, galerkin_DF, galerkin_F, linear_diag
from .frame import EigenFrame
from .intervals import (
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    imax_many,
)
from .sequences import CosSeries, conv, conv_matrix, weight_vector

RESONANCE_TOL = 1e-6
RESIDUAL_TOL = 1e-12


class ChartError(IntervalError):
    pass


class Resonance(ChartError):
    """A shifted eigenvalue combination lands on the spectrum."""

    def __init__(self, m: int, j: int, gap: float):
        super().__init__(
            f"near-resonance at order {m}: eigenvalue {j} within {gap:.3e}"
        )
        self.m = m
        self.j = j
        self.gap = gap


@dataclass(frozen=True)
class TaylorChart:
    """Polynomial slow-manifold chart with attached frame bundles.

    P_coeffs[0] is the equilibrium, P_coeffs[1] the scaled slow
    eigenvector; Qf_coeffs[0] and Qu_coeffs[0] are the eigenvector
    matrices of the remaining finite directions.
    """

    nu: float
    n_theta: int
    order: int
    scaling: float
    lam_slow: float
    P_coeffs: np.ndarray   # (order+1, N+1)
    Qf_coeffs: np.ndarray  # (bundle_order+1, N+1, n_f - n_theta)
    Qu_coeffs: np.ndarray  # (bundle_order+1, N+1, n_u)

    @property
    def N(self) -> int:
        return self.P_coeffs.shape[1] - 1

    @property
    def bundle_order(self) -> int:
        return self.Qf_coeffs.shape[0] - 1

    def to_json_dict(self) -> dict:
        return {
            "nu": self.nu,
            "n_theta": self.n_theta,
            "order": self.order,
            "scaling": self.scaling,
            "lam_slow": self.lam_slow,
            "P_coeffs": self.P_coeffs.tolist(),
            "Qf_coeffs": self.Qf_coeffs.tolist(),
            "Qu_coeffs": self.Qu_coeffs.tolist(),
        }


def chart_from_json(d: dict) -> TaylorChart:
    return TaylorChart(
        nu=float(d["nu"]),
        n_theta=int(d["n_theta"]),
        order=int(d["order"]),
        scaling=float(d["scaling"]),
        lam_slow=float(d["lam_slow"]),
        P_coeffs=np.asarray(d["P_coeffs"], dtype=float),
        Qf_coeffs=np.asarray(d["Qf_coeffs"], dtype=float),
        Qu_coeffs=np.asarray(d["Qu_coeffs"], dtype=float),
    )


# ----------------------------------------------------------------------
# Float power matching.

def _min_gap(model_eigs: np.ndarray, shift: float) -> tuple[int, float]:
    j = int(np.argmin(np.abs(model_eigs - shift)))
    return j, float(abs(model_eigs[j] - shift))


def solve_homological_chain(A, model_eigs, shifts, forcing, seeds, order):
    """Power matching: solve (A - shifts(m) I) c_m = forcing(m, prefix).

    `seeds` supplies the constrained low-order coefficients; the chain
    runs from there through `order`.  Each shift is checked against the
    model eigenvalues before the solve.
    """
    A = np.asarray(A, dtype=float)
    model_eigs = np.asarray(model_eigs, dtype=float)
    eye = np.eye(A.shape[0])
    coeffs = [np.asarray(c, dtype=float) for c in seeds]
    for m in range(len(coeffs), order + 1):
        shift = float(shifts(m))
        j, gap = _min_gap(model_eigs, shift)
        if gap <= RESONANCE_TOL * max(1.0, abs(shift)):
            raise Resonance(m, j, gap)
        coeffs.append(np.linalg.solve(A - shift * eye, forcing(m, coeffs)))
    return coeffs


def _pair_conv(coeffs, t: int, amin: int = 0) -> np.ndarray:
    """sum over a+b=t, a,b >= amin of coeffs[a] * coeffs[b] (reflected)."""
    n = len(coeffs[0])
    acc = np.zeros(2 * n - 1)
    for a in range(amin, t // 2 + 1):
        b = t - a
        if b >= len(coeffs):
            continue
        term = _conv_full(coeffs[a], coeffs[b])
        acc += term if a == b else 2.0 * term
    return acc


def _cubic_forcing(N: int, psq_cache: dict):
    """Forcing closure for the cubic invariance chain.

    Collects every product P_a*P_b*P_c with a+b+c = m and no index equal
    to m; the excluded terms are the linearization already sitting on the
    left-hand side.
    """

    def forcing(m: int, coeffs) -> np.ndarray:
        c = np.zeros(3 * N + 1)
        for t in range(1, m):
            if t not in psq_cache:
                psq_cache[t] = _pair_conv(coeffs, t)
            c += _conv_full(psq_cache[t], coeffs[m - t])
        inner = _pair_conv(coeffs, m, amin=1)
        c += _conv_full(inner, coeffs[0])
        return c[: N + 1]

    return forcing


def _l1nu_float(vec: np.ndarray, w: np.ndarray) -> float:
    return float(np.dot(w[: len(vec)], np.abs(vec)))


def solve_invariance(
    p: SHParams,
    frame: EigenFrame,
    a_bar: np.ndarray,
    order: int = 20,
    coeff_tol: float = 1e-10,
    scaling: float | None = None,
) -> TaylorChart:
    """Power-matched solution of the slow invariance equation.

    Solves at unit eigenvector scale, then rescales the slow eigenvector
    so the top coefficient has weighted norm at most coeff_tol times the
    eigenvector's (bisection on the scale unless one is supplied).  The
    returned chart carries order-zero bundles equal to the eigenvector
    matrices; solve_bundles extends them.
    """
    split = frame.split
    if split.n_theta != 1:
        raise ChartError("chart construction needs exactly one slow direction")
    if order < 1:
        raise ChartError("chart order must be at least 1")
    N = p.N
    a0 = np.asarray(a_bar, dtype=float)
    if a0.shape != (N + 1,):
        raise ChartError("equilibrium vector has the wrong length")

    A = galerkin_DF(p, a0)
    mu = frame.model_mu
    lam_slow = float(mu[split.n_u])
    xi = frame.QN[:, split.n_u].copy()

    coeffs = solve_homological_chain(
        A, mu, lambda m: m * lam_slow, _cubic_forcing(N, {}), [a0, xi], order
    )

    w = weight_vector(p.nu, N).mid()
    if scaling is None:
        scaling = _scaling_bisection(_l1nu_float(coeffs[order], w), order, coeff_tol)
    if not 0.0 < scaling <= 1.0:
        raise ChartError(f"eigenvector scaling {scaling} outside (0, 1]")

    P = np.array([coeffs[k] * scaling**k for k in range(order + 1)])
    chart = TaylorChart(
        nu=p.nu,
        n_theta=1,
        order=order,
        scaling=float(scaling),
        lam_slow=lam_slow,
        P_coeffs=P,
        Qf_coeffs=frame.QN[None, :, split.n_u + 1 :].copy(),
        Qu_coeffs=frame.QN[None, :, : split.n_u].copy(),
    )
    res = invariance_residuals(p, chart)
    if order >= 2 and float(np.max(res[2:])) > RESIDUAL_TOL:
        raise ChartError(
            f"invariance residual {float(np.max(res[2:])):.3e} above "
            f"{RESIDUAL_TOL:.0e}"
        )
    return chart


def _scaling_bisection(top_norm: float, order: int, coeff_tol: float) -> float:
    """Largest s in (0,1] with s^(order-1) * top_norm <= coeff_tol."""
    if order == 1 or top_norm <= coeff_tol:
        return 1.0
    lo, hi = 0.0, 1.0
    for _ in range(200):
        mid = 0.5 * (lo + hi)
        if mid ** (order - 1) * top_norm <= coeff_tol:
            lo = mid
        else:
            hi = mid
    if lo == 0.0:
        raise ChartError("no admissible eigenvector scaling")
    return lo


def solve_bundles(
    p: SHParams, frame: EigenFrame, chart: TaylorChart, order: int | None = None
) -> TaylorChart:
    """Power-matched frame bundles along the solved chart.

    The chain runs directly in the chart's scaled variables: the scaling
    is an exact symmetry of the bundle equations, so the seeds stay the
    unit eigenvectors while the forcing uses the scaled P coefficients.
    """
    if order is None:
        order = chart.order
    split = frame.split
    N = p.N
    A = galerkin_DF(p, chart.P_coeffs[0])
    mu = frame.model_mu
    lam_slow = chart.lam_slow
    Pc = list(chart.P_coeffs)
    psq_cache: dict[int, np.ndarray] = {}

    def bundle_forcing(m: int, q) -> np.ndarray:
        c = np.zeros(3 * N + 1)
        for t in range(1, m + 1):
            if t not in psq_cache:
                psq_cache[t] = _pair_conv(Pc, t)
            c += _conv_full(psq_cache[t], q[m - t])
        return 3.0 * c[: N + 1]

    def chain(col: int) -> np.ndarray:
        seeds = [frame.QN[:, col].copy()]
        out = solve_homological_chain(
            A, mu, lambda m: mu[col] + m * lam_slow, bundle_forcing, seeds, order
        )
        return np.array(out)

    u_cols = [chain(c) for c in range(split.n_u)]
    f_cols = [chain(c) for c in range(split.n_u + 1, N + 1)]
    solved = replace(
        chart,
        Qf_coeffs=np.stack(f_cols, axis=-1),
        Qu_coeffs=np.stack(u_cols, axis=-1),
    )
    res = bundle_residuals(p, frame, solved)
    worst = float(np.max(res[:, 1:])) if order >= 1 else 0.0
    if worst > RESIDUAL_TOL:
        raise ChartError(f"bundle residual {worst:.3e} above {RESIDUAL_TOL:.0e}")
    return solved


def invariance_residuals(p: SHParams, chart: TaylorChart) -> np.ndarray:
    """Weighted float residual of each solved invariance coefficient.

    Index 0 is the equilibrium residual and index 1 the eigenpair
    residual; both are seeds, reported but not subject to the solver's
    residual guarantee.
    """
    N = p.N
    a0 = chart.P_coeffs[0]
    A = galerkin_DF(p, a0)
    lam = chart.lam_slow
    w = weight_vector(p.nu, N).mid()
    coeffs = list(chart.P_coeffs)
    forcing = _cubic_forcing(N, {})
    res = np.zeros(chart.order + 1)
    res[0] = _l1nu_float(galerkin_F(p, a0), w)
    if chart.order >= 1:
        res[1] = _l1nu_float(A @ coeffs[1] - lam * coeffs[1], w)
    for m in range(2, chart.order + 1):
        lhs = A @ coeffs[m] - m * lam * coeffs[m]
        res[m] = _l1nu_float(lhs - forcing(m, coeffs), w)
    return res


def bundle_residuals(
    p: SHParams, frame: EigenFrame, chart: TaylorChart
) -> np.ndarray:
    """Per-column, per-order weighted float residuals of the bundles.

    Rows follow the unstable columns then the fast columns; column 0 of
    each row is the seed's eigenpair residual.
    """
    split = frame.split
    N = p.N
    A = galerkin_DF(p, chart.P_coeffs[0])
    mu = frame.model_mu
    lam_slow = chart.lam_slow
    w = weight_vector(p.nu, N).mid()
    Pc = list(chart.P_coeffs)
    psq_cache: dict[int, np.ndarray] = {}

    def column_res(col: int, qstack: np.ndarray) -> np.ndarray:
        out = np.zeros(qstack.shape[0])
        q = [qstack[m] for m in range(qstack.shape[0])]
        for m in range(qstack.shape[0]):
            lhs = A @ q[m] - (mu[col] + m * lam_slow) * q[m]
            c = np.zeros(3 * N + 1)
            for t in range(1, m + 1):
                if t not in psq_cache:
                    psq_cache[t] = _pair_conv(Pc, t)
                c += _conv_full(psq_cache[t], q[m - t])
            out[m] = _l1nu_float(lhs - 3.0 * c[: N + 1], w)
        return out

    rows = [
        column_res(c, chart.Qu_coeffs[:, :, c]) for c in range(split.n_u)
    ] + [
        column_res(split.n_u + 1 + i, chart.Qf_coeffs[:, :, i])
        for i in range(chart.Qf_coeffs.shape[2])
    ]
    return np.array(rows)


def eval_P_float(chart: TaylorChart, theta: float) -> np.ndarray:
    """Midpoint evaluation of the chart curve at a single parameter."""
    out = np.zeros(chart.N + 1)
    for k in range(chart.order, -1, -1):
        out = out * theta + chart.P_coeffs[k]
    return out


def delta_theta_for(
    frame: EigenFrame, chart: TaylorChart, rho_theta: float, eps_theta: float = 0.0
) -> float:
    """Smallest defect-domain half-width covering the slow-block radius.

    The slow coordinate carries the weight of the chart's first
    coefficient, so a block radius rho translates to rho divided by that
    weight in the bare parameter.
    """
    omega = Interval(chart.scaling) * frame.col_norms[frame.split.n_u]
    need = (Interval(rho_theta) + Interval(eps_theta)) / Interval(omega.lo)
    d = need.hi
    if d > 1.0:
        raise ChartError(f"required defect domain {d:.3e} exceeds 1")
    return max(0.0, d)


# ----------------------------------------------------------------------
# Interval polynomials in the chart parameter.

class ThetaPoly:
    """Polynomial in the chart parameter with interval matrix coefficients."""

    __slots__ = ("coeffs",)

    def __init__(self, coeffs: list[IntervalMatrix]):
        if not coeffs:
            raise IntervalError("empty polynomial")
        shape = coeffs[0].shape
        if any(c.shape != shape for c in coeffs):
            raise IntervalError("coefficient shape mismatch")
        self.coeffs = list(coeffs)

    @property
    def shape(self):
        return self.coeffs[0].shape

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    @staticmethod
    def from_float_stack(arr: np.ndarray) -> "ThetaPoly":
        """Exact lift of a (deg+1, rows[, cols]) float stack."""
        arr = np.asarray(arr, dtype=float)
        if arr.ndim == 2:
            arr = arr[:, :, None]
        return ThetaPoly([IntervalMatrix(arr[k]) for k in range(arr.shape[0])])

    def _padded(self, n: int) -> list[IntervalMatrix]:
        rows, cols = self.shape
        pad = [IntervalMatrix.zeros(rows, cols)] * (n - len(self.coeffs))
        return self.coeffs + pad

    def __add__(self, other: "ThetaPoly") -> "ThetaPoly":
        n = max(len(self.coeffs), len(other.coeffs))
        return ThetaPoly(
            [a + b for a, b in zip(self._padded(n), other._padded(n))]
        )

    def __sub__(self, other: "ThetaPoly") -> "ThetaPoly":
        n = max(len(self.coeffs), len(other.coeffs))
        return ThetaPoly(
            [a - b for a, b in zip(self._padded(n), other._padded(n))]
        )

    def scale(self, c) -> "ThetaPoly":
        return ThetaPoly([m.scale(c) for m in self.coeffs])

    def matmul(self, other: "ThetaPoly") -> "ThetaPoly":
        out: list[IntervalMatrix | None] = [None] * (
            self.degree + other.degree + 1
        )
        for i, a in enumerate(self.coeffs):
            for j, b in enumerate(other.coeffs):
                t = a @ b
                out[i + j] = t if out[i + j] is None else out[i + j] + t
        return ThetaPoly(out)  # type: ignore[arg-type]

    def dtheta(self) -> "ThetaPoly":
        if len(self.coeffs) == 1:
            rows, cols = self.shape
            return ThetaPoly([IntervalMatrix.zeros(rows, cols)])
        return ThetaPoly(
            [self.coeffs[t].scale(float(t)) for t in range(1, len(self.coeffs))]
        )

    def eval(self, theta: Interval) -> IntervalMatrix:
        out = self.coeffs[0]
        power = Interval(1.0)
        for c in self.coeffs[1:]:
            power = power * theta
            out = out + c.scale(power)
        return out


def theta_cover(delta: float, nsub: int = 64) -> list[Interval]:
    """Closed boxes covering [-delta, delta]."""
    if delta < 0.0:
        raise ChartError("negative domain half-width")
    if delta == 0.0:
        return [Interval(0.0)]
    edges = np.linspace(-delta, delta, nsub + 1)
    return [
        Interval(float(edges[i]), float(edges[i + 1])) for i in range(nsub)
    ]


def _abs_mat(M: IntervalMatrix) -> IntervalMatrix:
    mig = np.minimum(np.abs(M.lo), np.abs(M.hi))
    mig[(M.lo <= 0.0) & (M.hi >= 0.0)] = 0.0
    return IntervalMatrix(mig, M.mag())


def sup_group_norms(
    poly: ThetaPoly,
    delta: float,
    row_weights: IntervalVector,
    groups: list[tuple[int, int]],
    col_weights: list[Interval] | None = None,
    nsub: int = 64,
) -> list[Interval]:
    """Sup over the domain of weighted column norms, per row group.

    For each (lo, hi) row range the value is the maximum over columns j
    of sum_i w_i |M(theta)_ij| / c_j, maximized over theta.
    """
    rows, cols = poly.shape
    wrows = [
        IntervalMatrix(
            row_weights.lo[None, lo:hi], row_weights.hi[None, lo:hi]
        )
        for lo, hi in groups
    ]
    best: list[list[Interval]] = [[] for _ in groups]
    for box in theta_cover(delta, nsub):
        M = poly.eval(box)
        A = _abs_mat(M)
        for g, (lo, hi) in enumerate(groups):
            sub = IntervalMatrix(A.lo[lo:hi], A.hi[lo:hi])
            sums = wrows[g] @ sub
            if col_weights is None:
                per = [sums[0, j] for j in range(cols)]
            else:
                per = [sums[0, j] / col_weights[j] for j in range(cols)]
            best[g].append(imax_many(per))
    return [
        Interval(max(0.0, v.lo), v.hi) for v in (imax_many(b) for b in best)
    ]


# ----------------------------------------------------------------------
# Rigorous defect bounds.

@dataclass(frozen=True)
class DefectBounds:
    """Sup bounds of the conjugacy defects and their parameter derivatives.

    `norms` maps (block, derivative order) to a pair of intervals: the
    finite-mode rows and the remaining rows of the weighted column norm.
    """

    delta_theta: float
    norms: dict[tuple[str, int], tuple[Interval, Interval]]

    def head(self, star: str, k: int = 0) -> Interval:
        return self.norms[(star, k)][0]

    def tail(self, star: str, k: int = 0) -> Interval:
        return self.norms[(star, k)][1]

    def total(self, star: str, k: int = 0) -> Interval:
        h, t = self.norms[(star, k)]
        return h + t

    @property
    def E_theta_norm(self) -> Interval:
        return self.total("theta")

    @property
    def E_f_norm(self) -> Interval:
        return self.total("f")

    @property
    def E_u_norm(self) -> Interval:
        return self.total("u")

    @property
    def E_inf_norm(self) -> Interval:
        return self.total("inf")


def _psq_series(chart: TaylorChart) -> list[CosSeries]:
    """Interval coefficients of P(theta)*P(theta), exact float inputs.

    The summands are finite polynomials, so the accumulated series keep
    an exactly zero tail (summing coefficient vectors avoids the tail
    slop a series-level sum would introduce).
    """
    Pk = [
        CosSeries.from_floats(chart.nu, chart.P_coeffs[k])
        for k in range(chart.order + 1)
    ]
    out = []
    for t in range(2 * chart.order + 1):
        acc: IntervalVector | None = None
        for a in range(t // 2 + 1):
            b = t - a
            if b > chart.order:
                continue
            term = conv(Pk[a], Pk[b]).coeffs
            if a != b:
                term = term.scale(2.0)
            acc = term if acc is None else acc + term
        if acc is None:
            acc = IntervalVector.zeros(2 * chart.N + 1)
        out.append(CosSeries(chart.nu, acc))
    return out


def _column_poly(
    stack: np.ndarray,
    rows3: int,
    L: IntervalVector,
    lam: Interval,
    model_rates: np.ndarray,
    psq_mats: list[IntervalMatrix],
) -> ThetaPoly:
    """Defect polynomial of one bundled block on all cubic modes.

    stack is (deg+1, N+1, cols); the result rows extend to rows3 so the
    convolution overflow lands in the tail rows.
    """
    deg_q = stack.shape[0] - 1
    n_head = stack.shape[1]
    cols = stack.shape[2]
    D_L = IntervalMatrix(np.diag(L.lo[:n_head]), np.diag(L.hi[:n_head]))
    D_rate = IntervalMatrix(np.diag(model_rates))
    deg = deg_q + len(psq_mats) - 1
    coeffs = []
    for t in range(deg + 1):
        acc = IntervalMatrix.zeros(rows3, cols)
        if t <= deg_q:
            Qt = IntervalMatrix(stack[t])
            base = D_L @ Qt - Qt.scale(lam * float(t)) - Qt @ D_rate
            lo = np.zeros((rows3, cols))
            hi = np.zeros((rows3, cols))
            lo[:n_head] = base.lo
            hi[:n_head] = base.hi
            acc = acc + IntervalMatrix(lo, hi)
        cube: IntervalMatrix | None = None
        for j in range(len(psq_mats)):
            c = t - j
            if 0 <= c <= deg_q:
                term = psq_mats[j] @ IntervalMatrix(stack[c])
                cube = term if cube is None else cube + term
        if cube is not None:
            acc = acc - cube.scale(3.0)
        coeffs.append(acc)
    return ThetaPoly(coeffs)


def _conv_tail_opnorm(
    bpoly: ThetaPoly, delta: float, nu: float, N: int, nsub: int
) -> tuple[Interval, Interval]:
    """Norms of the convolution operator by b over the tail coordinates.

    Head: weighted column sums of the operator's finite rows, scanned
    over the tail columns that the kernel can reach.  Tail: the algebra
    bound, the weighted norm of b itself.
    """
    w = weight_vector(nu, 4 * N)
    deg_modes = bpoly.shape[0] - 1
    cols = list(range(N + 1, 3 * N + 1))
    k_idx = np.arange(N + 1)
    idx1 = np.array([[j - k for j in cols] for k in k_idx])
    idx2 = np.array([[j + k for j in cols] for k in k_idx])
    wrow = IntervalMatrix(w.lo[None, : N + 1], w.hi[None, : N + 1])
    col_w = [w[j] for j in cols]
    heads, tails = [], []
    for box in theta_cover(delta, nsub):
        bv = bpoly.eval(box)
        pad_lo = np.zeros(4 * N + 1)
        pad_hi = np.zeros(4 * N + 1)
        ab = _abs_mat(bv)
        pad_lo[: deg_modes + 1] = ab.lo[:, 0]
        pad_hi[: deg_modes + 1] = ab.hi[:, 0]
        S = IntervalMatrix(pad_lo[idx1], pad_hi[idx1]) + IntervalMatrix(
            pad_lo[idx2], pad_hi[idx2]
        )
        sums = wrow @ S
        heads.append(
            imax_many(sums[0, jj] / col_w[jj] for jj in range(len(cols)))
        )
        tails.append(
            IntervalVector(pad_lo[: deg_modes + 1], pad_hi[: deg_modes + 1]).dot(
                IntervalVector(w.lo[: deg_modes + 1], w.hi[: deg_modes + 1])
            )
        )
    head = imax_many(heads)
    tail = imax_many(tails)
    return (
        Interval(max(0.0, head.lo), head.hi),
        Interval(max(0.0, tail.lo), tail.hi),
    )


def defect_bounds(
    p: SHParams,
    frame: EigenFrame,
    chart: TaylorChart,
    delta_theta: float,
    nsub: int = 64,
) -> DefectBounds:
    """Interval sup bounds of all four conjugacy defects.

    Every defect of the full field is a polynomial in the chart
    parameter with sequence-space coefficients: the finite equations
    leave float residuals in the head rows, and the cubic convolutions
    overflow the truncation into the tail rows.  The tail-coordinate
    defect is the exact convolution operator by -3 P(theta)^2.
    """
    split = frame.split
    if split.n_theta != 1:
        raise ChartError("defect bounds need exactly one slow direction")
    N = p.N
    rows3 = 3 * N + 1
    lam = Interval(chart.lam_slow)
    L = linear_diag(p, 3 * N)
    psq = _psq_series(chart)
    psq_mats = [conv_matrix(b, rows3, N + 1) for b in psq]
    w = weight_vector(p.nu, 3 * N)

    # Invariance defect: embed the diagonal and transport terms over the
    # cubic rows, then subtract the full cube.
    P_stack = chart.P_coeffs[:, :, None]
    theta_poly = _column_poly(
        P_stack, rows3, L, lam, np.zeros(1), psq_mats
    )
    # The transport term t*lam*P_t already matches DP Lambda theta; the
    # cube subtracted by _column_poly is 3 P^2 * P, three times the one
    # in F(P).  Correct by adding back 2 P^3.
    two_cubes = ThetaPoly(
        [
            _psq_matvec(psq_mats, chart, t).scale(2.0)
            for t in range(3 * chart.order + 1)
        ]
    )
    theta_poly = theta_poly + two_cubes

    f_rates = frame.model_mu[split.n_u + 1 :]
    u_rates = frame.model_mu[: split.n_u]
    f_poly = _column_poly(chart.Qf_coeffs, rows3, L, lam, f_rates, psq_mats)
    u_poly = _column_poly(chart.Qu_coeffs, rows3, L, lam, u_rates, psq_mats)
    b_poly = ThetaPoly(
        [
            IntervalMatrix(b.coeffs.lo[:, None], b.coeffs.hi[:, None]).scale(3.0)
            for b in psq
        ]
    )

    f_norm_cols = [frame.col_norms[c] for c in range(split.n_u + 1, N + 1)]
    u_norm_cols = [frame.col_norms[c] for c in range(split.n_u)]
    groups = [(0, N + 1), (N + 1, rows3)]
    norms: dict[tuple[str, int], tuple[Interval, Interval]] = {}
    specs = [
        ("theta", theta_poly, None),
        ("f", f_poly, f_norm_cols),
        ("u", u_poly, u_norm_cols),
    ]
    for star, poly, col_w in specs:
        for k in range(3):
            head, tail = sup_group_norms(
                poly, delta_theta, w, groups, col_w, nsub
            )
            norms[(star, k)] = (head, tail)
            poly = poly.dtheta()
    bp = b_poly
    for k in range(3):
        norms[("inf", k)] = _conv_tail_opnorm(bp, delta_theta, p.nu, N, nsub)
        bp = bp.dtheta()
    return DefectBounds(delta_theta=delta_theta, norms=norms)


def _psq_matvec(
    psq_mats: list[IntervalMatrix], chart: TaylorChart, t: int
) -> IntervalMatrix:
    """Coefficient t of (P*P) * P as a tall interval column."""
    rows3 = psq_mats[0].shape[0]
    acc: IntervalMatrix | None = None
    for j in range(len(psq_mats)):
        c = t - j
        if 0 <= c <= chart.order:
            v = psq_mats[j] @ IntervalVector(chart.P_coeffs[c])
            m = IntervalMatrix(v.lo[:, None], v.hi[:, None])
            acc = m if acc is None else acc + m
    if acc is None:
        return IntervalMatrix.zeros(rows3, 1)
    return acc
