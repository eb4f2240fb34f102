"""Constants for the field conjugated by a polynomial chart map.

The chart sends coordinates x = (phi_u, theta, phi_f, phi_inf) to

    K(x) = P(theta) + Q_u(theta) phi_u + Q_f(theta) phi_f + phi_inf,

so its derivative splits as DK = A0(theta) + A1(theta, phi) with a
block-diagonal A0 = [H(theta), I_tail], H = [Q_u | dP/dtheta | Q_f], and
a rank-one A1 that multiplies the theta-component of the increment by
the phi-derivative of the bundle columns.  The conjugated field is
Lambda x + DK(x)^{-1}(E(x) + R(x)) where E collects the four conjugacy
defects of the chart and R = -3 P Q**2 - Q**3 the higher-order part of
the cubic with Q = Q_f phi_f + Q_u phi_u + phi_inf.

Inverting DK never touches the tail: DK^{-1} = B (I + A1 B)^{-1} with
B = [H^{-1}, I_tail], the correction (I + A1 B)^{-1} - I maps head modes
to head modes, and every parameter derivative of B vanishes on the tail
block.  The finite rows of the conjugated constants therefore consume
only the head parts of E + R, and the tail row reduces to the tail parts
directly.

As in the affine case the downstream consumers only see a constants
pack: Dt from the derivative at the origin, Ct from uniform second
derivatives over the working ball, eps from the equilibrium offset.
"""

from __future__ import annotations

from dataclasses import dataclass, replace
from math import comb
from typing import Mapping

import numpy as np

from .chart import (
    ChartError,
    DefectBounds,
    TaylorChart,
    ThetaPoly,
    defect_bounds,
    delta_theta_for,
    sup_group_norms,
)
from .field import SHParams, ValidatedEquilibrium, apply_F
from .frame import EigenFrame, frame_coordinates
from .intervals import (
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    NotContractive,
    imax_many,
    isum,
    mat_inverse_enclosure,
)
from .linear_coords import (
    ConstantsPack,
    Tensor1,
    Tensor2,
    Tensor3,
    block_names,
    contract_constants,
    linear_Dtilde,
    pi_Qinv_norm,
    unstable_radii,
)
from .sequences import weight_vector

ZERO = Interval(0.0)
ONE = Interval(1.0)

DIRS = ("u", "theta", "f", "inf")


class NotInvertibleAtZero(IntervalError):
    """The chart frame matrix at theta = 0 has no validated inverse."""


class TailNotContractive(IntervalError):
    """A Neumann correction term fails to stay below one."""


class InverseBallNotClosed(IntervalError):
    """The local inversion ball for the chart map does not close up."""


def _up(iv: Interval) -> Interval:
    return Interval(0.0, iv.hi)


def scaled_frame(frame: EigenFrame, scaling: float) -> EigenFrame:
    """Frame whose slow eigencolumn carries a chart's scaling factor.

    Rescaling the slow column is an exact similarity of the finite
    block, so eigenvalue enclosures and the diagonal model are shared;
    only the basis matrix, its inverse enclosure and the slow column
    norm change.
    """
    if scaling == 1.0:
        return frame
    if not 0.0 < scaling <= 1.0:
        raise ChartError(f"chart scaling {scaling!r} outside (0, 1]")
    n_u = frame.split.n_u
    QN = frame.QN.copy()
    QN[:, n_u] *= scaling
    try:
        BN = mat_inverse_enclosure(IntervalMatrix(QN))
    except NotContractive as exc:
        raise NotInvertibleAtZero(
            f"scaled frame matrix is not validated invertible: {exc}"
        ) from exc
    col_norms = list(frame.col_norms)
    col_norms[n_u] = col_norms[n_u] * Interval(scaling)
    return replace(
        frame, QN=QN, Q_f=QN[:, n_u:], BN=BN, col_norms=col_norms
    )


# ----------------------------------------------------------------------
# Inverse of the frame bundle along the slow curve.

@dataclass(frozen=True)
class FrameBundleBounds:
    """Validated inverse of the chart frame over the parameter domain.

    ``B_series`` is the truncated Taylor expansion of the inverse of
    the finite frame block H(theta); ``res_norms[m]`` bounds the m-th
    parameter derivative of H B_series - I over the domain, and
    ``neumann_factor`` = 1/(1 - res_norms[0]) converts series bounds
    into bounds on the true inverse.  ``b_norms[(row, k)]`` bounds the
    k-th parameter derivative of the true inverse restricted to a row
    block ("u", "theta", "f", or "N" for all finite rows together),
    ``q_norms[(star, k)]`` the derivatives of the bundle columns with
    column-normalized targets, ``p_norms[k]`` those of the curve.

    Derivative bounds are raw d/dtheta sups; X-convention consumers
    divide by the slow-column weight once per derivative slot.  On the
    tail block the inverse is the identity and every parameter
    derivative vanishes, so no entries are stored for it.
    """

    delta_theta: float
    order: int
    B_series: ThetaPoly
    res_norms: tuple[Interval, Interval, Interval, Interval]
    neumann_factor: Interval
    b_norms: dict[tuple[str, int], Interval]
    q_norms: dict[tuple[str, int], Interval]
    p_norms: tuple[Interval, Interval, Interval, Interval]


def _frame_coeff(chart: TaylorChart, k: int) -> IntervalMatrix:
    """Coefficient k of H(theta) = [Q_u | dP/dtheta | Q_f], enclosed."""
    n1 = chart.N + 1
    if k <= chart.bundle_order:
        qu = chart.Qu_coeffs[k]
        qf = chart.Qf_coeffs[k]
    else:
        qu = np.zeros((n1, chart.Qu_coeffs.shape[2]))
        qf = np.zeros((n1, chart.Qf_coeffs.shape[2]))
    if k + 1 <= chart.order:
        pcol = IntervalVector(chart.P_coeffs[k + 1]).scale(Interval(float(k + 1)))
        plo, phi = pcol.lo, pcol.hi
    else:
        plo = phi = np.zeros(n1)
    lo = np.column_stack([qu, plo, qf])
    hi = np.column_stack([qu, phi, qf])
    return IntervalMatrix(lo, hi)


def build_B_series(
    chart: TaylorChart,
    delta: float,
    order: int | None = None,
    nsub: int = 64,
) -> FrameBundleBounds:
    """Invert the chart frame along the slow curve with a tail estimate.

    The Taylor coefficients of the inverse follow from the Cauchy
    product recursion; the geometric Neumann tail turns the residual
    H B_series - I, evaluated rigorously over the domain, into bounds
    on the true inverse and its first three parameter derivatives.
    """
    if order is None:
        order = chart.order
    n1 = chart.N + 1
    n_u = chart.Qu_coeffs.shape[2]
    deg_h = max(chart.bundle_order, chart.order - 1)
    A = [_frame_coeff(chart, k) for k in range(deg_h + 1)]
    try:
        B0 = mat_inverse_enclosure(A[0])
    except NotContractive as exc:
        raise NotInvertibleAtZero(
            f"frame columns at theta = 0 are not validated invertible: {exc}"
        ) from exc
    Bc = [B0]
    for k in range(1, order + 1):
        acc: IntervalMatrix | None = None
        for j in range(1, min(k, deg_h) + 1):
            t = A[j] @ Bc[k - j]
            acc = t if acc is None else acc + t
        Bc.append(
            IntervalMatrix.zeros(n1, n1) if acc is None else -(B0 @ acc)
        )
    Bpoly = ThetaPoly(Bc)
    res = ThetaPoly(A).matmul(Bpoly) - ThetaPoly([IntervalMatrix.eye(n1)])

    w = weight_vector(chart.nu, chart.N)
    wl = [w[k] for k in range(n1)]
    res_norms = []
    poly = res
    for _ in range(4):
        res_norms.append(
            sup_group_norms(poly, delta, w, [(0, n1)], wl, nsub)[0]
        )
        poly = poly.dtheta()
    r = [_up(v) for v in res_norms]
    if not r[0].hi < 1.0:
        raise TailNotContractive(
            f"frame inverse series residual {r[0].hi!r} is not below 1"
        )
    nf = ONE / (ONE - r[0])

    # Chart-side coordinate weights: the column norms of H(0).
    omega = [
        IntervalVector(np.abs(A[0].lo[:, n])).dot(w) for n in range(n1)
    ]
    romega = IntervalVector(
        np.array([o.lo for o in omega]), np.array([o.hi for o in omega])
    )
    row_groups = [
        ("u", (0, n_u)),
        ("theta", (n_u, n_u + 1)),
        ("f", (n_u + 1, n1)),
        ("N", (0, n1)),
    ]
    raw: dict[tuple[str, int], Interval] = {}
    poly = Bpoly
    for m in range(4):
        vals = sup_group_norms(
            poly, delta, romega, [g for _, g in row_groups], wl, nsub
        )
        for (name, _), v in zip(row_groups, vals):
            raw[(name, m)] = v
        poly = poly.dtheta()

    # Neumann derivative ladder for the series-to-inverse correction.
    sB = (
        nf,
        _up(nf * nf * r[1]),
        _up(Interval(2.0) * nf * nf * nf * r[1] * r[1] + nf * nf * r[2]),
        _up(
            Interval(6.0) * nf * nf * nf * nf * r[1] * r[1] * r[1]
            + Interval(6.0) * nf * nf * nf * r[1] * r[2]
            + nf * nf * r[3]
        ),
    )
    b_norms: dict[tuple[str, int], Interval] = {}
    for name, _ in row_groups:
        for m in range(4):
            b_norms[(name, m)] = _up(
                isum(
                    Interval(float(comb(m, i))) * raw[(name, i)] * sB[m - i]
                    for i in range(m + 1)
                )
            )

    q_norms: dict[tuple[str, int], Interval] = {}
    for star, stack, cols in (
        ("f", chart.Qf_coeffs, [omega[c] for c in range(n_u + 1, n1)]),
        ("u", chart.Qu_coeffs, [omega[c] for c in range(n_u)]),
    ):
        poly = ThetaPoly.from_float_stack(stack)
        for m in range(4):
            q_norms[(star, m)] = sup_group_norms(
                poly, delta, w, [(0, n1)], cols, nsub
            )[0]
            poly = poly.dtheta()
    p_norms = []
    poly = ThetaPoly.from_float_stack(chart.P_coeffs)
    for _ in range(4):
        p_norms.append(
            sup_group_norms(poly, delta, w, [(0, n1)], None, nsub)[0]
        )
        poly = poly.dtheta()

    return FrameBundleBounds(
        delta_theta=delta,
        order=order,
        B_series=Bpoly,
        res_norms=tuple(r),
        neumann_factor=nf,
        b_norms=b_norms,
        q_norms=q_norms,
        p_norms=tuple(p_norms),
    )


# ----------------------------------------------------------------------
# Equilibrium offset through the chart.

def _coeff_colnorm(
    mat: np.ndarray, w: IntervalVector, col_weights: list[Interval]
) -> Interval:
    """Column-normalized weighted norm of one float coefficient matrix."""
    best = ZERO
    for j in range(mat.shape[1]):
        s = IntervalVector(np.abs(mat[:, j])).dot(w)
        best = best.imax(s / col_weights[j])
    return _up(best)


def nonlinear_eps_split(
    frame_s: EigenFrame, chart: TaylorChart, eps: Interval
) -> Tensor1:
    """Per-block offsets of the true equilibrium in chart coordinates.

    The chart preimage of the true equilibrium solves a small fixed
    point problem: with t* twice the first-order bound, the candidate
    ball maps into itself and the higher-order chart terms stay a
    contraction, which pins the preimage inside and lets the linear
    part of the inverse distribute the offset over the blocks.  Raises
    InverseBallNotClosed when either check fails.
    """
    names = block_names(frame_s)
    pin = {n: pi_Qinv_norm(frame_s, n) for n in names}
    qinv = imax_many(list(pin.values()))
    eps_up = _up(eps)
    tstar = Interval(2.0) * qinv * eps_up
    n_u = frame_s.split.n_u
    slot = ONE / Interval(frame_s.col_norms[n_u].lo)
    tau = _up(tstar * slot)

    w = weight_vector(chart.nu, chart.N)
    f_cols = [frame_s.col_norms[c] for c in range(n_u + 1, chart.N + 1)]
    u_cols = [frame_s.col_norms[c] for c in range(n_u)]
    eta = ZERO
    deta = ZERO
    tau_pow = tau  # tau**k, starting at k = 1
    for k in range(2, chart.order + 1):
        tau_km1 = tau_pow
        tau_pow = _up(tau_pow * tau)
        pk = IntervalVector(np.abs(chart.P_coeffs[k])).dot(w)
        eta = eta + pk * tau_pow
        deta = deta + pk * Interval(float(k)) * tau_km1 * slot
    tau_pow = tau
    for k in range(1, chart.bundle_order + 1):
        qk = _coeff_colnorm(chart.Qf_coeffs[k], w, f_cols) + _coeff_colnorm(
            chart.Qu_coeffs[k], w, u_cols
        )
        eta = eta + qk * tstar * tau_pow
        deta = deta + qk * Interval(float(k + 1)) * tau_pow
        tau_pow = _up(tau_pow * tau)
    eta = _up(eta)

    if (qinv * (eps_up + eta)).hi > tstar.hi:
        raise InverseBallNotClosed(
            f"candidate ball t* = {tstar.hi!r} does not absorb the "
            f"chart tail {(qinv * (eps_up + eta)).hi!r}"
        )
    if not (qinv * deta).hi < 1.0:
        raise InverseBallNotClosed(
            f"chart tail Lipschitz bound {(qinv * deta).hi!r} is not "
            "below 1 on the candidate ball"
        )
    return {n: _up(pin[n] * (eps_up + eta)) for n in names}


# ----------------------------------------------------------------------
# Second derivatives of the conjugated field over the ball.

def _sym(table: Mapping, d: str, e: str):
    if (d, e) in table:
        return table[(d, e)]
    return table[(e, d)]


def _defect_tables(
    defects: DefectBounds, radii: Mapping[str, Interval], slot: Interval
):
    """Sup tables of E(x) and its block derivatives, head and tail parts.

    E is affine in phi, so the value contracts each coefficient defect
    with its block radius, phi-derivatives are the coefficient defects
    themselves, and only theta-slots pick up derivative weights.
    """

    def lvl(k: int) -> tuple[Interval, Interval]:
        h = _up(
            defects.head("theta", k)
            + defects.head("f", k) * radii["f"]
            + defects.head("u", k) * radii["u"]
            + defects.head("inf", k) * radii["inf"]
        )
        t = _up(
            defects.tail("theta", k)
            + defects.tail("f", k) * radii["f"]
            + defects.tail("u", k) * radii["u"]
            + defects.tail("inf", k) * radii["inf"]
        )
        return h, t

    def pair(star: str, k: int, scale: Interval) -> tuple[Interval, Interval]:
        return (
            _up(defects.head(star, k) * scale),
            _up(defects.tail(star, k) * scale),
        )

    e0 = lvl(0)
    h1, t1 = lvl(1)
    h2, t2 = lvl(2)
    E1 = {
        "theta": (_up(h1 * slot), _up(t1 * slot)),
        "f": pair("f", 0, ONE),
        "u": pair("u", 0, ONE),
        "inf": pair("inf", 0, ONE),
    }
    slot2 = slot * slot
    E2 = {("theta", "theta"): (_up(h2 * slot2), _up(t2 * slot2))}
    for star in ("f", "u", "inf"):
        E2[("theta", star)] = pair(star, 1, slot)
    for d in ("f", "u", "inf"):
        for e in ("f", "u", "inf"):
            E2[(d, e)] = (ZERO, ZERO)
    return e0, E1, E2


def _remainder_tables(
    bundles: FrameBundleBounds, radii: Mapping[str, Interval], slot: Interval
):
    """Sup bounds of R = -3 P Q**2 - Q**3 and its block derivatives.

    Everything reduces to scalar algebra in the norms of P, the bundle
    columns and the block radii.  The bounds hold for the full norm, so
    they are valid for the head and the tail part alike.
    """
    q = bundles.q_norms
    p = bundles.p_norms
    rf, ru, ri = radii["f"], radii["u"], radii["inf"]
    q0 = _up(q[("f", 0)] * rf + q[("u", 0)] * ru + ri)
    Qd = {
        "theta": _up((q[("f", 1)] * rf + q[("u", 1)] * ru) * slot),
        "f": q[("f", 0)],
        "u": q[("u", 0)],
        "inf": ONE,
    }
    slot2 = slot * slot
    Qdd = {
        ("theta", "theta"): _up((q[("f", 2)] * rf + q[("u", 2)] * ru) * slot2),
        ("theta", "f"): _up(q[("f", 1)] * slot),
        ("theta", "u"): _up(q[("u", 1)] * slot),
        ("theta", "inf"): ZERO,
    }
    for d in ("f", "u", "inf"):
        for e in ("f", "u", "inf"):
            Qdd[(d, e)] = ZERO
    p0 = p[0]
    Pd = {d: _up(p[1] * slot) if d == "theta" else ZERO for d in DIRS}
    three = Interval(3.0)
    R0 = _up(three * p0 * q0 * q0 + q0 * q0 * q0)
    R1 = {
        d: _up(
            three * Pd[d] * q0 * q0
            + (Interval(6.0) * p0 + three * q0) * q0 * Qd[d]
        )
        for d in DIRS
    }
    R2 = {}
    for d in DIRS:
        for e in DIRS:
            pdd = _up(p[2] * slot2) if d == "theta" and e == "theta" else ZERO
            qdd = _sym(Qdd, d, e)
            cubic = (
                Interval(6.0) * q0 * Qd[d] * Qd[e] + three * q0 * q0 * qdd
            )
            quad = three * (
                pdd * q0 * q0
                + Interval(2.0) * q0 * (Pd[d] * Qd[e] + Pd[e] * Qd[d])
                + p0 * (Interval(2.0) * Qd[d] * Qd[e] + Interval(2.0) * q0 * qdd)
            )
            R2[(d, e)] = _up(quad + cubic)
    return R0, R1, R2


def nonlinear_Ntilde_tensors(
    frame_s: EigenFrame,
    chart: TaylorChart,
    bundles: FrameBundleBounds,
    defects: DefectBounds,
    radii: Mapping[str, Interval],
) -> Tensor3:
    """Uniform second-derivative bounds of the conjugated field.

    The conjugated nonlinearity is DK^{-1}(E + R); its second block
    derivatives Leibniz over the inverse and the defect-plus-remainder
    vector.  Finite output rows consume only head parts (the inverse
    correction never leaves the head modes) and the tail row is the
    tail part of the second derivative of E + R directly.  Raises
    TailNotContractive when the phi-coupling Neumann series for the
    inverse fails to contract over the ball.
    """
    n_u = frame_s.split.n_u
    slot = ONE / Interval(frame_s.col_norms[n_u].lo)
    q = bundles.q_norms
    b = bundles.b_norms
    rf, ru = radii["f"], radii["u"]

    bth = [b[("theta", m)] for m in range(4)]
    grad1 = _up(q[("f", 1)] * rf + q[("u", 1)] * ru)
    grad2 = _up(q[("f", 2)] * rf + q[("u", 2)] * ru)
    grad3 = _up(q[("f", 3)] * rf + q[("u", 3)] * ru)
    a1b = _up(grad1 * bth[0] * slot)
    if not a1b.hi < 1.0:
        raise TailNotContractive(
            f"phi-coupling norm ||A1 B|| = {a1b.hi!r} is not below 1"
        )
    nfp = ONE / (ONE - a1b)

    slot2 = slot * slot
    m1 = {
        "theta": _up((grad2 * bth[0] + grad1 * bth[1]) * slot2),
        "f": _up(q[("f", 1)] * bth[0] * slot),
        "u": _up(q[("u", 1)] * bth[0] * slot),
        "inf": ZERO,
    }
    m2 = {
        ("theta", "theta"): _up(
            (grad3 * bth[0] + Interval(2.0) * grad2 * bth[1] + grad1 * bth[2])
            * slot2
            * slot
        ),
        ("theta", "f"): _up((q[("f", 2)] * bth[0] + q[("f", 1)] * bth[1]) * slot2),
        ("theta", "u"): _up((q[("u", 2)] * bth[0] + q[("u", 1)] * bth[1]) * slot2),
        ("theta", "inf"): ZERO,
    }
    for d in ("f", "u", "inf"):
        for e in ("f", "u", "inf"):
            m2[(d, e)] = ZERO
    s1 = {d: _up(nfp * nfp * m1[d]) for d in DIRS}
    s2 = {
        (d, e): _up(
            nfp
            * nfp
            * (Interval(2.0) * nfp * m1[d] * m1[e] + _sym(m2, d, e))
        )
        for d in DIRS
        for e in DIRS
    }

    e0, E1, E2 = _defect_tables(defects, radii, slot)
    R0, R1, R2 = _remainder_tables(bundles, radii, slot)
    er0_head = _up(e0[0] + R0)
    er1_head = {d: _up(E1[d][0] + R1[d]) for d in DIRS}
    er2_head = {
        (d, e): _up(_sym(E2, d, e)[0] + R2[(d, e)]) for d in DIRS for e in DIRS
    }
    er2_tail = {
        (d, e): _up(_sym(E2, d, e)[1] + R2[(d, e)]) for d in DIRS for e in DIRS
    }

    out: Tensor3 = {}
    for j in ("u", "theta", "f"):
        b0, b1, b2 = b[(j, 0)], b[(j, 1)], b[(j, 2)]
        bhat0 = _up(b0 * nfp)
        bhat1 = {
            d: _up(
                (b1 * slot * nfp if d == "theta" else ZERO) + b0 * s1[d]
            )
            for d in DIRS
        }
        for d in DIRS:
            for e in DIRS:
                curv = b0 * s2[(d, e)]
                if d == "theta":
                    curv = curv + b1 * slot * s1[e]
                if e == "theta":
                    curv = curv + b1 * slot * s1[d]
                if d == "theta" and e == "theta":
                    curv = curv + b2 * slot2 * nfp
                out[(j, d, e)] = _up(
                    curv * er0_head
                    + bhat1[d] * er1_head[e]
                    + bhat1[e] * er1_head[d]
                    + bhat0 * er2_head[(d, e)]
                )
    for d in DIRS:
        for e in DIRS:
            out[("inf", d, e)] = er2_tail[(d, e)]
    return out


# ----------------------------------------------------------------------
# Derivative at the origin.

def nonlinear_Dtilde(
    p: SHParams,
    frame_s: EigenFrame,
    v: ValidatedEquilibrium,
    chart: TaylorChart,
) -> Tensor2:
    """Blockwise bounds on the derivative of the conjugated field at 0.

    The defect derivatives at the origin coincide with the affine-frame
    defect of the scaled frame, which reuses the four block shapes of
    the affine case.  On top of that the curvature of the chart couples
    the value defect at the origin into every finite direction through
    the derivative of the inverse frame; those additions vanish on the
    tail row and column because the chart curvature lives in the head
    modes and never reads the tail component.
    """
    out = dict(linear_Dtilde(p, frame_s, v))
    base = chart.P_coeffs[0]
    ab = v.a_bar.coeffs
    if not (
        np.array_equal(ab.lo, base) and np.array_equal(ab.hi, base)
    ):
        raise ChartError(
            "chart base point differs from the validated equilibrium"
        )

    n1 = chart.N + 1
    n_u = frame_s.split.n_u
    if chart.bundle_order >= 1:
        qu1 = chart.Qu_coeffs[1]
        qf1 = chart.Qf_coeffs[1]
    else:
        qu1 = np.zeros((n1, chart.Qu_coeffs.shape[2]))
        qf1 = np.zeros((n1, chart.Qf_coeffs.shape[2]))
    if chart.order >= 2:
        p2 = IntervalVector(chart.P_coeffs[2]).scale(Interval(2.0))
        plo, phi = p2.lo, p2.hi
    else:
        plo = phi = np.zeros(n1)
    M1 = IntervalMatrix(
        np.column_stack([qu1, plo, qf1]), np.column_stack([qu1, phi, qf1])
    )

    whead, _ = frame_coordinates(frame_s, apply_F(p, v.a_bar))
    wtheta = whead[n_u].abs()
    w = weight_vector(p.nu, p.N)
    m1w = M1 @ whead
    theta_dir = isum(w[k] * m1w[k].abs() for k in range(n1))
    slot = ONE / Interval(frame_s.col_norms[n_u].lo)
    f_cols = [frame_s.col_norms[c] for c in range(n_u + 1, n1)]
    u_cols = [frame_s.col_norms[c] for c in range(n_u)]
    add = {
        "theta": _up(theta_dir * slot),
        "f": _up(_coeff_colnorm(qf1, w, f_cols) * wtheta),
        "u": _up(_coeff_colnorm(qu1, w, u_cols) * wtheta),
    }
    for j in ("u", "theta", "f"):
        pj = pi_Qinv_norm(frame_s, j)
        for i, extra in add.items():
            out[(j, i)] = _up(out[(j, i)] + pj * extra)
    return out


# ----------------------------------------------------------------------
# Pack assembly.

@dataclass(frozen=True)
class PreparedChart:
    """Ball-independent pieces of the nonlinear constants.

    Everything here depends only on the chart, the equilibrium and the
    slow-block radius (through the parameter domain half-width), so the
    certification loop can rebuild the radius-dependent tensors without
    repeating the rigorous sup evaluations.
    """

    frame_s: EigenFrame
    defects: DefectBounds
    bundles: FrameBundleBounds
    Dt: Tensor2
    eps: Tensor1


def prepare_chart_constants(
    p: SHParams,
    frame: EigenFrame,
    v: ValidatedEquilibrium,
    chart: TaylorChart,
    rho_theta: float,
    nsub: int = 64,
) -> PreparedChart:
    """Precompute the chart tensors shared by every certification round."""
    frame_s = scaled_frame(frame, chart.scaling)
    eps = nonlinear_eps_split(frame_s, chart, v.eps)
    delta = delta_theta_for(frame, chart, rho_theta, eps["theta"].hi)
    defects = defect_bounds(p, frame, chart, delta, nsub)
    bundles = build_B_series(chart, delta, nsub=nsub)
    Dt = nonlinear_Dtilde(p, frame_s, v, chart)
    return PreparedChart(
        frame_s=frame_s, defects=defects, bundles=bundles, Dt=Dt, eps=eps
    )


def nonlinear_constants(
    p: SHParams,
    frame: EigenFrame,
    v: ValidatedEquilibrium,
    chart: TaylorChart,
    rho: Mapping[str, Interval],
    P: Tensor2,
    prepared: PreparedChart | None = None,
) -> ConstantsPack:
    """Full constants pack for the polynomial change of variables."""
    if prepared is None:
        prepared = prepare_chart_constants(
            p, frame, v, chart, rho["theta"].hi
        )
    frame_s = prepared.frame_s
    r_u = unstable_radii(frame_s, rho, P)
    radii = {
        "f": _up(rho["f"] + prepared.eps["f"]),
        "u": _up(r_u["u"] + prepared.eps["u"]),
        "inf": _up(rho["inf"] + prepared.eps["inf"]),
    }
    Ct = nonlinear_Ntilde_tensors(
        frame_s, chart, prepared.bundles, prepared.defects, radii
    )
    return contract_constants(
        frame_s, v, prepared.Dt, Ct, prepared.eps, rho, P
    )
