"""Constants for the vector field conjugated by the affine eigenframe map.

The change of variables ``K(phi) = a_bar + Q@phi`` turns the PDE field into
``phi' = Lambda phi + N(phi)`` with ``N`` small near the origin.  Everything
downstream (the rate ladder, the endomorphism and contraction checks) only
consumes a handful of nonnegative interval tensors indexed by the frame
blocks:

* ``eps``   -- offsets of the true equilibrium from the origin, per block,
* ``Ct``    -- uniform bounds on the second derivatives of ``N`` on the
               working ball (three block indices),
* ``Dt``    -- bounds on the blocks of ``DN(0)``,
* ``D, Chat, C, H, Hhat`` -- the derived first-order bounds on the shifted
               ball, and the aggregates ``HhatCal`` and ``(Cs, lambda_s)``.

All tensors are plain dicts keyed by block-name tuples, value type Interval.
Entries are upper bounds; only the ``.hi`` end is meaningful.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Mapping, Sequence

import numpy as np

from .intervals import Interval, IntervalMatrix, imax_many, isum
from .field import SHParams, ValidatedEquilibrium, galerkin_DF_interval
from .frame import EigenFrame
from .semigroup import FastSlowInput, SemigroupBound, fast_slow_bound
from .sequences import CosSeries, conv, conv_matrix, norm_l1nu, weight_vector

Tensor1 = dict[str, Interval]
Tensor2 = dict[tuple[str, str], Interval]
Tensor3 = dict[tuple[str, str, str], Interval]


@dataclass(frozen=True)
class ConstantsPack:
    """Interval constants of the conjugated field on the working ball.

    ``blocks`` lists every block name (unstable first, tail last) and
    ``stable``/``unstable`` the two groups, slow to fast.  Tensor keys put
    the output block first: ``D[(j, i)]`` bounds the (j, i) block of the
    shifted first derivative, ``Ct[(k, i, j)]`` the second derivatives.
    The first-order constant written C in certification formulas with two
    indices is the field ``C`` here; with three indices it coincides with
    ``Ct`` entry by entry.
    """

    blocks: tuple[str, ...]
    stable: tuple[str, ...]
    unstable: tuple[str, ...]
    lam: Tensor1
    p: Tensor1
    eps: Tensor1
    Dt: Tensor2
    Ct: Tensor3
    D: Tensor2
    Chat: Tensor2
    C: Tensor2
    H: Tensor2
    Hhat: Tensor2
    HhatCal: Interval
    Cs: Interval
    lambda_s: Interval


def _finite_blocks(frame: EigenFrame) -> list[str]:
    return ["u"] + [name for name, _ in frame.split.stable_blocks()]


def block_names(frame: EigenFrame) -> list[str]:
    return frame.split.block_names()


def stable_names(frame: EigenFrame) -> list[str]:
    return [name for name, _ in frame.split.stable_blocks()] + ["inf"]


def pi_Qinv_norm(frame: EigenFrame, name: str) -> Interval:
    """Norm of h -> block `name` of Q^{-1}h, from weighted-l1 into X."""
    if name == "inf":
        return Interval(1.0)
    rows = frame.column_slice(name)
    w = weight_vector(frame.nu, frame.split.N)
    best = Interval(0.0)
    for k in range(frame.split.N + 1):
        s = isum(
            frame.col_norms[n] * frame.BN[n, k].abs()
            for n in range(rows.start, rows.stop)
        )
        best = best.imax(s / w[k])
    return Interval(0.0, best.hi)


def linear_eps_split(frame: EigenFrame, eps: Interval) -> Tensor1:
    """Per-block offsets of the true equilibrium in eigen-coordinates."""
    eps_up = Interval(0.0, eps.hi)
    return {name: eps_up * pi_Qinv_norm(frame, name) for name in block_names(frame)}


def unstable_radii(
    frame: EigenFrame, rho: Mapping[str, Interval], P: Tensor2
) -> Tensor1:
    """Reach of the candidate chart over the stable ball, per unstable block."""
    stable = stable_names(frame)
    return {
        up: isum(P[(up, i)] * rho[i] for i in stable)
        for up in ("u",)
    }


def linear_second_derivatives(
    frame: EigenFrame,
    v: ValidatedEquilibrium,
    r_s: Mapping[str, Interval],
    r_u: Mapping[str, Interval],
    eps: Mapping[str, Interval],
) -> Tensor3:
    """Second-derivative bounds of the conjugated field on the shifted ball.

    For the affine change of variables the second derivative of the
    conjugated field in directions (i, j), projected to block k, is
    -6 Q^{-1}(a + Q phi) * (dQ/di h) * (dQ/dj h), so a single scalar per
    output block bounds every (i, j) pair.
    """
    names = block_names(frame)
    ball = isum(
        [norm_l1nu(v.a_bar), Interval(0.0, v.eps.hi)]
        + [r_s[i] for i in r_s]
        + [r_u[i] for i in r_u]
        + [eps[i] for i in eps]
    )
    scale = Interval(6.0) * ball
    out: Tensor3 = {}
    for k in names:
        ck = pi_Qinv_norm(frame, k) * scale
        ck = Interval(0.0, ck.hi)
        for i in names:
            for j in names:
                out[(k, i, j)] = ck
    return out


def _sub_colnorm(
    frame: EigenFrame,
    M: IntervalMatrix,
    rows: slice,
    cols: slice,
    col_weights: Sequence[Interval],
) -> Interval:
    """max over columns of the weighted row-sum, an X-to-X block norm."""
    best = Interval(0.0)
    for k in range(cols.start, cols.stop):
        s = isum(
            frame.col_norms[n] * M[n, k].abs() for n in range(rows.start, rows.stop)
        )
        best = best.imax(s / col_weights[k - cols.start])
    return Interval(0.0, best.hi)


def linear_Dtilde(
    p: SHParams, frame: EigenFrame, v: ValidatedEquilibrium
) -> Tensor2:
    """Blockwise bounds on the derivative of the conjugated field at 0.

    Four shapes of block: finite-to-finite via the conjugated Galerkin
    matrix minus the diagonal model, tail-to-finite via a column scan of
    the convolution coupling (columns above 3N vanish), finite-to-tail via
    the tail mass of the convolved eigenvectors, and a Banach-algebra bound
    on the tail-to-tail block.
    """
    N = p.N
    nu = p.nu
    finite = _finite_blocks(frame)
    sq = conv(v.a_bar, v.a_bar)
    out: Tensor2 = {}

    # Finite-to-finite: conjugate the rigorous Galerkin derivative and
    # subtract the float diagonal model.
    DFN = galerkin_DF_interval(p, v.a_bar)
    Z = frame.BN @ (DFN @ IntervalMatrix(frame.QN))
    dlo = Z.lo.copy()
    dhi = Z.hi.copy()
    for k in range(N + 1):
        dlo[k, k] -= frame.model_mu[k]
        dhi[k, k] -= frame.model_mu[k]
    M = IntervalMatrix(dlo, dhi)
    for j in finite:
        for i in finite:
            ci = frame.column_slice(i)
            out[(j, i)] = _sub_colnorm(
                frame, M, frame.column_slice(j), ci,
                frame.col_norms[ci.start: ci.stop],
            )

    # Tail-to-finite: columns N+1..3N of the convolution operator, pushed
    # through Q^{-1}; columns beyond 3N are zero.
    wide = conv_matrix(sq, N + 1, 3 * N + 1)
    wide = IntervalMatrix(wide.lo[:, N + 1:], wide.hi[:, N + 1:]).scale(3.0)
    W = frame.BN @ wide
    w_wide = weight_vector(nu, 3 * N)
    tail_weights = [w_wide[k] for k in range(N + 1, 3 * N + 1)]
    for j in finite:
        out[(j, "inf")] = _sub_colnorm(
            frame, W, frame.column_slice(j), slice(0, 2 * N), tail_weights
        )

    # Finite-to-tail: the tail mass that convolution pushes past mode N,
    # column by eigenvector column.
    w3 = weight_vector(nu, 3 * N)
    tail_mass = []
    for k in range(N + 1):
        qk = CosSeries.from_floats(nu, frame.QN[:, k])
        c = conv(sq, qk)
        mass = isum(
            w3[m] * c.coeffs[m].abs() for m in range(N + 1, c.degree + 1)
        ) * Interval(3.0)
        tail_mass.append(mass / frame.col_norms[k])
    for i in finite:
        ci = frame.column_slice(i)
        best = imax_many([tail_mass[k] for k in range(ci.start, ci.stop)])
        out[("inf", i)] = Interval(0.0, best.hi)

    # Tail-to-tail: Banach algebra bound.
    alg = Interval(3.0) * norm_l1nu(sq)
    out[("inf", "inf")] = Interval(0.0, alg.hi)
    return out


def semigroup_from_defects(
    frame: EigenFrame, D: Tensor2
) -> SemigroupBound:
    """Decay of the coupled stable semigroup from the defect tensor D.

    The stable part splits into the finite stable blocks (slow) against
    the tail (fast); the defect entries aggregate into the four coupling
    scalars of the fast-slow estimate.
    """
    fs = [name for name, _ in frame.split.stable_blocks()]
    delta_a = imax_many(
        [isum(D[(j, i)] for j in fs) for i in fs]
    )
    delta_b = isum(D[(j, "inf")] for j in fs)
    delta_c = imax_many([D[("inf", i)] for i in fs])
    delta_d = D[("inf", "inf")]
    lam_inf = frame.lam["inf"]
    inp = FastSlowInput(
        mu1=Interval(frame.rate(fs[0])),
        mu_inf=lam_inf,
        C1=Interval(1.0),
        C_inf=Interval(1.0),
        delta_a=Interval(0.0, delta_a.hi),
        delta_b=Interval(0.0, delta_b.hi),
        delta_c=Interval(0.0, delta_c.hi),
        delta_d=Interval(0.0, delta_d.hi),
        lambda_inv_norm=Interval(1.0) / lam_inf.abs(),
        sigma_L1=[Interval(float(m)) for m in frame.model_mu[frame.split.n_u:]],
    )
    return fast_slow_bound(inp, p_norm_is_1=True)


def contract_constants(
    frame: EigenFrame,
    v: ValidatedEquilibrium,
    Dt: Tensor2,
    Ct: Tensor3,
    eps: Tensor1,
    rho: Mapping[str, Interval],
    P: Tensor2,
) -> ConstantsPack:
    """Assemble the derived tensors D, Chat, C, H, Hhat and the aggregates."""
    stable = tuple(stable_names(frame))
    unstable = ("u",)
    names = tuple(block_names(frame))
    r_u = unstable_radii(frame, rho, P)

    D: Tensor2 = {}
    Chat: Tensor2 = {}
    C: Tensor2 = {}
    for j in names:
        for i in names:
            shift = isum(Ct[(j, i, l)] * eps[l] for l in names)
            D[(j, i)] = Interval(0.0, (Dt[(j, i)] + shift).hi)
            reach = isum(
                [Ct[(j, i, l)] * rho[l] for l in stable]
                + [Ct[(j, i, lu)] * r_u[lu] for lu in unstable]
            )
            Chat[(j, i)] = Interval(0.0, reach.hi)
            C[(j, i)] = Chat[(j, i)] + D[(j, i)]

    H: Tensor2 = {}
    for j in names:
        for i in stable:
            s = C[(j, i)] + isum(C[(j, iu)] * P[(iu, i)] for iu in unstable)
            H[(j, i)] = Interval(0.0, s.hi)
    Hhat: Tensor2 = {}
    for j in stable:
        for i in stable:
            s = Chat[(j, i)] + isum(
                (Chat[(j, iu)] + D[(j, iu)]) * P[(iu, i)] for iu in unstable
            )
            Hhat[(j, i)] = Interval(0.0, s.hi)
    hhat_cal = imax_many(
        [isum(Hhat[(j, i)] for j in stable) for i in stable]
    )

    sg = semigroup_from_defects(frame, D)
    return ConstantsPack(
        blocks=names,
        stable=stable,
        unstable=unstable,
        lam=dict(frame.lam),
        p={name: Interval(1.0) for name in names},
        eps=eps,
        Dt=Dt,
        Ct=Ct,
        D=D,
        Chat=Chat,
        C=C,
        H=H,
        Hhat=Hhat,
        HhatCal=Interval(0.0, hhat_cal.hi),
        Cs=sg.Cs,
        lambda_s=sg.lambda_s,
    )


def linear_constants(
    p: SHParams,
    frame: EigenFrame,
    v: ValidatedEquilibrium,
    rho: Mapping[str, Interval],
    P: Tensor2,
) -> ConstantsPack:
    """Full constants pack for the affine change of variables."""
    eps = linear_eps_split(frame, v.eps)
    r_u = unstable_radii(frame, rho, P)
    Ct = linear_second_derivatives(frame, v, rho, r_u, eps)
    Dt = linear_Dtilde(p, frame, v)
    return contract_constants(frame, v, Dt, Ct, eps, rho, P)
