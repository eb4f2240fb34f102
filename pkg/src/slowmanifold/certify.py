"""Certification of the stable-manifold fixed point.

This module turns a constants pack, a rate ladder and a tracking tensor
into the final machine-checked statement: the graph transform is an
endomorphism of a Lipschitz ball, a second endomorphism of a ball with
Lipschitz derivatives, and a contraction in the block seminorm, hence
it has a unique fixed point whose graph is the local stable manifold.

The three tensor constructions here (the derivative-difference forcing
``S``, the second-derivative tracking tensor ``K`` and the chart
dependence tensor ``F``) all feed :func:`slowmanifold.gronwall.general_bootstrap`
with different rate ladders and multi-index shapes.  Every division by
a rate gap is interval sign-checked first; a straddling gap raises
ResonantDenominator and no certificate is produced.

All comparisons against ball parameters use the upper endpoints of the
computed enclosures, so a "verified" line means the exact quantity is
certainly below the requested bound.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field, replace
from typing import Callable, Mapping, Sequence

import numpy as np

from .frame import OrderingViolation
from .gronwall import (
    GeneralBootstrapProblem,
    GTensor,
    MuRate,
    RateLadder,
    StayInsideResult,
    general_bootstrap,
)
from .intervals import Interval, IntervalError, IntervalMatrix, imax_many, isum
from .linear_coords import ConstantsPack

ZERO = Interval(0.0)

CERTIFICATE_SCHEMA = "slowmanifold-certificate/1"

#: Powers tried when bounding the spectral radius of the contraction
#: matrix through ``norm(J^k) ** (1/k)``.
CONTRACTION_POWERS = (1, 2, 4, 8)


class ResonantDenominator(IntervalError):
    """A rate-gap denominator straddles zero and cannot be inverted."""


class NoAdmissibleP(IntervalError):
    """The Lipschitz-bound iteration found no self-consistent tensor."""

    def __init__(self, message: str, history: tuple = ()):
        super().__init__(message)
        self.history = history


class NotContractive(IntervalError):
    """The contraction matrix norm bound is not below one."""

    def __init__(self, bound: float):
        super().__init__(f"contraction norm bound {bound} >= 1")
        self.bound = bound


# ---------------------------------------------------------------------------
# ball data


@dataclass(frozen=True)
class ChartBall:
    """Parameters of the candidate graph ball.

    ``names`` lists the stable blocks slow to fast and ``unstable`` the
    unstable blocks; ``rho[i]`` is the domain radius of stable block i,
    ``P[a][i]`` the Lipschitz bound of unstable component a against
    stable direction i, and ``Pbar[a][i][l]`` the Lipschitz bound of the
    i-th partial derivative against direction l (symmetric in i, l).
    """

    names: tuple[str, ...]
    unstable: tuple[str, ...]
    rho: tuple[float, ...]
    P: tuple[tuple[float, ...], ...]
    Pbar: tuple[tuple[tuple[float, ...], ...], ...]

    def __post_init__(self):
        m_s = len(self.names)
        m_u = len(self.unstable)
        if len(self.rho) != m_s:
            raise ValueError("rho length does not match the stable blocks")
        if len(self.P) != m_u or any(len(row) != m_s for row in self.P):
            raise ValueError("P shape must be unstable x stable")
        if len(self.Pbar) != m_u or any(
            len(block) != m_s or any(len(row) != m_s for row in block)
            for block in self.Pbar
        ):
            raise ValueError("Pbar shape must be unstable x stable x stable")
        for r in self.rho:
            if not r > 0.0:
                raise ValueError("rho entries must be positive")
        for row in self.P:
            for v in row:
                if not v > 0.0:
                    raise ValueError("P entries must be positive")
        for block in self.Pbar:
            for i in range(m_s):
                for l in range(m_s):
                    if not block[i][l] > 0.0:
                        raise ValueError("Pbar entries must be positive")
                    if block[i][l] != block[l][i]:
                        raise ValueError(
                            "Pbar must be symmetric in its stable indices"
                        )

    @property
    def m_s(self) -> int:
        return len(self.names)

    @property
    def m_u(self) -> int:
        return len(self.unstable)

    def rho_map(self) -> dict[str, Interval]:
        return {name: Interval(r) for name, r in zip(self.names, self.rho)}

    def P_map(self) -> dict[tuple[str, str], Interval]:
        return {
            (ua, si): Interval(self.P[a][i])
            for a, ua in enumerate(self.unstable)
            for i, si in enumerate(self.names)
        }

    def r_unstable(self) -> dict[str, float]:
        """Radius of the unstable range, row by row of P against rho."""
        return {
            ua: isum(
                Interval(self.P[a][i]) * Interval(self.rho[i])
                for i in range(self.m_s)
            ).hi
            for a, ua in enumerate(self.unstable)
        }

    def P_entry(self, a: int, i: int) -> Interval:
        return Interval(self.P[a][i])

    def Pbar_entry(self, a: int, i: int, l: int) -> Interval:
        return Interval(self.Pbar[a][i - 1][l - 1])


def symmetrize_upper(
    tensor: Mapping[tuple[str, int, int], Interval],
    unstable: Sequence[str],
    m_s: int,
) -> tuple[tuple[tuple[float, ...], ...], ...]:
    """Upper endpoints of a (row, i, l) tensor, symmetrized by max."""
    out = []
    for ua in unstable:
        block = [[0.0] * m_s for _ in range(m_s)]
        for i in range(1, m_s + 1):
            for l in range(1, m_s + 1):
                v = max(tensor[(ua, i, l)].hi, tensor[(ua, l, i)].hi)
                block[i - 1][l - 1] = v
        out.append(tuple(tuple(row) for row in block))
    return tuple(out)


# ---------------------------------------------------------------------------
# shared pieces


def _resolvent(gap: Interval, context: str) -> Interval:
    if gap.lo <= 0.0 <= gap.hi:
        raise ResonantDenominator(
            f"{context}: gap [{gap.lo!r}, {gap.hi!r}] straddles zero"
        )
    return Interval(1.0) / gap


def _lam_unstable(pack: ConstantsPack, name: str) -> Interval:
    return pack.lam[name]


def _up(iv: Interval) -> Interval:
    """Snap a pack constant to its float upper endpoint.

    Pack entries are one-sided enclosures of operator norms; the upper
    endpoint is the constant actually chosen for the estimates.  Using
    the degenerate interval keeps the signed cancellation structure of
    the seed and contraction tensors, which the hull [0, hi] destroys.
    """
    return Interval(iv.hi)


def _chart_hessian(
    pack: ConstantsPack, ball: ChartBall
) -> dict[tuple[str, str, str], Interval]:
    """Second derivatives of the field composed with any chart in the ball.

    Entry (row, b, s) bounds the derivative in stable direction s of the
    first derivative against block b, after substituting the graph for
    the unstable argument; the primed middle index is contracted with P.
    """
    out: dict[tuple[str, str, str], Interval] = {}
    for row in pack.blocks:
        for b in pack.blocks:
            for i, si in enumerate(ball.names):
                total = _up(pack.Ct[(row, b, si)]) + isum(
                    _up(pack.Ct[(row, b, ua)]) * ball.P_entry(a, i)
                    for a, ua in enumerate(ball.unstable)
                )
                out[(row, b, si)] = total
    return out


def _pair_ladder(rates: RateLadder) -> list[list]:
    """Rate rungs for second-derivative tracking: singles plus pair sums.

    Returns [value, tag, pairs] triples sorted fast-to-slow by upper
    endpoint; ``pairs`` lists the unordered index pairs whose summed
    rates coincide bitwise with the rung value (normally one pair, or
    none for the single rates).
    """
    m_s = rates.m_s
    rungs: list[list] = [[rates.gamma[0], ("x", "g0"), []]]
    for j in range(1, m_s + 1):
        rungs.append([rates.gamma[j], ("g", j), []])
    for k1 in range(m_s + 1):
        for k2 in range(k1, m_s + 1):
            val = rates.gamma[k1] + rates.gamma[k2]
            for rung in rungs:
                if rung[0].lo == val.lo and rung[0].hi == val.hi:
                    rung[2].append((k1, k2))
                    break
            else:
                rungs.append([val, ("p", k1, k2), [(k1, k2)]])
    rungs.sort(key=lambda rung: -rung[0].hi)
    return rungs


def _snapped_problem_parts(pack: ConstantsPack):
    """Per-block rates and couplings snapped to their upper endpoints.

    The snap must match build_rates exactly so the tagged ladder values
    compare bitwise equal inside the general bootstrap.
    """
    names = pack.stable
    lam = {
        j: Interval(pack.lam[name].hi) for j, name in enumerate(names, start=1)
    }
    H = {
        (j, i): Interval(pack.H[(nj, ni)].hi)
        for j, nj in enumerate(names, start=1)
        for i, ni in enumerate(names, start=1)
    }
    return lam, H


# ---------------------------------------------------------------------------
# endomorphism of the Lipschitz ball


def endo_P_check(
    pack: ConstantsPack,
    rates: RateLadder,
    G: GTensor,
    ball: ChartBall,
) -> tuple[dict[tuple[str, int], Interval], bool]:
    """Lipschitz bound of the graph transform against the ball's P.

    Computes the direct bound through H and the sharper two-rate bound
    through the split first/second derivative constants, and keeps the
    entrywise smaller of the two.  Passes when every upper endpoint is
    at most the corresponding P entry.
    """
    m_s = rates.m_s
    stable = pack.stable
    rho_iv = [Interval(r) for r in ball.rho]

    # Resolvent sums shared between both forms.
    single = {}
    for a, ua in enumerate(ball.unstable):
        lam_u = _lam_unstable(pack, ua)
        for k in range(m_s + 1):
            single[(a, k)] = _resolvent(
                lam_u - rates.gamma[k], f"unstable {ua} against rate {k}"
            )
        for k1 in range(m_s + 1):
            for k2 in range(m_s + 1):
                single[(a, k1, k2)] = _resolvent(
                    lam_u - rates.gamma[k1] - rates.gamma[k2],
                    f"unstable {ua} against rates {k1}+{k2}",
                )

    out: dict[tuple[str, int], Interval] = {}
    ok = True
    for a, ua in enumerate(ball.unstable):
        # Coefficients of the sharpened form, contracted with P.
        coef_D = {}
        coef_CC = {}
        for i in range(1, m_s + 1):
            si = stable[i - 1]
            coef_D[i] = _up(pack.D[(ua, si)]) + isum(
                _up(pack.D[(ua, ub)]) * ball.P_entry(b, i - 1)
                for b, ub in enumerate(ball.unstable)
            )
            for j in range(1, m_s + 1):
                sj = stable[j - 1]
                coef_CC[(i, j)] = _up(pack.Ct[(ua, si, sj)]) + isum(
                    _up(pack.Ct[(ua, ub, sj)]) * ball.P_entry(b, i - 1)
                    for b, ub in enumerate(ball.unstable)
                )
        for n in range(1, m_s + 1):
            simple = isum(
                single[(a, k)]
                * _up(pack.H[(ua, stable[i - 1])])
                * G.entry(i, k, n)
                for k in range(m_s + 1)
                for i in range(1, m_s + 1)
            )
            first = isum(
                coef_D[i] * single[(a, k)] * G.entry(i, k, n)
                for i in range(1, m_s + 1)
                for k in range(m_s + 1)
            )
            second = isum(
                coef_CC[(i, j)]
                * single[(a, k1, k2)]
                * G.entry(j, k1, m)
                * rho_iv[m - 1]
                * G.entry(i, k2, n)
                for i in range(1, m_s + 1)
                for j in range(1, m_s + 1)
                for k1 in range(m_s + 1)
                for k2 in range(m_s + 1)
                for m in range(1, m_s + 1)
            )
            best = simple.imin(first + second)
            out[(ua, n)] = best
            if not best.hi <= ball.P[a][n - 1]:
                ok = False
    return out, ok


def iterate_P(
    pack_builder: Callable[[ChartBall], tuple[ConstantsPack, RateLadder, GTensor]],
    ball: ChartBall,
    max_iters: int = 8,
    rel_exit: float = 1e-3,
    headroom: float = 1.01,
) -> ChartBall:
    """Fixed-point search for a self-consistent Lipschitz tensor.

    Each round rebuilds the constants pack, the rates and the tracking
    tensor for the current ball, maps P to the computed bound times a
    small headroom factor, and keeps the last ball whose check passed.
    Raises NoAdmissibleP when no round passes, carrying the per-round
    status history for diagnostics.
    """
    history = []
    current = ball
    best: ChartBall | None = None
    prev_hi: dict | None = None
    for round_no in range(max_iters):
        try:
            pack, rates, G = pack_builder(current)
            Pt, ok = endo_P_check(pack, rates, G, current)
        except (OrderingViolation, ResonantDenominator) as exc:
            history.append((round_no, "error", str(exc)))
            if best is not None:
                return best
            raise NoAdmissibleP(
                f"constants rebuild failed: {exc}", tuple(history)
            ) from exc
        history.append(
            (round_no, "pass" if ok else "fail",
             max(v.hi for v in Pt.values()))
        )
        if ok:
            best = current
        new_P = []
        for a, ua in enumerate(current.unstable):
            row = []
            for n in range(1, current.m_s + 1):
                v = Pt[(ua, n)].hi * headroom
                row.append(v if v > 0.0 else 5e-324)
            new_P.append(tuple(row))
        hi_now = {k: v.hi for k, v in Pt.items()}
        if ok and prev_hi is not None:
            drift = max(
                abs(hi_now[k] - prev_hi[k]) / max(abs(hi_now[k]), 5e-324)
                for k in hi_now
            )
            if drift < rel_exit:
                return best
        prev_hi = hi_now
        current = replace(current, P=tuple(new_P))
    if best is not None:
        return best
    raise NoAdmissibleP(
        f"no admissible Lipschitz tensor after {max_iters} rounds",
        tuple(history),
    )


# ---------------------------------------------------------------------------
# derivative-difference forcing and second-derivative tracking


def build_S(
    pack: ConstantsPack, ball: ChartBall
) -> dict[tuple[str, int, int], Interval]:
    """Forcing tensor for derivative differences along two trajectories.

    Entry (row, n, m) multiplies |x_m - z_m| times the derivative bound
    in direction n; rows run over every block so the same tensor serves
    the stable tracking problem and the unstable projection.
    """
    hess = _chart_hessian(pack, ball)
    out: dict[tuple[str, int, int], Interval] = {}
    for row in pack.blocks:
        for n in range(1, ball.m_s + 1):
            sn = ball.names[n - 1]
            for m in range(1, ball.m_s + 1):
                sm = ball.names[m - 1]
                direct = hess[(row, sn, sm)]
                curvature = isum(
                    _up(pack.C[(row, ua)]) * ball.Pbar_entry(a, n, m)
                    for a, ua in enumerate(ball.unstable)
                )
                crossed = isum(
                    hess[(row, ua, sm)] * ball.P_entry(a, n - 1)
                    for a, ua in enumerate(ball.unstable)
                )
                out[(row, n, m)] = direct + curvature + crossed
    return out


@dataclass(frozen=True)
class KTensor:
    """Second-derivative tracking tensor over its extended rate ladder."""

    mu: tuple[MuRate, ...]
    entries: dict[tuple[int, int, tuple[int, ...]], Interval]
    discarded_negative_mass: int
    sweeps_run: int

    @property
    def N_mu(self) -> int:
        return len(self.mu)

    def entry(self, j: int, k: int, multi: tuple[int, ...]) -> Interval:
        return self.entries.get((j, k, multi), ZERO)


def build_S_and_K(
    pack: ConstantsPack,
    ball: ChartBall,
    G: GTensor,
    rates: RateLadder,
    N_bootstrap: int = 5,
) -> tuple[dict[tuple[str, int, int], Interval], KTensor]:
    """Forcing tensor S and bootstrapped second-derivative tensor K."""
    m_s = rates.m_s
    stable = pack.stable
    S = build_S(pack, ball)
    Cs = Interval(pack.Cs.hi)
    p_up = {name: Interval(pack.p[name].hi) for name in stable}

    # Double contraction of S rows with two tracking columns, per
    # ordered rate pair.
    def sg2(j_name: str, k1: int, k2: int, i: int, l: int) -> Interval:
        return isum(
            S[(j_name, n, m)] * G.entry(m, k1, l) * G.entry(n, k2, i)
            for n in range(1, m_s + 1)
            for m in range(1, m_s + 1)
        )

    seed_gap = {}
    for k1 in range(m_s + 1):
        for k2 in range(k1, m_s + 1):
            gap = rates.gamma[k1] + rates.gamma[k2] - rates.gamma[0]
            seed_gap[(k1, k2)] = _resolvent(
                gap, f"pair rate {k1}+{k2} against the lumped rate"
            )

    def ktilde(j_name: str, k1: int, k2: int, i: int, l: int) -> Interval:
        kk = (k1, k2) if k1 <= k2 else (k2, k1)
        return seed_gap[kk] * Cs * p_up[j_name] * sg2(j_name, k1, k2, i, l)

    rungs = _pair_ladder(rates)
    mu = tuple(MuRate(value=r[0], tag=r[1]) for r in rungs)
    multis = [
        (i, l)
        for i in range(1, m_s + 1)
        for l in range(1, m_s + 1)
    ]

    seed: dict[tuple[int, int, tuple[int, ...]], Interval] = {}
    forcing: dict[tuple[int, int, tuple[int, ...]], Interval] = {}
    for pos, (value, tag, pairs) in enumerate(rungs, start=1):
        for j, nj in enumerate(stable, start=1):
            for (i, l) in multis:
                acc = ZERO
                for (k1, k2) in pairs:
                    term = isum(
                        ktilde(m_name, k1, k2, i, l) for m_name in stable
                    )
                    if k1 != k2:
                        term = term + isum(
                            ktilde(m_name, k2, k1, i, l) for m_name in stable
                        )
                    acc = acc + p_up[nj] * term
                if tag == ("x", "g0"):
                    lump = isum(
                        ktilde(m_name, k1, k2, i, l)
                        for m_name in stable
                        for k1 in range(m_s + 1)
                        for k2 in range(m_s + 1)
                    )
                    acc = acc - p_up[nj] * lump
                if acc.lo != 0.0 or acc.hi != 0.0:
                    seed[(j, pos, (i, l))] = acc

                force = ZERO
                for (k1, k2) in pairs:
                    term = sg2(nj, k1, k2, i, l)
                    if k1 != k2:
                        term = term + sg2(nj, k2, k1, i, l)
                    force = force + term
                if force.lo != 0.0 or force.hi != 0.0:
                    forcing[(j, pos, (i, l))] = force

    lam, H = _snapped_problem_parts(pack)
    problem = GeneralBootstrapProblem(
        lam=lam,
        H=H,
        mu=mu,
        A=forcing,
        B={},
        omega_shape=(m_s, m_s),
    )
    result = general_bootstrap(problem, seed, N_bootstrap=N_bootstrap)
    K = KTensor(
        mu=mu,
        entries=result.entries,
        discarded_negative_mass=result.discarded_negative_mass,
        sweeps_run=result.sweeps_run,
    )
    return S, K


def endo_Pbar_check(
    pack: ConstantsPack,
    ball: ChartBall,
    G: GTensor,
    K: KTensor,
    rates: RateLadder,
) -> tuple[dict[tuple[str, int, int], Interval], bool]:
    """Lipschitz-derivative bound of the graph transform against Pbar."""
    m_s = rates.m_s
    stable = pack.stable
    S = build_S(pack, ball)
    out: dict[tuple[str, int, int], Interval] = {}
    ok = True
    for a, ua in enumerate(ball.unstable):
        lam_u = _lam_unstable(pack, ua)
        pair_res = {}
        for k1 in range(m_s + 1):
            for k2 in range(m_s + 1):
                pair_res[(k1, k2)] = _resolvent(
                    lam_u - rates.gamma[k1] - rates.gamma[k2],
                    f"unstable {ua} against rates {k1}+{k2}",
                )
        mu_res = [
            _resolvent(lam_u - rate.value, f"unstable {ua} against ladder")
            for rate in K.mu
        ]
        for i in range(1, m_s + 1):
            for l in range(1, m_s + 1):
                direct = isum(
                    pair_res[(k1, k2)]
                    * S[(ua, n, m)]
                    * G.entry(m, k1, l)
                    * G.entry(n, k2, i)
                    for k1 in range(m_s + 1)
                    for k2 in range(m_s + 1)
                    for n in range(1, m_s + 1)
                    for m in range(1, m_s + 1)
                )
                tracked = isum(
                    mu_res[k - 1]
                    * _up(pack.H[(ua, stable[n - 1])])
                    * K.entry(n, k, (i, l))
                    for k in range(1, K.N_mu + 1)
                    for n in range(1, m_s + 1)
                )
                val = direct + tracked
                out[(ua, i, l)] = val
                if not val.hi <= ball.Pbar[a][i - 1][l - 1]:
                    ok = False
    return out, ok


def iterate_Pbar(
    pack_builder: Callable[[ChartBall], tuple[ConstantsPack, RateLadder, GTensor]],
    ball: ChartBall,
    max_iters: int = 8,
    rel_exit: float = 1e-3,
    headroom: float = 1.01,
    N_bootstrap: int = 5,
) -> ChartBall:
    """Fixed-point search for a self-consistent second-derivative tensor.

    Same scheme as iterate_P, one level up: each round rebuilds the
    constants for the current ball, maps Pbar to the symmetrized upper
    bound times a headroom factor, and keeps the last passing ball.  The
    Lipschitz tensor P is held fixed, so run iterate_P first.
    """
    history = []
    current = ball
    best: ChartBall | None = None
    prev: tuple | None = None
    for round_no in range(max_iters):
        try:
            pack, rates, G = pack_builder(current)
            _, K = build_S_and_K(pack, current, G, rates, N_bootstrap)
            Pbt, ok = endo_Pbar_check(pack, current, G, K, rates)
        except (OrderingViolation, ResonantDenominator, IntervalError) as exc:
            history.append((round_no, "error", str(exc)))
            if best is not None:
                return best
            raise NoAdmissibleP(
                f"curvature constants rebuild failed: {exc}", tuple(history)
            ) from exc
        history.append(
            (round_no, "pass" if ok else "fail",
             max(v.hi for v in Pbt.values()))
        )
        if ok:
            best = current
        sym = symmetrize_upper(Pbt, current.unstable, current.m_s)
        new_Pbar = tuple(
            tuple(
                tuple(
                    v * headroom if v * headroom > 0.0 else 5e-324
                    for v in row
                )
                for row in block
            )
            for block in sym
        )
        if ok and prev is not None:
            drift = max(
                abs(a - b) / max(abs(a), 5e-324)
                for blk_a, blk_b in zip(new_Pbar, prev)
                for row_a, row_b in zip(blk_a, blk_b)
                for a, b in zip(row_a, row_b)
            )
            if drift < rel_exit:
                return best
        prev = new_Pbar
        current = replace(current, Pbar=new_Pbar)
    if best is not None:
        return best
    raise NoAdmissibleP(
        f"no admissible second-derivative tensor after {max_iters} rounds",
        tuple(history),
    )


# ---------------------------------------------------------------------------
# chart dependence and the contraction matrix


@dataclass(frozen=True)
class FTensor:
    """Chart-dependence tracking tensor over the extended ladder.

    Rung 1 is the intermediate rate, rung 2 the lumped rate, rung j+2
    the diagonal rate of stable block j.  The multi-index is (i, n, a):
    differentiation direction, initial-condition direction and unstable
    row.
    """

    mu: tuple[MuRate, ...]
    entries: dict[tuple[int, int, tuple[int, ...]], Interval]
    discarded_negative_mass: int
    sweeps_run: int

    @property
    def N_mu(self) -> int:
        return len(self.mu)

    def entry(self, j: int, k: int, multi: tuple[int, ...]) -> Interval:
        return self.entries.get((j, k, multi), ZERO)


def build_F(
    pack: ConstantsPack,
    ball: ChartBall,
    G: GTensor,
    rates: RateLadder,
    N_bootstrap: int = 5,
) -> FTensor:
    """Tracking tensor for the difference of flows under two charts.

    The seed moves the lumped-rate column of the tracking tensor up to
    the intermediate rate, which is sound because that column encloses
    a nonnegative quantity; a negative lower endpoint there would break
    the argument and raises immediately.
    """
    if rates.gamma_minus1 is None:
        raise ValueError("the rate ladder carries no intermediate rate")
    m_s = rates.m_s
    stable = pack.stable
    gm1 = rates.gamma_minus1
    Cs = Interval(pack.Cs.hi)
    p_up = {name: Interval(pack.p[name].hi) for name in stable}

    for i in range(1, m_s + 1):
        for n in range(1, m_s + 1):
            if G.entry(i, 0, n).lo < 0.0:
                raise IntervalError(
                    "lumped-rate tracking column has a negative lower "
                    "endpoint; the rate shift in the chart-dependence "
                    "seed would be unsound"
                )

    def rate_of(k: int) -> Interval:
        return gm1 if k == -1 else rates.gamma[k]

    def shifted_G(i: int, k: int, n: int) -> Interval:
        if k == -1:
            return G.entry(i, 0, n)
        if k == 0:
            return ZERO
        return G.entry(i, k, n)

    seed_res = {
        k: _resolvent(
            rate_of(k) - rates.gamma[0],
            f"chart seed rate {k} against the lumped rate",
        )
        for k in [-1] + list(range(1, m_s + 1))
    }

    def ftilde(j_name: str, i: int, k: int, n: int, a: int) -> Interval:
        if k == 0:
            return ZERO
        coupling = _up(pack.C[(j_name, ball.unstable[a - 1])])
        return Cs * seed_res[k] * p_up[j_name] * coupling * shifted_G(i, k, n)

    mu = tuple(
        [MuRate(value=gm1, tag=("x", "gm1")),
         MuRate(value=rates.gamma[0], tag=("x", "g0"))]
        + [MuRate(value=rates.gamma[j], tag=("g", j)) for j in range(1, m_s + 1)]
    )
    ks = [-1] + list(range(m_s + 1))
    pos_of = {k: k + 2 if k >= 1 else (1 if k == -1 else 2) for k in ks}
    multis = [
        (i, n, a)
        for i in range(1, m_s + 1)
        for n in range(1, m_s + 1)
        for a in range(1, ball.m_u + 1)
    ]

    seed: dict[tuple[int, int, tuple[int, ...]], Interval] = {}
    for m_row, nm in enumerate(stable, start=1):
        for (i, n, a) in multis:
            for k in ks:
                if k == 0:
                    val = -(p_up[nm] * isum(
                        ftilde(j_name, i, k1, n, a)
                        for j_name in stable
                        for k1 in ks
                    ))
                else:
                    val = p_up[nm] * isum(
                        ftilde(j_name, i, k, n, a) for j_name in stable
                    )
                if val.lo != 0.0 or val.hi != 0.0:
                    seed[(m_row, pos_of[k], (i, n, a))] = val

    forcing: dict[tuple[int, int, tuple[int, ...]], Interval] = {}
    for j, nj in enumerate(stable, start=1):
        for (i, n, a) in multis:
            coupling = _up(pack.C[(nj, ball.unstable[a - 1])])
            for k in range(m_s + 1):
                val = coupling * G.entry(i, k, n)
                if val.lo != 0.0 or val.hi != 0.0:
                    forcing[(j, pos_of[k], (i, n, a))] = val

    lam, H = _snapped_problem_parts(pack)
    problem = GeneralBootstrapProblem(
        lam=lam,
        H=H,
        mu=mu,
        A=forcing,
        B={},
        omega_shape=(m_s, m_s, ball.m_u),
    )
    result = general_bootstrap(problem, seed, N_bootstrap=N_bootstrap)
    return FTensor(
        mu=mu,
        entries=result.entries,
        discarded_negative_mass=result.discarded_negative_mass,
        sweeps_run=result.sweeps_run,
    )


def build_J_and_contract(
    pack: ConstantsPack,
    G: GTensor,
    F: FTensor,
    rates: RateLadder,
    strict: bool = False,
) -> tuple[IntervalMatrix, Interval, bool]:
    """Contraction matrix of the graph transform in the block seminorm.

    Flattens the four-index contraction tensor into a square matrix
    with row (a, n) and column (b, i) blocks, bounds its spectral
    radius by the best of norm(J^k)^(1/k) over a few powers, and passes
    when the bound is below one.  With strict=True a failing bound
    raises NotContractive instead.
    """
    if rates.gamma_minus1 is None:
        raise ValueError("the rate ladder carries no intermediate rate")
    m_s = rates.m_s
    m_u = len(pack.unstable)
    stable = pack.stable
    size = m_s * m_u
    ks = [-1] + list(range(m_s + 1))
    pos_of = {k: k + 2 if k >= 1 else (1 if k == -1 else 2) for k in ks}

    lo = np.zeros((size, size))
    hi = np.zeros((size, size))
    for a, ua in enumerate(pack.unstable, start=1):
        lam_u = _lam_unstable(pack, ua)
        res = {
            k: _resolvent(
                lam_u - (rates.gamma_minus1 if k == -1 else rates.gamma[k]),
                f"unstable {ua} against contraction rate {k}",
            )
            for k in ks
        }
        for n in range(1, m_s + 1):
            row = (a - 1) * m_s + (n - 1)
            for b, ub in enumerate(pack.unstable, start=1):
                for i in range(1, m_s + 1):
                    col = (b - 1) * m_s + (i - 1)
                    total = ZERO
                    for k in ks:
                        drive = ZERO
                        if k >= 0:
                            drive = _up(pack.C[(ua, ub)]) * G.entry(i, k, n)
                        fed = isum(
                            _up(pack.H[(ua, stable[m - 1])])
                            * F.entry(m, pos_of[k], (i, n, b))
                            for m in range(1, m_s + 1)
                        )
                        total = total + res[k] * (drive + fed)
                    lo[row, col] = total.lo
                    hi[row, col] = total.hi
    J = IntervalMatrix(lo, hi)

    def rowsum_norm(M: IntervalMatrix) -> Interval:
        rows, cols = M.shape
        val = imax_many(
            isum(M[r, c].abs() for c in range(cols)) for r in range(rows)
        )
        # Row sums of absolute values are nonnegative; outward rounding can
        # push the lower endpoint a few ulps below zero, which would poison
        # the square roots taken below.
        return Interval(max(0.0, val.lo), val.hi)

    power = J
    norms = [rowsum_norm(J)]
    have = 1
    for k in CONTRACTION_POWERS[1:]:
        while have < k:
            power = power @ power
            have *= 2
        root = rowsum_norm(power)
        for _ in range(k.bit_length() - 1):
            root = root.sqrt()
        norms.append(root)
    bound = norms[0]
    for other in norms[1:]:
        bound = bound.imin(other)
    ok = bound.hi < 1.0
    if strict and not ok:
        raise NotContractive(bound.hi)
    return J, bound, ok


# ---------------------------------------------------------------------------
# certificate


@dataclass(frozen=True)
class Hypothesis:
    name: str
    status: str
    margin: float
    detail: str = ""


@dataclass(frozen=True)
class Certificate:
    """Machine-checked record of one certification run.

    ``status`` is "certified" exactly when every hypothesis line is
    verified.  Tensor fields hold (lo, hi) pairs keyed by flattened
    string indices; ``timings`` is informational and deliberately left
    out of the serialized form so reruns byte-match.
    """

    schema: str
    mode: str
    status: str
    ball: ChartBall
    hypotheses: tuple[Hypothesis, ...]
    Ptilde: dict[str, tuple[float, float]]
    Pbar_tilde: dict[str, tuple[float, float]]
    J: dict[str, tuple[float, float]]
    J_norm: tuple[float, float]
    C0_error: float
    eps: dict[str, float]
    domain: tuple[float, ...]
    digests: dict[str, str]
    counts: dict[str, int]
    provenance: dict[str, float | str | int]
    timings: dict[str, float] = field(default_factory=dict)


def digest_floats(items) -> str:
    """Order-stable short digest of (label, float) pairs."""
    h = hashlib.sha256()
    for label, value in sorted(items):
        h.update(f"{label}={value!r};".encode())
    return h.hexdigest()[:16]


def pack_digest(pack: ConstantsPack) -> str:
    items = []
    for name, iv in pack.lam.items():
        items.append((f"lam.{name}", iv.hi))
        items.append((f"lam.{name}.lo", iv.lo))
    for name, iv in pack.eps.items():
        items.append((f"eps.{name}", iv.hi))
    for tensor, label in ((pack.D, "D"), (pack.C, "C"), (pack.H, "H"),
                          (pack.Hhat, "Hhat")):
        for key, iv in tensor.items():
            items.append((f"{label}.{'.'.join(key)}", iv.hi))
    for key, iv in pack.Ct.items():
        items.append((f"Ct.{'.'.join(key)}", iv.hi))
    items.append(("HhatCal", pack.HhatCal.hi))
    items.append(("Cs", pack.Cs.hi))
    items.append(("lambda_s", pack.lambda_s.hi))
    return digest_floats(items)


def tensor_digest(entries: Mapping, label: str) -> str:
    return digest_floats(
        (f"{label}.{key}", iv.hi) for key, iv in entries.items()
    )


def c0_error_bound(pack: ConstantsPack, ball: ChartBall) -> float:
    """Sup bound for the shifted graph over the shrunk domain."""
    worst = ZERO
    for a, ua in enumerate(ball.unstable):
        reach = isum(
            ball.P_entry(a, i)
            * (Interval(ball.rho[i]) + pack.eps[ball.names[i]])
            for i in range(ball.m_s)
        )
        worst = worst.imax(reach + pack.eps[ua])
    return worst.hi


def assemble_certificate(
    mode: str,
    ball: ChartBall,
    pack: ConstantsPack | None,
    rates: RateLadder | None,
    G: GTensor | None,
    K: KTensor | None,
    F: FTensor | None,
    Ptilde: Mapping[tuple[str, int], Interval] | None,
    ok_P: bool,
    Pbar_tilde: Mapping[tuple[str, int, int], Interval] | None,
    ok_Pbar: bool,
    stay: StayInsideResult | None,
    J: IntervalMatrix | None,
    J_norm: Interval | None,
    ok_J: bool,
    spectrum_verified: bool,
    spectrum_margin: float,
    failures: Mapping[str, str] | None = None,
    provenance: Mapping[str, float | str | int] | None = None,
    timings: Mapping[str, float] | None = None,
) -> Certificate:
    """Collect every check into one record; failures are data, not errors.

    ``failures`` maps hypothesis names to failure details for stages
    that raised before producing a result; those lines are recorded as
    failed and later stages that never ran as skipped.
    """
    failures = dict(failures or {})

    def line(name, computed, ok, margin, detail=""):
        if name in failures:
            return Hypothesis(name, "failed", 0.0, failures[name])
        if not computed:
            return Hypothesis(name, "skipped", 0.0, detail or "not attempted")
        return Hypothesis(
            name, "verified" if ok else "failed", margin, detail
        )

    hyps = []
    hyps.append(
        line(
            "stable_spectrum_captured",
            True,
            spectrum_verified,
            spectrum_margin,
            "unstable count matches the equilibrium index and the "
            "tail rate is negative",
        )
    )
    gamma0_ok = rates is not None and rates.gamma[0].hi < 0.0
    hyps.append(
        line(
            "gamma0_negative",
            rates is not None,
            gamma0_ok,
            -rates.gamma[0].hi if rates is not None else 0.0,
        )
    )
    stay_ok = stay is not None and stay.verified
    hyps.append(
        line(
            "stay_inside_ball",
            stay is not None or "stay_inside_ball" in failures,
            stay_ok,
            stay.margin if stay is not None else 0.0,
        )
    )

    def rel_margin(computed, bound_of):
        worst = None
        for key, iv in computed.items():
            cap = bound_of(key)
            rel = (cap - iv.hi) / cap
            worst = rel if worst is None else min(worst, rel)
        return worst if worst is not None else 0.0

    P_margin = 0.0
    if Ptilde is not None:
        P_margin = rel_margin(
            Ptilde, lambda key: ball.P[ball.unstable.index(key[0])][key[1] - 1]
        )
    hyps.append(line("endomorphism_B01", Ptilde is not None, ok_P, P_margin))
    Pbar_margin = 0.0
    if Pbar_tilde is not None:
        Pbar_margin = rel_margin(
            Pbar_tilde,
            lambda key: ball.Pbar[ball.unstable.index(key[0])][key[1] - 1][
                key[2] - 1
            ],
        )
    hyps.append(
        line("endomorphism_B11", Pbar_tilde is not None, ok_Pbar, Pbar_margin)
    )
    hyps.append(
        line(
            "contraction_J",
            J_norm is not None,
            ok_J,
            1.0 - J_norm.hi if J_norm is not None else 0.0,
        )
    )

    status = "certified" if all(h.status == "verified" for h in hyps) else "failed"

    def iv_map(entries, fmt):
        if entries is None:
            return {}
        return {fmt(key): (iv.lo, iv.hi) for key, iv in entries.items()}

    J_map = {}
    if J is not None:
        rows, cols = J.shape
        J_map = {
            f"{r + 1},{c + 1}": (float(J.lo[r, c]), float(J.hi[r, c]))
            for r in range(rows)
            for c in range(cols)
        }

    eps_map = {}
    domain = ()
    c0 = 0.0
    if pack is not None:
        eps_map = {name: pack.eps[name].hi for name in pack.blocks}
        domain = tuple(
            ball.rho[i] - pack.eps[ball.names[i]].hi for i in range(ball.m_s)
        )
        c0 = c0_error_bound(pack, ball)

    digests = {}
    if pack is not None:
        digests["pack"] = pack_digest(pack)
    if G is not None:
        digests["G"] = tensor_digest(G.entries, "G")
    if K is not None:
        digests["K"] = tensor_digest(K.entries, "K")
    if F is not None:
        digests["F"] = tensor_digest(F.entries, "F")

    counts = {}
    if G is not None:
        counts["G_sweeps"] = G.sweeps_run
        counts["G_discarded_negative_mass"] = G.discarded_negative_mass
    if K is not None:
        counts["K_sweeps"] = K.sweeps_run
        counts["K_discarded_negative_mass"] = K.discarded_negative_mass
        counts["K_ladder_rungs"] = K.N_mu
    if F is not None:
        counts["F_sweeps"] = F.sweeps_run
        counts["F_discarded_negative_mass"] = F.discarded_negative_mass
    if stay is not None:
        counts["stay_inside_segments"] = stay.segments_checked

    return Certificate(
        schema=CERTIFICATE_SCHEMA,
        mode=mode,
        status=status,
        ball=ball,
        hypotheses=tuple(hyps),
        Ptilde=iv_map(Ptilde, lambda key: f"{key[0]},{key[1]}"),
        Pbar_tilde=iv_map(Pbar_tilde, lambda key: f"{key[0]},{key[1]},{key[2]}"),
        J=J_map,
        J_norm=(J_norm.lo, J_norm.hi) if J_norm is not None else (0.0, 0.0),
        C0_error=c0,
        eps=eps_map,
        domain=domain,
        digests=digests,
        counts=counts,
        provenance=dict(provenance or {}),
        timings=dict(timings or {}),
    )


def certificate_to_dict(cert: Certificate) -> dict:
    """JSON-ready view of a certificate; timings are left out."""
    return {
        "schema": cert.schema,
        "mode": cert.mode,
        "status": cert.status,
        "ball": {
            "names": list(cert.ball.names),
            "unstable": list(cert.ball.unstable),
            "rho": list(cert.ball.rho),
            "P": [list(row) for row in cert.ball.P],
            "Pbar": [
                [list(row) for row in block] for block in cert.ball.Pbar
            ],
        },
        "hypotheses": [
            {
                "name": h.name,
                "status": h.status,
                "margin": h.margin,
                "detail": h.detail,
            }
            for h in cert.hypotheses
        ],
        "P_tilde": {k: list(v) for k, v in sorted(cert.Ptilde.items())},
        "Pbar_tilde": {k: list(v) for k, v in sorted(cert.Pbar_tilde.items())},
        "J": {k: list(v) for k, v in sorted(cert.J.items())},
        "J_norm": list(cert.J_norm),
        "C0_error": cert.C0_error,
        "eps": dict(sorted(cert.eps.items())),
        "domain": list(cert.domain),
        "digests": dict(sorted(cert.digests.items())),
        "counts": dict(sorted(cert.counts.items())),
        "provenance": dict(sorted(cert.provenance.items())),
    }


def certificate_to_json(cert: Certificate) -> str:
    return json.dumps(
        certificate_to_dict(cert), sort_keys=True, indent=2, allow_nan=False
    )
