"""Componentwise exponential tracking bounds via bootstrap sweeps.

Solutions of the conjugated field that start in a product ball are
compared component by component.  A tracking tensor ``G`` turns the
one-shot contraction estimate (rate ``gamma_0``, constant ``Cs``) into
per-block bounds

    |x_j(t) - y_j(t)|  <=  sum_{k,n} e^{gamma_k t} G[j, k, n] |xi_n - zeta_n|

where ``gamma_0 > gamma_1 > ... > gamma_{m_s}`` is the rate ladder and
``j, n`` run over the stable blocks.  Each sweep of :func:`bootstrap_G`
replaces one row of the tensor using the variation-of-constants map and
a mass-shift projection, and every sweep preserves the inequality above.

All tensor entries are interval enclosures of the exact-arithmetic
sweep output seeded from floats.  The right-hand side is monotone
increasing in every entry, so the entrywise upper tensor is itself a
valid tracking tensor; invariance checks that need the exact t = 0
equality use the structural form of the final sweep instead.

:func:`general_bootstrap` runs the same scheme for an arbitrary integral
inequality with inhomogeneous forcing, used by the derivative and chart
comparison estimates downstream.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Mapping

from .frame import OrderingViolation
from .intervals import Interval, IntervalError, isum
from .linear_coords import ConstantsPack

ZERO = Interval(0.0)

SUP_EXIT_TOL = 1e-3
SUP_GRID_POINTS = 48
SUP_HORIZON = 10.0


class BallEscapePossible(IntervalError):
    """A stay-inside check failed; the ball may not be forward invariant."""

    def __init__(self, step: int, t_witness: float, row: str, detail: str = ""):
        self.step = step
        self.t_witness = t_witness
        self.row = row
        msg = f"stay-inside step {step} failed for block {row!r} near t={t_witness:.6g}"
        if detail:
            msg += f": {detail}"
        super().__init__(msg)


@dataclass(frozen=True)
class RateLadder:
    """Strictly ordered decay rates for the stable blocks.

    ``gamma[0]`` is the lumped contraction rate of the whole stable part
    and ``gamma[j]`` for ``j >= 1`` the rate of block ``names[j-1]``
    shifted by its diagonal coupling.  ``gamma_minus1`` is an optional
    intermediate rate strictly between ``gamma[0]`` and zero, used when
    chart-dependence estimates need one extra exponential.
    """

    names: tuple[str, ...]
    gamma: tuple[Interval, ...]
    gamma_minus1: Interval | None = None

    @property
    def m_s(self) -> int:
        return len(self.names)

    def rate(self, k: int) -> Interval:
        return self.gamma[k]


def build_rates(
    pack: ConstantsPack, gamma_minus1_factor: float | None = 0.5
) -> RateLadder:
    """Assemble and validate the rate ladder from a constants pack.

    Every pack constant is an upper bound that stays valid when raised,
    so the ladder is built from the float upper endpoints; the tensor
    sweeps snap the same way, keeping rates and couplings consistent.
    Raises OrderingViolation if the rates fail to decrease strictly, if
    the lumped rate is not negative, or if the intermediate rate does
    not fit below the slowest unstable rate.
    """
    names = tuple(pack.stable)
    gamma = [
        Interval(pack.lambda_s.hi)
        + Interval(pack.Cs.hi) * Interval(pack.HhatCal.hi)
    ]
    for name in names:
        gamma.append(
            Interval(pack.lam[name].hi) + Interval(pack.H[(name, name)].hi)
        )
    if not gamma[0].hi < 0.0:
        raise OrderingViolation(
            f"lumped stable rate must be negative, got hi={gamma[0].hi!r}"
        )
    for k in range(len(gamma) - 1):
        if not gamma[k].lo > gamma[k + 1].hi:
            raise OrderingViolation(
                f"rates gamma[{k}] and gamma[{k + 1}] fail strict ordering: "
                f"[{gamma[k].lo!r}, {gamma[k].hi!r}] vs "
                f"[{gamma[k + 1].lo!r}, {gamma[k + 1].hi!r}]"
            )
    gm1 = None
    if gamma_minus1_factor is not None:
        if not 0.0 < gamma_minus1_factor < 1.0:
            raise ValueError("gamma_minus1_factor must lie in (0, 1)")
        gm1 = gamma[0] * Interval(gamma_minus1_factor)
        if not gm1.lo > gamma[0].hi:
            raise OrderingViolation("intermediate rate does not clear gamma[0]")
        lam_u = pack.lam.get("u")
        if lam_u is not None and not lam_u.lo > gm1.hi:
            raise OrderingViolation(
                "intermediate rate is not below the slowest unstable rate"
            )
    return RateLadder(names=names, gamma=tuple(gamma), gamma_minus1=gm1)


@dataclass(frozen=True)
class GTensor:
    """Tracking tensor over the stable blocks.

    ``entries[(j, k, n)]`` encloses the coefficient of
    ``e^{gamma_k t} |xi_n - zeta_n|`` in the bound for block ``j``; the
    block indices ``j, n`` are 1-based over ``names`` and ``k`` runs
    from 0 (the lumped rate) to ``m_s``.  ``structural_t0`` records that
    every row came from a variation-of-constants sweep, which forces
    ``sum_k entries[(j, k, n)] = delta_{jn}`` in exact arithmetic; the
    stay-inside check relies on that identity at t = 0 because interval
    evaluation cannot certify an equality.
    """

    names: tuple[str, ...]
    entries: dict[tuple[int, int, int], Interval]
    structural_t0: bool
    discarded_negative_mass: int
    sweeps_run: int

    @property
    def m_s(self) -> int:
        return len(self.names)

    def entry(self, j: int, k: int, n: int) -> Interval:
        return self.entries[(j, k, n)]

    def hi_tensor(self) -> dict[tuple[int, int, int], float]:
        """Entrywise upper tensor; valid on its own by monotonicity."""
        return {key: iv.hi for key, iv in self.entries.items()}

    def row_sum_at_zero(self, j: int, n: int) -> Interval:
        return isum(self.entries[(j, k, n)] for k in range(self.m_s + 1))


def _pos_part(c: Interval) -> Interval:
    return Interval(max(c.lo, 0.0), max(c.hi, 0.0))


def _neg_part(c: Interval) -> Interval:
    return Interval(min(c.lo, 0.0), min(c.hi, 0.0))


def _shift_column_mass(
    entries: dict[tuple[int, int, int], Interval], j: int, m_s: int
) -> tuple[dict[tuple[int, int, int], Interval], int]:
    """Move rate-``j`` mass to a neighbouring rate in every row.

    Positive mass moves to the slower rate ``j - 1`` and negative mass
    to the faster rate ``j + 1``; both moves only increase the bound
    pointwise in t.  An entry straddling zero is split into its positive
    and negative parts, which encloses the exact shift of either sign.
    Negative mass at the fastest rate has nowhere to go and is dropped,
    which is safe for the inequality but recorded for the certificate.
    """
    out = dict(entries)
    discarded = 0
    for i in range(1, m_s + 1):
        for n in range(1, m_s + 1):
            c = entries[(i, j, n)]
            if c.lo == 0.0 and c.hi == 0.0:
                continue
            out[(i, j, n)] = ZERO
            pos = _pos_part(c)
            if pos.hi > 0.0:
                out[(i, j - 1, n)] = out[(i, j - 1, n)] + pos
            neg = _neg_part(c)
            if neg.lo < 0.0:
                if j < m_s:
                    out[(i, j + 1, n)] = out[(i, j + 1, n)] + neg
                else:
                    discarded += 1
    return out, discarded


def _rate_gaps(gamma: tuple[Interval, ...], j: int) -> dict[int, Interval]:
    inv = {}
    for k in range(len(gamma)):
        if k == j:
            continue
        d = gamma[k] - gamma[j]
        if d.lo <= 0.0 <= d.hi:
            raise OrderingViolation(
                f"rate gap gamma[{k}] - gamma[{j}] straddles zero"
            )
        inv[k] = Interval(1.0) / d
    return inv


def _sweep_row(
    entries: dict[tuple[int, int, int], Interval],
    j: int,
    H: dict[tuple[int, int], Interval],
    gamma: tuple[Interval, ...],
    m_s: int,
) -> dict[tuple[int, int], Interval]:
    """Variation-of-constants update of row ``j`` from the shifted tensor."""
    inv = _rate_gaps(gamma, j)
    num = {}
    for k in range(m_s + 1):
        for n in range(1, m_s + 1):
            num[(k, n)] = isum(
                H[(j, i)] * entries[(i, k, n)]
                for i in range(1, m_s + 1)
                if i != j
            )
    row = {}
    for n in range(1, m_s + 1):
        diag = Interval(1.0) if n == j else ZERO
        for m in range(m_s + 1):
            if m == j:
                continue
            diag = diag - inv[m] * num[(m, n)]
        row[(j, n)] = diag
        for k in range(m_s + 1):
            if k != j:
                row[(k, n)] = inv[k] * num[(k, n)]
    return row


def _sup_metric(gamma_mid: list[float], keys: list) -> dict:
    """Float heuristic: sup over a t grid of each bound component.

    Only steers the early exit of the sweep loop; never certifies.
    """
    grid = [0.0] + [
        SUP_HORIZON * math.exp(x * 0.25 - (SUP_GRID_POINTS - 1) * 0.25)
        for x in range(SUP_GRID_POINTS)
    ]
    sups = {}
    for key, rate_idx_entries in keys:
        best = 0.0
        for t in grid:
            s = 0.0
            for k, iv in rate_idx_entries:
                s += math.exp(gamma_mid[k] * t) * 0.5 * (iv.lo + iv.hi)
            best = max(best, abs(s))
        sups[key] = best
    return sups


def _specific_sup(entries, gamma, m_s):
    gmid = [0.5 * (g.lo + g.hi) for g in gamma]
    keys = []
    for j in range(1, m_s + 1):
        for n in range(1, m_s + 1):
            keys.append(
                (
                    (j, n),
                    [(k, entries[(j, k, n)]) for k in range(m_s + 1)],
                )
            )
    return _sup_metric(gmid, keys)


def bootstrap_G(
    pack: ConstantsPack, rates: RateLadder, N_bootstrap: int = 5
) -> GTensor:
    """Iteratively sharpen the tracking tensor from the one-shot seed.

    The seed puts ``p_j * Cs`` at the lumped rate for every row; each
    sweep rebuilds the rows in block order from the current tensor.
    Stops early once the sampled sup of every bound component changes by
    less than ``SUP_EXIT_TOL`` relatively between sweeps.
    """
    if tuple(pack.stable) != rates.names:
        raise ValueError("rate ladder does not match the pack's stable blocks")
    if N_bootstrap < 0:
        raise ValueError("N_bootstrap must be nonnegative")
    m_s = rates.m_s
    H = {
        (j, i): Interval(pack.H[(rates.names[j - 1], rates.names[i - 1])].hi)
        for j in range(1, m_s + 1)
        for i in range(1, m_s + 1)
    }
    entries: dict[tuple[int, int, int], Interval] = {}
    for j in range(1, m_s + 1):
        seed = Interval((Interval(pack.p[rates.names[j - 1]].hi) * Interval(pack.Cs.hi)).hi)
        for n in range(1, m_s + 1):
            entries[(j, 0, n)] = seed
            for k in range(1, m_s + 1):
                entries[(j, k, n)] = ZERO

    discarded = 0
    sweeps = 0
    prev_sup = _specific_sup(entries, rates.gamma, m_s)
    for _ in range(N_bootstrap):
        for j in range(1, m_s + 1):
            shifted, d = _shift_column_mass(entries, j, m_s)
            discarded += d
            row = _sweep_row(shifted, j, H, rates.gamma, m_s)
            for (k, n), iv in row.items():
                entries[(j, k, n)] = iv
        sweeps += 1
        sup = _specific_sup(entries, rates.gamma, m_s)
        worst = max(
            abs(sup[key] - prev_sup[key]) / max(abs(prev_sup[key]), 1e-300)
            for key in sup
        )
        prev_sup = sup
        if worst < SUP_EXIT_TOL:
            break
    return GTensor(
        names=rates.names,
        entries=entries,
        structural_t0=sweeps >= 1,
        discarded_negative_mass=discarded,
        sweeps_run=sweeps,
    )


@dataclass(frozen=True)
class StayInsideResult:
    verified: bool
    margin: float
    T1: float
    T2: float
    segments_checked: int


def _coerce_rho(
    rho: Mapping[str, Interval | float], names: tuple[str, ...]
) -> list[Interval]:
    out = []
    for name in names:
        val = rho[name]
        iv = val if isinstance(val, Interval) else Interval(float(val))
        if not iv.lo > 0.0:
            raise ValueError(f"radius for block {name!r} must be positive")
        out.append(iv)
    return out


class _SegmentBudget:
    def __init__(self, limit: int):
        self.limit = limit
        self.used = 0

    def spend(self) -> bool:
        self.used += 1
        return self.used <= self.limit


def _verify_adaptive(lo, hi, hull_ok, budget, step, row_name):
    """Bisect [lo, hi] until every segment passes ``hull_ok``."""
    min_width = max(1e-12 * (hi - lo), 5e-324)
    stack = [(lo, hi)]
    while stack:
        a, b = stack.pop()
        if not budget.spend():
            raise BallEscapePossible(step, 0.5 * (a + b), row_name, "budget spent")
        if hull_ok(a, b):
            continue
        if b - a <= min_width:
            raise BallEscapePossible(step, 0.5 * (a + b), row_name)
        mid = 0.5 * (a + b)
        stack.append((a, mid))
        stack.append((mid, b))


def check_stay_inside(
    rates: RateLadder,
    G: GTensor,
    rho: Mapping[str, Interval | float],
    T1: float | None = None,
    T2: float | None = None,
    segment_budget: int = 20000,
) -> StayInsideResult:
    """Certify that the product ball of radii ``rho`` traps solutions.

    Verifies ``rho_j >= sum_{k,n} e^{gamma_k t} G[j,k,n] rho_n`` for all
    t >= 0 in three stages: a single absolute-value evaluation at ``T2``
    controls the unbounded tail, adaptive interval evaluation covers
    ``[T1, T2]``, and on ``[0, T1]`` the bound starts at ``rho_j``
    exactly (structural t = 0 identity) and is shown to decrease.
    Raises BallEscapePossible with the failing stage and a witness time.
    """
    if rates.names != G.names:
        raise ValueError("tensor and rate ladder disagree on block names")
    m_s = rates.m_s
    gamma = rates.gamma
    rho_iv = _coerce_rho(rho, rates.names)
    if not gamma[0].hi < 0.0:
        raise OrderingViolation("stay-inside needs a negative lumped rate")

    if T1 is None:
        T1 = 0.1 / abs(gamma[0].hi)
    if T2 is None:
        worst = 2.0 * T1
        for j in range(1, m_s + 1):
            total = sum(
                abs(G.entry(j, k, n).hi) * rho_iv[n - 1].hi
                for k in range(m_s + 1)
                for n in range(1, m_s + 1)
            )
            need = math.log(max(1e3 * total / rho_iv[j - 1].lo, 2.0)) / abs(
                gamma[0].hi
            )
            worst = max(worst, need)
        T2 = worst
    if not 0.0 < T1 < T2:
        raise ValueError("need 0 < T1 < T2")

    exp_cache: dict[tuple[int, float, float], Interval] = {}

    def ex(k: int, a: float, b: float) -> Interval:
        key = (k, a, b)
        got = exp_cache.get(key)
        if got is None:
            got = (gamma[k] * Interval(a, b)).exp()
            exp_cache[key] = got
        return got

    budget = _SegmentBudget(segment_budget)
    margin = math.inf

    for j in range(1, m_s + 1):
        name = rates.names[j - 1]
        rho_j = rho_iv[j - 1].lo

        tail = isum(
            ex(k, T2, T2) * G.entry(j, k, n).abs() * rho_iv[n - 1]
            for k in range(m_s + 1)
            for n in range(1, m_s + 1)
        )
        if not tail.hi < rho_j:
            raise BallEscapePossible(1, T2, name)
        margin = min(margin, (rho_j - tail.hi) / rho_j)

        if not G.structural_t0:
            start = isum(
                G.entry(j, k, n) * rho_iv[n - 1]
                for k in range(m_s + 1)
                for n in range(1, m_s + 1)
            )
            if not start.hi <= rho_j:
                raise BallEscapePossible(3, 0.0, name, "t=0 mass exceeds radius")

        def slope_ok(a: float, b: float, j=j) -> bool:
            val = isum(
                gamma[k] * ex(k, a, b) * G.entry(j, k, n) * rho_iv[n - 1]
                for k in range(m_s + 1)
                for n in range(1, m_s + 1)
            )
            return val.hi < 0.0

        _verify_adaptive(0.0, T1, slope_ok, budget, 3, name)

        def level_ok(a: float, b: float, j=j, rho_j=rho_j) -> bool:
            val = isum(
                ex(k, a, b) * G.entry(j, k, n) * rho_iv[n - 1]
                for k in range(m_s + 1)
                for n in range(1, m_s + 1)
            )
            return val.hi <= rho_j

        _verify_adaptive(T1, T2, level_ok, budget, 2, name)

    return StayInsideResult(
        verified=True, margin=margin, T1=T1, T2=T2, segments_checked=budget.used
    )


def suggest_rho(
    rates: RateLadder,
    G: GTensor,
    rho: Mapping[str, Interval | float],
    T: float | None = None,
) -> dict[str, float]:
    """Advisory radii: sampled sup of each tracking bound over [0, T].

    Uses plain float arithmetic; feed the result back through
    :func:`check_stay_inside` before trusting it.
    """
    m_s = rates.m_s
    rho_iv = _coerce_rho(rho, rates.names)
    if T is None:
        T = 10.0 / abs(rates.gamma[0].hi)
    grid = [0.0] + [T * math.exp(-0.05 * x) for x in range(256)]
    gmid = [g.mid() for g in rates.gamma]
    out = {}
    for j in range(1, m_s + 1):
        best = 0.0
        for t in grid:
            s = sum(
                math.exp(gmid[k] * t) * G.entry(j, k, n).mid() * rho_iv[n - 1].mid()
                for k in range(m_s + 1)
                for n in range(1, m_s + 1)
            )
            best = max(best, s)
        out[rates.names[j - 1]] = best
    return out


@dataclass(frozen=True)
class MuRate:
    """One decay rate of the extended ladder with its structural tag.

    Tags decide rate equality exactly: ``("g", j)`` marks the rate that
    coincides with ``lambda_j + H[j, j]``; any other tag marks a rate
    that must differ from every such diagonal rate, and a numerical
    coincidence surfaces as a zero-straddling gap, never as a silent
    float comparison.
    """

    value: Interval
    tag: tuple


@dataclass(frozen=True)
class GeneralBootstrapProblem:
    """Data of a componentwise integral inequality with forcing.

    Row ``j`` of the unknown satisfies, in integrated form, a bound with
    linear feedback ``H``, forcing coefficients ``A`` against the rates
    ``mu`` and initial data ``B``.  ``lam[j] + H[(j, j)]`` must appear
    among the ``mu`` tagged ``("g", j)``; the ``mu`` values decrease
    strictly and the fastest one exceeds every tagged rate.  ``A`` and
    ``B`` are sparse over a multi-index of shape ``omega_shape``;
    missing keys are zero.
    """

    lam: dict[int, Interval]
    H: dict[tuple[int, int], Interval]
    mu: tuple[MuRate, ...]
    A: dict[tuple[int, int, tuple[int, ...]], Interval]
    B: dict[tuple[int, tuple[int, ...]], Interval]
    omega_shape: tuple[int, ...]

    def __post_init__(self):
        n_lam = self.N_lambda
        n_mu = self.N_mu
        gam = {j: self.gamma(j) for j in range(1, n_lam + 1)}
        for j in range(1, n_lam):
            if not gam[j].lo > gam[j + 1].hi:
                raise OrderingViolation(
                    f"tagged rates {j} and {j + 1} fail strict ordering"
                )
        for k in range(1, n_mu):
            if not self.mu[k - 1].value.lo > self.mu[k].value.hi:
                raise OrderingViolation(
                    f"ladder rates mu[{k}] and mu[{k + 1}] fail strict ordering"
                )
        seen = {}
        for k, rate in enumerate(self.mu, start=1):
            if rate.tag[0] == "g":
                j = rate.tag[1]
                if j in seen:
                    raise ValueError(f"duplicate tag for diagonal rate {j}")
                seen[j] = k
                if rate.value.lo != gam[j].lo or rate.value.hi != gam[j].hi:
                    raise ValueError(
                        f"mu tagged ('g', {j}) does not equal lambda + H diagonal"
                    )
        for j in range(1, n_lam + 1):
            if j not in seen:
                raise ValueError(f"diagonal rate {j} missing from the mu ladder")
            if seen[j] == 1:
                raise OrderingViolation(
                    "fastest mu must exceed every tagged diagonal rate"
                )
        for (j, k, multi) in self.A:
            self._check_key(j, k, multi, n_lam, n_mu)
        for (j, multi) in self.B:
            self._check_key(j, 1, multi, n_lam, n_mu)

    def _check_key(self, j, k, multi, n_lam, n_mu):
        if not (1 <= j <= n_lam and 1 <= k <= n_mu):
            raise ValueError(f"tensor key ({j}, {k}) out of range")
        if len(multi) != len(self.omega_shape):
            raise ValueError("multi-index arity mismatch")
        for idx, size in zip(multi, self.omega_shape):
            if not 1 <= idx <= size:
                raise ValueError(f"multi-index {multi} out of shape bounds")

    @property
    def N_lambda(self) -> int:
        return len(self.lam)

    @property
    def N_mu(self) -> int:
        return len(self.mu)

    def gamma(self, j: int) -> Interval:
        return self.lam[j] + self.H[(j, j)]

    def gamma_position(self, j: int) -> int:
        for k, rate in enumerate(self.mu, start=1):
            if rate.tag == ("g", j):
                return k
        raise ValueError(f"no mu tagged ('g', {j})")

    def multi_indices(self):
        return itertools.product(*(range(1, s + 1) for s in self.omega_shape))


@dataclass(frozen=True)
class GeneralBootstrapResult:
    entries: dict[tuple[int, int, tuple[int, ...]], Interval]
    discarded_negative_mass: int
    sweeps_run: int

    def entry(self, j: int, k: int, multi: tuple[int, ...]) -> Interval:
        return self.entries.get((j, k, multi), ZERO)


def _shift_general(entries, pos, n_rows, n_mu, multis):
    out = dict(entries)
    discarded = 0
    for i in range(1, n_rows + 1):
        for multi in multis:
            c = entries.get((i, pos, multi))
            if c is None or (c.lo == 0.0 and c.hi == 0.0):
                continue
            out[(i, pos, multi)] = ZERO
            p = _pos_part(c)
            if p.hi > 0.0:
                key = (i, pos - 1, multi)
                out[key] = out.get(key, ZERO) + p
            ng = _neg_part(c)
            if ng.lo < 0.0:
                if pos < n_mu:
                    key = (i, pos + 1, multi)
                    out[key] = out.get(key, ZERO) + ng
                else:
                    discarded += 1
    return out, discarded


def general_bootstrap(
    problem: GeneralBootstrapProblem,
    G_init: Mapping[tuple[int, int, tuple[int, ...]], Interval],
    N_bootstrap: int = 5,
) -> GeneralBootstrapResult:
    """Bootstrap sweeps for the general forced integral inequality.

    Each sweep rebuilds row ``j`` of the coefficient tensor from the
    mass-shifted forcing and the mass-shifted current tensor, row by row
    in index order.  The shift and the row update follow the same
    pattern as :func:`bootstrap_G`; the forcing ``A`` enters every
    resolvent numerator and the initial data ``B`` seeds the entry at
    the row's own rate.
    """
    if N_bootstrap < 0:
        raise ValueError("N_bootstrap must be nonnegative")
    n_rows = problem.N_lambda
    n_mu = problem.N_mu
    multis = list(problem.multi_indices())
    entries: dict[tuple[int, int, tuple[int, ...]], Interval] = {}
    for j in range(1, n_rows + 1):
        for k in range(1, n_mu + 1):
            for multi in multis:
                entries[(j, k, multi)] = G_init.get((j, k, multi), ZERO)

    positions = {j: problem.gamma_position(j) for j in range(1, n_rows + 1)}
    mu_mid = [rate.value.mid() for rate in problem.mu]

    def sup_now():
        keys = []
        for j in range(1, n_rows + 1):
            for multi in multis:
                keys.append(
                    (
                        (j, multi),
                        [
                            (k - 1, entries[(j, k, multi)])
                            for k in range(1, n_mu + 1)
                        ],
                    )
                )
        return _sup_metric(mu_mid, keys)

    discarded = 0
    sweeps = 0
    prev_sup = sup_now()
    for _ in range(N_bootstrap):
        for j in range(1, n_rows + 1):
            pos = positions[j]
            gam_j = problem.gamma(j)
            A_shift, dA = _shift_general(problem.A, pos, n_rows, n_mu, multis)
            G_shift, dG = _shift_general(entries, pos, n_rows, n_mu, multis)
            discarded += dA + dG
            inv = {}
            for k in range(1, n_mu + 1):
                if k == pos:
                    continue
                gap = problem.mu[k - 1].value - gam_j
                if gap.lo <= 0.0 <= gap.hi:
                    raise OrderingViolation(
                        f"rate gap mu[{k}] - gamma[{j}] straddles zero"
                    )
                inv[k] = Interval(1.0) / gap
            for multi in multis:
                num = {}
                for k in range(1, n_mu + 1):
                    num[k] = isum(
                        [A_shift.get((j, k, multi), ZERO)]
                        + [
                            problem.H[(j, i)] * G_shift.get((i, k, multi), ZERO)
                            for i in range(1, n_rows + 1)
                            if i != j
                        ]
                    )
                own = problem.B.get((j, multi), ZERO)
                for m in range(1, n_mu + 1):
                    if m != pos:
                        own = own - inv[m] * num[m]
                entries[(j, pos, multi)] = own
                for k in range(1, n_mu + 1):
                    if k != pos:
                        entries[(j, k, multi)] = inv[k] * num[k]
        sweeps += 1
        sup = sup_now()
        worst = max(
            abs(sup[key] - prev_sup[key]) / max(abs(prev_sup[key]), 1e-300)
            for key in sup
        )
        prev_sup = sup
        if worst < SUP_EXIT_TOL:
            break
    return GeneralBootstrapResult(
        entries=entries, discarded_negative_mass=discarded, sweeps_run=sweeps
    )
