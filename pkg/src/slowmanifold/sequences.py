"""Weighted one-sided cosine-coefficient sequences.

A series lives in the Banach algebra of sequences (a_k) with norm
|a| = |a_0| + sum_{k>=1} 2 nu^k |a_k|.  Elements are stored as interval
coefficients for modes 0..d plus an interval bound on the norm of the
discarded modes.  The discrete convolution below reflects indices over
k = 0, matching products of even functions on [0, pi].
"""

from __future__ import annotations

import math
from functools import lru_cache

import numpy as np

from .intervals import (
    Interval,
    IntervalError,
    IntervalMatrix,
    IntervalVector,
    _sum_bound,
)


class WeightMismatch(IntervalError):
    pass


@lru_cache(maxsize=64)
def weight_vector(nu: float, degree: int) -> IntervalVector:
    """Interval enclosures of the weights w_0 = 1, w_k = 2 nu^k."""
    if nu < 1.0:
        raise IntervalError(f"weight base nu = {nu} < 1")
    out = [Interval(1.0)]
    power = Interval(1.0)
    base = Interval(nu)
    for _ in range(degree):
        power = power * base
        out.append(Interval(2.0) * power)
    return IntervalVector.from_intervals(out)


class Weights:
    __slots__ = ("nu",)

    def __init__(self, nu: float):
        if nu < 1.0:
            raise IntervalError(f"weight base nu = {nu} < 1")
        self.nu = float(nu)

    def upto(self, degree: int) -> IntervalVector:
        return weight_vector(self.nu, degree)

    def omega(self, k: int) -> Interval:
        return weight_vector(self.nu, k)[k]


class CosSeries:
    __slots__ = ("nu", "coeffs", "tail")

    def __init__(self, nu: float, coeffs: IntervalVector, tail: Interval | None = None):
        if tail is None:
            tail = Interval(0.0)
        if tail.lo < 0.0:
            raise IntervalError("negative tail bound")
        self.nu = float(nu)
        self.coeffs = coeffs
        self.tail = tail

    @staticmethod
    def from_floats(nu: float, values, tail: Interval | None = None) -> "CosSeries":
        return CosSeries(nu, IntervalVector(np.asarray(values, dtype=float)), tail)

    @staticmethod
    def zeros(nu: float, degree: int = 0) -> "CosSeries":
        return CosSeries(nu, IntervalVector.zeros(degree + 1))

    @staticmethod
    def basis(nu: float, k: int) -> "CosSeries":
        v = np.zeros(k + 1)
        v[k] = 1.0
        return CosSeries(nu, IntervalVector(v))

    @property
    def degree(self) -> int:
        return len(self.coeffs) - 1

    def copy(self) -> "CosSeries":
        return CosSeries(self.nu, self.coeffs.copy(), self.tail)

    def padded(self, degree: int) -> "CosSeries":
        if degree < self.degree:
            raise IntervalError("padded() cannot drop modes, use truncate()")
        n_extra = degree - self.degree
        if n_extra == 0:
            return self
        lo = np.concatenate([self.coeffs.lo, np.zeros(n_extra)])
        hi = np.concatenate([self.coeffs.hi, np.zeros(n_extra)])
        return CosSeries(self.nu, IntervalVector(lo, hi), self.tail)

    def __add__(self, other: "CosSeries") -> "CosSeries":
        _match(self, other)
        d = max(self.degree, other.degree)
        a = self.padded(d)
        b = other.padded(d)
        return CosSeries(self.nu, a.coeffs + b.coeffs, _tail_add(a.tail, b.tail))

    def __sub__(self, other: "CosSeries") -> "CosSeries":
        _match(self, other)
        d = max(self.degree, other.degree)
        a = self.padded(d)
        b = other.padded(d)
        return CosSeries(self.nu, a.coeffs - b.coeffs, _tail_add(a.tail, b.tail))

    def __neg__(self) -> "CosSeries":
        return CosSeries(self.nu, -self.coeffs, self.tail)

    def scale(self, c) -> "CosSeries":
        c = c if isinstance(c, Interval) else Interval(float(c))
        t = self.tail * Interval(c.mig(), c.mag())
        return CosSeries(self.nu, self.coeffs.scale(c), Interval(0.0, t.hi))

    def to_json_dict(self) -> dict:
        return {
            "nu": self.nu,
            "coeffs": [[float(lo), float(hi)] for lo, hi in zip(self.coeffs.lo, self.coeffs.hi)],
            "tail": [float(self.tail.lo), float(self.tail.hi)],
        }

    @staticmethod
    def from_json_dict(obj: dict) -> "CosSeries":
        lo = np.array([c[0] for c in obj["coeffs"]], dtype=float)
        hi = np.array([c[1] for c in obj["coeffs"]], dtype=float)
        return CosSeries(
            float(obj["nu"]),
            IntervalVector(lo, hi),
            Interval(obj["tail"][0], obj["tail"][1]),
        )


def _match(a: CosSeries, b: CosSeries):
    if a.nu != b.nu:
        raise WeightMismatch(f"nu mismatch: {a.nu} vs {b.nu}")


def _tail_add(s: Interval, t: Interval) -> Interval:
    u = s + t
    return Interval(max(0.0, u.lo), u.hi)


def norm_l1nu(a: CosSeries) -> Interval:
    """Enclosure of the possible norm values over the represented set."""
    w = weight_vector(a.nu, a.degree)
    mags = IntervalVector(a.coeffs.mig(), a.coeffs.mag())
    s = (mags * w).sum()
    return Interval(max(0.0, s.lo), (Interval(s.hi) + Interval(0.0, a.tail.hi)).hi)


def galerkin_split(a: CosSeries, N: int) -> tuple[CosSeries, Interval]:
    """Split into the mode 0..N head and a norm bound for the rest."""
    if a.degree <= N:
        head = a.padded(N)
        head = CosSeries(a.nu, head.coeffs, Interval(0.0))
        return head, Interval(0.0, a.tail.hi)
    head = CosSeries(a.nu, a.coeffs[: N + 1], Interval(0.0))
    w = weight_vector(a.nu, a.degree)
    rest = a.coeffs[N + 1 :]
    mags = IntervalVector(rest.mig(), rest.mag())
    s = (mags * w[N + 1 :]).sum()
    return head, Interval(max(0.0, s.lo), (Interval(s.hi) + Interval(0.0, a.tail.hi)).hi)


def truncate(a: CosSeries, degree: int) -> CosSeries:
    """Drop modes above `degree`, folding their norm into the tail bound."""
    if a.degree <= degree:
        return a.padded(degree)
    head, rest = galerkin_split(a, degree)
    return CosSeries(a.nu, head.coeffs, Interval(0.0, rest.hi))


def _conv_heads(a: CosSeries, b: CosSeries) -> IntervalVector:
    """Reflected-index convolution of the explicit modes."""
    da, db = a.degree, b.degree
    alo = np.concatenate([a.coeffs.lo[:0:-1], a.coeffs.lo])
    ahi = np.concatenate([a.coeffs.hi[:0:-1], a.coeffs.hi])
    blo = np.concatenate([b.coeffs.lo[:0:-1], b.coeffs.lo])
    bhi = np.concatenate([b.coeffs.hi[:0:-1], b.coeffs.hi])
    La, Lb = 2 * da + 1, 2 * db + 1
    out_lo = np.empty(da + db + 1)
    out_hi = np.empty(da + db + 1)
    for k in range(da + db + 1):
        M = k + da + db
        a0 = max(0, M - Lb + 1)
        a1 = min(La - 1, M)
        sl_alo = alo[a0 : a1 + 1]
        sl_ahi = ahi[a0 : a1 + 1]
        sl_blo = blo[M - a1 : M - a0 + 1][::-1]
        sl_bhi = bhi[M - a1 : M - a0 + 1][::-1]
        p1 = sl_alo * sl_blo
        p2 = sl_alo * sl_bhi
        p3 = sl_ahi * sl_blo
        p4 = sl_ahi * sl_bhi
        plo = np.nextafter(np.minimum(np.minimum(p1, p2), np.minimum(p3, p4)), -math.inf)
        phi = np.nextafter(np.maximum(np.maximum(p1, p2), np.maximum(p3, p4)), math.inf)
        lo, hi = _sum_bound(plo, phi, axis=0)
        out_lo[k] = lo
        out_hi[k] = hi
    return IntervalVector(out_lo, out_hi)


def conv(a: CosSeries, b: CosSeries) -> CosSeries:
    """Discrete convolution (a*b)_k = sum_{k1+k2=k, ki in Z} a_|k1| b_|k2|."""
    _match(a, b)
    coeffs = _conv_heads(a, b)
    cross = Interval(0.0)
    if a.tail.hi != 0.0 or b.tail.hi != 0.0:
        na = norm_l1nu(CosSeries(a.nu, a.coeffs))
        nb = norm_l1nu(CosSeries(b.nu, b.coeffs))
        ta = Interval(0.0, a.tail.hi)
        tb = Interval(0.0, b.tail.hi)
        cross = na * tb + ta * nb + ta * tb
    if cross.hi != 0.0:
        # Mass carried by the tails can land in any mode: widen every
        # explicit coefficient by cross/w_k and keep cross as the new tail.
        w = weight_vector(a.nu, coeffs.lo.shape[0] - 1)
        slack = np.array([(Interval(cross.hi) / w[k]).hi for k in range(len(w))])
        coeffs = IntervalVector(coeffs.lo - slack, coeffs.hi + slack)
    return CosSeries(a.nu, coeffs, Interval(0.0, cross.hi))


def cubic(a: CosSeries, cap: int | None = None) -> CosSeries:
    """a*a*a with the degree optionally capped (overflow goes to the tail)."""
    out = conv(conv(a, a), a)
    if cap is not None:
        out = truncate(out, cap)
    return out


def conv_matrix(b: CosSeries, rows: int, cols: int) -> IntervalMatrix:
    """Matrix of the operator h -> b*h on modes (rows x cols).

    Entry (k, j) multiplies h_j: b_|k-j| + b_{k+j} for j >= 1 and b_k for
    j = 0, with coefficients beyond b.degree read as zero.  The tail of b
    is not representable here; callers pass tail-free b.
    """
    if b.tail.hi != 0.0:
        raise IntervalError("conv_matrix needs a tail-free series")
    d = b.degree
    blo = b.coeffs.lo
    bhi = b.coeffs.hi

    def entry(m: int) -> tuple[float, float]:
        if m <= d:
            return blo[m], bhi[m]
        return 0.0, 0.0

    lo = np.zeros((rows, cols))
    hi = np.zeros((rows, cols))
    for k in range(rows):
        lo[k, 0], hi[k, 0] = entry(k)
        for j in range(1, cols):
            l1, h1 = entry(abs(k - j))
            l2, h2 = entry(k + j)
            lo[k, j] = np.nextafter(l1 + l2, -math.inf)
            hi[k, j] = np.nextafter(h1 + h2, math.inf)
    return IntervalMatrix(lo, hi)


def profile_value(a: CosSeries, x: float) -> float:
    """Midpoint evaluation of u(x) = a_0 + 2 sum_k a_k cos(k x)."""
    mid = a.coeffs.mid()
    k = np.arange(1, len(mid))
    return float(mid[0] + 2.0 * np.sum(mid[1:] * np.cos(k * x)))
