"""Outward-rounded interval arithmetic on binary64.

Scalar intervals, interval vectors/matrices backed by numpy endpoint
arrays, and a Neumann-series enclosure of matrix inverses.  Every
operation rounds outward, either by stepping each endpoint to the next
representable number or, for vectorized reductions, by adding an a
priori bound on the accumulated float rounding error.
"""

from __future__ import annotations

import math
from fractions import Fraction

import numpy as np

_INF = math.inf
_U = 2.0 ** -53  # unit roundoff of binary64


class IntervalError(Exception):
    pass


class DivisionByZeroInterval(IntervalError):
    pass


class DomainError(IntervalError):
    pass


class UnboundedInterval(IntervalError):
    """Raised instead of producing an infinite endpoint."""


class NotContractive(IntervalError):
    def __init__(self, kappa: float):
        super().__init__(f"residual norm {kappa} >= 1, approximate inverse too poor")
        self.kappa = kappa


def _down(x: float) -> float:
    return math.nextafter(x, -_INF)


def _up(x: float) -> float:
    return math.nextafter(x, _INF)


class Interval:
    __slots__ = ("lo", "hi")

    def __init__(self, lo: float, hi: float | None = None):
        if hi is None:
            hi = lo
        lo = float(lo)
        hi = float(hi)
        if not (math.isfinite(lo) and math.isfinite(hi)):
            raise UnboundedInterval(f"non-finite endpoints [{lo}, {hi}]")
        if lo > hi:
            raise IntervalError(f"lo {lo} > hi {hi}")
        self.lo = lo
        self.hi = hi

    # Constructors.
    @staticmethod
    def point(x: float) -> "Interval":
        return Interval(x, x)

    @staticmethod
    def hull(items) -> "Interval":
        los = []
        his = []
        for it in items:
            if isinstance(it, Interval):
                los.append(it.lo)
                his.append(it.hi)
            else:
                los.append(float(it))
                his.append(float(it))
        if not los:
            raise IntervalError("hull of nothing")
        return Interval(min(los), max(his))

    # Diagnostics.
    def mid(self) -> float:
        return 0.5 * (self.lo + self.hi)

    def width(self) -> float:
        return _up(self.hi - self.lo)

    def mag(self) -> float:
        """Upper bound on |x| over the interval."""
        return max(abs(self.lo), abs(self.hi))

    def mig(self) -> float:
        """Lower bound on |x| over the interval."""
        if self.lo <= 0.0 <= self.hi:
            return 0.0
        return min(abs(self.lo), abs(self.hi))

    def contains(self, x: float) -> bool:
        return self.lo <= x <= self.hi

    def encloses(self, other: "Interval") -> bool:
        return self.lo <= other.lo and other.hi <= self.hi

    def __repr__(self) -> str:
        return f"Interval({self.lo!r}, {self.hi!r})"

    def __eq__(self, other) -> bool:
        return (
            isinstance(other, Interval) and self.lo == other.lo and self.hi == other.hi
        )

    def __hash__(self) -> int:
        return hash((self.lo, self.hi))

    # Arithmetic.  Endpoint math.nextafter steps make rounding outward.
    def __add__(self, other) -> "Interval":
        other = _coerce(other)
        return Interval(_down(self.lo + other.lo), _up(self.hi + other.hi))

    __radd__ = __add__

    def __sub__(self, other) -> "Interval":
        other = _coerce(other)
        return Interval(_down(self.lo - other.hi), _up(self.hi - other.lo))

    def __rsub__(self, other) -> "Interval":
        return _coerce(other) - self

    def __neg__(self) -> "Interval":
        return Interval(-self.hi, -self.lo)

    def __mul__(self, other) -> "Interval":
        other = _coerce(other)
        ps = (
            self.lo * other.lo,
            self.lo * other.hi,
            self.hi * other.lo,
            self.hi * other.hi,
        )
        return Interval(_down(min(ps)), _up(max(ps)))

    __rmul__ = __mul__

    def __truediv__(self, other) -> "Interval":
        other = _coerce(other)
        if other.lo <= 0.0 <= other.hi:
            raise DivisionByZeroInterval(f"division by {other!r}")
        qs = (
            self.lo / other.lo,
            self.lo / other.hi,
            self.hi / other.lo,
            self.hi / other.hi,
        )
        return Interval(_down(min(qs)), _up(max(qs)))

    def __rtruediv__(self, other) -> "Interval":
        return _coerce(other) / self

    def abs(self) -> "Interval":
        return Interval(self.mig(), self.mag())

    def sqrt(self) -> "Interval":
        if self.lo < 0.0:
            raise DomainError(f"sqrt of {self!r}")
        # math.sqrt is correctly rounded, one outward step suffices.
        return Interval(
            max(0.0, _down(math.sqrt(self.lo))), _up(math.sqrt(self.hi))
        )

    def exp(self) -> "Interval":
        lo, _ = _exp_point(self.lo)
        _, hi = _exp_point(self.hi)
        return Interval(lo, hi)

    def pow_int(self, n: int) -> "Interval":
        if n < 0:
            return Interval(1.0) / self.pow_int(-n)
        if n == 0:
            return Interval(1.0)
        if n % 2 == 0 and self.lo <= 0.0 <= self.hi:
            m = Interval(0.0, self.mag())
            return m._pow_by_squaring(n)
        return self._pow_by_squaring(n)

    def _pow_by_squaring(self, n: int) -> "Interval":
        acc = Interval(1.0)
        base = self
        while n:
            if n & 1:
                acc = acc * base
            n >>= 1
            if n:
                base = base * base
        return acc

    def imax(self, other) -> "Interval":
        other = _coerce(other)
        return Interval(max(self.lo, other.lo), max(self.hi, other.hi))

    def imin(self, other) -> "Interval":
        other = _coerce(other)
        return Interval(min(self.lo, other.lo), min(self.hi, other.hi))


def _coerce(x) -> Interval:
    if isinstance(x, Interval):
        return x
    return Interval(float(x))


def iv_arith(op: str, a: Interval, b: Interval | None = None) -> Interval:
    """Named dispatcher over the primitive interval operations."""
    a = _coerce(a)
    if op == "add":
        return a + _coerce(b)
    if op == "sub":
        return a - _coerce(b)
    if op == "mul":
        return a * _coerce(b)
    if op == "div":
        return a / _coerce(b)
    if op == "neg":
        return -a
    if op == "abs":
        return a.abs()
    if op == "sqrt":
        return a.sqrt()
    if op == "exp":
        return a.exp()
    if op == "max":
        return a.imax(_coerce(b))
    if op == "pow_int":
        return a.pow_int(int(b))
    raise ValueError(f"unknown op {op!r}")


def isum(items) -> Interval:
    """Interval sum of a python iterable (loop of outward-rounded adds)."""
    acc = Interval(0.0)
    for it in items:
        acc = acc + _coerce(it)
    return acc


def imax_many(items) -> Interval:
    acc = None
    for it in items:
        it = _coerce(it)
        acc = it if acc is None else acc.imax(it)
    if acc is None:
        raise IntervalError("max of nothing")
    return acc


# ----------------------------------------------------------------------
# Rigorous exp kernel: argument reduction by ln 2, exact rational Taylor
# evaluation, explicit series remainder, directed conversion to floats.

# 40-digit rational bracket of ln 2.
_LN2_LO = Fraction("0.6931471805599453094172321214581765680755")
_LN2_HI = _LN2_LO + Fraction(1, 10**40)
_INV_LN2 = 1.4426950408889634
_EXP_ORDER = 13
_EXP_FACT = [Fraction(1, math.factorial(j)) for j in range(_EXP_ORDER + 1)]
_EXP_REM_DEN = 1 - Fraction(35, 100) / (_EXP_ORDER + 2)


def _taylor_exp(r: Fraction) -> Fraction:
    acc = _EXP_FACT[_EXP_ORDER]
    for j in range(_EXP_ORDER - 1, -1, -1):
        acc = acc * r + _EXP_FACT[j]
    return acc


def _frac_to_float_down(q: Fraction) -> float:
    f = float(q)
    if Fraction(f) > q:
        f = _down(f)
    return f


def _frac_to_float_up(q: Fraction) -> float:
    f = float(q)
    if Fraction(f) < q:
        f = _up(f)
    return f


def _exp_point(x: float) -> tuple[float, float]:
    """Enclosure of e^x for one float x."""
    if x == 0.0:
        return (1.0, 1.0)
    if x > 709.7:
        raise UnboundedInterval(f"exp({x}) overflows binary64")
    if x <= -745.0:
        # e^x < 2^-1074, the smallest positive binary64 subnormal.
        return (0.0, 5e-324)
    k = round(x * _INV_LN2)
    xf = Fraction(x)
    if k >= 0:
        r_lo = xf - k * _LN2_HI
        r_hi = xf - k * _LN2_LO
    else:
        r_lo = xf - k * _LN2_LO
        r_hi = xf - k * _LN2_HI
    rm = max(-r_lo, r_hi)
    if rm > Fraction(35, 100):
        raise IntervalError("argument reduction failed")  # unreachable
    rem = rm ** (_EXP_ORDER + 1) * _EXP_FACT[_EXP_ORDER] / (
        (_EXP_ORDER + 1) * _EXP_REM_DEN
    )
    scale = Fraction(2**k) if k >= 0 else Fraction(1, 2**-k)
    lo_q = (_taylor_exp(r_lo) - rem) * scale
    hi_q = (_taylor_exp(r_hi) + rem) * scale
    lo = max(0.0, _frac_to_float_down(lo_q))
    hi = _frac_to_float_up(hi_q)
    return (lo, hi)


# ----------------------------------------------------------------------
# Vectorized endpoint arrays.

def _sum_bound(term_lo: np.ndarray, term_hi: np.ndarray, axis: int):
    """Enclosure of sums of interval terms along an axis.

    The terms already enclose their targets; what is bounded here is the
    rounding error of the float reductions: an n-term float sum is off by
    at most n*u/(1-n*u) * sum|terms|, valid for any summation order.
    """
    n = term_lo.shape[axis]
    if n == 0:
        shape = list(term_lo.shape)
        del shape[axis]
        z = np.zeros(shape)
        return z, z.copy()
    s_lo = np.sum(term_lo, axis=axis)
    s_hi = np.sum(term_hi, axis=axis)
    a_max = np.maximum(np.abs(term_lo), np.abs(term_hi))
    err = (n * _U * 1.005) * np.sum(a_max, axis=axis)
    return np.nextafter(s_lo - err, -_INF), np.nextafter(s_hi + err, _INF)


def _mul_arrays(alo, ahi, blo, bhi):
    p1 = alo * blo
    p2 = alo * bhi
    p3 = ahi * blo
    p4 = ahi * bhi
    lo = np.minimum(np.minimum(p1, p2), np.minimum(p3, p4))
    hi = np.maximum(np.maximum(p1, p2), np.maximum(p3, p4))
    return np.nextafter(lo, -_INF), np.nextafter(hi, _INF)


def _check_arrays(lo: np.ndarray, hi: np.ndarray):
    if lo.shape != hi.shape:
        raise IntervalError("endpoint shape mismatch")
    if not (np.isfinite(lo).all() and np.isfinite(hi).all()):
        raise UnboundedInterval("non-finite endpoint array")
    if (lo > hi).any():
        raise IntervalError("lo > hi in endpoint array")


class IntervalVector:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.atleast_1d(np.asarray(lo, dtype=float)).copy()
        hi = lo.copy() if hi is None else np.atleast_1d(np.asarray(hi, dtype=float)).copy()
        _check_arrays(lo, hi)
        self.lo = lo
        self.hi = hi

    @staticmethod
    def zeros(n: int) -> "IntervalVector":
        return IntervalVector(np.zeros(n))

    @staticmethod
    def from_intervals(items) -> "IntervalVector":
        items = [(_coerce(it)) for it in items]
        return IntervalVector(
            np.array([it.lo for it in items]), np.array([it.hi for it in items])
        )

    def __len__(self) -> int:
        return self.lo.shape[0]

    def __getitem__(self, k) -> Interval:
        if isinstance(k, (int, np.integer)):
            return Interval(float(self.lo[k]), float(self.hi[k]))
        return IntervalVector(self.lo[k], self.hi[k])

    def copy(self) -> "IntervalVector":
        return IntervalVector(self.lo, self.hi)

    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def mig(self) -> np.ndarray:
        out = np.minimum(np.abs(self.lo), np.abs(self.hi))
        out[(self.lo <= 0.0) & (self.hi >= 0.0)] = 0.0
        return out

    def __add__(self, other) -> "IntervalVector":
        other = _as_vec(other, len(self))
        return IntervalVector(
            np.nextafter(self.lo + other.lo, -_INF),
            np.nextafter(self.hi + other.hi, _INF),
        )

    __radd__ = __add__

    def __sub__(self, other) -> "IntervalVector":
        other = _as_vec(other, len(self))
        return IntervalVector(
            np.nextafter(self.lo - other.hi, -_INF),
            np.nextafter(self.hi - other.lo, _INF),
        )

    def __neg__(self) -> "IntervalVector":
        return IntervalVector(-self.hi, -self.lo)

    def scale(self, c) -> "IntervalVector":
        c = _coerce(c)
        lo, hi = _mul_arrays(self.lo, self.hi, np.array(c.lo), np.array(c.hi))
        return IntervalVector(lo, hi)

    def __mul__(self, other) -> "IntervalVector":
        if isinstance(other, (Interval, int, float)):
            return self.scale(other)
        other = _as_vec(other, len(self))
        lo, hi = _mul_arrays(self.lo, self.hi, other.lo, other.hi)
        return IntervalVector(lo, hi)

    __rmul__ = __mul__

    def dot(self, other) -> Interval:
        other = _as_vec(other, len(self))
        plo, phi = _mul_arrays(self.lo, self.hi, other.lo, other.hi)
        lo, hi = _sum_bound(plo, phi, axis=0)
        return Interval(float(lo), float(hi))

    def sum(self) -> Interval:
        lo, hi = _sum_bound(self.lo, self.hi, axis=0)
        return Interval(float(lo), float(hi))

    def abs_upper_sum(self) -> Interval:
        """Enclosure of the maximal possible value of sum_k |v_k|."""
        mag = self.mag()
        lo, hi = _sum_bound(self.mig(), mag, axis=0)
        return Interval(max(0.0, float(lo)), float(hi))


def _as_vec(x, n: int) -> IntervalVector:
    if isinstance(x, IntervalVector):
        return x
    if isinstance(x, Interval):
        return IntervalVector(np.full(n, x.lo), np.full(n, x.hi))
    return IntervalVector(np.asarray(x, dtype=float))


class IntervalMatrix:
    __slots__ = ("lo", "hi")

    def __init__(self, lo, hi=None):
        lo = np.atleast_2d(np.asarray(lo, dtype=float)).copy()
        hi = lo.copy() if hi is None else np.atleast_2d(np.asarray(hi, dtype=float)).copy()
        _check_arrays(lo, hi)
        self.lo = lo
        self.hi = hi

    @staticmethod
    def eye(n: int) -> "IntervalMatrix":
        return IntervalMatrix(np.eye(n))

    @staticmethod
    def zeros(rows: int, cols: int) -> "IntervalMatrix":
        return IntervalMatrix(np.zeros((rows, cols)))

    @property
    def shape(self):
        return self.lo.shape

    def __getitem__(self, idx):
        sub_lo = self.lo[idx]
        sub_hi = self.hi[idx]
        if np.ndim(sub_lo) == 0:
            return Interval(float(sub_lo), float(sub_hi))
        if np.ndim(sub_lo) == 1:
            return IntervalVector(sub_lo, sub_hi)
        return IntervalMatrix(sub_lo, sub_hi)

    def row(self, i: int) -> IntervalVector:
        return IntervalVector(self.lo[i, :], self.hi[i, :])

    def col(self, j: int) -> IntervalVector:
        return IntervalVector(self.lo[:, j], self.hi[:, j])

    def mid(self) -> np.ndarray:
        return 0.5 * (self.lo + self.hi)

    def mag(self) -> np.ndarray:
        return np.maximum(np.abs(self.lo), np.abs(self.hi))

    def transpose(self) -> "IntervalMatrix":
        return IntervalMatrix(self.lo.T, self.hi.T)

    def __add__(self, other) -> "IntervalMatrix":
        other = _as_mat(other)
        return IntervalMatrix(
            np.nextafter(self.lo + other.lo, -_INF),
            np.nextafter(self.hi + other.hi, _INF),
        )

    def __sub__(self, other) -> "IntervalMatrix":
        other = _as_mat(other)
        return IntervalMatrix(
            np.nextafter(self.lo - other.hi, -_INF),
            np.nextafter(self.hi - other.lo, _INF),
        )

    def __neg__(self) -> "IntervalMatrix":
        return IntervalMatrix(-self.hi, -self.lo)

    def scale(self, c) -> "IntervalMatrix":
        c = _coerce(c)
        lo, hi = _mul_arrays(self.lo, self.hi, np.array(c.lo), np.array(c.hi))
        return IntervalMatrix(lo, hi)

    def __matmul__(self, other):
        if isinstance(other, IntervalVector):
            plo, phi = _mul_arrays(
                self.lo, self.hi, other.lo[None, :], other.hi[None, :]
            )
            lo, hi = _sum_bound(plo, phi, axis=1)
            return IntervalVector(lo, hi)
        other = _as_mat(other)
        plo, phi = _mul_arrays(
            self.lo[:, :, None], self.hi[:, :, None],
            other.lo[None, :, :], other.hi[None, :, :],
        )
        lo, hi = _sum_bound(plo, phi, axis=1)
        return IntervalMatrix(lo, hi)

    def inf_norm_upper(self) -> float:
        """Upper bound for the row-sum operator norm over all representatives."""
        mag = self.mag()
        n = mag.shape[1]
        rows = np.sum(mag, axis=1) * (1.0 + n * _U * 1.005)
        return _up(float(np.max(rows))) if rows.size else 0.0


def _as_mat(x) -> IntervalMatrix:
    if isinstance(x, IntervalMatrix):
        return x
    return IntervalMatrix(np.asarray(x, dtype=float))


def mat_inverse_enclosure(
    M: IntervalMatrix, approx_inv: np.ndarray | None = None, order: int = 2
) -> IntervalMatrix:
    """Entrywise enclosure of M^-1 via a truncated Neumann series.

    With A the approximate inverse and R = I - A M, the inverse equals
    (sum_k R^k) A; the dropped part has row-sum norm at most
    |A| * kappa^(order+1) / (1 - kappa), kappa = |R|, which also bounds
    every entry of the dropped part.
    """
    n, m = M.shape
    if n != m:
        raise IntervalError("inverse of non-square matrix")
    if approx_inv is None:
        approx_inv = np.linalg.inv(M.mid())
    A = IntervalMatrix(np.asarray(approx_inv, dtype=float))
    R = IntervalMatrix.eye(n) - (A @ M)
    kappa = R.inf_norm_upper()
    if not kappa < 1.0:
        raise NotContractive(kappa)
    series = IntervalMatrix.eye(n)
    power = IntervalMatrix.eye(n)
    for _ in range(order):
        power = power @ R
        series = series + power
    S = series @ A
    kap = Interval(kappa)
    err = (
        Interval(A.inf_norm_upper())
        * kap.pow_int(order + 1)
        / (Interval(1.0) - kap)
    ).hi
    return IntervalMatrix(
        np.nextafter(S.lo - err, -_INF), np.nextafter(S.hi + err, _INF)
    )
