"""Truncated power-series arithmetic, with an optional 1/z pole and log z term.

Series here are Taylor polynomials in a formal variable z, stored as complex
coefficient arrays. Binary operations truncate to the smaller operand order and
never read coefficients beyond it. The LogLaurentSeries shape (pole + log +
polynomial) is exactly what the Abel-expansion machinery needs: composing it
with a tangent-to-identity series keeps the pole and log coefficients intact
and folds everything else into the polynomial part.

All values are immutable; operations are pure functions.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "TruncatedSeries",
    "LogLaurentSeries",
    "mul",
    "reciprocal",
    "log1",
    "exp0",
    "powr",
    "compose_ts",
    "compose",
    "invert_series",
]


@dataclass(frozen=True)
class TruncatedSeries:
    """Polynomial c0 + c1 z + ... + cM z^M, M = order.

    Coefficients are stored complex even for real series: downstream
    consumers evaluate on complex arguments.
    """

    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=complex)
        if c.ndim != 1 or c.size == 0:
            raise ValueError("coeffs must be a nonempty 1-d array")
        c = c.copy()
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    @property
    def order(self) -> int:
        return self.coeffs.size - 1

    def __add__(self, other):
        if isinstance(other, TruncatedSeries):
            m = min(self.order, other.order)
            return TruncatedSeries(self.coeffs[: m + 1] + other.coeffs[: m + 1])
        c = self.coeffs.copy()
        c[0] += other
        return TruncatedSeries(c)

    __radd__ = __add__

    def __sub__(self, other):
        if isinstance(other, TruncatedSeries):
            m = min(self.order, other.order)
            return TruncatedSeries(self.coeffs[: m + 1] - other.coeffs[: m + 1])
        c = self.coeffs.copy()
        c[0] -= other
        return TruncatedSeries(c)

    def __mul__(self, other):
        if isinstance(other, TruncatedSeries):
            return mul(self, other)
        return TruncatedSeries(self.coeffs * other)

    __rmul__ = __mul__

    def __neg__(self):
        return TruncatedSeries(-self.coeffs)

    def truncate(self, order: int) -> "TruncatedSeries":
        if order >= self.order:
            return self
        return TruncatedSeries(self.coeffs[: order + 1])

    def pad(self, order: int) -> "TruncatedSeries":
        """Extend with zero coefficients up to `order` (exact for polynomials)."""
        if order <= self.order:
            return self.truncate(order)
        c = np.zeros(order + 1, dtype=complex)
        c[: self.coeffs.size] = self.coeffs
        return TruncatedSeries(c)

    def shift(self, k: int) -> "TruncatedSeries":
        """Multiply by z^k (k >= 0); order grows by k."""
        if k < 0:
            raise ValueError("shift exponent must be nonnegative")
        c = np.zeros(self.coeffs.size + k, dtype=complex)
        c[k:] = self.coeffs
        return TruncatedSeries(c)

    def deriv(self) -> "TruncatedSeries":
        """Termwise derivative; order drops by one."""
        if self.order == 0:
            return TruncatedSeries(np.zeros(1))
        k = np.arange(1, self.coeffs.size)
        return TruncatedSeries(self.coeffs[1:] * k)

    def eval(self, z):
        """Horner evaluation; z may be a scalar or ndarray."""
        z = np.asarray(z, dtype=complex)
        acc = np.full(z.shape, self.coeffs[-1], dtype=complex)
        for c in self.coeffs[-2::-1]:
            acc = acc * z + c
        if acc.ndim == 0:
            return complex(acc)
        return acc


def mul(a: TruncatedSeries, b: TruncatedSeries) -> TruncatedSeries:
    """Cauchy product truncated to the shared order."""
    m = min(a.order, b.order)
    out = np.convolve(a.coeffs[: m + 1], b.coeffs[: m + 1])[: m + 1]
    return TruncatedSeries(out)


def reciprocal(a: TruncatedSeries) -> TruncatedSeries:
    """Series r with a*r = 1 + O(z^{M+1}); requires c0 != 0."""
    c = a.coeffs
    if c[0] == 0:
        raise ValueError("reciprocal requires a nonzero constant term")
    m = a.order
    r = np.zeros(m + 1, dtype=complex)
    r[0] = 1.0 / c[0]
    for k in range(1, m + 1):
        r[k] = -np.dot(c[1 : k + 1], r[k - 1 :: -1][:k]) / c[0]
    return TruncatedSeries(r)


def log1(a: TruncatedSeries) -> TruncatedSeries:
    """log of a series with constant term exactly 1.

    Uses the standard recurrence from (log a)' * a = a', which avoids
    composing with the log Taylor series.
    """
    c = a.coeffs
    if c[0] != 1:
        raise ValueError("log1 requires constant term 1")
    m = a.order
    out = np.zeros(m + 1, dtype=complex)
    for k in range(1, m + 1):
        s = c[k] * k
        if k > 1:
            j = np.arange(1, k)
            s -= np.dot(j * out[1:k], c[k - 1 : 0 : -1])
        out[k] = s / k
    return TruncatedSeries(out)


def exp0(a: TruncatedSeries) -> TruncatedSeries:
    """exp of a series with zero constant term."""
    c = a.coeffs
    if c[0] != 0:
        raise ValueError("exp0 requires zero constant term")
    m = a.order
    out = np.zeros(m + 1, dtype=complex)
    out[0] = 1.0
    for k in range(1, m + 1):
        j = np.arange(1, k + 1)
        out[k] = np.dot(j * c[1 : k + 1], out[k - 1 :: -1][:k]) / k
    return TruncatedSeries(out)


def powr(a: TruncatedSeries, p: float) -> TruncatedSeries:
    """a**p for real p; requires constant term 1."""
    return exp0(log1(a) * p)


def compose_ts(outer: TruncatedSeries, inner: TruncatedSeries) -> TruncatedSeries:
    """outer(inner(z)) for inner with zero constant term (Horner over series)."""
    if inner.coeffs[0] != 0:
        raise ValueError("compose_ts requires inner constant term 0")
    m = min(outer.order, inner.order)
    inner = inner.truncate(m)
    acc = TruncatedSeries(np.zeros(m + 1))
    for c in outer.coeffs[m::-1]:
        acc = mul(acc, inner) + c
    return acc


@dataclass(frozen=True)
class LogLaurentSeries:
    """pole/z + logc*log(z) + polynomial part."""

    pole: complex
    logc: complex
    series: TruncatedSeries = field(default_factory=lambda: TruncatedSeries(np.zeros(1)))

    def eval(self, z):
        z = np.asarray(z, dtype=complex)
        out = self.series.eval(z) + self.pole / z + self.logc * np.log(z)
        if np.ndim(out) == 0:
            return complex(out)
        return out

    def eval_deriv(self, z):
        """d/dz of the full shape: -pole/z^2 + logc/z + poly'."""
        z = np.asarray(z, dtype=complex)
        out = self.series.deriv().eval(z) - self.pole / z**2 + self.logc / z
        if np.ndim(out) == 0:
            return complex(out)
        return out


def compose(outer: LogLaurentSeries, inner: TruncatedSeries) -> LogLaurentSeries:
    """outer(inner(z)) for tangent-to-identity inner (c0 = 0, c1 = 1).

    The pole maps through the reciprocal of inner/z, the log splits as
    log z + log(inner/z), so pole and log coefficients are preserved and all
    corrections land in the polynomial part.
    """
    c = inner.coeffs
    if c[0] != 0:
        raise ValueError("compose requires inner constant term 0")
    if c[1] != 1:
        raise ValueError("compose requires inner linear coefficient 1")
    u = TruncatedSeries(c[1:])  # inner/z, constant term 1
    m = u.order

    # pole/inner = pole * (1/z) * reciprocal(u): pole part survives unchanged,
    # the rest of the reciprocal feeds the polynomial part.
    r = reciprocal(u)
    pole_regular = TruncatedSeries(np.append(r.coeffs[1:], 0.0)) * outer.pole

    log_regular = log1(u) * outer.logc

    poly_part = compose_ts(outer.series, inner)

    total = (
        pole_regular.pad(m)
        + log_regular.pad(m)
        + poly_part.pad(m)
    )
    return LogLaurentSeries(pole=outer.pole, logc=outer.logc, series=total)


def invert_series(a: TruncatedSeries) -> TruncatedSeries:
    """Compositional inverse of a (c0 = 0, c1 != 0), by Newton iteration on series.

    Returns g with a(g(z)) = z + O(z^{M+1}).
    """
    c = a.coeffs
    if c[0] != 0:
        raise ValueError("invert_series requires zero constant term")
    if c[1] == 0:
        raise ValueError("invert_series requires nonzero linear coefficient")
    m = a.order
    ident = np.zeros(m + 1, dtype=complex)
    ident[1] = 1.0
    ident = TruncatedSeries(ident)

    ap = a.deriv().pad(m)
    g = TruncatedSeries(np.where(np.arange(m + 1) == 1, 1.0 / c[1], 0.0))
    # Newton: g <- g - (a(g) - z) / a'(g); correct order doubles per step.
    for _ in range(max(1, int(np.ceil(np.log2(m + 1))) + 2)):
        res = compose_ts(a.pad(m), g) - ident
        if np.max(np.abs(res.coeffs)) == 0:
            break
        g = g - mul(res, reciprocal(compose_ts(ap, g)))
    return g
