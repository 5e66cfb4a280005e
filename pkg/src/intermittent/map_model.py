"""Pomeau-Manneville-type interval maps.

A map in this class acts on [0,1] with a neutral fixed point at 0:

    f(x) = x * h(x^alpha)   on [0, a)   (the "bad" branch f_b),
    f(x) = f_g(x)           on [a, 1]   (the "good" part),

with h(0) = 1, h'(0) > 0, f_b(a) = 1, and f_g a full-branch expanding Markov
map given here through its inverse branches v_iota: [0,1] -> cell(iota).
h is stored as a truncated Taylor series in u = x^alpha; maps with entire h
are truncated at a configured order and carry the truncation radius.

Everything is immutable after construction and safe for concurrent reads.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Optional, Sequence

import numpy as np

from .power_series import TruncatedSeries, invert_series, powr

try:
    from numba import njit as _njit

    _HAVE_NUMBA = True
except ImportError:  # pragma: no cover - numba ships with the package
    _HAVE_NUMBA = False

    def _njit(*args, **kwargs):
        def wrap(f):
            return f

        if args and callable(args[0]):
            return args[0]
        return wrap

__all__ = [
    "GoodBranch",
    "PMMap",
    "MapDomainError",
    "NonConvergenceError",
    "affine_branch",
    "lsv",
    "doubling_branches",
    "eval_fb",
    "eval_fb_deriv",
    "eval_fb_inverse",
    "eval_fg",
    "hat_T_series",
    "UNPReport",
    "branch_family_report",
    "verify_unp",
    "induced_branch_family",
]

DEFAULT_H_ORDER = 32
MAX_SERIES_ORDER = 64
NEWTON_CAP = 100


class MapDomainError(ValueError):
    """Argument outside the analyticity/validity region of the stored series."""


class NonConvergenceError(RuntimeError):
    """Newton iteration failed to converge within the iteration cap."""


@dataclass(frozen=True)
class GoodBranch:
    """Inverse branch v of the good part: maps [0,1] onto its cell in [a,1].

    eval/deriv must accept complex arguments in a neighbourhood of [0,1].
    inverse, when given, is the exact forward branch (f_g restricted to cell).
    """

    eval: Callable[[complex], complex]
    deriv: Callable[[complex], complex]
    cell: tuple
    inverse: Optional[Callable[[complex], complex]] = None


def affine_branch(slope: float, intercept: float) -> GoodBranch:
    """v(w) = slope*w + intercept with the induced cell v([0,1])."""
    lo, hi = sorted((intercept, slope + intercept))
    return GoodBranch(
        eval=lambda w: slope * w + intercept,
        deriv=lambda w: slope * np.ones_like(np.asarray(w)) if np.ndim(w) else slope,
        cell=(lo, hi),
        inverse=lambda x: (x - intercept) / slope,
    )


@dataclass(frozen=True)
class PMMap:
    alpha: float
    a: float
    h_coeffs: np.ndarray
    good_branches: tuple
    label: str = "custom"
    h_radius: float = math.inf  # validity radius of the h series in u = x^alpha

    def __post_init__(self):
        h = np.asarray(self.h_coeffs, dtype=float).copy()
        h.setflags(write=False)
        object.__setattr__(self, "h_coeffs", h)
        object.__setattr__(self, "good_branches", tuple(self.good_branches))
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not 0 < self.a < 1:
            raise ValueError("branch boundary a must lie in (0,1)")
        if h.size < 2 or h[0] != 1.0:
            raise ValueError("h must satisfy h(0) = 1")
        if h[1] <= 0:
            raise ValueError("h must satisfy h'(0) > 0")
        fb_a = eval_fb(self, self.a)
        if abs(fb_a - 1.0) > 1e-12:
            raise ValueError(f"f_b(a) = {fb_a!r} but must equal 1 to 1e-12")
        # Branch sanity: each v maps [0,1] into its cell and f_g(v(w)) = w.
        for br in self.good_branches:
            w = np.linspace(0.0, 1.0, 17)
            vals = np.asarray([br.eval(t) for t in w], dtype=float)
            lo, hi = br.cell
            if vals.min() < lo - 1e-12 or vals.max() > hi + 1e-12:
                raise ValueError("good branch leaves its declared cell")
            if lo < self.a - 1e-12 or hi > 1 + 1e-12:
                raise ValueError("branch cell must lie inside [a,1]")
            if br.inverse is not None:
                back = np.asarray([br.inverse(v) for v in vals], dtype=float)
                if np.max(np.abs(back - w)) > 1e-12:
                    raise ValueError("branch inverse fails the round-trip check")
        cells = sorted(br.cell for br in self.good_branches)
        span = sum(hi - lo for lo, hi in cells)
        if abs(span - (1 - self.a)) > 1e-9:
            raise ValueError("good branch cells must tile [a,1] up to measure zero")

    @property
    def hhat1(self) -> float:
        """hhat_1 = alpha * h'(0), the quadratic coefficient scale of T-hat."""
        return self.alpha * float(self.h_coeffs[1])


def lsv(alpha: float) -> PMMap:
    """Liverani-Saussol-Vaienti map: f(x) = x(1 + (2x)^alpha) on [0,1/2).

    h(u) = 1 + 2^alpha * u exactly (two coefficients), a = 1/2, and the good
    part is the affine full branch 2x - 1 with inverse v(w) = (w+1)/2.
    """
    if alpha <= 0:
        raise ValueError("alpha must be positive")
    h = np.array([1.0, 2.0**alpha])
    branch = affine_branch(0.5, 0.5)
    return PMMap(alpha=alpha, a=0.5, h_coeffs=h, good_branches=(branch,),
                 label=f"lsv(alpha={alpha:g})")


def doubling_branches() -> list:
    """Inverse branches of x -> 2x mod 1 on [0,1] (a plain expanding map).

    Not a PMMap; used as a sanity instance for the spectral solver and the
    branch-family diagnostics.
    """
    return [affine_branch(0.5, 0.0), affine_branch(0.5, 0.5)]


def _h_eval(m: PMMap, u):
    """h(u) and h'(u) from the stored coefficients (dtype-preserving Horner)."""
    c = m.h_coeffs
    u = np.asarray(u)
    h = np.zeros_like(u, dtype=complex if u.dtype.kind == "c" else float)
    hp = np.zeros_like(h)
    for ck in c[::-1]:
        hp = hp * u + h
        h = h * u + ck
    return h, hp


def _power_u(m: PMMap, xa: np.ndarray, complex_in: bool) -> np.ndarray:
    """u = x^alpha, staying real on nonnegative real input."""
    if complex_in or (xa.ndim == 0 and xa < 0) or (xa.ndim > 0 and (xa < 0).any()):
        u = np.power(xa.astype(complex), m.alpha)
    else:
        u = np.power(xa, m.alpha)
    if np.any(np.abs(u) > m.h_radius):
        raise MapDomainError("x^alpha exceeds the h-series validity radius")
    return u


def eval_fb(m: PMMap, x):
    """Bad branch f_b(x) = x*h(x^alpha); scalar or ndarray, real or complex."""
    xa = np.asarray(x)
    complex_in = np.iscomplexobj(xa)
    u = _power_u(m, xa, complex_in)
    h, _ = _h_eval(m, u)
    out = xa * h
    if not complex_in:
        out = np.real(out)
    if out.ndim == 0:
        return out.item()
    return out


def eval_fb_deriv(m: PMMap, x):
    """f_b'(x) = h(u) + alpha*u*h'(u) with u = x^alpha."""
    xa = np.asarray(x)
    complex_in = np.iscomplexobj(xa)
    u = _power_u(m, xa, complex_in)
    h, hp = _h_eval(m, u)
    out = h + m.alpha * u * hp
    if not complex_in:
        out = np.real(out)
    if out.ndim == 0:
        return out.item()
    return out


@_njit(cache=True)
def _backstep_jit(x, alpha, hc, a, tol, w0):
    """Compiled twin of the real branch of eval_fb_inverse; -1 on failure."""
    if x == 0.0:
        return 0.0
    lo = 0.0
    hi = x if x < a else a
    w = w0 if 0.0 < w0 <= hi else hi
    for _ in range(100):
        u = w**alpha
        h = hc[len(hc) - 1]
        hp = 0.0
        for k in range(len(hc) - 2, -1, -1):
            hp = hp * u + h
            h = h * u + hc[k]
        r = w * h - x
        d = h + alpha * u * hp
        if abs(r) <= tol * x:
            return w - r / d
        if r > 0:
            hi = w
        else:
            lo = w
        wn = w - r / d
        if not (lo < wn < hi):
            wn = 0.5 * (lo + hi)
        if wn == w:
            return w
        w = wn
    return -1.0


def eval_fb_inverse(m: PMMap, x, seed=None, tol: float = 1e-14,
                    cap: int = NEWTON_CAP):
    """Solve f_b(y) = x.

    Real x in [0,1]: bisection-safeguarded Newton on [0, min(x,a)] (f_b >= id,
    so the preimage is below x). Complex x: plain Newton seeded by `seed`
    (default y = x, matching slow orbit drift).
    """
    if np.ndim(x) != 0:
        raise ValueError("eval_fb_inverse is scalar; use the vector helpers")
    if np.iscomplexobj(x) and complex(x).imag != 0:
        x = complex(x)
        y = complex(seed) if seed is not None else x
        for _ in range(cap):
            r = eval_fb(m, y) - x
            d = eval_fb_deriv(m, y)
            if abs(r) <= tol * abs(x):
                return y - r / d  # polish: downstream Abel values amplify by 1/z^2
            y -= r / d
        raise NonConvergenceError("complex Newton for f_b^{-1} did not converge")

    x = float(np.real(x))
    if x == 0.0:
        return 0.0
    if _HAVE_NUMBA and m.h_radius == math.inf and cap >= 100:
        w = _backstep_jit(x, m.alpha, m.h_coeffs, m.a, tol,
                          -1.0 if seed is None else float(seed))
        if w >= 0.0:
            return w
        raise NonConvergenceError("safeguarded Newton for f_b^{-1} did not converge")
    lo, hi = 0.0, min(x, m.a)
    y = float(seed) if seed is not None else min(x, m.a)
    for _ in range(cap):
        r = eval_fb(m, y) - x
        d = eval_fb_deriv(m, y)
        if abs(r) <= tol * abs(x):
            return y - r / d
        if r > 0:
            hi = y
        else:
            lo = y
        y_new = y - r / d
        if not (lo < y_new < hi):
            y_new = 0.5 * (lo + hi)
        if y_new == y:
            return y
        y = y_new
    raise NonConvergenceError("safeguarded Newton for f_b^{-1} did not converge")


def _fb_inverse_real_vec(m: PMMap, x: np.ndarray, seed=None, tol: float = 1e-14,
                         cap: int = NEWTON_CAP) -> np.ndarray:
    """Vectorized f_b^{-1} on real arrays (bisection-safeguarded Newton)."""
    x = np.asarray(x, dtype=float)
    lo = np.zeros_like(x)
    hi = np.minimum(x, m.a)
    y = hi.copy() if seed is None else np.asarray(seed, dtype=float).copy()
    np.clip(y, lo, hi, out=y)
    active = x > 0.0
    for _ in range(cap):
        if not active.any():
            break
        r = eval_fb(m, y) - x
        done = np.abs(r) <= tol * np.abs(x)
        active &= ~done
        if not active.any():
            break
        pos = active & (r > 0)
        neg = active & (r <= 0)
        hi[pos] = y[pos]
        lo[neg] = y[neg]
        y_new = y - r / eval_fb_deriv(m, y)
        bad = active & ~((y_new > lo) & (y_new < hi))
        y_new[bad] = 0.5 * (lo[bad] + hi[bad])
        stalled = active & (y_new == y)
        active &= ~stalled
        y = np.where(active, y_new, y)
    else:
        raise NonConvergenceError("vectorized f_b^{-1} did not converge")
    # one polishing step: Abel evaluations amplify position error by 1/z^2
    r = eval_fb(m, y) - x
    with np.errstate(invalid="ignore", divide="ignore"):
        y_pol = y - r / eval_fb_deriv(m, y)
    good = x > 0.0
    y = np.where(good, y_pol, y)
    y[x == 0.0] = 0.0
    return y


def _fb_inverse_complex_vec(m: PMMap, x: np.ndarray, seed=None,
                            tol: float = 1e-14, cap: int = NEWTON_CAP) -> np.ndarray:
    """Vectorized plain-Newton f_b^{-1} on complex arrays."""
    x = np.asarray(x, dtype=complex)
    y = x.copy() if seed is None else np.asarray(seed, dtype=complex).copy()
    scale = np.maximum(np.abs(x), 1e-300)
    for _ in range(cap):
        r = eval_fb(m, y) - x
        d = eval_fb_deriv(m, y)
        if np.all(np.abs(r) <= tol * scale):
            return y - r / d
        y = y - r / d
    raise NonConvergenceError("vectorized complex f_b^{-1} did not converge")


def eval_fg(m: PMMap, x):
    """Good part f_g(x) for x in [a,1]: invert the branch whose cell holds x."""
    xr = float(np.real(x))
    for br in m.good_branches:
        lo, hi = br.cell
        if lo - 1e-12 <= xr <= hi + 1e-12:
            if br.inverse is not None:
                return br.inverse(x)
            # Safeguarded Newton on w in [0,1] against v(w) = x.
            wlo, whi = 0.0, 1.0
            w = 0.5
            for _ in range(NEWTON_CAP):
                r = br.eval(w) - x
                if abs(r) <= 1e-14:
                    return w
                increasing = np.real(br.deriv(w)) > 0
                if (r > 0) == increasing:
                    whi = w
                else:
                    wlo = w
                w_new = w - r / br.deriv(w)
                if not (wlo < w_new < whi):
                    w_new = 0.5 * (wlo + whi)
                w = w_new
            raise NonConvergenceError("branch inversion did not converge")
    raise MapDomainError(f"x = {x!r} is not inside any good-branch cell")


def hat_T_series(m: PMMap, order: int, max_order: int = MAX_SERIES_ORDER) -> TruncatedSeries:
    """Taylor series at 0 of T-hat(z) = f_b^{-1}(x)^alpha in z = x^alpha.

    Obtained by series inversion of F-hat(z) = z*h(z)^alpha. The linear
    coefficient must survive as 1; its z^2 coefficient is -alpha*h'(0).
    """
    if order < 2 or order > max_order:
        raise ValueError(f"order must be in [2, {max_order}]")
    h = TruncatedSeries(m.h_coeffs).pad(order)
    fhat = TruncatedSeries(np.append(0.0, powr(h, m.alpha).coeffs[:order]))
    that = invert_series(fhat)
    if abs(that.coeffs[1] - 1.0) > 1e-10:
        raise ArithmeticError("series inversion lost all significant digits")
    return that


# ---------------------------------------------------------------------------
# U_NP diagnostics
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class UNPReport:
    """Sampled expanding-map diagnostics for a family of inverse branches.

    lambda_check: min of the conformally weighted expansion quantity; the map
    is C-uniformly expanding when this exceeds 1.
    max_distortion: max of |v''/v'| over branches and sample points.
    xi: partition spacing quantity max |cell| / dist(cell, boundary).
    """

    lambda_check: float
    max_distortion: float
    xi: float
    n_branches: int
    samples: int
    expanding: bool


def branch_family_report(branches: Sequence[GoodBranch], p: float, q: float,
                         samples: int) -> UNPReport:
    """Sample (CE), (D1) and (P) quantities for inverse branches on [p,q].

    Branch second derivatives are taken by complex step on deriv, which is
    exact to O(step^2) without subtractive cancellation.
    """
    if samples < 10:
        raise ValueError("need at least 10 sample points per branch")
    # Interior Chebyshev-spread samples; endpoints excluded (0/0 limits there).
    t = (np.arange(samples) + 0.5) / samples
    w = p + (q - p) * 0.5 * (1 - np.cos(np.pi * t))
    step = 1e-20

    lam = math.inf
    dist = 0.0
    xi = 0.0
    for br in branches:
        v = np.asarray([br.eval(x) for x in w], dtype=complex).real
        dv = np.asarray([br.deriv(x) for x in w], dtype=complex).real
        d2v = np.asarray([br.deriv(x + 1j * step) for x in w], dtype=complex).imag / step
        num = np.sqrt(np.maximum((q - v) * (v - p), 0.0))
        den = np.sqrt((q - w) * (w - p)) * np.abs(dv)
        lam = min(lam, float(np.min(num / den)))
        dist = max(dist, float(np.max(np.abs(d2v / dv))))
        lo, hi = br.cell
        # Cells touching the boundary are excluded from the spacing sup.
        d_bound = min(lo - p, q - hi)
        if d_bound > 0:
            xi = max(xi, (hi - lo) / d_bound)
    return UNPReport(
        lambda_check=lam,
        max_distortion=dist,
        xi=xi,
        n_branches=len(branches),
        samples=samples,
        expanding=lam > 1.0,
    )


def induced_branch_family(m: PMMap, n_max: int) -> list:
    """Inverse branches of the induced map f^tau on [a,1].

    The branch with bad-orbit depth n is w -> v_iota(f_b^{-n}(w)); derivatives
    come from the chain rule through the backward orbit. Built on
    eval_fb_inverse only (no Abel function), so it can serve as an
    independent diagnostic.
    """
    branches = []
    for n in range(n_max + 1):
        for br in m.good_branches:
            def ev(w, n=n, br=br):
                y = w
                for _ in range(n):
                    y = eval_fb_inverse(m, y)
                return br.eval(y)

            def dv(w, n=n, br=br):
                y = w
                d = 1.0 + 0.0j if isinstance(w, complex) else 1.0
                for _ in range(n):
                    y = eval_fb_inverse(m, y)
                    d = d / eval_fb_deriv(m, y)
                return br.deriv(y) * d

            lo = ev(m.a)
            hi = ev(1.0)
            cell = tuple(sorted((float(np.real(lo)), float(np.real(hi)))))
            branches.append(GoodBranch(eval=ev, deriv=dv, cell=cell))
    return branches


def verify_unp(m: PMMap, sample_count: int, n_max: int = 24) -> UNPReport:
    """Diagnostic report for the induced map's branch family on [a,1].

    Samples branches of bad-orbit depth up to n_max. Purely diagnostic: the
    report carries flags, no exceptions for failing quantities.
    """
    branches = induced_branch_family(m, n_max)
    return branch_family_report(branches, m.a, 1.0, sample_count)
