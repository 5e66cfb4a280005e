"""Principal Abel function of the neutral branch.

The Abel function A solves A(f_b(x)) = A(x) - 1 with A(1) = 0. Near the
neutral point it has, in the coordinate z = x^alpha, an asymptotic expansion

    A-hat(z) = a_{-1}/z + a_log * log z + a_0 + sum_n a_n z^n,

whose coefficients follow iteratively from the conjugated backward branch
T-hat (series inversion of z*h(z)^alpha): substituting the partial expansion
into the functional equation leaves a residual D_n(z) of order z^{n+2}, and
the next coefficient is read off the leading residual coefficient. Away from
the expansion's validity disc, A is evaluated by walking the orbit backward
into the disc and shifting by the step count.

A is strictly decreasing on (0,1] and analytic on a complex neighbourhood;
all evaluators accept complex arguments near the real domain.
"""

from __future__ import annotations

import dataclasses
import math
from dataclasses import dataclass
from typing import Optional

import numpy as np

from .map_model import (
    NonConvergenceError,
    MapDomainError,
    PMMap,
    _fb_inverse_complex_vec,
    _fb_inverse_real_vec,
    eval_fb_deriv,
    eval_fb_inverse,
    hat_T_series,
)

__all__ = [
    "AbelExpansion",
    "AbelFunction",
    "compute_coefficients",
    "normalize_constant",
    "build_abel",
    "eval_expansion",
    "eval_expansion_deriv",
    "eval_expansion_deriv_scaled",
    "eval_A",
    "eval_A_prime",
    "eval_A_inverse",
    "functional_residual",
    "expansion_to_dict",
    "expansion_from_dict",
]

RESIDUAL_THRESHOLD = 1e-13
NEWTON_CAP = 100


@dataclass(frozen=True)
class AbelExpansion:
    """Truncated expansion of A-hat(z) = a_{-1}/z + a_log log z + a0 + sum a_n z^n."""

    a_minus1: float
    a_log: float
    a0: float
    a_n: np.ndarray  # a_1 .. a_N
    N: int
    hhat1: float
    hhat2: float
    z_radius: float
    map: PMMap

    def __post_init__(self):
        a = np.asarray(self.a_n, dtype=float).copy()
        a.setflags(write=False)
        object.__setattr__(self, "a_n", a)
        if a.size != self.N:
            raise ValueError("a_n length must equal N")
        if abs(self.a_minus1 * self.hhat1 - 1.0) > 1e-14:
            raise ValueError("leading coefficient must equal 1/hhat1")


@dataclass(frozen=True)
class AbelFunction:
    """Evaluation strategy wrapped around an AbelExpansion.

    Inside |x^alpha| <= switch_radius the series is summed directly; outside,
    the point is pulled backward through f_b^{-1} into the disc and the step
    count is subtracted. norm_steps records the depth used to pin a0.
    """

    expansion: AbelExpansion
    switch_radius: float
    max_backward_steps: int
    norm_steps: Optional[int] = None


def eval_expansion(exp: AbelExpansion, zhat):
    """Sum the expansion at zhat (scalar or array, real or complex)."""
    z = np.asarray(zhat)
    poly = np.zeros_like(z, dtype=complex)
    for an in exp.a_n[::-1]:
        poly = poly * z + an
    poly = poly * z
    out = exp.a_minus1 / z + exp.a_log * np.log(z.astype(complex)) + exp.a0 + poly
    if not np.iscomplexobj(z) and (np.real(z) > 0 if z.ndim == 0 else (np.real(z) > 0).all()):
        out = np.real(out)
    if out.ndim == 0:
        return out.item()
    return out


def eval_expansion_deriv(exp: AbelExpansion, zhat):
    """d/dz of the expansion at zhat."""
    z = np.asarray(zhat)
    dpoly = np.zeros_like(z, dtype=complex)
    for n in range(exp.N, 0, -1):
        dpoly = dpoly * z + exp.a_n[n - 1] * n
    out = -exp.a_minus1 / z**2 + exp.a_log / z + dpoly
    if not np.iscomplexobj(z) and (np.real(z) > 0 if z.ndim == 0 else (np.real(z) > 0).all()):
        out = np.real(out)
    if out.ndim == 0:
        return out.item()
    return out


def eval_expansion_deriv_scaled(exp: AbelExpansion, zhat):
    """zhat^2 d/dz of the expansion: bounded as zhat -> 0 (limit -a_minus1).

    The bare derivative overflows the double range around zhat ~ 1e-154
    while ratios of derivatives at comparable depths are still order one,
    so deep-orbit chain weights are assembled from this scaled form.
    """
    z = np.asarray(zhat)
    dpoly = np.zeros_like(z, dtype=complex)
    for n in range(exp.N, 0, -1):
        dpoly = dpoly * z + exp.a_n[n - 1] * n
    out = -exp.a_minus1 + exp.a_log * z + dpoly * z * z
    if not np.iscomplexobj(z) and (np.real(z) > 0 if z.ndim == 0 else (np.real(z) > 0).all()):
        out = np.real(out)
    if out.ndim == 0:
        return out.item()
    return out


def _that_ratio_coeffs(that) -> np.ndarray:
    """Coefficients s_k of T-hat(z)/z = 1 + s_1 z + s_2 z^2 + ..."""
    return that.coeffs[1:].copy()


def functional_residual(exp: AbelExpansion, zhat, that=None):
    """D(z) = A-hat(T-hat(z)) - A-hat(z) - 1, evaluated with cancellation control.

    The pole and log parts are combined through T-hat(z)/z, so the result is
    accurate down to the truncation error even where the raw parts are huge.
    """
    if that is None:
        that = hat_T_series(exp.map, exp.N + 3, max_order=max(64, exp.N + 3))
    z = np.asarray(zhat, dtype=complex)
    s = _that_ratio_coeffs(that)
    # w = T-hat(z)/z = 1 + s_2 z + s_3 z^2 + ... via Horner
    w = np.zeros_like(z)
    for sk in s[::-1]:
        w = w * z + sk
    t = w * z  # T-hat(z)
    pole = exp.a_minus1 * (z - t) / (t * z)
    lw = np.log(w)
    logpart = exp.a_log * lw
    poly = np.zeros_like(z)
    for n in range(exp.N, 0, -1):
        poly += exp.a_n[n - 1] * z**n * np.expm1(n * lw)
    out = pole + logpart + poly - 1.0
    if out.ndim == 0:
        return out.item()
    return out


def _estimate_z_radius(exp: AbelExpansion, that) -> float:
    """Largest radius where the functional-equation residual stays below 1e-13."""
    angles = np.exp(2j * np.pi * np.arange(16) / 16)
    with np.errstate(over="ignore", invalid="ignore"):
        for r in np.geomspace(0.9, 1e-3, 200):
            d = np.abs(functional_residual(exp, r * angles, that=that))
            if np.all(np.isfinite(d)) and d.max() < RESIDUAL_THRESHOLD:
                return float(r)
    return 1e-3


def compute_coefficients(map: PMMap, N: int = 24) -> AbelExpansion:
    """Coefficients of the Abel expansion by iterative residual matching.

    a_{-1} = 1/hhat1 kills the constant term, a_log the O(z) term; then each
    a_n is read from the z^{n+1} coefficient of the running residual, using
    that T-hat^n - z^n = -n*hhat1*z^{n+1} + O(z^{n+2}). Raises if a residual
    order fails to drop (series arithmetic breakdown).
    """
    if N < 1:
        raise ValueError("N must be at least 1")
    that = hat_T_series(map, N + 3, max_order=max(64, N + 3))
    c = that.coeffs
    hhat1 = float(-c[2].real)
    hhat2 = float(c[3].real)
    if hhat1 <= 0:
        raise ArithmeticError("T-hat quadratic coefficient must be negative")
    a_minus1 = 1.0 / hhat1
    g0 = hhat1**2 - hhat2
    a_log = g0 / hhat1**2

    # Running residual D as Taylor coefficients through z^{N+1}. Pole part:
    # a_{-1}(1/T - 1/z) = a_{-1}(r(z) - 1)/z with r = 1/(T/z); log part is
    # a_log * log(T/z). Constant order carries the "-1" from the equation.
    from .power_series import TruncatedSeries, log1, mul, reciprocal

    order = N + 2
    s_full = TruncatedSeries(np.append(1.0, c[2:]))  # T/z = 1 + s1 z + ...
    r = reciprocal(s_full)
    d_coeffs = np.zeros(N + 2, dtype=complex)
    d_coeffs += a_minus1 * r.coeffs[1: N + 3]
    d_coeffs += a_log * log1(s_full).coeffs[: N + 2]
    d_coeffs[0] -= 1.0

    # Powers of T-hat for the update terms T^n - z^n.
    tz = TruncatedSeries(c[: order + 1])
    powers = [None, tz]
    for n in range(2, N + 1):
        powers.append(mul(powers[-1], tz).pad(order))

    scale = max(1.0, float(np.abs(d_coeffs).max()))
    if abs(d_coeffs[0]) > 1e-12 * scale or abs(d_coeffs[1]) > 1e-12 * scale:
        raise ArithmeticError("leading residual orders failed to cancel")

    a_n = np.zeros(N)
    for n in range(1, N + 1):
        # adding a_n z^n to the expansion shifts D by a_n (T^n - z^n), whose
        # leading coefficient is -n*hhat1 at order z^{n+1}
        a_n[n - 1] = d_coeffs[n + 1].real / (n * hhat1)
        upd = powers[n].coeffs[: len(d_coeffs)].copy()
        upd[n] -= 1.0  # T^n - z^n
        d_coeffs += a_n[n - 1] * upd
        tail_scale = max(1.0, np.abs(d_coeffs).max(), abs(a_n[n - 1] * n * hhat1))
        if abs(d_coeffs[n + 1]) > 1e-10 * tail_scale:
            raise ArithmeticError(f"residual failed to drop order at n = {n}")

    exp = AbelExpansion(a_minus1=a_minus1, a_log=float(a_log), a0=0.0,
                        a_n=a_n, N=N, hhat1=hhat1, hhat2=hhat2,
                        z_radius=1.0, map=map)
    z_rad = _estimate_z_radius(exp, that)
    return dataclasses.replace(exp, z_radius=z_rad)


def default_backward_cap(exp: AbelExpansion, switch_radius: float) -> int:
    # 1/zhat grows by about hhat1 per backward step, so this covers the walk
    # from zhat = 1 into the disc with slack.
    return int(2.0 / (switch_radius * exp.hhat1)) + 64


def normalize_constant(af: AbelFunction, depth: Optional[int] = None) -> AbelFunction:
    """Fix a0 so that A(1) = 0, by evaluating the series at a backward iterate.

    Walks 1 backward k times until x^alpha enters the switch disc (or exactly
    `depth` times if given); there A(f_b^{-k}(1)) = k pins a0.
    """
    exp = af.expansion
    m = exp.map
    x = 1.0
    k = 0
    target = depth if depth is not None else af.max_backward_steps
    while (x**m.alpha > af.switch_radius if depth is None else k < depth):
        x = eval_fb_inverse(m, x)
        k += 1
        if k > af.max_backward_steps:
            raise NonConvergenceError("switch disc not reached while normalizing")
    if depth is not None and x**m.alpha > af.switch_radius:
        raise ValueError("requested depth does not reach the switch disc")
    base = eval_expansion(dataclasses.replace(exp, a0=0.0), x**m.alpha)
    a0 = float(k - base)
    return dataclasses.replace(
        af, expansion=dataclasses.replace(exp, a0=a0), norm_steps=k)


def build_abel(map: PMMap, N: int = 24, switch_radius: Optional[float] = None,
               max_backward_steps: Optional[int] = None) -> AbelFunction:
    """Compute coefficients, choose evaluation thresholds, normalize A(1) = 0."""
    exp = compute_coefficients(map, N)
    sr = switch_radius if switch_radius is not None else exp.z_radius / 4
    cap = max_backward_steps if max_backward_steps is not None \
        else default_backward_cap(exp, sr)
    af = AbelFunction(expansion=exp, switch_radius=sr, max_backward_steps=cap)
    return normalize_constant(af)


def _zhat(m: PMMap, x):
    if np.iscomplexobj(x):
        return complex(x) ** m.alpha
    return float(x) ** m.alpha


def eval_A(af: AbelFunction, x):
    """A(x) for real x in (0,1] or complex x near the real orbit region."""
    m = af.expansion.map
    is_complex = np.iscomplexobj(x) and complex(x).imag != 0
    if not is_complex:
        x = float(np.real(x))
        if not 0 < x <= 1:
            raise MapDomainError(f"A is defined on (0,1]; got x = {x!r}")
    y = complex(x) if is_complex else x
    k = 0
    while abs(_zhat(m, y)) > af.switch_radius:
        y = eval_fb_inverse(m, y)
        k += 1
        if k > af.max_backward_steps:
            raise NonConvergenceError("switch disc not reached in eval_A")
    return eval_expansion(af.expansion, _zhat(m, y)) - k


def eval_A_prime(af: AbelFunction, x):
    """A'(x), by the differentiated series and the backward-orbit chain rule."""
    m = af.expansion.map
    is_complex = np.iscomplexobj(x) and complex(x).imag != 0
    if not is_complex:
        x = float(np.real(x))
        if not 0 < x <= 1:
            raise MapDomainError(f"A is defined on (0,1]; got x = {x!r}")
    y = complex(x) if is_complex else x
    k = 0
    dprod = 1.0 + 0.0j if is_complex else 1.0
    while abs(_zhat(m, y)) > af.switch_radius:
        y = eval_fb_inverse(m, y)
        dprod = dprod / eval_fb_deriv(m, y)
        k += 1
        if k > af.max_backward_steps:
            raise NonConvergenceError("switch disc not reached in eval_A_prime")
    zh = _zhat(m, y)
    inner = eval_expansion_deriv(af.expansion, zh) * m.alpha * zh / y
    return inner * dprod


def _series_newton_inverse(af: AbelFunction, y, tol_scale: float):
    """Solve A-hat(z) = y inside the switch disc, seeded at leading order."""
    exp = af.expansion
    y = complex(y)
    z = exp.a_minus1 / (y - exp.a0)
    z = exp.a_minus1 / (y - exp.a0 - exp.a_log * np.log(z))
    for _ in range(NEWTON_CAP):
        r = eval_expansion(exp, z) - y
        if abs(r) <= tol_scale:
            return z
        z = z - r / eval_expansion_deriv(exp, z)
    raise NonConvergenceError("series Newton for A^{-1} did not converge")


def _real_inverse_unit(af: AbelFunction, frac: float) -> float:
    """Solve A(x) = frac for x in [a,1] (A decreases from 1 to 0 there)."""
    m = af.expansion.map
    lo, hi = m.a, 1.0  # A(lo) = 1, A(hi) = 0
    x = 1.0 - frac * (1.0 - m.a)
    for _ in range(NEWTON_CAP):
        r = eval_A(af, x) - frac
        if abs(r) <= 1e-13 * (1 + abs(frac)):
            return x
        if r > 0:
            lo = x  # A too big: x too small
        else:
            hi = x
        x_new = x - r / eval_A_prime(af, x)
        if not (lo < x_new < hi):
            x_new = 0.5 * (lo + hi)
        if x_new == x:
            return x
        x = x_new
    raise NonConvergenceError("bracketed Newton for A^{-1} did not converge")


def eval_A_inverse(af: AbelFunction, y):
    """x with A(x) = y, for Re y >= 0.

    Deep values (Re y above 2 a_{-1}/switch_radius) go through Newton on the
    series; moderate real y through a bracketed solve on [a,1] plus integer
    backward steps A^{-1}(y+1) = f_b^{-1}(A^{-1}(y)); moderate complex y
    through full-function Newton seeded by the real solution.
    """
    exp = af.expansion
    m = exp.map
    y_star = 2 * exp.a_minus1 / af.switch_radius
    is_complex = np.iscomplexobj(y) and complex(y).imag != 0
    yr = float(np.real(y))
    if yr < 0:
        if yr > -1e-12 and not is_complex:
            yr = 0.0
            y = 0.0
        else:
            raise MapDomainError("A^{-1} requires Re y >= 0")
    tol = 1e-12 * (1 + abs(y))

    if yr >= y_star:
        z = _series_newton_inverse(af, y, tol)
        x = z ** (1.0 / m.alpha)
        if not is_complex:
            x = float(np.real(x))
        return x

    if not is_complex:
        yr = float(np.real(y))
        k = int(math.floor(yr))
        frac = yr - k
        x = _real_inverse_unit(af, frac)
        for _ in range(k):
            x = eval_fb_inverse(m, x)
        return x

    # moderate complex y: Newton on the full evaluator, seeded on the real axis
    x = complex(eval_A_inverse(af, max(yr, 0.0)))
    for _ in range(NEWTON_CAP):
        r = eval_A(af, x) - y
        if abs(r) <= tol:
            return x
        x = x - r / eval_A_prime(af, x)
    raise NonConvergenceError("complex Newton for A^{-1} did not converge")


# ---------------------------------------------------------------------------
# vectorized private paths (hot loops in the orbit-sum machinery)
# ---------------------------------------------------------------------------

def _eval_A_vec(af: AbelFunction, x: np.ndarray):
    """A on an array (real positive or complex); per-element backward walks."""
    m = af.expansion.map
    complex_in = np.iscomplexobj(x)
    y = np.asarray(x, dtype=complex if complex_in else float).copy()
    if not complex_in and ((y <= 0).any() or (y > 1).any()):
        raise MapDomainError("A is defined on (0,1]")
    k = np.zeros(y.shape, dtype=int)
    for _ in range(af.max_backward_steps + 1):
        outside = np.abs(y.astype(complex) ** m.alpha) > af.switch_radius
        if not outside.any():
            break
        sub = y[outside]
        if complex_in:
            y[outside] = _fb_inverse_complex_vec(m, sub, seed=sub)
        else:
            y[outside] = _fb_inverse_real_vec(m, sub)
        k[outside] += 1
    else:
        raise NonConvergenceError("switch disc not reached in _eval_A_vec")
    zh = y.astype(complex) ** m.alpha
    vals = eval_expansion(af.expansion, zh) - k
    if not complex_in:
        vals = np.real(vals)
    return vals


def _eval_A_prime_vec(af: AbelFunction, x: np.ndarray):
    """A' on an array; backward walks with accumulated derivative products."""
    m = af.expansion.map
    complex_in = np.iscomplexobj(x)
    y = np.asarray(x, dtype=complex if complex_in else float).copy()
    dprod = np.ones(y.shape, dtype=complex if complex_in else float)
    for _ in range(af.max_backward_steps + 1):
        outside = np.abs(y.astype(complex) ** m.alpha) > af.switch_radius
        if not outside.any():
            break
        sub = y[outside]
        if complex_in:
            y[outside] = _fb_inverse_complex_vec(m, sub, seed=sub)
        else:
            y[outside] = _fb_inverse_real_vec(m, sub)
        dprod[outside] /= eval_fb_deriv(m, y[outside])
    else:
        raise NonConvergenceError("switch disc not reached in _eval_A_prime_vec")
    # scaled-derivative form A'(y) = B(zh) alpha / (zh y), B = zh^2 E'(zh):
    # at extreme depth zh*y underflows and the real path divides to -inf,
    # the honest double for a derivative that genuinely exceeds the range
    zh = y ** m.alpha if complex_in else np.asarray(y, dtype=float) ** m.alpha
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        inner = eval_expansion_deriv_scaled(af.expansion, zh) * m.alpha / (zh * y)
        out = inner * dprod
    if not complex_in:
        out = np.real(out)
    return out


def _eval_A_inverse_series_vec(af: AbelFunction, y: np.ndarray) -> np.ndarray:
    """Vector Newton for A^{-1} assuming every y is in the deep series region."""
    exp = af.expansion
    y = np.asarray(y, dtype=complex)
    out = np.full(y.shape, np.nan, dtype=complex)
    ok = np.isfinite(y)
    y = y[ok]
    y_star = 2 * exp.a_minus1 / af.switch_radius
    if (y.real < y_star - 1e-9).any():
        raise ValueError("point outside the deep series region")
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        z = exp.a_minus1 / (y - exp.a0)
        z = exp.a_minus1 / (y - exp.a0 - exp.a_log * np.log(z))
        tol = 1e-12 * (1 + np.abs(y))
        # below |z| ~ 1e-150 the residual itself stops being representable
        # (the complex division a_{-1}/z underflows |z|^2) while the two-pass
        # seed error, of relative order log(y)/y^2, is already far below
        # double resolution, so those lanes are accepted at the seed
        settled = np.abs(z) < 1e-150
        # step only the lanes still out of tolerance: at extreme depth the
        # seed is already converged while z^2 underflows, so letting those
        # lanes touch the derivative would turn the whole batch to NaN
        for _ in range(NEWTON_CAP):
            r = eval_expansion(exp, z) - y
            live = ~(np.abs(r) <= tol) & ~settled
            if not live.any():
                out[ok] = z
                return out
            z[live] = z[live] - r[live] / eval_expansion_deriv(exp, z[live])
    raise NonConvergenceError("vector series Newton for A^{-1} did not converge")


# ---------------------------------------------------------------------------
# JSON round-trip
# ---------------------------------------------------------------------------

def expansion_to_dict(exp: AbelExpansion) -> dict:
    return {
        "format_version": 1,
        "map_label": exp.map.label,
        "alpha": exp.map.alpha,
        "N": exp.N,
        "a_minus1": exp.a_minus1,
        "a_log": exp.a_log,
        "a0": exp.a0,
        "a_n": [float(v) for v in exp.a_n],
        "z_radius": exp.z_radius,
    }


def expansion_from_dict(doc: dict, map: PMMap) -> AbelExpansion:
    if doc.get("format_version") != 1:
        raise ValueError("unsupported expansion document version")
    if abs(doc["alpha"] - map.alpha) > 1e-15:
        raise ValueError("document alpha does not match the supplied map")
    that = hat_T_series(map, 4)
    hhat1 = float(-that.coeffs[2].real)
    hhat2 = float(that.coeffs[3].real)
    return AbelExpansion(
        a_minus1=doc["a_minus1"], a_log=doc["a_log"], a0=doc["a0"],
        a_n=np.asarray(doc["a_n"], dtype=float), N=doc["N"],
        hhat1=hhat1, hhat2=hhat2, z_radius=doc["z_radius"], map=map)
