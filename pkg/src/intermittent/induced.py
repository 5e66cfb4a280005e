"""Induced map, return time, and backward-branch algebra.

The first-return map F(x) = f^{tau(x)}(x) to [a,1] and the return time tau
have closed forms through the Abel function A of the bad branch:

    tau(x) = floor(A(f_g(x))) + 1,    F(x) = A^{-1}(frac(A(f_g(x)))),

valid off the measure-zero set where A(f_g(x)) is an integer. Backward
branch points f_b^{-n}(z) and their derivatives, for arbitrary complex
depth n, come from the same function: f_b^{-n}(z) = A^{-1}(A(z) + n).
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Union

import numpy as np

from .abel import (
    AbelFunction,
    eval_A,
    eval_A_inverse,
    eval_A_prime,
    _eval_A_vec,
    _eval_A_prime_vec,
)
from .map_model import (
    PMMap,
    eval_fb,
    eval_fb_deriv,
    eval_fb_inverse,
    eval_fg,
    _fb_inverse_real_vec,
)

__all__ = ["BranchPoint", "induced_map", "return_time", "branch_point",
           "summand_r", "backward_orbit", "FLOOR_GUARD"]

# width of the band around integer A-values inside which the floor is
# considered ambiguous and direct iteration decides
FLOOR_GUARD = 1e-9

# direct-iteration fallback gives up past this many bad steps
ITERATION_CAP = 50_000_000


@dataclass(frozen=True)
class BranchPoint:
    """A backward orbit point f_b^{-n}(z) with its derivative in z.

    deriv is (f_b^{-n})'(z), equal to A'(z)/A'(point); index keeps the
    depth n, which may be complex for contour work.
    """

    point: complex
    deriv: complex
    index: Union[int, float, complex]


def _near_integer(y: float) -> bool:
    return abs(y - round(y)) < FLOOR_GUARD


def _iterate_bad(m: PMMap, y: float):
    """Bad-branch steps from y until the orbit enters [a,1]."""
    n = 0
    while y < m.a:
        y = eval_fb(m, y)
        n += 1
        if n > ITERATION_CAP:
            raise RuntimeError("direct iteration cap exceeded")
    return n, y


def _first_return(af: AbelFunction, m: PMMap, x: float):
    """(tau, F(x)) for x in [a,1], Abel route with guarded floor."""
    y = eval_fg(m, x)
    if y >= m.a:
        return 1, float(y)
    if y <= 0:
        raise ValueError(f"orbit of {x!r} hits the fixed point at 0")
    Ay = eval_A(af, y)
    if _near_integer(Ay):
        # too close to a branch boundary for the floor to be trusted
        n, end = _iterate_bad(m, y)
        return n + 1, end
    n = int(np.floor(Ay))
    return n + 1, float(eval_A_inverse(af, Ay - n))


def induced_map(af: AbelFunction, m: PMMap, x: float) -> float:
    """First-return map to [a,1] at x in (a,1]."""
    if not m.a < x <= 1:
        raise ValueError(f"induced map needs x in (a, 1], got {x!r}")
    return _first_return(af, m, x)[1]


def return_time(af: AbelFunction, m: PMMap, x: float) -> int:
    """First-return time to [a,1]; tau(a) = 1 by convention."""
    if not m.a <= x <= 1:
        raise ValueError(f"return time needs x in [a, 1], got {x!r}")
    if x == m.a:
        return 1
    return _first_return(af, m, x)[0]


def branch_point(af: AbelFunction, z, n, force_abel: bool = False) -> BranchPoint:
    """f_b^{-n}(z) and its z-derivative, depth n real or complex.

    Non-negative integer depths at real z step an exact backward Newton
    orbit; anything else goes through A^{-1}(A(z) + n), the only analytic
    continuation available. force_abel sends integer depths through the
    Abel route too (route-consistency diagnostics).
    """
    m = af.expansion.map
    z_real = not (np.iscomplexobj(z) and complex(z).imag != 0)
    n_c = complex(n)
    if n_c.real < -1e-12:
        raise ValueError("branch_point needs Re n >= 0")
    is_int = n_c.imag == 0 and abs(n_c.real - round(n_c.real)) < 1e-12
    if is_int and z_real and not force_abel:
        k = int(round(n_c.real))
        if k == 0:
            return BranchPoint(float(np.real(z)), 1.0, 0)
        pt = float(np.real(z))
        d = 1.0
        for _ in range(k):
            pt = eval_fb_inverse(m, pt)
            d /= eval_fb_deriv(m, pt)
        return BranchPoint(pt, d, k)
    Az = eval_A(af, z)
    pt = eval_A_inverse(af, Az + n_c)
    d = eval_A_prime(af, z) / eval_A_prime(af, pt)
    return BranchPoint(pt, d, n)


def summand_r(Q, af: AbelFunction, n, z):
    """n-th orbit summand r[Q](n; z) = Q(f_b^{-n}(z), (f_b^{-n})'(z), n)."""
    bp = branch_point(af, z, n)
    q = getattr(Q, "eval", Q)
    return q(bp.point, bp.deriv, bp.index)


def backward_orbit(af: AbelFunction, z, n_max: int):
    """Vectorized integer-depth branch points for all n = 0..n_max.

    Returns (points, derivs) of shape (n_max+1,) + z.shape, points[n] =
    f_b^{-n}(z). Bulk form of branch_point for real z arrays; one Newton
    solve per depth for the whole batch.
    """
    m = af.expansion.map
    z = np.atleast_1d(np.asarray(z, dtype=float))
    pts = np.empty((n_max + 1,) + z.shape)
    ders = np.empty_like(pts)
    pts[0] = z
    ders[0] = 1.0
    for n in range(1, n_max + 1):
        pts[n] = _fb_inverse_real_vec(m, pts[n - 1])
        ders[n] = ders[n - 1] / eval_fb_deriv(m, pts[n])
    return pts, ders
