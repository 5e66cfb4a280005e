"""Infinite backward-orbit sums by the Euler-Maclaurin formula.

The central quantity is

    S[Q](z) = sum_{n>=0} Q(f_b^{-n}(z), (f_b^{-n})'(z), n),

the series whose terms ride the backward orbit of the bad branch.  Truncating
it costs O(n^{1-s}) accuracy, so instead the deep part of the sum is traded
for an integral: with r(n) denoting the n-th term extended to non-integer n
through the Abel function,

    S[Q](z) = sum_{n<n*} r(n) + r(n*)/2 + int_{n*}^inf r(n) dn
              - sum_{k=1}^{K} B_{2k}/(2k)! d^{2k-1}r(n*)  + remainder.

The split index n* is chosen deep enough that r is analytic in a disc of
radius rho around every n >= n*, which makes the odd derivatives computable
by Cauchy-integral trapezoid sums and drives the remainder down factorially
in K.  The tail integral is transported onto the orbit segment
(0, f_b^{-n*}(z)] and evaluated with a tanh-sinh rule, so the only truncation
anywhere is double-exponentially small.

Everything a summand is ever evaluated on is a triple (point, derivative,
index) with a weight.  ``EMStencil`` stores those triples once per base
point z; applying it to a new summand is a handful of vectorized calls, which
is what makes assembling whole Galerkin matrices from these sums affordable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import lru_cache
from typing import Callable, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.special import bernoulli as _bernoulli_numbers

from .abel import (
    AbelFunction,
    eval_A,
    eval_A_inverse,
    eval_A_prime,
    eval_expansion_deriv_scaled,
    _eval_A_prime_vec,
    _eval_A_inverse_series_vec,
    _eval_A_vec,
)
from .bounds import BoundConstants, em_error, lemma_constants
from .induced import summand_r
from .map_model import (
    MapDomainError,
    NonConvergenceError,
    PMMap,
    eval_fb_deriv,
    eval_fb_inverse,
    _fb_inverse_complex_vec,
    _fb_inverse_real_vec,
)

__all__ = [
    "Summand",
    "EMParams",
    "EMStencil",
    "constants_for",
    "n_star",
    "build_stencil",
    "build_stencils",
    "euler_maclaurin_sum",
    "derivative_in_n",
    "tail_integral",
]

# tanh-sinh truncation for the tail rule.  pi*sinh(6) ~ 634, and nodes whose
# folded weight would exceed e^600 are dropped; the products weight*summand
# these nodes would contribute sit below 2e-14 of the integral for any
# summand with beta_bar - delta > 1.05, while keeping every stored float
# representable.
_TS_CUTOFF = 6.0
_TS_LOGW_MAX = 600.0
_TAIL_BASE_POINTS = 64
_TAIL_MAX_DOUBLINGS = 3


@dataclass(frozen=True)
class Summand:
    """A term generator Q(x, d, n) for backward-orbit sums.

    eval must accept numpy arrays for all three slots and broadcast; it is
    called on real triples for the head of the sum and on complex ones for
    the derivative contour, so it has to be written as an analytic formula
    (no abs, real parts, or branch cuts on the orbit region).

    decay, when present, is (Qbar, beta, gamma, delta) asserting
    |Q(x,d,n)| <= Qbar |x|^beta |d|^gamma n^delta.  It feeds the a-priori
    remainder bound; without it error estimates fall back to the size of
    the first neglected correction term.
    """

    eval: Callable
    decay: Optional[Tuple[float, float, float, float]] = None


@dataclass(frozen=True)
class EMParams:
    """Knobs for the Euler-Maclaurin evaluation.

    rho is the analyticity radius in the index variable that n* is chosen
    for; K the number of Bernoulli corrections (default round(pi*rho - 1/2),
    the factorial-vs-power sweet spot); quad_points the node count of the
    derivative contour; deriv_mode picks how d^p r(n*) is computed.
    """

    rho: float = 4.0
    K: Optional[int] = None
    quad_points: int = 64
    deriv_mode: str = "cauchy_contour"

    def __post_init__(self):
        if not (self.rho > 0 and math.isfinite(self.rho)):
            raise ValueError("rho must be positive and finite")
        if self.quad_points < 8:
            raise ValueError("need at least 8 contour points")
        if self.deriv_mode not in ("cauchy_contour", "finite_difference"):
            raise ValueError(f"unknown deriv_mode {self.deriv_mode!r}")
        if self.K is None:
            resolvable = (self.quad_points // 2 - 1) // 2
            object.__setattr__(self, "K", max(1, min(
                round(math.pi * self.rho - 0.5), resolvable)))
        if not (0 <= self.K and 2 * self.K + 1 <= self.quad_points // 2):
            raise ValueError("2K+1 must stay below quad_points/2")


_BC_CACHE: dict = {}


def constants_for(m: PMMap) -> BoundConstants:
    """Per-map bound constants, computed once and memoized on identity."""
    hit = _BC_CACHE.get(id(m))
    if hit is not None and hit[0] is m:
        return hit[1]
    bc = lemma_constants(m)
    _BC_CACHE[id(m)] = (m, bc)
    return bc


def _deep_threshold(bc: BoundConstants, rho: float) -> float:
    # entry condition for the analyticity region, in the 1/z-hat coordinate
    return 1.0 / bc.Z + 2.0 * bc.hhat1 + float(rho)


def _walk_cap(bc: BoundConstants, thresh: float) -> int:
    # Re(1/zhat) grows by at least (1-aleph) hhat1 per backward step
    return int(math.ceil(thresh / ((1.0 - bc.aleph) * bc.hhat1))) + 64


def n_star(af: AbelFunction, bc: BoundConstants, z, rho: float) -> int:
    """Smallest n with Re(f_b^{-n}(z)^{-alpha}) >= 1/Z + 2 hhat1 + rho.

    From that depth on, every later index sits a full rho inside the region
    where r(n) extends analytically, which is what the derivative contour
    and the remainder bound both assume.
    """
    m = af.expansion.map
    thresh = _deep_threshold(bc, rho)
    is_complex = np.iscomplexobj(z) and complex(z).imag != 0
    y = complex(z) if is_complex else float(np.real(z))
    if not is_complex and not 0 < y <= 1:
        raise MapDomainError(f"base point must lie in (0,1]; got {y!r}")
    cap = _walk_cap(bc, thresh)
    for n in range(cap + 1):
        zhat = complex(y) ** m.alpha
        if (1.0 / zhat).real >= thresh:
            return n
        y = eval_fb_inverse(m, y)
    raise NonConvergenceError(
        f"backward orbit did not reach the deep region in {cap} steps")


@lru_cache(maxsize=8)
def _de_rule(n_points: int) -> Tuple[np.ndarray, np.ndarray]:
    """Tanh-sinh rule for the half-line substitution n = n* + c(1-u)/u.

    Returns (ratio, w_fold) with ratio = (1-u)/u and w_fold = w/u^2, both
    evaluated in closed form: with u = 1/(1 + e^{-2s}) the ratio is
    exactly e^{-2s} and the folded weight is exactly h pi cosh(t) e^{-2s}.
    Forming u first and dividing would saturate around u ~ 1e-17 (where
    1 + tanh(s) rounds to zero) and lose all relative accuracy below
    u ~ 1e-8; slowly decaying summands carry real mass well past both.
    Nodes whose folded weight exceeds e^600 are dropped: the summand
    decay assumed by the caller makes their contribution negligible long
    before the weight itself can overflow downstream.
    """
    t = np.linspace(-_TS_CUTOFF, _TS_CUTOFF, n_points)
    h = t[1] - t[0]
    s = 0.5 * math.pi * np.sinh(t)
    log_wf = math.log(h * math.pi) + np.log(np.cosh(t)) - 2.0 * s
    keep = log_wf <= _TS_LOGW_MAX
    with np.errstate(under="ignore"):
        ratio = np.exp(-2.0 * s[keep])
        w_fold = np.exp(log_wf[keep])
    ratio.flags.writeable = False
    w_fold.flags.writeable = False
    return ratio, w_fold


def _weighted_sum(q: Callable, x, d, n, w=None):
    """sum(w * q(x,d,n)) that tolerates scalar-returning summands."""
    v = np.asarray(q(x, d, n))
    if v.shape != np.shape(x):
        v = np.broadcast_to(v, np.shape(x))
    return (v * w).sum() if w is not None else v.sum()


def _folded_tail_sum(q: Callable, gamma: float, x, logd, d, n, w):
    """Tail band for a d-homogeneous summand: sum of (w d^gamma) q(x, 1, n).

    Q(x,d,n) = d^gamma Q(x,1,n) lets the weight and the chain derivative be
    combined in log space.  That matters because d ~ n^{-(1+alpha)/alpha}
    underflows near n ~ 1e143 while slowly decaying summands (delta close
    to beta_bar - 1) still carry integrable mass far beyond, where only the
    product w d^gamma is representable.  Healthy nodes take the direct
    product so the bulk of the band costs no exp/log round trip.
    """
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        f = np.where(d > 1e-280, w * d**gamma, np.exp(np.log(w) + gamma * logd))
        v = np.asarray(q(x, np.ones_like(d), n))
        if v.shape != np.shape(x):
            v = np.broadcast_to(v, np.shape(x))
        return (v * f).sum()


def _orbit_points(af: AbelFunction, y_flat: np.ndarray):
    """(x, zhat, zhat^2 E'(zhat), underflow mask) for deep Abel values y = A(x).

    A'(x) itself is deliberately never formed here: it overflows the double
    range long before the chain weights A'(z)/A'(x) stop carrying real mass,
    so callers assemble those weights from the scaled pieces via
    _chain_weights.  At extreme depth x = zhat^{1/alpha} underflows to zero;
    such nodes are flagged and parked at x = 1 to keep downstream
    arithmetic NaN-free.
    """
    m = af.expansion.map
    zh = _eval_A_inverse_series_vec(af, y_flat)
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        x = zh ** (1.0 / m.alpha)
        bad = (x == 0.0) | ~np.isfinite(x)
        if bad.any():
            x = np.where(bad, 1.0, x)
        bw = eval_expansion_deriv_scaled(af.expansion, zh)
    return x, zh, bw, bad


def _chain_weights(af: AbelFunction, a_prime_z, z, x, zh, bw, bad):
    """Chain weights A'(z)/A'(x) at deep orbit points, from scaled pieces.

    With B(w) = w^2 E'(w), bounded near zero, the derivative factors as
    A'(x) = B(zh) alpha / (zh x).  While A'(z) is representable the weight
    is a_prime_z * zh * x / (alpha B(zh)); at bases so deep that A'(z)
    itself overflows it is rebuilt from same-scale ratios
    (B(zh_z)/B(zh)) (zh/zh_z) (x/z), every factor of which stays inside
    the double range until the weight is a true zero.  Flagged nodes get
    weight exactly zero.

    Returns (d, log|d|).  The log channel is exact arithmetic on the logs
    of the scaled pieces, so it stays finite far past the depth where d
    itself underflows; d-homogeneous summands keep their tail mass by
    pairing it with the log of the quadrature weight.  Flagged nodes get
    -inf there.
    """
    m = af.expansion.map
    with np.errstate(over="ignore", under="ignore", divide="ignore",
                     invalid="ignore"):
        base = (np.log(np.abs(zh)) + np.log(np.abs(x))
                - math.log(m.alpha) - np.log(np.abs(bw)))
        if np.isfinite(a_prime_z):
            d = a_prime_z * zh * x / (m.alpha * bw)
            logd = math.log(abs(a_prime_z)) + base
        else:
            zh_b = complex(z) ** m.alpha
            bw_b = eval_expansion_deriv_scaled(af.expansion, zh_b)
            d = (bw_b / bw) * (zh / zh_b) * (x / complex(z))
            logd = (base + math.log(m.alpha) + math.log(abs(bw_b))
                    - math.log(abs(zh_b)) - math.log(abs(complex(z))))
    if bad.any():
        d = np.where(bad, 0.0, d)
        logd = np.where(bad, -np.inf, logd)
    return d, np.real(logd)


@dataclass
class EMStencil:
    """Evaluation plan for S[Q] at one base point.

    Rows come in four bands: the head indices 0..n*-1 at unit weight, the
    junction index n* at weight 1/2, the tail-integral nodes with their
    quadrature weights folded together with the substitution Jacobian, and
    the derivative-contour nodes.  The contour band is kept separate from a
    single flat weight vector because the Bernoulli weights depend on K and
    the error diagnostics want the raw contour values.
    """

    z: complex
    n_star: int
    rho: float
    K: int
    r_c: float
    a_z: complex
    a_prime_z: complex
    zhat_mid_abs: float
    x_head: np.ndarray
    d_head: np.ndarray
    n_head: np.ndarray
    x_mid: complex
    d_mid: complex
    x_tail: np.ndarray
    d_tail: np.ndarray
    n_tail: np.ndarray
    w_tail: np.ndarray
    x_cont: np.ndarray
    d_cont: np.ndarray
    n_cont: np.ndarray
    theta: np.ndarray
    bern: np.ndarray = field(repr=False)
    # log|d| on the tail band, real base points only (None for complex bases)
    logd_tail: Optional[np.ndarray] = None

    def contour_values(self, Q) -> np.ndarray:
        q = getattr(Q, "eval", Q)
        v = np.asarray(q(self.x_cont, self.d_cont, self.n_cont), dtype=complex)
        if v.shape != self.theta.shape:
            v = np.broadcast_to(v, self.theta.shape)
        return v

    def derivative(self, rvals: np.ndarray, order: int) -> complex:
        """d^order r at n*, by the trapezoid Cauchy integral on the contour."""
        phase = np.exp(-1j * order * self.theta)
        return math.factorial(order) * (rvals * phase).mean() / self.r_c**order

    def _correction(self, rvals: np.ndarray, K: int) -> complex:
        tot = 0.0 + 0.0j
        for k in range(1, K + 1):
            tot += (self.bern[2 * k] / math.factorial(2 * k)
                    * self.derivative(rvals, 2 * k - 1))
        return tot

    def apply(self, Q) -> Tuple[complex, float]:
        """(S[Q], first neglected correction magnitude)."""
        q = getattr(Q, "eval", Q)
        head = _weighted_sum(q, self.x_head, self.d_head, self.n_head)
        mid = 0.5 * complex(np.asarray(q(self.x_mid, self.d_mid,
                                         float(self.n_star))).item())
        decay = getattr(Q, "decay", None)
        if decay is not None and self.logd_tail is not None:
            tail = _folded_tail_sum(q, float(decay[2]), self.x_tail,
                                    self.logd_tail, self.d_tail,
                                    self.n_tail, self.w_tail)
        else:
            with np.errstate(over="ignore", under="ignore"):
                tail = _weighted_sum(q, self.x_tail, self.d_tail, self.n_tail,
                                     self.w_tail)
        rvals = self.contour_values(Q)
        corr = self._correction(rvals, self.K)
        nxt = (self.bern[2 * self.K + 2] / math.factorial(2 * self.K + 2)
               * self.derivative(rvals, 2 * self.K + 1))
        return head + mid + tail - corr, abs(nxt)

    def flatten(self) -> Tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
        """One (x, d, n, w) quadruple with sum(w * Q(x,d,n)) = S[Q].

        The Bernoulli corrections are folded into per-node contour weights,
        so a matrix assembly can treat every stencil as a plain weighted
        point cloud.
        """
        M = self.theta.size
        cw = np.zeros(M, dtype=complex)
        for k in range(1, self.K + 1):
            p = 2 * k - 1
            cw -= (self.bern[2 * k] / math.factorial(2 * k)
                   * math.factorial(p) / (M * self.r_c**p)
                   * np.exp(-1j * p * self.theta))
        x = np.concatenate([self.x_head, [self.x_mid], self.x_tail, self.x_cont])
        d = np.concatenate([self.d_head, [self.d_mid], self.d_tail, self.d_cont])
        n = np.concatenate([self.n_head, [float(self.n_star)], self.n_tail,
                            self.n_cont])
        w = np.concatenate([np.ones(self.x_head.size), [0.5],
                            self.w_tail.astype(complex), cw])
        return x, d, n, w


def build_stencils(af: AbelFunction, zs, params: Optional[EMParams] = None,
                   bc: Optional[BoundConstants] = None) -> List[EMStencil]:
    """Stencils for a whole batch of base points, sharing the vector walks.

    All points are driven backward together, the Abel data on the tail and
    contour nodes is computed in two flat vectorized passes, and the result
    is sliced into one EMStencil per input point.
    """
    p = params if params is not None else EMParams()
    m = af.expansion.map
    if bc is None:
        bc = constants_for(m)
    z_arr = np.atleast_1d(np.asarray(zs))
    complex_in = np.iscomplexobj(z_arr)
    dtype = complex if complex_in else float
    z_arr = z_arr.astype(dtype).ravel()
    if not complex_in and ((z_arr <= 0).any() or (z_arr > 1).any()):
        raise MapDomainError("base points must lie in (0,1]")
    L = z_arr.size

    thresh = _deep_threshold(bc, p.rho)
    cap = _walk_cap(bc, thresh)
    pts = np.empty((cap + 2, L), dtype=dtype)
    ders = np.empty((cap + 2, L), dtype=dtype)
    pts[0] = z_arr
    ders[0] = 1.0
    ns = np.full(L, -1, dtype=int)
    y = z_arr.copy()
    d = np.ones(L, dtype=dtype)
    for n in range(cap + 1):
        zhat = y.astype(complex) ** m.alpha
        ready = (1.0 / zhat).real >= thresh
        ns[ready & (ns < 0)] = n
        active = ns < 0
        if not active.any():
            break
        sub = y[active]
        if complex_in:
            stepped = _fb_inverse_complex_vec(m, sub, seed=sub)
        else:
            stepped = _fb_inverse_real_vec(m, sub, seed=sub)
        y[active] = stepped
        d[active] = d[active] / eval_fb_deriv(m, stepped)
        pts[n + 1, active] = stepped
        ders[n + 1, active] = d[active]
    else:
        raise NonConvergenceError(
            f"backward orbit did not reach the deep region in {cap} steps")

    a_z = _eval_A_vec(af, z_arr)
    a_prime_z = _eval_A_prime_vec(af, z_arr)

    # tail band: n = n* + c (1-u)/u on tanh-sinh nodes u.  The continued
    # summand decays on the index scale n* + A(z) (its singularity sits at
    # n = -A(z)), so that is the substitution scale that keeps the
    # transformed integrand resolution-free on (0,1].
    ratio, w_fold = _de_rule(_TAIL_BASE_POINTS * 2**_TAIL_MAX_DOUBLINGS)
    c_scale = np.maximum(ns + np.real(a_z), p.rho)
    with np.errstate(over="ignore"):
        n_tail = ns[:, None] + c_scale[:, None] * ratio[None, :]
        w_tail = w_fold[None, :] * c_scale[:, None]
    # at extreme base-point depth the substitution scale is itself huge and
    # the deepest nodes overflow; their true contribution is below any
    # tolerance, so park them at a finite index with zero weight
    tail_ok = np.isfinite(n_tail) & np.isfinite(w_tail)
    if not tail_ok.all():
        n_tail = np.where(tail_ok, n_tail, 1.0)
        w_tail = np.where(tail_ok, w_tail, 0.0)
    y_tail = np.asarray(a_z)[:, None] + n_tail

    # contour band: n = n* + r_c e^{i theta}
    r_c = min(p.rho / 2.0, 1.0)
    theta = 2.0 * math.pi * np.arange(p.quad_points) / p.quad_points
    n_cont = ns[:, None] + r_c * np.exp(1j * theta)[None, :]
    y_cont = np.asarray(a_z)[:, None] + n_cont

    x_tail_f, zh_tail_f, bw_tail_f, bad_tail_f = _orbit_points(af, y_tail.ravel())
    x_cont_f, zh_cont_f, bw_cont_f, bad_cont_f = _orbit_points(af, y_cont.ravel())
    # flagged nodes (x underflowed to zero) sit where the chain weight is a
    # true zero at double precision: _chain_weights pins d = 0 there, so the
    # contour corrections they would carry vanish, and the tail weights are
    # zeroed as well
    x_tail_m = x_tail_f.reshape(L, -1)
    zh_tail_m = zh_tail_f.reshape(L, -1)
    bw_tail_m = bw_tail_f.reshape(L, -1)
    bad_tail_m = bad_tail_f.reshape(L, -1)
    w_tail[bad_tail_m] = 0.0
    x_cont_m = x_cont_f.reshape(L, -1)
    zh_cont_m = zh_cont_f.reshape(L, -1)
    bw_cont_m = bw_cont_f.reshape(L, -1)
    bad_cont_m = bad_cont_f.reshape(L, -1)

    bern = _bernoulli_numbers(2 * p.K + 2)
    apz = np.asarray(a_prime_z)
    out: List[EMStencil] = []
    for i in range(L):
        k = int(ns[i])
        d_tail_i, logd_tail_i = _chain_weights(
            af, apz[i], z_arr[i], x_tail_m[i],
            zh_tail_m[i], bw_tail_m[i], bad_tail_m[i])
        d_cont_i, _ = _chain_weights(
            af, apz[i], z_arr[i], x_cont_m[i],
            zh_cont_m[i], bw_cont_m[i], bad_cont_m[i])
        x_tail_i = x_tail_m[i]
        if not complex_in:
            x_tail_i = x_tail_i.real
            d_tail_i = d_tail_i.real
        out.append(EMStencil(
            z=z_arr[i],
            n_star=k,
            rho=p.rho,
            K=p.K,
            r_c=r_c,
            a_z=np.asarray(a_z)[i],
            a_prime_z=apz[i],
            zhat_mid_abs=float(abs(complex(pts[k, i]) ** m.alpha)),
            x_head=pts[:k, i].copy(),
            d_head=ders[:k, i].copy(),
            n_head=np.arange(k, dtype=float),
            x_mid=pts[k, i],
            d_mid=ders[k, i],
            x_tail=x_tail_i,
            d_tail=d_tail_i,
            n_tail=n_tail[i],
            w_tail=w_tail[i],
            x_cont=x_cont_m[i],
            d_cont=d_cont_i,
            n_cont=n_cont[i],
            theta=theta,
            bern=bern,
            logd_tail=None if complex_in else logd_tail_i,
        ))
    return out


def build_stencil(af: AbelFunction, z, params: Optional[EMParams] = None,
                  bc: Optional[BoundConstants] = None) -> EMStencil:
    return build_stencils(af, [z], params, bc)[0]


def _beta_bar(decay, alpha: float) -> float:
    _, beta, gamma, delta = decay
    return (beta + (1.0 + alpha) * gamma) / alpha


def euler_maclaurin_sum(Q, af: AbelFunction, z,
                        p: Optional[EMParams] = None) -> Tuple[complex, float]:
    """Evaluate S[Q](z) = sum_{n>=0} Q(f_b^{-n} z, (f_b^{-n})' z, n).

    Returns (value, err_estimate).  With decay metadata on the summand the
    estimate is the a-priori Euler-Maclaurin remainder bound; without it,
    the magnitude of the first neglected Bernoulli correction.
    """
    p = p if p is not None else EMParams()
    m = af.expansion.map
    bc = constants_for(m)
    decay = getattr(Q, "decay", None)
    if decay is not None:
        _, _, _, delta = decay
        if _beta_bar(decay, m.alpha) <= 1.0 + delta:
            raise ValueError("summand decays too slowly for a summable series")
    st = build_stencil(af, z, p, bc)
    value, nxt = st.apply(Q)
    if decay is not None:
        err = em_error(bc, decay, abs(st.a_prime_z), st.n_star, p.rho, p.K,
                       znstar_abs=st.zhat_mid_abs)
    else:
        err = nxt
    return value, float(err)


_FD_WEIGHTS = {
    1: (1, [-0.5, 0.0, 0.5]),
    2: (1, [1.0, -2.0, 1.0]),
    3: (2, [-0.5, 1.0, 0.0, -1.0, 0.5]),
    4: (2, [1.0, -4.0, 6.0, -4.0, 1.0]),
    5: (3, [-0.5, 2.0, -2.5, 0.0, 2.5, -2.0, 0.5]),
}


def derivative_in_n(Q, af: AbelFunction, n0, z, order: int,
                    p: Optional[EMParams] = None):
    """d^order/dn^order of r(n) = Q(f_b^{-n} z, ...) at n = n0.

    cauchy_contour evaluates r on a circle of radius min(rho/2, 1) around n0
    and reads the derivative off a trapezoid Cauchy integral, which is
    spectrally accurate when the disc stays inside the analyticity region.
    finite_difference uses central stencils with step 1e-2 and supports
    orders up to 5 only.
    """
    p = p if p is not None else EMParams()
    order = int(order)
    if order < 1:
        raise ValueError("order must be a positive integer")
    q = getattr(Q, "eval", Q)
    n0 = float(n0)
    if n0 < 0:
        raise ValueError("n0 must be nonnegative")

    if p.deriv_mode == "finite_difference":
        if order > 5:
            raise ValueError("finite differences support orders <= 5")
        reach, coeffs = _FD_WEIGHTS[order]
        h = 1e-2
        tot = 0.0
        for j, c in enumerate(coeffs):
            if c == 0.0:
                continue
            tot += c * summand_r(Q, af, n0 + (j - reach) * h, z)
        return tot / h**order

    r_c = min(p.rho / 2.0, 1.0)
    if 0 < n0 < r_c:
        r_c = 0.9 * n0  # keep the contour inside Re n > 0
    if 2 * order >= p.quad_points:
        raise ValueError("order too high for the contour resolution")
    theta = 2.0 * math.pi * np.arange(p.quad_points) / p.quad_points
    nodes = n0 + r_c * np.exp(1j * theta)
    a_z = eval_A(af, z)
    ap_z = eval_A_prime(af, z)
    vals = np.empty(p.quad_points, dtype=complex)
    for j, n_j in enumerate(nodes):
        x_j = eval_A_inverse(af, a_z + n_j)
        d_j = ap_z / eval_A_prime(af, x_j)
        vals[j] = q(x_j, d_j, n_j)
    out = math.factorial(order) * (vals * np.exp(-1j * order * theta)).mean() \
        / r_c**order
    real_in = not (np.iscomplexobj(z) and complex(z).imag != 0)
    return out.real if real_in and abs(out.imag) <= 1e-8 * (1 + abs(out)) else out


def _tail_value(Q, af: AbelFunction, z, a_z, a_prime_z, ns: float, c: float,
                n_points: int, real_in: bool):
    q = getattr(Q, "eval", Q)
    decay = getattr(Q, "decay", None)
    ratio, w_fold = _de_rule(n_points)
    n_t = ns + c * ratio
    x, zh, bw, bad = _orbit_points(af, a_z + n_t)
    d, logd = _chain_weights(af, a_prime_z, z, x, zh, bw, bad)
    with np.errstate(over="ignore", under="ignore", invalid="ignore"):
        weights = w_fold * c
        if bad.any():
            weights = np.where(bad, 0.0, weights)
        if real_in:
            x, d = x.real, d.real
            if decay is not None:
                return _folded_tail_sum(q, float(decay[2]), x, logd, d,
                                        n_t, weights)
        vals = np.asarray(q(x, d, n_t))
        if vals.shape != ratio.shape:
            vals = np.broadcast_to(vals, ratio.shape).copy()
        total = (vals * weights).sum()
    return total


def tail_integral(Q, af: AbelFunction, z, n_star: int,
                  quad_points: int = _TAIL_BASE_POINTS, tol: float = 1e-12):
    """int_{n*}^inf r(n) dn, as a tanh-sinh integral on (0, f_b^{-n*}(z)].

    The index substitution n = n* + c(1-u)/u carries the half-line onto the
    unit interval while its image in the first slot of Q runs over the
    backward-orbit segment; the endpoint singularity that makes plain
    truncation in n slowly convergent becomes an algebraic one that the
    double-exponential rule absorbs.  The node count is doubled until two
    consecutive levels agree, up to three doublings.
    """
    ns = int(n_star)
    if ns < 0:
        raise ValueError("n_star must be nonnegative")
    real_in = not (np.iscomplexobj(z) and complex(z).imag != 0)
    a_z = eval_A(af, z)
    a_prime_z = eval_A_prime(af, z)
    c = max(float(ns) + float(np.real(a_z)), 1.0)
    prev = None
    for lvl in range(_TAIL_MAX_DOUBLINGS + 1):
        cur = _tail_value(Q, af, z, a_z, a_prime_z, float(ns), c,
                          quad_points * 2**lvl, real_in)
        if prev is not None and abs(cur - prev) <= max(tol, tol * abs(cur)):
            return cur
        prev = cur
    raise NonConvergenceError(
        "tail integral did not settle under quadrature-node doubling")
