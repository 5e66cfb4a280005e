"""Statistics of the full intermittent map from induced-map spectral data.

Everything here reduces to weighted sums over backward orbits of the
neutral branch against the induced invariant density: expectations of
return-time functions, pointwise values of the full invariant density,
averages of observables over it, and (for alpha < 1/2) diffusion
coefficients through an induced Green-Kubo decomposition. The orbit sums
are evaluated with the Euler-Maclaurin stencils, so accuracy is spectral
in every discretisation parameter.

Conventions: the n-th backward branch carries return time tau = n + 1 (a
point that makes n neutral-branch steps after leaving the inducing set
returns on step n + 1), and the pointwise full density is normalised so
its restriction to [a,1] is the induced probability density; dividing by
the mean return time renormalises it to a probability on [0,1] when
alpha < 1.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from functools import cached_property, lru_cache
from typing import Callable, Optional

import numpy as np
from scipy.special import bernoulli, expit, zeta

from .abel import AbelFunction, build_abel, eval_A, eval_A_inverse
from .bounds import em_error
from .cheb_galerkin import (
    ChebBasis,
    ChebSolution,
    OperatorMatrix,
    build_matrix,
    good_transfer,
    solution_apply,
    solve_acim,
)
from .induced import return_time
from .map_model import (
    MapDomainError,
    NonConvergenceError,
    PMMap,
    _fb_inverse_real_vec,
    eval_fb,
    eval_fb_deriv,
    eval_fg,
)
from .orbit_sum import EMParams, Summand, build_stencils, constants_for

__all__ = [
    "Observable",
    "StatisticsContext",
    "build_context",
    "return_time_expectation",
    "full_density",
    "observable_average",
    "excursion_sum",
    "diffusion_coefficient",
]


def _on_array(fn: Callable) -> Callable:
    """Wrap a possibly scalar-only callable so it maps arrays elementwise."""

    def call(x):
        arr = np.asarray(x)
        try:
            out = np.asarray(fn(arr))
            if out.shape == arr.shape:
                return out
        except (TypeError, ValueError):
            pass
        flat = [fn(t) for t in arr.ravel()]
        return np.asarray(flat).reshape(arr.shape)

    return call


@dataclass(frozen=True)
class Observable:
    """A function of the phase point, analytic near [0,1], real on it."""

    eval: Callable
    label: str = ""

    def __post_init__(self):
        probe = np.asarray([self.eval(t) for t in (0.0, 0.31, 0.5, 0.77, 1.0)])
        if not np.all(np.isfinite(probe)):
            raise ValueError("observable must be finite on [0,1]")
        if np.iscomplexobj(probe):
            scale = float(np.abs(probe).max()) + 1.0
            if float(np.abs(probe.imag).max()) > 1e-12 * scale:
                raise ValueError("observable must be real-valued on [0,1]")


@dataclass(frozen=True)
class StatisticsContext:
    """Shared spectral data: the map, its Abel function, the induced acim
    with the Galerkin matrix it solves, and the orbit-sum parameters."""

    map: PMMap
    af: AbelFunction
    acim: ChebSolution
    matrix: OperatorMatrix
    em: EMParams

    @cached_property
    def mean_return_time(self) -> float:
        return return_time_expectation(self, lambda t: t, degree=1.0)

    @cached_property
    def _acim_summand(self) -> Summand:
        qbar = _sup_on_unit(lambda x: good_transfer(self.map, self.acim, x))
        return Summand(
            eval=lambda x, d, n: d * good_transfer(self.map, self.acim, x),
            decay=(qbar, 0.0, 1.0, 0.0),
        )


def build_context(m: PMMap, af: Optional[AbelFunction] = None, N: int = 128,
                  em: Optional[EMParams] = None,
                  abel_order: int = 40) -> StatisticsContext:
    af = af if af is not None else build_abel(m, N=abel_order)
    em = em if em is not None else EMParams()
    matrix = build_matrix(m, af, N, em)
    return StatisticsContext(map=m, af=af, acim=solve_acim(matrix),
                             matrix=matrix, em=em)


def _sup_on_unit(fn, modes: int = 96) -> float:
    # sup over [0,1] via the coefficient l1 norm of a resolved expansion
    unit = ChebBasis(0.0, 1.0, modes)
    c = unit.coeffs_from_values(np.asarray(fn(unit.nodes), dtype=float))
    return float(np.abs(c).sum())


def _batch_values(ctx: StatisticsContext, summand: Summand, zs: np.ndarray,
                  params: Optional[EMParams] = None):
    """Orbit sums at many real base points, with per-point error estimates."""
    p = params if params is not None else ctx.em
    bc = constants_for(ctx.map)
    sts = build_stencils(ctx.af, np.asarray(zs, dtype=float), p, bc)
    vals = np.empty(len(sts))
    errs = np.empty(len(sts))
    for i, st in enumerate(sts):
        v, nxt = st.apply(summand)
        vals[i] = float(np.real(v))
        if summand.decay is not None:
            bound = em_error(bc, summand.decay, abs(st.a_prime_z), st.n_star,
                             p.rho, p.K, znstar_abs=st.zhat_mid_abs)
            # the a-priori bound is vacuous at very deep base points; the
            # first neglected correction is the sane estimate there
            errs[i] = min(bound, nxt) if np.isfinite(bound) else nxt
        else:
            errs[i] = nxt
    return vals, errs


def _check_summable(alpha: float, delta: float, what: str):
    beta_bar = (1.0 + alpha) / alpha  # beta = 0, gamma = 1 throughout
    if beta_bar <= 1.0 + delta:
        raise ValueError(
            f"{what} grows like n^{delta:.3g} but the orbit weights only "
            f"decay like n^-{beta_bar:.3g}; the series is not summable")


def _psi_degree(psi) -> float:
    ns = np.array([32.0, 128.0, 512.0, 2048.0, 8192.0])
    v = np.abs(np.asarray([complex(psi(t + 1.0)) for t in ns]))
    if v.max() <= 1e-300:
        return 0.0
    v = np.maximum(v, 1e-300)
    slopes = np.log(v[1:] / v[:-1]) / np.log(ns[1:] / ns[:-1])
    return float(max(0.0, float(slopes.max())))


def _psi_envelope(psi, degree: float) -> float:
    ns = 2.0 ** np.arange(0, 15)
    v = np.abs(np.asarray([complex(psi(t + 1.0)) for t in ns]))
    return 1.25 * float((v / ns**degree).max())


def return_time_expectation(ctx: StatisticsContext, psi,
                            degree: Optional[float] = None,
                            full_output: bool = False):
    """Expectation of psi(tau) under the induced invariant density.

    psi must extend analytically in its argument (the orbit index is taken
    complex on the correction contours). Its polynomial growth degree is
    estimated when not given; finiteness requires (1+alpha)/alpha > 1 +
    degree, so psi(tau) = tau is admissible exactly for alpha < 1.
    """
    alpha = ctx.map.alpha
    deg = _psi_degree(psi) if degree is None else float(degree)
    _check_summable(alpha, deg, "the return-time weight")
    psi_v = _on_array(psi)
    base = ctx._acim_summand
    qbar = base.decay[0] * _psi_envelope(psi, deg) * 2.0**deg
    summand = Summand(
        eval=lambda x, d, n: psi_v(n + 1.0) * base.eval(x, d, n),
        decay=(qbar, 0.0, 1.0, deg),
    )

    a = ctx.map.a
    prev = None
    for modes in (64, 128, 256):
        cbasis = ChebBasis(a, 1.0, modes)
        vals, errs = _batch_values(ctx, summand, cbasis.nodes)
        coeffs = cbasis.coeffs_from_values(vals)
        value = float(coeffs @ cbasis.mode_integrals())
        peak = float(np.abs(coeffs).max())
        tail = float(np.abs(coeffs[-max(1, coeffs.size // 4):]).max())
        resolved = peak == 0.0 or tail <= 1e-11 * peak
        if resolved or (prev is not None and abs(value - prev) <= 1e-12 * (1 + abs(value))):
            err = (1.0 - a) * float(errs.max()) + tail * (1.0 - a)
            return (value, err) if full_output else value
        prev = value
    raise NonConvergenceError(
        "return-time integrand did not resolve under mode doubling")


def full_density(ctx: StatisticsContext, x, normalized: bool = False,
                 full_output: bool = False):
    """The full map's invariant density at points of (0,1].

    Unnormalised values restrict to the induced probability density on
    [a,1] and blow up like x^-alpha at the neutral fixed point. With
    normalized=True (alpha < 1 only) the result integrates to one over
    [0,1]. Accepts scalars or arrays.
    """
    xs = np.atleast_1d(np.asarray(x, dtype=float))
    scalar = np.ndim(x) == 0
    if xs.size and ((xs <= 0.0).any() or (xs > 1.0).any()):
        raise MapDomainError("density points must lie in (0,1]")
    vals, errs = _batch_values(ctx, ctx._acim_summand, xs)
    if normalized:
        if ctx.map.alpha >= 1.0:
            raise ValueError(
                "the invariant measure is infinite for alpha >= 1 and cannot "
                "be normalised; use normalized=False for pointwise values")
        t = ctx.mean_return_time
        vals = vals / t
        errs = errs / t
    if scalar:
        return (float(vals[0]), float(errs[0])) if full_output else float(vals[0])
    return (vals, errs) if full_output else vals


@lru_cache(maxsize=8)
def _tanh_sinh_rule(n_points: int):
    # u via the logistic form and w = h pi cosh(t) u (1-u): both exact,
    # neither saturates the way 1 + tanh(s) does near the endpoints
    t = np.linspace(-4.2, 4.2, n_points)
    h = t[1] - t[0]
    s = 0.5 * np.pi * np.sinh(t)
    u = expit(2.0 * s)
    w = h * np.pi * np.cosh(t) * u * (1.0 - u)
    keep = (u > 0.0) & (u < 1.0) & (w > 1e-290)
    u, w = u[keep], w[keep]
    u.setflags(write=False)
    w.setflags(write=False)
    return u, w


def observable_average(ctx: StatisticsContext, obs: Observable,
                       normalized: bool = True, quad_points: int = 96,
                       tol: float = 1e-10, full_output: bool = False):
    """Integral of obs against the invariant density over (0,1].

    The substitution x = u^(2/(1-alpha)) flattens the x^-alpha endpoint
    blowup, and the flattened integrand is handled by a tanh-sinh rule
    whose node count doubles until two levels agree. For alpha >= 1 only
    the unnormalised integral can be attempted, and it converges only
    when obs decays suitably at 0.
    """
    alpha = ctx.map.alpha
    if normalized and alpha >= 1.0:
        raise ValueError(
            "averages cannot be normalised for alpha >= 1 (infinite measure); "
            "use normalized=False")
    f = _on_array(obs.eval)
    power = 2.0 / (1.0 - alpha) if alpha < 1.0 else 1.0
    prev = None
    err_prev = math.inf
    for level in range(3):
        u, w = _tanh_sinh_rule(quad_points * 2**level)
        xs = u**power
        keep = xs >= 1e-300
        xs, uu, ww = xs[keep], u[keep], w[keep]
        jac = power * uu ** (power - 1.0)
        rho, rho_err = full_density(ctx, xs, full_output=True)
        fx = np.asarray(f(xs), dtype=float)
        cur = float(np.sum(ww * jac * fx * rho))
        cur_err = float(np.sum(ww * jac * np.abs(fx) * rho_err))
        if prev is not None and abs(cur - prev) <= max(tol, tol * abs(cur)):
            err = abs(cur - prev) + cur_err
            if normalized:
                t = ctx.mean_return_time
                return ((cur / t, err / t) if full_output else cur / t)
            return (cur, err) if full_output else cur
        prev, err_prev = cur, cur_err
    raise NonConvergenceError(
        "observable average did not settle under quadrature-node doubling")


# ---------------------------------------------------------------------------
# induced observable and diffusion
# ---------------------------------------------------------------------------

_EXC_HEAD = 64  # directly summed terms at each end of a long excursion


def excursion_sum(ctx: StatisticsContext, fn, y: float,
                  direct_cap: int = 4096) -> float:
    """Birkhoff sum of fn over the excursion of y: sum_{j < tau(y)} fn(f^j y).

    Short excursions are summed directly. Long ones keep a block of terms
    at each end and treat the middle through the Abel coordinate, where
    the orbit point at index j is A^(-1)(A(x0) - j): the middle sum is an
    integral over j plus trapezoidal endpoint terms and Bernoulli
    corrections at both ends.
    """
    m, af = ctx.map, ctx.af
    f = _on_array(fn)
    if not m.a <= y <= 1.0:
        raise MapDomainError("excursions start from the inducing set [a,1]")
    tau = return_time(af, m, y)
    total = float(f(np.asarray([y]))[0])
    n = tau - 1
    if n == 0:
        return total
    x0 = eval_fg(m, y)
    if n <= max(direct_cap, 2 * _EXC_HEAD + 8):
        xs = np.empty(n)
        xs[0] = x0
        for j in range(1, n):
            xs[j] = eval_fb(m, xs[j - 1])
        return total + float(np.sum(f(xs)))

    a0 = float(np.real(eval_A(af, x0)))
    point = lambda j: eval_A_inverse(af, a0 - j)
    g = lambda j: float(f(np.asarray([point(float(j))]))[0])

    head = np.empty(_EXC_HEAD)
    head[0] = x0
    for j in range(1, _EXC_HEAD):
        head[j] = eval_fb(m, head[j - 1])
    total += float(np.sum(f(head)))
    lo, hi = _EXC_HEAD, n - 1 - _EXC_HEAD
    total += sum(g(j) for j in range(hi + 1, n))

    # middle block by Euler-Maclaurin between the two direct blocks
    panels, edge = [], float(lo)
    while edge < hi:
        nxt = min(2.0 * edge, float(hi))
        panels.append((edge, nxt))
        edge = nxt
    tn, tw = np.polynomial.legendre.leggauss(32)
    integral = 0.0
    for p_lo, p_hi in panels:
        js = 0.5 * (p_lo + p_hi) + 0.5 * (p_hi - p_lo) * tn
        vals = f(np.asarray([point(float(j)) for j in js]))
        integral += 0.5 * (p_hi - p_lo) * float(np.sum(tw * vals))
    total += integral + 0.5 * (g(lo) + g(hi))
    bern = bernoulli(8)
    d_lo = _index_derivs(g, float(lo))
    d_hi = _index_derivs(g, float(hi))
    for k in (1, 2, 3):
        total += bern[2 * k] / math.factorial(2 * k) * (d_hi[k - 1] - d_lo[k - 1])
    return total


def _index_derivs(g, j0: float, span: float = 3.0, pts: int = 13):
    """Odd derivatives of g at j0 from a local polynomial fit.

    g is analytic in the orbit index with singularities no closer than
    O(j0), so interpolation on a window of width 2*span converges
    geometrically and differentiating the interpolant is stable.
    """
    js = j0 + span * np.cos(np.linspace(0.0, np.pi, pts))
    vals = [g(j) for j in js]
    poly = np.polynomial.chebyshev.Chebyshev.fit(js, vals, deg=pts - 1)
    return [float(poly.deriv(k)(j0)) for k in (1, 3, 5)]


def _tail_fit(pieces: np.ndarray, s: float, lo: int, hi: int):
    """Extrapolate sum_{n > hi} pieces[n] from a C n^-s (1 + c1/n) fit."""
    n = np.arange(lo, hi + 1, dtype=float)
    design = np.column_stack([np.ones_like(n), 1.0 / n])
    scaled = pieces[lo:hi + 1] * n[:, None] ** s if pieces.ndim == 2 else \
        pieces[lo:hi + 1] * n**s
    coef, *_ = np.linalg.lstsq(design, scaled, rcond=None)
    return coef[0] * zeta(s, hi + 1) + coef[1] * zeta(s + 1, hi + 1)


def _branch_parts(m: PMMap):
    out = []
    for br in m.good_branches:
        sign = 1.0 if np.real(br.deriv(0.5)) > 0 else -1.0
        out.append((_on_array(br.eval), _on_array(br.deriv), sign))
    return out


def _walk_pieces(ctx: StatisticsContext, phi, lanes: np.ndarray, depth: int,
                 reduce_fn):
    """Drive lanes backward through the neutral branch, handing each
    return-time piece to reduce_fn.

    At step n the lanes hold x = f_b^(-n)(w), the chain derivative d of
    that inverse, and cum = sum of phi over the intermediate excursion
    points; the piece with tau = n+1 is reduce_fn(n, x, d, cum).
    """
    m = ctx.map
    x = np.asarray(lanes, dtype=float).copy()
    d = np.ones_like(x)
    cum = np.zeros_like(x)
    reduce_fn(0, x, d, cum)
    for n in range(1, depth + 1):
        x = _fb_inverse_real_vec(m, x, seed=x)
        d = d / eval_fb_deriv(m, x)
        cum = cum + phi(x)
        reduce_fn(n, x, d, cum)
    return x, d, cum


def _induced_quadratics(ctx: StatisticsContext, phi, weights, powers,
                        gauss_n: int = 64, depth: int = 4096):
    """Integrals over [a,1] of G(y) * Phi(y)^p for the induced observable
    Phi built from phi, one (G, p) pair per entry of (weights, powers).

    Each return-time piece maps analytically onto [a,1] through the deep
    preimage coordinate, so a fixed Gauss rule in that coordinate handles
    every piece at spectral accuracy; the piece series is truncated at
    depth and closed with a power-law tail fit.
    """
    m = ctx.map
    a = m.a
    tn, tw = np.polynomial.legendre.leggauss(gauss_n)
    w_nodes = 0.5 * (a + 1.0) + 0.5 * (1.0 - a) * tn
    gw = 0.5 * (1.0 - a) * tw
    parts = _branch_parts(m)
    weights = [(_on_array(g) if not isinstance(g, ChebSolution) else g)
               for g in weights]
    hist = np.zeros((len(weights), depth + 1))

    def reduce_fn(n, x, d, cum):
        fac = gw * d
        for v_eval, v_deriv, sign in parts:
            y = v_eval(x)
            lane = fac * (sign * v_deriv(x))
            base = phi(y) + cum
            for j, (g, p) in enumerate(zip(weights, powers)):
                gy = np.asarray(g(y), dtype=float)
                hist[j, n] = hist[j, n] + float(np.sum(lane * gy * base**p))

    _walk_pieces(ctx, phi, w_nodes, depth, reduce_fn)

    inv_alpha = 1.0 / m.alpha
    totals, errors = [], []
    for j, p in enumerate(powers):
        s = 1.0 + inv_alpha - p
        full = float(hist[j].sum()) + float(_tail_fit(hist[j], s, depth // 2, depth))
        half = float(hist[j, :depth // 2 + 1].sum()) + float(
            _tail_fit(hist[j], s, depth // 4, depth // 2))
        totals.append(full)
        errors.append(abs(full - half))
    return totals, errors


def _transfer_of_induced(ctx: StatisticsContext, phi, depth: int = 4096):
    """Node values of L(Phi * rho_ind) for the induced transfer operator L.

    Each preimage branch contributes the piece value of Phi at the pulled
    back point, so the same backward walk produces the whole sum; per-node
    tails are closed by the power-law fit.
    """
    m = ctx.map
    basis = ctx.matrix.basis
    nodes = basis.nodes
    parts = _branch_parts(m)
    acim = ctx.acim
    hist = np.zeros((depth + 1, nodes.size))

    def reduce_fn(n, x, d, cum):
        for v_eval, v_deriv, sign in parts:
            y = v_eval(x)
            hist[n] += d * (sign * v_deriv(x)) * np.asarray(acim(y)) * (phi(y) + cum)

    _walk_pieces(ctx, phi, nodes, depth, reduce_fn)
    s = 1.0 / m.alpha
    tails = _tail_fit(hist, s, depth // 2, depth)
    return hist.sum(axis=0) + tails


def diffusion_coefficient(ctx: StatisticsContext, obs: Observable,
                          depth: int = 4096, full_output: bool = False):
    """Variance growth rate of Birkhoff sums of obs, for alpha < 1/2.

    Green-Kubo on the induced system: with Phi the excursion sum of the
    centered observable, sigma^2 = (E[Phi^2] + 2 sum_k E[Phi Phi o F^k])
    divided by the mean return time. The correlation sum is a resolvent
    solve against the Galerkin matrix; both expectations integrate the
    piecewise-analytic Phi piece by piece.
    """
    m = ctx.map
    if m.alpha >= 0.5:
        raise ValueError(
            "diffusion coefficients require alpha < 1/2 (the return time "
            "must have a second moment)")
    abar = observable_average(ctx, obs)
    f = _on_array(obs.eval)
    phi = lambda x: np.asarray(f(x), dtype=float) - abar

    basis = ctx.matrix.basis
    g1_vals = _transfer_of_induced(ctx, phi, depth)
    g1 = ChebSolution(basis, basis.coeffs_from_values(g1_vals))
    centered = g1.coeffs.copy()
    centered[0] -= g1.integral() / (basis.q - basis.p)
    zsol = solution_apply(ctx.matrix, ChebSolution(basis, centered))

    (i2, t2, ind_mean), (e2, et, em_) = _induced_quadratics(
        ctx, phi, weights=[ctx.acim, zsol, ctx.acim], powers=[2, 1, 1],
        depth=depth)
    tau_mean = ctx.mean_return_time
    sigma2 = (i2 + 2.0 * t2) / tau_mean
    if not full_output:
        return sigma2
    info = {
        "phi_sq_mean": i2,
        "correlation_sum": t2,
        "induced_mean": ind_mean,  # should vanish; size indicates centering error
        "tau_mean": tau_mean,
        "err_estimate": (e2 + 2.0 * et + abs(ind_mean) + em_) / tau_mean,
    }
    return sigma2, info
