"""Chebyshev Galerkin solver for the induced transfer operator.

The induced map's transfer operator L acts on densities over [a,1]. Its
solution operator S = (I - L + u*integral)^(-1), with u the flat density
1/(1-a), carries the statistics: S applied to u is the invariant density
of the induced map, and resolvent-style quantities (diffusion, return-time
moments) are further solves against the same matrix.

Discretisation follows the collocation recipe for analytic expanding maps:
expand in Chebyshev polynomials shifted to [a,1], evaluate the operator's
action on each basis polynomial at the Chebyshev nodes (the neutral-branch
sum is handled by the Euler-Maclaurin stencils from orbit_sum), and read
off matrix columns with the values-to-coefficients cosine transform. For
analytic data the coefficients, and hence the solve error, decay
geometrically in the mode count N.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field
from functools import cached_property
from typing import Sequence

import numpy as np
from numpy.polynomial.chebyshev import chebval, chebvander
from scipy.fft import dct
from scipy.linalg import lu_factor, lu_solve

from .map_model import PMMap
from .orbit_sum import EMParams, Summand, build_stencils, euler_maclaurin_sum

__all__ = [
    "ChebBasis",
    "ChebSolution",
    "OperatorMatrix",
    "constant_solution",
    "good_transfer",
    "induced_transfer_pointwise",
    "build_matrix",
    "build_matrix_plain",
    "solve_acim",
    "solution_apply",
    "matrix_payload",
    "matrix_from_payload",
    "solution_payload",
    "solution_from_payload",
]

FORMAT_VERSION = 1

# condition estimate above which solve results are flagged as unreliable
_COND_LIMIT = 1e12
# converged solutions must have top-quarter coefficients below this
# fraction of the peak coefficient
_TAIL_LIMIT = 1e-10


@dataclass(frozen=True)
class ChebBasis:
    """Chebyshev polynomials T~_0..T~_N shifted to [p,q], with their nodes.

    T~_k(x) = T_k((2x - p - q)/(q - p)). Nodes are the N+1 first-kind
    Chebyshev points mapped to (p,q); values at the nodes and coefficients
    convert into each other by a DCT-II/DCT-III pair.
    """

    p: float
    q: float
    N: int

    def __post_init__(self):
        if not (math.isfinite(self.p) and math.isfinite(self.q)):
            raise ValueError("interval endpoints must be finite")
        if not self.q > self.p:
            raise ValueError("need q > p")
        if self.N < 0:
            raise ValueError("mode count must be nonnegative")

    @cached_property
    def nodes(self) -> np.ndarray:
        k = np.arange(self.N + 1)
        t = np.cos((2 * k + 1) * np.pi / (2 * (self.N + 1)))
        x = 0.5 * (self.p + self.q) + 0.5 * (self.q - self.p) * t
        x.setflags(write=False)
        return x

    def to_unit(self, x):
        """Map from [p,q] to the reference interval [-1,1]."""
        return (2.0 * np.asarray(x) - self.p - self.q) / (self.q - self.p)

    def coeffs_from_values(self, values: np.ndarray) -> np.ndarray:
        """Chebyshev coefficients of the interpolant through node values.

        Axis 0 must run over the nodes; extra axes pass through, so a
        matrix of column values transforms column by column.
        """
        v = np.asarray(values, dtype=float)
        if v.shape[0] != self.N + 1:
            raise ValueError("need one value per node")
        c = dct(v, type=2, axis=0) / (self.N + 1)
        c[0] *= 0.5
        return c

    def values_from_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        c = np.array(coeffs, dtype=float)
        if c.shape[0] != self.N + 1:
            raise ValueError("need N+1 coefficients")
        c[1:] *= 0.5
        return dct(c, type=3, axis=0)

    def mode_integrals(self) -> np.ndarray:
        """Exact integrals of T~_k over [p,q]: zero for odd k, else (q-p)/(1-k^2)."""
        k = np.arange(self.N + 1)
        out = np.zeros(self.N + 1)
        even = k % 2 == 0
        out[even] = (self.q - self.p) / (1.0 - k[even].astype(float) ** 2)
        return out


@dataclass(frozen=True)
class ChebSolution:
    """A function on [p,q] held as real Chebyshev coefficients."""

    basis: ChebBasis
    coeffs: np.ndarray

    def __post_init__(self):
        c = np.asarray(self.coeffs, dtype=float).copy()
        if c.ndim != 1 or c.size != self.basis.N + 1:
            raise ValueError("coefficient vector must have length N+1")
        c.setflags(write=False)
        object.__setattr__(self, "coeffs", c)

    def __call__(self, x):
        """Clenshaw evaluation; accepts real or complex scalars and arrays."""
        return chebval(self.basis.to_unit(x), self.coeffs)

    def integral(self) -> float:
        """Exact integral over [p,q] from the even-mode coefficients."""
        return float(self.coeffs @ self.basis.mode_integrals())

    def tail_ratio(self) -> float:
        """Top-quarter coefficient magnitude relative to the peak.

        Small values certify that the expansion has resolved the function;
        solves warn when this exceeds 1e-10.
        """
        c = np.abs(self.coeffs)
        peak = float(c.max())
        if peak == 0.0:
            return 0.0
        return float(c[-max(1, c.size // 4):].max() / peak)


def constant_solution(basis: ChebBasis, value: float) -> ChebSolution:
    c = np.zeros(basis.N + 1)
    c[0] = value
    return ChebSolution(basis, c)


def _eval_on(fn, x: np.ndarray) -> np.ndarray:
    # branch callables are only guaranteed scalar; vectorize on demand
    try:
        out = np.asarray(fn(x))
        if out.shape == np.shape(x):
            return out
    except (TypeError, ValueError):
        pass
    return np.asarray([fn(t) for t in np.ravel(x)]).reshape(np.shape(x))


def _branch_sign(br) -> float:
    return 1.0 if np.real(br.deriv(0.5)) > 0 else -1.0


def _branches_of(m) -> tuple:
    if isinstance(m, PMMap):
        return m.good_branches
    return tuple(m)


def good_transfer(m, phi, x):
    """Transfer operator of the expanding part: sum of |v'(x)| phi(v(x)).

    `m` is a PMMap (its good branches are used) or a bare sequence of
    inverse branches. Each branch is monotone, so |v'| on the real slice
    equals sign(v')*v', and that product is the analytic continuation used
    for complex x. Scalar in, scalar out; arrays broadcast.
    """
    branches = _branches_of(m)
    xa = np.asarray(x)
    scalar = xa.ndim == 0
    pts = np.atleast_1d(xa)
    out = np.zeros(pts.shape, dtype=complex if np.iscomplexobj(pts) else float)
    for br in branches:
        d = _branch_sign(br) * _eval_on(br.deriv, pts)
        out = out + d * phi(_eval_on(br.eval, pts))
    if not scalar:
        return out
    return complex(out[0]) if np.iscomplexobj(out) else float(out[0])


def _sup_bound_on_unit(fn, modes: int = 96) -> float:
    # sup over [0,1] bounded by the coefficient l1 norm of a resolved expansion
    unit = ChebBasis(0.0, 1.0, modes)
    c = unit.coeffs_from_values(np.asarray(fn(unit.nodes), dtype=float))
    return float(np.abs(c).sum())


def induced_transfer_pointwise(m: PMMap, af, phi, z, p: EMParams | None = None):
    """(L phi)(z) for the induced map, via the orbit-sum machinery.

    The summand is Q(x,d,n) = d * (L_g phi)(x): backward neutral-branch
    orbits weighted by their derivatives, each carrying the good-part
    transfer of phi. Works for z in [a,1] and complex points nearby.
    """
    qbar = _sup_bound_on_unit(lambda x: good_transfer(m, phi, x))
    summand = Summand(
        eval=lambda x, d, n: d * good_transfer(m, phi, x),
        decay=(qbar, 0.0, 1.0, 0.0),
    )
    value, _ = euler_maclaurin_sum(summand, af, z, p)
    return value


@dataclass(frozen=True)
class OperatorMatrix:
    """Galerkin matrix of I - L + u*integral with a cached LU factorization.

    Applied to the coefficient vector of phi it returns the coefficients of
    (I - L + u*integral) phi; solves against it invert that operator on the
    span of the basis.
    """

    basis: ChebBasis
    entries: np.ndarray
    factorization: tuple = field(repr=False, compare=False)
    cond_estimate: float = field(compare=False)

    def apply_coeffs(self, coeffs: np.ndarray) -> np.ndarray:
        return self.entries @ np.asarray(coeffs, dtype=float)

    def solve_coeffs(self, rhs: np.ndarray) -> np.ndarray:
        return lu_solve(self.factorization, np.asarray(rhs, dtype=float))


def _finish_matrix(basis: ChebBasis, entries: np.ndarray) -> OperatorMatrix:
    entries = np.ascontiguousarray(entries, dtype=float)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")  # lu_factor warns before we raise
        fact = lu_factor(entries)
    diag = np.abs(np.diag(fact[0]))
    if not np.all(np.isfinite(fact[0])) or np.any(diag == 0.0):
        raise np.linalg.LinAlgError("Galerkin matrix is singular")
    cond = float(np.linalg.cond(entries, 1))
    entries.setflags(write=False)
    return OperatorMatrix(basis=basis, entries=entries, factorization=fact,
                          cond_estimate=cond)


def _transfer_columns(branches, basis: ChebBasis, x: np.ndarray) -> np.ndarray:
    """Rows of (L_g T~_k)(x_j) for all modes k at once."""
    out = np.zeros((np.shape(x)[0], basis.N + 1),
                   dtype=complex if np.iscomplexobj(x) else float)
    for br in branches:
        y = _eval_on(br.eval, x)
        d = _branch_sign(br) * _eval_on(br.deriv, x)
        out += d[:, None] * chebvander(basis.to_unit(y), basis.N)
    return out


def build_matrix(m: PMMap, af, N: int, p: EMParams | None = None) -> OperatorMatrix:
    """Assemble and factorize the Galerkin matrix for the induced map on [a,1].

    Column k holds the coefficients of T~_k - L T~_k + u * integral(T~_k),
    with the L T~_k node values produced by one shared stencil batch; the
    orbit walks dominate the cost, so all columns reuse them.
    """
    if N < 4:
        raise ValueError("need at least N = 4 modes")
    basis = ChebBasis(m.a, 1.0, N)
    params = p if p is not None else EMParams()
    stencils = build_stencils(af, basis.nodes, params)
    branches = m.good_branches

    lvals = np.empty((N + 1, N + 1))
    for i, st in enumerate(stencils):
        x, d, _, w = st.flatten()
        g = _transfer_columns(branches, basis, x)
        lvals[i] = np.real((w * d) @ g)

    tn = chebvander(basis.to_unit(basis.nodes), N)
    u = 1.0 / (basis.q - basis.p)
    vals = tn - lvals + u * basis.mode_integrals()[None, :]
    return _finish_matrix(basis, basis.coeffs_from_values(vals))


def build_matrix_plain(branches: Sequence, p: float, q: float, N: int) -> OperatorMatrix:
    """Galerkin matrix for a plain expanding map of [p,q] with finitely many
    full inverse branches; the transfer operator is a direct branch sum.

    The doubling map is the standard sanity instance: solving returns the
    flat density.
    """
    if N < 4:
        raise ValueError("need at least N = 4 modes")
    basis = ChebBasis(p, q, N)
    lvals = _transfer_columns(tuple(branches), basis, basis.nodes)
    tn = chebvander(basis.to_unit(basis.nodes), N)
    u = 1.0 / (q - p)
    vals = tn - np.real(lvals) + u * basis.mode_integrals()[None, :]
    return _finish_matrix(basis, basis.coeffs_from_values(vals))


def _flag_condition(M: OperatorMatrix):
    if M.cond_estimate > _COND_LIMIT:
        warnings.warn(
            f"Galerkin matrix condition estimate {M.cond_estimate:.3g} exceeds "
            f"{_COND_LIMIT:.0e}; solve digits are in doubt", RuntimeWarning,
            stacklevel=3)


def solve_acim(M: OperatorMatrix) -> ChebSolution:
    """Invariant density of the (induced) map: the solve against u = 1/(q-p),
    renormalised so its integral over [p,q] is exactly one."""
    _flag_condition(M)
    basis = M.basis
    rhs = np.zeros(basis.N + 1)
    rhs[0] = 1.0 / (basis.q - basis.p)
    c = M.solve_coeffs(rhs)
    mass = float(c @ basis.mode_integrals())
    if not math.isfinite(mass) or mass <= 0.0:
        raise np.linalg.LinAlgError("solve produced a non-normalisable density")
    sol = ChebSolution(basis, c / mass)
    if sol.tail_ratio() > _TAIL_LIMIT:
        warnings.warn(
            "density coefficients have not decayed below 1e-10 of the peak; "
            "increase the mode count", RuntimeWarning, stacklevel=2)
    return sol


def solution_apply(M: OperatorMatrix, g: ChebSolution) -> ChebSolution:
    """Apply the solution operator: solve (I - L + u*integral) out = g."""
    if g.basis != M.basis:
        raise ValueError("solution and matrix use different bases")
    _flag_condition(M)
    return ChebSolution(M.basis, M.solve_coeffs(g.coeffs))


def matrix_payload(M: OperatorMatrix) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "p": M.basis.p,
        "q": M.basis.q,
        "N": M.basis.N,
        "entries": M.entries.tolist(),
    }


def matrix_from_payload(payload: dict) -> OperatorMatrix:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported matrix payload version")
    basis = ChebBasis(float(payload["p"]), float(payload["q"]), int(payload["N"]))
    entries = np.asarray(payload["entries"], dtype=float)
    if entries.shape != (basis.N + 1, basis.N + 1):
        raise ValueError("entry block does not match the declared mode count")
    return _finish_matrix(basis, entries)


def solution_payload(sol: ChebSolution) -> dict:
    return {
        "format_version": FORMAT_VERSION,
        "p": sol.basis.p,
        "q": sol.basis.q,
        "N": sol.basis.N,
        "coeffs": sol.coeffs.tolist(),
    }


def solution_from_payload(payload: dict) -> ChebSolution:
    if payload.get("format_version") != FORMAT_VERSION:
        raise ValueError("unsupported solution payload version")
    basis = ChebBasis(float(payload["p"]), float(payload["q"]), int(payload["N"]))
    return ChebSolution(basis, np.asarray(payload["coeffs"], dtype=float))
