"""Explicit constants for diagnostic error estimates.

Everything here feeds a-priori error bounds for the Abel-series truncation
and the Euler-Maclaurin remainder. The constants are computed in floating
point from sampled suprema with a fixed 1.25 safety factor; they give
reliable directions and orders of magnitude, not certified enclosures.

The central objects, in the z = x^alpha coordinate:
    g:  1/T-hat(z) = 1/z + hhat1 + g(z) z   (regularity of the backward branch)
    G:  sup |g| on |z| <= R,   G': sup |d(zg)/dz|
    R1: min{R, aleph*hhat1/G}, the radius where backward orbits are tame
    Z:  radius of the region where orbit-sum machinery is allowed.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Optional, Sequence

import numpy as np

from .map_model import PMMap, hat_T_series
from .power_series import reciprocal, TruncatedSeries

__all__ = [
    "BoundConstants",
    "estimate_suprema",
    "lemma_constants",
    "abel_series_error",
    "em_error",
    "constants_to_dict",
    "default_series_radius",
]

SERIES_ORDER = 32
SAFETY = 1.25


def _g_series(m: PMMap, order: int = SERIES_ORDER):
    """Taylor coefficients of g: 1/T-hat = 1/z + hhat1 + g(z) z.

    With r = 1/(T-hat(z)/z) = 1 + r_1 z + r_2 z^2 + ..., the identity gives
    r_1 = hhat1 and g(z) = r_2 + r_3 z + r_4 z^2 + ...
    """
    that = hat_T_series(m, order)
    r = reciprocal(TruncatedSeries(np.append(1.0, that.coeffs[2:])))
    return r.coeffs[2:], float(r.coeffs[1].real)


def default_series_radius(m: PMMap, rel_tail: float = 1e-8) -> float:
    """Largest scan radius where the g-series top term is negligible."""
    g_c, _ = _g_series(m)
    M = len(g_c) - 1
    scale = max(1.0, abs(g_c[0]))
    for r in np.geomspace(0.5, 1e-3, 120):
        if abs(g_c[-1]) * r**M <= rel_tail * scale:
            return float(r)
    raise ArithmeticError("no usable series radius found")


def estimate_suprema(m: PMMap, R_candidate: float, samples: int = 720):
    """(G, G') = sampled maxima of |g| and |d(zg)/dz| on |z| = R_candidate.

    Maximum-modulus estimates with a 1.25 safety factor. Raises if the
    underlying series has visibly not converged at that radius.
    """
    g_c, _ = _g_series(m)
    M = len(g_c) - 1
    if abs(g_c[-1]) * R_candidate**M > 1e-6 * max(1.0, abs(g_c[0])):
        raise ArithmeticError("series for g not converged at R_candidate")
    z = R_candidate * np.exp(2j * np.pi * np.arange(samples) / samples)
    g = np.zeros_like(z)
    for ck in g_c[::-1]:
        g = g * z + ck
    # zg = sum_{k>=0} g_k z^{k+1}; d(zg)/dz = sum (k+1) g_k z^k
    dzg = np.zeros_like(z)
    weights = g_c * (np.arange(len(g_c)) + 1)
    for wk in weights[::-1]:
        dzg = dzg * z + wk
    G = SAFETY * float(np.abs(g).max())
    Gp = SAFETY * float(np.abs(dzg).max())
    return G, Gp


@dataclass(frozen=True)
class BoundConstants:
    """Constants for the truncation and remainder estimates.

    rn_base/n is the shrinking radius r_n controlling the coefficient-level
    residual; d1, d2 bound the functional-equation residual as
    |D_n(z)| <= d1 (d2 |z| / r_n)^{n+2}; d3 is the representative (n = 1)
    value of the n-dependent prefactor gimel(n+2, 0) * d2.
    """

    R: float
    G: float
    Gprime: float
    aleph: float
    R1: float
    rn_base: float
    d1: float
    d2: float
    d3: float
    Z: float
    hhat1: float
    alpha: float

    def __post_init__(self):
        if not (self.R1 <= self.R + 1e-15 and self.Z <= self.R1 + 1e-15):
            raise ValueError("radii must nest: Z <= R1 <= R")
        if self.d2 <= 1:
            raise ValueError("d2 must exceed 1")
        for name in ("R", "G", "Gprime", "R1", "rn_base", "d1", "d2", "d3", "Z"):
            if getattr(self, name) <= 0 or not math.isfinite(getattr(self, name)):
                raise ValueError(f"constant {name} must be positive and finite")
        if not 0 < self.aleph < 1:
            raise ValueError("aleph must lie in (0,1)")

    def gimel(self, beta_bar: float, delta: float) -> float:
        """Orbit-sum constant: sum_k |T-hat^k(z)|^bb k^dd <= gimel |z|^{bb-dd-1}."""
        if delta < 0 or beta_bar <= delta + 1:
            raise ValueError("gimel requires beta_bar > delta + 1 >= 1")
        return ((1 - self.aleph) ** (-beta_bar) * self.hhat1 ** (-delta - 1)
                * (1 / (delta + 1) + 1 / (beta_bar - delta - 1)
                   + self.hhat1 / self.R1))

    def r_n(self, n: int) -> float:
        return self.rn_base / n


def lemma_constants(m: PMMap, R: Optional[float] = None, samples: int = 720,
                    aleph: float = 0.5) -> BoundConstants:
    """All bound constants for a map, from sampled suprema at radius R."""
    if R is None:
        R = default_series_radius(m)
    G, Gp = estimate_suprema(m, R, samples)
    _, hhat1 = _g_series(m, 6)
    R1 = min(R, aleph * hhat1 / G)
    rn_base = min(R, 0.4 / (hhat1 + math.sqrt(0.4 * G)))
    d2 = 1 + 2.5 * math.exp(0.6) * (1 + 0.4 * G / hhat1**2)
    d1 = (1 + G / hhat1**2) / d2**2
    gimel20 = ((1 - aleph) ** (-2.0) * hhat1 ** (-1.0)
               * (1.0 + 1.0 + hhat1 / R1))
    Z = min(R1, (2 * Gp) ** (-0.5), 1 / (2 * Gp * gimel20))
    gimel30 = ((1 - aleph) ** (-3.0) * hhat1 ** (-1.0)
               * (1.0 + 0.5 + hhat1 / R1))
    return BoundConstants(R=R, G=G, Gprime=Gp, aleph=aleph, R1=R1,
                          rn_base=rn_base, d1=d1, d2=d2, d3=gimel30 * d2,
                          Z=Z, hhat1=hhat1, alpha=m.alpha)


def abel_series_error(bc: BoundConstants, n: int, z) -> float:
    """A-priori bound on |A-hat - A-hat_n| at z, for |z| <= min{R1, r_n}."""
    az = abs(z)
    rn = bc.r_n(n)
    if az > min(bc.R1, rn) * (1 + 1e-12):
        raise ValueError("z outside the bound's validity region")
    d3n = bc.gimel(n + 2, 0.0) * bc.d2
    return d3n * bc.d2 ** (n + 2) * rn ** (-(n + 2)) * az ** (n + 1)


def em_error(bc: BoundConstants, decay: Sequence[float], a_prime_abs: float,
             n_star: int, rho: float, K: int,
             znstar_abs: Optional[float] = None) -> float:
    """A-priori bound on the Euler-Maclaurin remainder after K corrections.

    decay = (Qbar, beta, gamma, delta) bounds the summand as
    |Q(x,d,n)| <= Qbar |x|^beta |d|^gamma |n|^delta; a_prime_abs is |A'| at
    the evaluation point. The negative-beta_bar branch needs znstar_abs, the
    z-coordinate magnitude of the depth-n* orbit point.
    """
    qbar, beta, gamma, delta = decay
    bb = (beta + (1 + bc.alpha) * gamma) / bc.alpha
    common = (math.factorial(2 * K + 1) / (2 * math.pi * rho) ** (2 * K + 1)
              * 4 * qbar * a_prime_abs**gamma / (1 - bc.aleph)
              * (1 + n_star / rho) ** delta)
    if bb >= 0:
        if 2 * K + 1 <= delta:
            raise ValueError("need 2K+1 > delta")
        W = (rho**delta / (2 * K + 1 - delta)
             * 2 ** abs(gamma) * bc.hhat1**gamma * bc.Z ** (-bb))
    else:
        if znstar_abs is None:
            raise ValueError("negative beta_bar branch needs znstar_abs")
        if 2 * K + 1 + bb <= delta:
            raise ValueError("need 2K+1 > delta - beta_bar")
        base = max(znstar_abs / rho, 2 * bc.hhat1 * (1 + 2 / (1 - bc.aleph)))
        W = (rho ** (delta - bb) / (2 * K + 1 + bb - delta)
             * 2 ** abs(gamma) * bc.hhat1**gamma * base ** (-bb))
    return common * W


def constants_to_dict(bc: BoundConstants) -> dict:
    return {
        "format_version": 1,
        "R": bc.R, "G": bc.G, "Gprime": bc.Gprime, "aleph": bc.aleph,
        "R1": bc.R1, "rn_base": bc.rn_base, "d1": bc.d1, "d2": bc.d2,
        "d3": bc.d3, "Z": bc.Z, "hhat1": bc.hhat1, "alpha": bc.alpha,
    }
