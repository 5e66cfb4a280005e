"""Ergodic statistics of intermittent interval maps.

Numerical machinery for Pomeau-Manneville-type maps: Abel functions of the
neutral branch, Euler-Maclaurin summation along slow orbits, a Chebyshev
Galerkin solver for the induced transfer operator, and statistics built on
top (invariant densities, return-time laws, observable averages, diffusion
coefficients), with brute-force cross-checks in :mod:`intermittent.oracle`.
"""

__version__ = "0.1.0"

from .map_model import PMMap, GoodBranch, lsv  # noqa: F401
