"""Tests for the diagnostic bound constants.

These bounds are direction checks, not certified enclosures: the key
assertions are that measured errors stay below 10x the bound and that the
stated monotonicities hold.
"""

import json
import math

import numpy as np
import pytest

from intermittent.abel import build_abel
from intermittent.bounds import (
    BoundConstants,
    abel_series_error,
    constants_to_dict,
    default_series_radius,
    em_error,
    estimate_suprema,
    lemma_constants,
)
from intermittent.map_model import lsv


@pytest.fixture(scope="module")
def bc1():
    return lemma_constants(lsv(1.0))


@pytest.fixture(scope="module")
def af40():
    return build_abel(lsv(1.0), N=40)


def test_G_at_least_four_for_lsv1(bc1):
    # hand expansion: g(0) = hhat1^2 - hhat2 = 4 - 8 = -4, and the circle
    # maximum dominates the centre value
    assert bc1.G >= 4.0
    assert bc1.hhat1 == pytest.approx(2.0, abs=1e-13)


def test_shrinking_radius_never_increases_G():
    m = lsv(1.0)
    R = default_series_radius(m)
    vals = [estimate_suprema(m, r)[0] for r in (R, R / 2, R / 4)]
    assert vals[0] >= vals[1] >= vals[2]


def test_sample_doubling_stability():
    m = lsv(0.8)
    R = default_series_radius(m)
    G_a, Gp_a = estimate_suprema(m, R, samples=720)
    G_b, Gp_b = estimate_suprema(m, R, samples=1440)
    assert abs(G_a - G_b) < 0.01 * G_b
    assert abs(Gp_a - Gp_b) < 0.01 * Gp_b


def test_divergent_radius_signalled():
    with pytest.raises(ArithmeticError):
        estimate_suprema(lsv(1.0), 5.0)


def test_d2_formula(bc1):
    expected = 1 + 2.5 * math.exp(0.6) * (1 + 0.4 * bc1.G / 4.0)
    assert bc1.d2 == pytest.approx(expected, rel=1e-14)
    assert bc1.d1 == pytest.approx((1 + bc1.G / 4.0) / bc1.d2**2, rel=1e-14)


def test_radii_nest(bc1):
    assert bc1.Z <= bc1.R1 <= bc1.R
    for name in ("R", "G", "Gprime", "R1", "rn_base", "d1", "d2", "d3", "Z"):
        assert getattr(bc1, name) > 0
    assert bc1.d2 > 1


def test_invariant_violations_rejected(bc1):
    d = constants_to_dict(bc1)
    d.pop("format_version")
    with pytest.raises(ValueError):
        BoundConstants(**{**d, "Z": 2 * d["R1"]})
    with pytest.raises(ValueError):
        BoundConstants(**{**d, "d2": 0.5})
    with pytest.raises(ValueError):
        BoundConstants(**{**d, "G": -1.0})


def test_gimel_hand_value(bc1):
    # beta_bar=2, delta=0: 4 * (1/2) * (1 + 1 + 2/R1)
    expected = 2.0 * (2.0 + 2.0 / bc1.R1)
    assert bc1.gimel(2.0, 0.0) == pytest.approx(expected, rel=1e-14)


def test_gimel_decreasing_near_pole(bc1):
    # the 1/(beta_bar - delta - 1) pole dominates adjacent to beta_bar =
    # delta + 1; away from it the 2^beta_bar factor takes over, so the
    # decrease is only asserted on the pole neighbourhood
    for delta in (0.0, 1.0):
        bbs = delta + 1 + np.linspace(0.01, 0.15, 8)
        vals = [bc1.gimel(bb, delta) for bb in bbs]
        assert all(x > y for x, y in zip(vals, vals[1:]))


def test_gimel_domain(bc1):
    with pytest.raises(ValueError):
        bc1.gimel(1.0, 0.0)
    with pytest.raises(ValueError):
        bc1.gimel(3.0, -0.5)


def test_measured_tail_below_ten_times_bound(bc1, af40):
    # direction check at 20 (n, z) samples: the measured truncation error
    # never exceeds 10x the a-priori bound
    a = af40.expansion.a_n
    for n in range(1, 11):
        for frac in (0.3, 0.7):
            z = frac * min(bc1.R1, bc1.r_n(n))
            tail = abs(np.polyval(a[n:][::-1], z)) * z ** (n + 1)
            bound = abel_series_error(bc1, n, z)
            assert tail <= 10 * bound


def test_bound_vanishes_with_z(bc1):
    zs = np.geomspace(1e-3, 1e-8, 6)
    vals = [abel_series_error(bc1, 4, z) for z in zs]
    assert all(x > y for x, y in zip(vals, vals[1:]))
    assert vals[-1] < 1e-20


def test_bound_region_enforced(bc1):
    with pytest.raises(ValueError):
        abel_series_error(bc1, 10, 2 * bc1.r_n(10))


def test_bound_accepts_complex_z(bc1):
    z = 0.5 * bc1.r_n(3) * np.exp(0.7j)
    assert abel_series_error(bc1, 3, z) > 0


def test_em_bound_minimised_near_pi_rho(bc1):
    rho = 4.0
    decay = (1.0, 1.0, 1.0, 0.0)
    vals = [em_error(bc1, decay, 2.0, 50, rho, K) for K in range(1, 21)]
    k_min = int(np.argmin(vals)) + 1
    assert abs(k_min - (math.pi * rho - 0.5)) <= 1.0
    assert all(x > y for x, y in zip(vals[: k_min - 1], vals[1:k_min]))


def test_em_bound_decreasing_in_rho(bc1):
    for delta in (0.0, 1.0):
        decay = (1.0, 1.0, 1.0, delta)
        vals = [em_error(bc1, decay, 2.0, 50, rho, 8) for rho in (3.0, 4.0, 6.0, 8.0)]
        assert all(x > y for x, y in zip(vals, vals[1:]))


def test_em_bound_hand_value(bc1):
    # freeze the transcription: K=2, rho=4, unit metadata, beta_bar = 2
    qbar, beta, gamma, delta = 1.0, 1.0, 1.0, 0.0
    K, rho, ns, ap = 2, 4.0, 30, 1.5
    bb = (beta + 2 * gamma) / 1.0
    common = (math.factorial(5) / (8 * math.pi) ** 5 * 4 * qbar * ap / 0.5)
    W = 1 / 5 * 2 * bc1.hhat1 * bc1.Z ** (-bb)
    got = em_error(bc1, (qbar, beta, gamma, delta), ap, ns, rho, K)
    assert got == pytest.approx(common * W, rel=1e-13)


def test_em_negative_beta_bar_branch(bc1):
    # beta = -3, gamma = 1 at alpha = 1 gives beta_bar = -1
    decay = (1.0, -3.0, 1.0, 0.0)
    with pytest.raises(ValueError):
        em_error(bc1, decay, 2.0, 50, 4.0, 8)
    v = em_error(bc1, decay, 2.0, 50, 4.0, 8, znstar_abs=1e-3)
    assert v > 0 and math.isfinite(v)
    # deep orbit point is in the rho-dominated regime, so the bound is
    # insensitive to making it deeper
    v2 = em_error(bc1, decay, 2.0, 50, 4.0, 8, znstar_abs=1e-4)
    assert v2 == pytest.approx(v, rel=1e-12)


def test_constants_json_dump(bc1):
    d = constants_to_dict(bc1)
    s = json.dumps(d)
    back = json.loads(s)
    assert back["format_version"] == 1
    assert back["Z"] == bc1.Z
    assert back["alpha"] == 1.0


def test_constants_across_alpha():
    for alpha in (0.5, 0.8, 1.5):
        bc = lemma_constants(lsv(alpha))
        assert bc.Z <= bc.R1 <= bc.R
        assert bc.hhat1 == pytest.approx(alpha * 2**alpha, rel=1e-12)
