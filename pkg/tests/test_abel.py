"""Abel function: coefficients, evaluation strategies, inverse, derivatives."""

import math

import mpmath as mp
import numpy as np
import pytest

from intermittent.map_model import (
    MapDomainError,
    eval_fb,
    hat_T_series,
    lsv,
    _fb_inverse_real_vec,
)
from intermittent.abel import (
    build_abel,
    compute_coefficients,
    eval_A,
    eval_A_inverse,
    eval_A_prime,
    eval_expansion,
    eval_expansion_deriv,
    expansion_from_dict,
    expansion_to_dict,
    functional_residual,
    normalize_constant,
    _eval_A_vec,
    _eval_A_prime_vec,
)


@pytest.fixture(scope="module")
def af1():
    return build_abel(lsv(1.0), 24)


@pytest.fixture(scope="module")
def af08():
    return build_abel(lsv(0.8), 24)


class TestCoefficients:
    def test_lsv1_leading(self, af1):
        exp = af1.expansion
        assert exp.a_minus1 == pytest.approx(0.5, abs=1e-14)
        assert exp.a_log == pytest.approx(-1.0, abs=1e-12)
        assert exp.hhat1 == pytest.approx(2.0)
        assert exp.hhat2 == pytest.approx(8.0)

    def test_leading_inverse_relation(self, af08):
        exp = af08.expansion
        assert exp.a_minus1 * exp.hhat1 == pytest.approx(1.0, abs=1e-14)

    def test_a_log_from_backward_iteration(self, af1):
        # Independent estimate of a_log: A(x) + k - a_minus1/z_k along the
        # backward orbit of x behaves like a_log*log(z_k) + a0 + O(z_k), so a
        # two-point fit in log z recovers a_log.
        m = af1.expansion.map
        exp = af1.expansion
        x = 0.3
        ax = eval_A(af1, x)
        pts = []
        y = x
        for k in range(1, 3001):
            y = float(_fb_inverse_real_vec(m, np.array([y]))[0])
            if k in (1500, 3000):
                z = y**m.alpha
                pts.append((math.log(z), ax + k - exp.a_minus1 / z))
        slope = (pts[1][1] - pts[0][1]) / (pts[1][0] - pts[0][0])
        assert slope == pytest.approx(exp.a_log, abs=5e-4)

    def test_residual_order_drop_high_precision(self, af1):
        # The functional-equation residual is O(z^{N+2}); halving |z| from the
        # recorded validity radius must shrink it by at least 1000x. Checked
        # in extended precision because the float64 noise floor sits above
        # the true residual at the inner radius.
        exp = af1.expansion
        that = hat_T_series(exp.map, exp.N + 3, max_order=exp.N + 3)
        tc = [mp.mpf(float(c.real)) for c in that.coeffs]
        an = [mp.mpf(float(v)) for v in exp.a_n]
        am1, alog = mp.mpf(exp.a_minus1), mp.mpf(exp.a_log)

        def residual(z):
            t = mp.mpf(0)
            for c in reversed(tc):
                t = t * z + c

            def ahat(w):
                p = mp.mpf(0)
                for c in reversed(an):
                    p = p * w + c
                return am1 / w + alog * mp.log(w) + p * w

            return ahat(t) - ahat(z) - 1

        mp.mp.dps = 50
        angles = [mp.exp(2j * mp.pi * k / 8) for k in range(8)]
        r_out = max(abs(residual(exp.z_radius * a)) for a in angles)
        r_in = max(abs(residual(exp.z_radius / 2 * a)) for a in angles)
        assert r_out > 1000 * r_in

    def test_float_residual_small_inside(self, af1):
        exp = af1.expansion
        z = exp.z_radius * np.exp(2j * np.pi * np.arange(12) / 12)
        assert np.abs(functional_residual(exp, z)).max() < 1e-12

    def test_coefficients_nested_in_order(self):
        m = lsv(0.8)
        short = compute_coefficients(m, 8)
        long = compute_coefficients(m, 20)
        np.testing.assert_allclose(short.a_n, long.a_n[:8], rtol=1e-13)

    def test_rejects_bad_order(self):
        with pytest.raises(ValueError):
            compute_coefficients(lsv(1.0), 0)


class TestNormalization:
    def test_endpoint_values(self, af1, af08):
        for af in (af1, af08):
            assert eval_A(af, 1.0) == pytest.approx(0.0, abs=1e-12)
            assert eval_A(af, af.expansion.map.a) == pytest.approx(1.0, abs=1e-12)

    def test_deeper_normalization_stable(self, af1):
        deeper = normalize_constant(af1, depth=2 * af1.norm_steps)
        assert deeper.expansion.a0 == pytest.approx(af1.expansion.a0, abs=1e-12)
        assert deeper.norm_steps == 2 * af1.norm_steps

    def test_too_shallow_depth_rejected(self, af1):
        with pytest.raises(ValueError):
            normalize_constant(af1, depth=1)


class TestEvalA:
    def test_abel_equation_residual(self, af08):
        m = af08.expansion.map
        exp = af08.expansion
        # grid floor keeps |A| below ~2e3 so the absolute residual target
        # stays well above float64 granularity of the values themselves
        x_floor = (exp.a_minus1 / 2000) ** (1 / m.alpha)
        x = np.geomspace(x_floor, m.a, 1000)
        ax = _eval_A_vec(af08, x)
        afx = _eval_A_vec(af08, eval_fb(m, x))
        assert np.abs(afx - ax + 1).max() < 1e-11

    def test_strictly_decreasing(self, af1):
        x = np.geomspace(1e-6, 1.0, 1000)
        vals = _eval_A_vec(af1, x)
        assert (np.diff(vals) < 0).all()

    def test_matches_limit_definition(self, af08):
        # principal-Abel limit along backward orbits, Richardson-extrapolated
        # in 1/k: A(x) = lim (x_k^{-alpha} - w_k^{-alpha}) / hhat1 with w the
        # orbit of 1.
        m = af08.expansion.map
        hh1 = af08.expansion.hhat1
        xs = np.linspace(0.04, 0.99, 20)
        pts = np.append(xs, 1.0)
        orbit = pts.copy()
        vals = {}
        for k in range(1, 10001):
            orbit = _fb_inverse_real_vec(m, orbit, seed=orbit)
            if k in (5000, 10000):
                za = orbit**m.alpha
                vals[k] = (1 / za[:-1] - 1 / za[-1]) / hh1
        rich = 2 * vals[10000] - vals[5000]
        direct = _eval_A_vec(af08, xs)
        assert np.abs(rich - direct).max() < 1e-6

    def test_complex_argument_consistency(self, af1):
        m = af1.expansion.map
        x = 0.3 + 0.02j
        resid = eval_A(af1, eval_fb(m, x)) - eval_A(af1, x) + 1
        assert abs(resid) < 1e-11

    def test_domain_errors(self, af1):
        with pytest.raises(MapDomainError):
            eval_A(af1, 0.0)
        with pytest.raises(MapDomainError):
            eval_A(af1, 1.5)

    def test_vector_matches_scalar(self, af1):
        x = np.geomspace(1e-5, 1.0, 37)
        vec = _eval_A_vec(af1, x)
        sca = np.array([eval_A(af1, t) for t in x])
        np.testing.assert_allclose(vec, sca, rtol=1e-13, atol=1e-12)


class TestDerivative:
    def test_matches_finite_difference(self, af08):
        xs = np.linspace(0.05, 0.98, 100)
        for x in xs:
            h = 1e-5 * x
            fd = (eval_A(af08, x + h) - eval_A(af08, x - h)) / (2 * h)
            assert eval_A_prime(af08, x) == pytest.approx(fd, rel=1e-8)

    def test_negative_on_unit_interval(self, af1):
        x = np.geomspace(1e-5, 1.0, 200)
        assert (_eval_A_prime_vec(af1, x) < 0).all()

    def test_sandwich_on_validity_disc(self, af1, af08):
        # |z^2 Ahat'(z)| within [1/(2 hhat1), 2/hhat1] on the disc with
        # diameter [0, z_radius]
        for af in (af1, af08):
            exp = af.expansion
            hh1 = exp.hhat1
            rr, tt = np.meshgrid(np.linspace(0.05, 0.999, 12),
                                 np.linspace(0, 2 * np.pi, 24, endpoint=False))
            z = exp.z_radius / 2 + exp.z_radius / 2 * rr * np.exp(1j * tt)
            q = np.abs(z**2 * eval_expansion_deriv(exp, z))
            assert q.min() >= 1 / (2 * hh1) - 1e-12
            assert q.max() <= 2 / hh1 + 1e-12

    def test_vector_matches_scalar(self, af08):
        x = np.geomspace(1e-4, 0.9, 23)
        vec = _eval_A_prime_vec(af08, x)
        sca = np.array([eval_A_prime(af08, t) for t in x])
        np.testing.assert_allclose(vec, sca, rtol=1e-12)


class TestInverse:
    def test_special_values(self, af1):
        assert eval_A_inverse(af1, 0.0) == pytest.approx(1.0, abs=1e-12)
        assert eval_A_inverse(af1, 1.0) == pytest.approx(0.5, abs=1e-12)

    def test_round_trip(self, af08):
        x = np.geomspace(1e-7, 1.0, 1000)
        ax = _eval_A_vec(af08, x)
        back = np.array([eval_A_inverse(af08, y) for y in ax])
        np.testing.assert_allclose(back, x, rtol=1e-11)

    def test_deep_series_route(self, af1):
        y = 1e6
        x = eval_A_inverse(af1, y)
        assert eval_A(af1, x) == pytest.approx(y, rel=1e-12)

    def test_complex_moderate(self, af1):
        y = 2.3 + 0.4j
        x = eval_A_inverse(af1, y)
        assert eval_A(af1, x) == pytest.approx(y, rel=1e-11)

    def test_negative_rejected(self, af1):
        with pytest.raises(MapDomainError):
            eval_A_inverse(af1, -0.5)

    def test_inverse_shift_bound(self, af08):
        # |A^{-1}(A(x0)+m)^{-alpha} - x0^{-alpha}| <= 2 hhat1 |m| for |m| <= 1
        exp = af08.expansion
        m = exp.map
        hh1 = exp.hhat1
        shifts = [1.0, -1.0, 1j, -1j, 0.5 * np.exp(1j * np.pi / 4), 0.25]
        for x0 in np.geomspace(1e-4, 5e-2, 8):
            y0 = eval_A(af08, x0)
            for s in shifts:
                if (y0 + s).real < 0:
                    continue
                x1 = eval_A_inverse(af08, y0 + s)
                lhs = abs(complex(x1) ** -m.alpha - complex(x0) ** -m.alpha)
                assert lhs <= 2 * hh1 * abs(s) * (1 + 1e-9)


class TestSerialization:
    def test_round_trip(self, af08):
        exp = af08.expansion
        doc = expansion_to_dict(exp)
        assert doc["format_version"] == 1
        back = expansion_from_dict(doc, exp.map)
        np.testing.assert_array_equal(back.a_n, exp.a_n)
        assert back.a0 == exp.a0
        assert back.z_radius == exp.z_radius
        z = 0.01
        assert eval_expansion(back, z) == eval_expansion(exp, z)

    def test_alpha_mismatch_rejected(self, af08):
        doc = expansion_to_dict(af08.expansion)
        with pytest.raises(ValueError):
            expansion_from_dict(doc, lsv(0.9))


class TestSeriesErrorShape:
    def test_truncation_error_decreases_then_grows(self):
        # at fixed small z the truncation error shrinks with n until the
        # asymptotically optimal order, a hallmark of the asymptotic series
        m = lsv(1.0)
        ref = compute_coefficients(m, 40)
        z = 0.02
        errs = []
        for n in range(2, 9):
            tail = ref.a_n[n:] * z ** np.arange(n + 1, 41)
            errs.append(abs(tail.sum()))
        assert all(e2 < e1 for e1, e2 in zip(errs, errs[1:]))
