"""Map evaluation, branch inversion, series coordinates, expansion diagnostics."""

import math

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from intermittent.map_model import (
    MapDomainError,
    PMMap,
    affine_branch,
    branch_family_report,
    doubling_branches,
    eval_fb,
    eval_fb_deriv,
    eval_fb_inverse,
    eval_fg,
    hat_T_series,
    lsv,
    verify_unp,
    _fb_inverse_real_vec,
)


class TestConstruction:
    def test_lsv_basics(self):
        m = lsv(1.0)
        assert m.a == 0.5
        assert m.hhat1 == pytest.approx(2.0)
        np.testing.assert_allclose(m.h_coeffs, [1.0, 2.0])

    def test_lsv_alpha_scaling(self):
        m = lsv(0.75)
        assert m.hhat1 == pytest.approx(0.75 * 2**0.75)

    def test_branch_endpoint_consistency(self):
        # f_b(a) must hit 1 exactly; a mismatched h is rejected.
        with pytest.raises(ValueError):
            PMMap(alpha=1.0, a=0.5, h_coeffs=np.array([1.0, 1.5]),
                  good_branches=(affine_branch(0.5, 0.5),))

    def test_cells_must_tile(self):
        with pytest.raises(ValueError):
            PMMap(alpha=1.0, a=0.5, h_coeffs=np.array([1.0, 2.0]),
                  good_branches=(affine_branch(0.25, 0.5),))

    def test_rejects_bad_h(self):
        with pytest.raises(ValueError):
            lsv(-0.5)
        with pytest.raises(ValueError):
            PMMap(alpha=1.0, a=0.5, h_coeffs=np.array([2.0, 1.0]),
                  good_branches=(affine_branch(0.5, 0.5),))


class TestEvaluation:
    def test_lsv1_values(self):
        m = lsv(1.0)
        assert eval_fb(m, 0.25) == pytest.approx(0.375)
        assert eval_fb(m, 0.5) == pytest.approx(1.0)
        assert eval_fb(m, 0.0) == 0.0

    def test_array_input(self):
        m = lsv(0.8)
        x = np.linspace(0, 0.5, 9)
        vals = eval_fb(m, x)
        assert vals.shape == x.shape
        assert vals[0] == 0.0
        assert vals[-1] == pytest.approx(1.0)

    def test_deriv_matches_complex_step(self):
        m = lsv(0.8)
        for x in (0.05, 0.2, 0.45):
            h = 1e-20
            cs = eval_fb(m, complex(x, h)).imag / h
            assert eval_fb_deriv(m, x) == pytest.approx(cs, rel=1e-12)

    def test_neutral_fixed_point_derivative(self):
        assert eval_fb_deriv(lsv(0.7), 0.0) == pytest.approx(1.0)

    def test_good_part(self):
        m = lsv(1.0)
        assert eval_fg(m, 0.75) == pytest.approx(0.5)
        assert eval_fg(m, 1.0) == pytest.approx(1.0)
        with pytest.raises(MapDomainError):
            eval_fg(m, 0.2)

    def test_h_radius_guard(self):
        m = PMMap(alpha=1.0, a=0.5, h_coeffs=np.array([1.0, 2.0]),
                  good_branches=(affine_branch(0.5, 0.5),), h_radius=0.6)
        assert eval_fb(m, 0.4) == pytest.approx(0.72)
        with pytest.raises(MapDomainError):
            eval_fb(m, 0.5 + 0.4j)


class TestInverse:
    def test_known_points(self):
        m = lsv(1.0)
        assert eval_fb_inverse(m, 1.0) == pytest.approx(0.5, abs=1e-14)
        assert eval_fb_inverse(m, 0.375) == pytest.approx(0.25, abs=1e-14)
        assert eval_fb_inverse(m, 0.0) == 0.0

    @settings(deadline=None, max_examples=40)
    @given(st.floats(min_value=1e-12, max_value=1.0),
           st.floats(min_value=0.3, max_value=1.8))
    def test_roundtrip(self, x, alpha):
        m = lsv(alpha)
        y = eval_fb_inverse(m, x)
        assert 0 <= y <= m.a
        assert eval_fb(m, y) == pytest.approx(x, rel=1e-12, abs=1e-13)

    def test_complex_roundtrip(self):
        m = lsv(0.9)
        x = 0.3 + 0.04j
        y = eval_fb_inverse(m, x)
        assert eval_fb(m, y) == pytest.approx(x, rel=1e-12)
        assert y.imag != 0

    def test_vectorized_matches_scalar(self):
        m = lsv(0.65)
        x = np.linspace(1e-6, 1.0, 50)
        yv = _fb_inverse_real_vec(m, x)
        ys = np.array([eval_fb_inverse(m, t) for t in x])
        np.testing.assert_allclose(yv, ys, rtol=1e-12, atol=1e-14)

    def test_backward_orbit_decay(self):
        # backward orbit of 1 under f_b^-1 decays like (hhat1*n)^(-1/alpha)
        m = lsv(0.5)
        z = 1.0
        n = 4000
        for _ in range(n):
            z = eval_fb_inverse(m, z)
        predicted = (m.hhat1 * n) ** (-1 / m.alpha)
        assert z == pytest.approx(predicted, rel=0.02)


class TestHatTSeries:
    def test_lsv1_exact_coefficients(self):
        # alpha=1: F-hat(z) = z + 2z^2, inverse z - 2z^2 + 8z^3 - 40z^4
        t = hat_T_series(lsv(1.0), 4)
        np.testing.assert_allclose(t.coeffs, [0, 1, -2, 8, -40], atol=1e-12)

    def test_quadratic_coefficient_is_minus_hhat1(self):
        for alpha in (0.5, 0.8, 1.3):
            m = lsv(alpha)
            t = hat_T_series(m, 6)
            assert t.coeffs[2].real == pytest.approx(-m.hhat1, rel=1e-12)

    def test_matches_backward_step_in_z(self):
        # T-hat(x^alpha) = f_b^{-1}(x)^alpha for x small
        m = lsv(0.8)
        t = hat_T_series(m, 20)
        x = 1e-3
        zhat = x**m.alpha
        lhs = t.eval(zhat)
        rhs = eval_fb_inverse(m, x) ** m.alpha
        assert lhs == pytest.approx(rhs, rel=1e-13)

    def test_order_bounds(self):
        with pytest.raises(ValueError):
            hat_T_series(lsv(1.0), 1)
        with pytest.raises(ValueError):
            hat_T_series(lsv(1.0), 100)


class TestUNPDiagnostics:
    def test_doubling_map(self):
        rep = branch_family_report(doubling_branches(), 0.0, 1.0, 200)
        assert rep.expanding
        assert rep.lambda_check == pytest.approx(math.sqrt(2), abs=2e-3)
        assert rep.max_distortion == pytest.approx(0.0, abs=1e-9)
        assert rep.xi == 0.0
        assert rep.n_branches == 2

    def test_lsv_induced_family(self):
        rep = verify_unp(lsv(0.6), 40, n_max=8)
        assert rep.expanding
        assert rep.lambda_check > 1.0
        assert np.isfinite(rep.max_distortion)
        assert rep.n_branches == 9

    def test_induced_cells_shrink_with_depth(self):
        from intermittent.map_model import induced_branch_family
        m = lsv(1.0)
        fam = induced_branch_family(m, 5)
        widths = [br.cell[1] - br.cell[0] for br in fam]
        assert all(w2 < w1 for w1, w2 in zip(widths, widths[1:]))
        # depth-0 branch is v itself
        assert fam[0].cell == (0.75, 1.0)
