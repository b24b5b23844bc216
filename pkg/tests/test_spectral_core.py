import numpy as np
import pytest

from dslab.spectral_core import (
    ComplexField,
    DilationBoundaryWarning,
    DilationParams,
    apply_multiplier,
    derivative_symbol,
    dilate,
    dilation_lp_factor,
    fftn,
    gaussian_packet,
    laplacian_symbol,
    make_grid,
    plane_wave,
    random_field,
    sobolev_symbol,
    weight_apply,
)


class TestMakeGrid:
    def test_1d_frequency_table(self):
        g = make_grid(1, 8, 4.0)
        assert g.spacing == 1.0
        expected = {0.0, np.pi / 4, -np.pi / 4, np.pi / 2, -np.pi / 2,
                    3 * np.pi / 4, -3 * np.pi / 4, np.pi}
        assert set(np.round(g.axis_freqs, 12)) == set(np.round(list(expected), 12))

    def test_3d_point_count(self):
        assert make_grid(3, 4, 2.0).n_points == 64

    def test_2d_spacing(self):
        assert make_grid(2, 16, 10.0).spacing == 1.25

    def test_rejects_odd_n(self):
        with pytest.raises(ValueError):
            make_grid(1, 9, 1.0)

    def test_rejects_small_n(self):
        with pytest.raises(ValueError):
            make_grid(1, 2, 1.0)

    def test_rejects_nonpositive_length(self):
        with pytest.raises(ValueError):
            make_grid(1, 8, 0.0)

    def test_frequency_symmetry_up_to_nyquist(self):
        g = make_grid(1, 16, 3.0)
        freqs = np.sort(g.axis_freqs)
        paired = freqs[np.abs(freqs) < np.max(np.abs(freqs)) - 1e-12]
        assert np.allclose(np.sort(paired), -np.sort(-paired) * -1)
        assert np.sum(np.abs(np.abs(freqs) - np.max(np.abs(freqs))) < 1e-12) == 1

    def test_deterministic(self):
        a, b = make_grid(2, 8, 2.0), make_grid(2, 8, 2.0)
        assert np.array_equal(a.axis_freqs, b.axis_freqs)
        assert np.array_equal(a.axis_coords, b.axis_coords)


class TestApplyMultiplier:
    def test_constant_field_fixed_by_bracket(self):
        g = make_grid(2, 8, 3.0)
        f = ComplexField(g, np.ones(g.shape))
        out = apply_multiplier(f, sobolev_symbol(1.3))
        assert np.allclose(out.values, 1.0, atol=1e-13)

    def test_plane_wave_eigenfunction(self):
        g = make_grid(2, 16, 5.0)
        k = np.array([3, -2])
        f = plane_wave(g, k)
        alpha = 0.7
        out = apply_multiplier(f, sobolev_symbol(alpha))
        xi_sq = np.sum((np.pi * k / g.half_length) ** 2)
        assert np.allclose(out.values, (1 + xi_sq) ** (alpha / 2) * f.values, atol=1e-12)

    def test_alpha_two_matches_composed_first_derivatives(self):
        # independent oracle: <D>^2 f = f + sum_j D_j(D_j f) built from
        # first-order spectral derivatives applied twice
        g = make_grid(2, 32, 4.0)
        rng = np.random.default_rng(7)
        f = random_field(g, rng)
        out = apply_multiplier(f, sobolev_symbol(2.0))
        oracle = f.values.copy()
        for ax in range(g.dim):
            d1 = apply_multiplier(f, derivative_symbol(ax))
            d2 = apply_multiplier(d1, derivative_symbol(ax))
            oracle += d2.values
        rel = np.linalg.norm(out.values - oracle) / np.linalg.norm(oracle)
        assert rel < 1e-12

    def test_product_symbol_equals_composition(self):
        g = make_grid(1, 64, 6.0)
        rng = np.random.default_rng(3)
        f = random_field(g, rng)
        m1, m2 = sobolev_symbol(0.9), laplacian_symbol()
        both = apply_multiplier(apply_multiplier(f, m1), m2)
        from dslab.spectral_core import FourierSymbol

        prod = FourierSymbol(lambda xi: m1.evaluator(xi) * m2.evaluator(xi), "m1*m2")
        direct = apply_multiplier(f, prod)
        rel = np.linalg.norm(both.values - direct.values) / np.linalg.norm(direct.values)
        assert rel < 1e-12

    def test_bracket_hermitian_and_bounded_below(self):
        g = make_grid(2, 16, 3.0)
        rng = np.random.default_rng(11)
        for _ in range(10):
            f, h = random_field(g, rng), random_field(g, rng)
            af = apply_multiplier(f, sobolev_symbol(1.1))
            ah = apply_multiplier(h, sobolev_symbol(1.1))
            lhs = ah.inner(f)
            rhs = np.conj(af.inner(h))
            assert abs(lhs - rhs) <= 1e-10 * f.l2_norm() * h.l2_norm()
            quad = af.inner(f)
            assert abs(quad.imag) <= 1e-10 * f.l2_norm() ** 2
            assert quad.real >= f.l2_norm() ** 2 * (1 - 1e-12)


class TestPlancherel:
    def test_norm_preserved(self):
        g = make_grid(3, 8, 2.0)
        rng = np.random.default_rng(5)
        for _ in range(5):
            f = random_field(g, rng)
            spec = fftn(f.values)
            spec_norm = np.sqrt(g.quad_weight * np.sum(np.abs(spec) ** 2) / g.n_points)
            assert abs(spec_norm - f.l2_norm()) <= 1e-12 * f.l2_norm()


class TestWeightApply:
    def test_identity_at_zero_exponent(self):
        g = make_grid(2, 8, 2.0)
        f = random_field(g, np.random.default_rng(0))
        out = weight_apply(f, 0.0)
        assert np.array_equal(out.values, f.values)

    def test_origin_unchanged(self):
        g = make_grid(1, 8, 4.0)
        f = ComplexField(g, np.arange(8, dtype=complex))
        i0 = np.argmin(np.abs(g.axis_coords))
        assert g.axis_coords[i0] == 0.0
        for s in (-3.0, 0.5, 2.0):
            assert weight_apply(f, s).values[i0] == f.values[i0]

    def test_value_at_sqrt3(self):
        # <x>^-2 at |x| = sqrt(3) divides by (1+3) = 4
        g = make_grid(3, 8, 4.0)
        f = ComplexField(g, np.ones(g.shape))
        out = weight_apply(f, -2.0)
        idx = tuple(np.argmin(np.abs(g.axis_coords - 1.0)) for _ in range(3))
        assert np.isclose(out.values[idx], 0.25, atol=1e-14)


class TestDilate:
    def _supported_gaussian(self, n=256, L=8.0):
        g = make_grid(1, n, L)
        return gaussian_packet(g, center=0.0, width=1.0)

    def test_theta_zero_identity(self):
        f = self._supported_gaussian()
        out = dilate(f, DilationParams(0.0, 1))
        assert np.array_equal(out.values, f.values)

    @pytest.mark.parametrize("scale", [2.0, 4.0])
    @pytest.mark.parametrize("p", [1.0, 2.0, np.inf])
    def test_lp_norm_law_grid_exact(self, scale, p):
        f = self._supported_gaussian()
        theta = np.log(scale)
        with pytest.warns(DilationBoundaryWarning):
            out = dilate(f, DilationParams(theta, 1))
        factor = dilation_lp_factor(theta, 1, p)
        assert abs(out.lp_norm(p) - factor * f.lp_norm(p)) <= 1e-12 * f.lp_norm(p)

    def test_exact_bijection_on_supported_samples(self):
        g = make_grid(1, 64, 4.0)
        rng = np.random.default_rng(9)
        f = random_field(g, rng)
        theta = np.log(2.0)
        with pytest.warns(DilationBoundaryWarning):
            out = dilate(f, DilationParams(theta, 1))
        n = g.n_per_axis
        amp = np.exp(theta / 2)
        for i in range(n):
            j = round((1 - 2.0) * n / 2 + 2.0 * i)
            expected = amp * f.values[j] if 0 <= j < n else 0.0
            assert out.values[i] == expected

    def test_interpolation_path_matches_exact_on_smooth_field(self):
        # non-integer scale factor exercised on a band-limited field where
        # the trig interpolant is the exact function
        g = make_grid(1, 64, 8.0)
        k = 2
        f = plane_wave(g, np.array([k]))
        scale = 1.5
        out = dilate(f, DilationParams(np.log(scale), 1))
        xi = np.pi * k / g.half_length
        y = scale * g.axis_coords
        inside = (y >= -g.half_length) & (y < g.half_length)
        expected = scale**0.5 * np.exp(1j * xi * y) * inside
        assert np.allclose(out.values, expected, atol=1e-10)

    def test_2d_norm_law(self):
        g = make_grid(2, 128, 8.0)
        f = gaussian_packet(g, width=1.0)
        theta = np.log(2.0)
        with pytest.warns(DilationBoundaryWarning):
            out = dilate(f, DilationParams(theta, 2))
        assert abs(out.l2_norm() - f.l2_norm()) <= 1e-12 * f.l2_norm()
        factor_inf = dilation_lp_factor(theta, 2, np.inf)
        assert abs(out.lp_norm(np.inf) - factor_inf * f.lp_norm(np.inf)) <= 1e-12


class TestDilationLpFactor:
    def test_p2_is_isometry(self):
        assert dilation_lp_factor(0.83, 3, 2.0) == pytest.approx(1.0, abs=1e-15)

    def test_known_value_p_inf(self):
        # theta = ln(4)/2, d = 3, p = inf -> 4^(3/4)
        assert dilation_lp_factor(np.log(4.0) / 2, 3, np.inf) == pytest.approx(4 ** 0.75, rel=1e-14)

    def test_known_value_p1(self):
        # theta = ln(9)/2, d = 2, p = 1 -> 9^(-1/2)
        assert dilation_lp_factor(np.log(9.0) / 2, 2, 1.0) == pytest.approx(1 / 3, rel=1e-14)

    def test_rejects_p_below_one(self):
        with pytest.raises(ValueError):
            dilation_lp_factor(0.1, 2, 0.5)
