"""Displacement map sampling, calibration, and texture quantization tests."""

import numpy as np
import pytest

from mixrt.displacement import (
    DisplacementMaps,
    QuantizationParams,
    bilinear_footprint,
    bilinear_sample,
    calibrate,
    dequantize_texture,
    displacement_vector,
    quantize_maps,
    quantize_texture,
    round_half_away,
    sample_maps,
)
from mixrt.fields import SH_C0, ShBasis, sh_eval

from conftest import oracle_bilinear


class TestRounding:
    def test_halves_away_from_zero(self):
        np.testing.assert_array_equal(
            round_half_away(np.array([0.5, 1.5, 2.5, -0.5, -1.5])),
            [1.0, 2.0, 3.0, -1.0, -2.0])

    def test_non_halves_nearest(self):
        np.testing.assert_array_equal(
            round_half_away(np.array([2.4, 2.6, -2.4, -2.6, 0.0])),
            [2.0, 3.0, -2.0, -3.0, 0.0])


class TestQuantization:
    def test_params_validation(self):
        with pytest.raises(ValueError):
            QuantizationParams(0.0, 0.0)
        with pytest.raises(ValueError):
            QuantizationParams(0.0, -1.0)
        with pytest.raises(ValueError):
            QuantizationParams(np.nan, 1.0)

    def test_endpoints_exact(self):
        values = np.array([[-1.5, 0.25], [3.0, 1.0]])
        codes, params = quantize_texture(values)
        assert codes.dtype == np.uint8
        assert codes[0, 0] == 0
        assert codes[1, 0] == 255
        out = dequantize_texture(codes, params)
        assert out[0, 0] == pytest.approx(-1.5, abs=1e-12)
        assert out[1, 0] == pytest.approx(3.0, abs=1e-12)

    def test_midpoint_code_and_value(self):
        # 0.5 amid [0, 1] maps to code 128 (half rounds away from zero);
        # the dequantized value is 128/255
        values = np.array([0.0, 0.5, 1.0])
        codes, params = quantize_texture(values)
        assert list(codes) == [0, 128, 255]
        out = dequantize_texture(codes, params)
        assert out[1] == pytest.approx(0.5019607843137255, abs=1e-15)

    def test_constant_texture(self):
        values = np.full((4, 4), 2.5)
        codes, params = quantize_texture(values)
        assert np.all(codes == 0)
        assert params.minimum == 2.5
        assert params.step == 1.0
        np.testing.assert_array_equal(dequantize_texture(codes, params), values)

    def test_round_trip_error_bound(self, rng):
        values = rng.uniform(-3.0, 5.0, size=(32, 32, 4))
        codes, params = quantize_texture(values)
        out = dequantize_texture(codes, params)
        assert np.max(np.abs(out - values)) <= params.step / 2 + 1e-12

    def test_quantize_is_idempotent(self, rng):
        # quantizing already-quantized values reproduces the same codes
        values = rng.uniform(-1.0, 1.0, size=(16, 16))
        codes, params = quantize_texture(values)
        deq = dequantize_texture(codes, params)
        codes2, params2 = quantize_texture(deq)
        np.testing.assert_array_equal(codes, codes2)
        assert params2.minimum == pytest.approx(params.minimum, abs=1e-12)
        assert params2.step == pytest.approx(params.step, rel=1e-9)

    def test_rejects_non_finite(self):
        with pytest.raises(ValueError):
            quantize_texture(np.array([0.0, np.inf]))


class TestDisplacementMaps:
    def test_zeros_shapes(self):
        maps = DisplacementMaps.zeros(8, 2)
        assert maps.num_coeffs == 9
        assert maps.sh_map.shape == (8, 8, 27)
        assert maps.scale_map.shape == (8, 8, 1)
        assert maps.basis == ShBasis(2)

    def test_shape_validation(self):
        with pytest.raises(ValueError):
            DisplacementMaps(resolution=4, sh_degree=1,
                             sh_map=np.zeros((4, 4, 11)),
                             scale_map=np.zeros((4, 4, 1)))
        with pytest.raises(ValueError):
            DisplacementMaps(resolution=4, sh_degree=1,
                             sh_map=np.zeros((4, 4, 12)),
                             scale_map=np.zeros((4, 4)))
        with pytest.raises(ValueError):
            DisplacementMaps.zeros(4, 7)

    def test_train_init_keeps_identity_displacement(self, rng):
        # scale gates the product, so points are unmoved at initialization
        # even though the coefficient texture is non-zero
        maps = DisplacementMaps.train_init(8, 1, rng)
        assert np.any(maps.sh_map != 0.0)
        assert np.all(maps.scale_map == 0.0)
        p = rng.uniform(-1.0, 1.0, size=(5, 3))
        uv = rng.uniform(size=(5, 2))
        d = np.tile([0.0, 0.0, 1.0], (5, 1))
        np.testing.assert_array_equal(calibrate(maps, p, uv, d), p)

    def test_copy_is_deep(self, rng):
        maps = DisplacementMaps.train_init(4, 1, rng)
        dup = maps.copy()
        dup.sh_map[:] = 0.0
        assert np.any(maps.sh_map != 0.0)


class TestBilinearSampling:
    def test_texel_centers_exact(self, rng):
        tex = rng.uniform(size=(6, 6, 3))
        for iy in range(6):
            for ix in range(6):
                uv = np.array([(ix + 0.5) / 6, (iy + 0.5) / 6])
                np.testing.assert_allclose(bilinear_sample(tex, uv), tex[iy, ix],
                                           atol=1e-12)

    def test_midpoint_between_texels(self):
        tex = np.zeros((2, 2, 1))
        tex[0, 0, 0] = 1.0
        tex[0, 1, 0] = 3.0
        # halfway between the two top texels
        out = bilinear_sample(tex, np.array([0.5, 0.25]))
        assert out[0] == pytest.approx(2.0, abs=1e-12)

    def test_matches_oracle(self, rng):
        tex = rng.uniform(size=(9, 9, 2))
        for _ in range(100):
            uv = rng.uniform(-0.2, 1.2, size=2)
            np.testing.assert_allclose(bilinear_sample(tex, uv),
                                       oracle_bilinear(tex, uv[0], uv[1]),
                                       atol=1e-12)

    def test_border_clamp_holds_edge_value(self, rng):
        tex = rng.uniform(size=(4, 4, 1))
        # far outside the chart: the corner texel value holds
        np.testing.assert_allclose(bilinear_sample(tex, np.array([-3.0, -3.0])),
                                   tex[0, 0], atol=1e-12)
        np.testing.assert_allclose(bilinear_sample(tex, np.array([5.0, 5.0])),
                                   tex[3, 3], atol=1e-12)

    def test_footprint_center_geometry(self):
        ix0, iy0, ix1, iy1, fx, fy = bilinear_footprint(4, np.array([0.5, 0.5]))
        assert (ix0, iy0, ix1, iy1) == (1, 1, 2, 2)
        assert fx == pytest.approx(0.5) and fy == pytest.approx(0.5)

    def test_footprint_uv_axes(self):
        # uv.x walks columns, uv.y walks rows
        tex = np.arange(16, dtype=np.float64).reshape(4, 4, 1)
        right = bilinear_sample(tex, np.array([0.875, 0.125]))[0]
        down = bilinear_sample(tex, np.array([0.125, 0.875]))[0]
        assert right == pytest.approx(tex[0, 3, 0])
        assert down == pytest.approx(tex[3, 0, 0])

    def test_batch_shapes(self, rng):
        tex = rng.uniform(size=(8, 8, 5))
        uv = rng.uniform(size=(3, 4, 2))
        assert bilinear_sample(tex, uv).shape == (3, 4, 5)

    def test_continuity_inside_chart(self, rng):
        tex = rng.uniform(size=(16, 16, 1))
        u = 5.5 / 16
        eps = 1e-10
        a = bilinear_sample(tex, np.array([u - eps, 0.4]))
        b = bilinear_sample(tex, np.array([u + eps, 0.4]))
        np.testing.assert_allclose(a, b, atol=1e-8)


class TestDisplacement:
    def test_degree_zero_worked_example(self):
        # constant x coefficient 1 and scale 2 shift x by 2 * Y00
        maps = DisplacementMaps.zeros(4, 0)
        maps.sh_map[..., 0] = 1.0
        maps.scale_map[:] = 2.0
        p = np.array([1.0, 2.0, 3.0])
        out = calibrate(maps, p, np.array([0.5, 0.5]), np.array([0.0, 0.0, 1.0]))
        np.testing.assert_allclose(out, [1.0 + 2.0 * SH_C0, 2.0, 3.0], atol=1e-12)
        assert out[0] == pytest.approx(1.5641895835477563, abs=1e-9)

    def test_axis_major_coefficient_layout(self):
        # channel blocks are [x coeffs | y coeffs | z coeffs]
        k = 4  # degree 1
        for axis in range(3):
            maps = DisplacementMaps.zeros(4, 1)
            maps.sh_map[..., axis * k] = 1.0
            maps.scale_map[:] = 1.0
            disp = displacement_vector(maps, np.array([0.5, 0.5]),
                                       np.array([0.0, 0.0, 1.0]))
            expect = np.zeros(3)
            expect[axis] = SH_C0
            np.testing.assert_allclose(disp, expect, atol=1e-12)

    def test_view_dependence_flips_with_direction(self):
        # a pure z-linear SH coefficient is odd under direction reversal
        maps = DisplacementMaps.zeros(4, 1)
        maps.sh_map[..., 2] = 1.0    # x-axis block, basis index 2 (~ z)
        maps.scale_map[:] = 1.0
        up = displacement_vector(maps, np.array([0.5, 0.5]),
                                 np.array([0.0, 0.0, 1.0]))
        dn = displacement_vector(maps, np.array([0.5, 0.5]),
                                 np.array([0.0, 0.0, -1.0]))
        np.testing.assert_allclose(up, -dn, atol=1e-12)
        assert up[0] != 0.0

    def test_matches_explicit_einsum(self, rng):
        maps = DisplacementMaps(
            resolution=8, sh_degree=2,
            sh_map=rng.normal(size=(8, 8, 27)),
            scale_map=rng.normal(size=(8, 8, 1)))
        uv = rng.uniform(size=(10, 2))
        d = rng.normal(size=(10, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        got = displacement_vector(maps, uv, d)
        coeffs, scale = sample_maps(maps, uv)
        basis = sh_eval(ShBasis(2), d)
        for i in range(10):
            c = coeffs[i].reshape(3, 9)
            np.testing.assert_allclose(got[i], (c @ basis[i]) * scale[i],
                                       atol=1e-12)

    def test_zero_maps_identity(self, rng):
        maps = DisplacementMaps.zeros(8, 2)
        p = rng.normal(size=(6, 3))
        uv = rng.uniform(size=(6, 2))
        d = np.tile([1.0, 0.0, 0.0], (6, 1))
        np.testing.assert_array_equal(calibrate(maps, p, uv, d), p)

    def test_scale_is_multiplicative(self, rng):
        maps = DisplacementMaps(
            resolution=4, sh_degree=1,
            sh_map=rng.normal(size=(4, 4, 12)),
            scale_map=np.full((4, 4, 1), 0.5))
        double = maps.copy()
        double.scale_map[:] = 1.0
        uv = np.array([0.3, 0.7])
        d = np.array([0.0, 1.0, 0.0])
        np.testing.assert_allclose(2.0 * displacement_vector(maps, uv, d),
                                   displacement_vector(double, uv, d), atol=1e-12)

    def test_batch_shapes(self, rng):
        maps = DisplacementMaps.train_init(8, 2, rng)
        uv = rng.uniform(size=(5, 7, 2))
        d = np.broadcast_to([0.0, 0.0, 1.0], (5, 7, 3))
        assert displacement_vector(maps, uv, d).shape == (5, 7, 3)
        assert calibrate(maps, np.zeros((5, 7, 3)), uv, d).shape == (5, 7, 3)


class TestQuantizeMaps:
    def test_values_snap_to_grid(self, rng):
        maps = DisplacementMaps(
            resolution=16, sh_degree=1,
            sh_map=rng.normal(size=(16, 16, 12)),
            scale_map=rng.uniform(size=(16, 16, 1)))
        out, params = quantize_maps(maps)
        assert set(params) == {"sh", "scale"}
        assert out.sh_quant is params["sh"]
        assert out.scale_quant is params["scale"]
        assert np.max(np.abs(out.sh_map - maps.sh_map)) <= params["sh"].step / 2 + 1e-12
        codes = round_half_away((out.sh_map - params["sh"].minimum) / params["sh"].step)
        np.testing.assert_allclose(codes, np.rint(codes), atol=1e-6)

    def test_second_quantization_is_stable(self, rng):
        maps = DisplacementMaps(
            resolution=8, sh_degree=0,
            sh_map=rng.normal(size=(8, 8, 3)),
            scale_map=rng.normal(size=(8, 8, 1)))
        once, p1 = quantize_maps(maps)
        twice, p2 = quantize_maps(once)
        np.testing.assert_array_equal(once.sh_map, twice.sh_map)
        np.testing.assert_array_equal(once.scale_map, twice.scale_map)

    def test_rendering_error_small(self, rng):
        # quantization perturbs the displacement by well under a percent of
        # its magnitude for a typical coefficient range
        maps = DisplacementMaps(
            resolution=16, sh_degree=2,
            sh_map=rng.uniform(-0.5, 0.5, size=(16, 16, 27)),
            scale_map=rng.uniform(0.0, 0.1, size=(16, 16, 1)))
        q, _ = quantize_maps(maps)
        uv = rng.uniform(size=(50, 2))
        d = rng.normal(size=(50, 3))
        d /= np.linalg.norm(d, axis=1, keepdims=True)
        err = displacement_vector(q, uv, d) - displacement_vector(maps, uv, d)
        assert np.max(np.abs(err)) < 2e-3
