"""Quantization arithmetic, bounds, and model-level conversion tests."""
import numpy as np
import pytest

from cactiscan.models import build_lightweight_cnn, count_params, forward
from cactiscan.quantize import (
    QuantParams,
    QuantizationError,
    calibrate_minmax,
    dequantize,
    f16_saturation_count,
    quantize_f16,
    quantize_int8,
    quantize_model,
)
from cactiscan.tensor import Tensor


class TestCalibrate:
    def test_definition_arithmetic(self):
        qp = calibrate_minmax(np.array([-1.27, 0.4, 1.27], dtype=np.float32))
        assert qp.scale == pytest.approx(0.01)
        assert qp.zero_point == 0

    def test_all_zero_degenerate_rule(self):
        qp = calibrate_minmax(np.zeros(16, dtype=np.float32))
        assert qp.scale == 1.0 and qp.zero_point == 0

    def test_scale_matches_independent_scan(self, rng):
        w = rng.standard_normal(1000).astype(np.float32)
        qp = calibrate_minmax(w)
        max_abs = max(abs(float(v)) for v in w)  # independent one-pass scan
        assert qp.scale == pytest.approx(max_abs / 127, rel=1e-7)

    def test_nan_rejected(self):
        with pytest.raises(QuantizationError):
            calibrate_minmax(np.array([1.0, np.nan], dtype=np.float32))

    def test_inf_rejected(self):
        with pytest.raises(QuantizationError):
            calibrate_minmax(np.array([np.inf], dtype=np.float32))

    def test_affine_scheme_selectable(self):
        w = np.array([0.0, 2.55], dtype=np.float32)
        qp = calibrate_minmax(w, scheme="affine")
        assert qp.scale == pytest.approx(0.01)
        assert qp.zero_point == -128

    def test_scale_must_be_positive(self):
        with pytest.raises(QuantizationError):
            QuantParams(scale=0.0)


class TestInt8:
    def test_zero_maps_to_zero_point(self):
        qp = QuantParams(scale=0.5, zero_point=3)
        assert quantize_int8(np.array([0.0], dtype=np.float32), qp).data[0] == 3

    def test_round_half_to_even(self):
        qp = QuantParams(scale=1.0, zero_point=0)
        q = quantize_int8(np.array([1.4, -2.5], dtype=np.float32), qp)
        np.testing.assert_array_equal(q.data, [1, -2])

    def test_clamps_to_i8(self):
        qp = QuantParams(scale=0.01, zero_point=0)
        q = quantize_int8(np.array([100.0, -100.0], dtype=np.float32), qp)
        np.testing.assert_array_equal(q.data, [127, -128])

    def test_round_trip_error_bound(self, rng):
        w = (rng.standard_normal(4096) * 3).astype(np.float32)
        qp = calibrate_minmax(w)
        q = quantize_int8(w, qp)
        err = np.abs(dequantize(q, qp).data.astype(np.float64) - w.astype(np.float64))
        assert err.max() <= qp.scale / 2 * (1 + 1e-5)

    def test_monotone_non_decreasing(self, rng):
        w = np.sort(rng.standard_normal(512).astype(np.float32))
        qp = calibrate_minmax(w)
        q = quantize_int8(w, qp).data.astype(np.int32)
        assert np.all(np.diff(q) >= 0)

    def test_dequantize_zero_point(self):
        qp = QuantParams(scale=0.25, zero_point=-5)
        out = dequantize(Tensor(np.array([-5], dtype=np.int8)), qp)
        assert out.data[0] == 0.0

    def test_grid_closure(self):
        # every representable grid point k*S survives the round trip bit-exactly
        s = np.float32(0.013)
        qp = QuantParams(scale=float(s), zero_point=0)
        k = np.arange(-127, 128, dtype=np.float32)
        grid = k * s
        q = quantize_int8(grid, qp)
        np.testing.assert_array_equal(q.data.astype(np.float32), k)
        np.testing.assert_array_equal(dequantize(q, qp).data, grid)

    def test_mode_checked(self):
        with pytest.raises(QuantizationError):
            quantize_int8(np.zeros(1, dtype=np.float32), QuantParams(scale=1.0, mode="f16"))


class TestF16:
    def test_exact_values_preserved(self):
        out = quantize_f16(np.array([1.0, 0.5, -2.0], dtype=np.float32))
        assert out.dtype == "f16"
        np.testing.assert_array_equal(out.f32(), [1.0, 0.5, -2.0])

    def test_third_within_ulp_bound(self):
        got = float(quantize_f16(np.array([1.0 / 3.0], dtype=np.float32)).f32()[0])
        assert abs(got - 1.0 / 3.0) <= 2.0 ** -12 / 3.0

    def test_halves_bytes(self):
        w = np.zeros(100, dtype=np.float32)
        assert quantize_f16(w).nbytes == w.nbytes // 2

    def test_overflow_saturates(self):
        out = quantize_f16(np.array([1e9, -1e9], dtype=np.float32))
        assert np.all(np.isfinite(out.f32()))
        np.testing.assert_array_equal(out.f32(), [65504.0, -65504.0])
        assert f16_saturation_count(np.array([1e9, -1e9, 1.0], dtype=np.float32)) == 2

    def test_round_trip_idempotent_bitwise(self, rng):
        x = rng.standard_normal(10000).astype(np.float32) * 100
        once = quantize_f16(x)
        twice = quantize_f16(once.f32())
        np.testing.assert_array_equal(once.data.view(np.uint16), twice.data.view(np.uint16))


class TestQuantizeModel:
    def test_f16_halves_weight_bytes_exactly(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, report = quantize_model(model, "f16")
        for name, t in model.weights.items():
            assert qmodel.weights[name].nbytes * 2 == t.nbytes
        assert report.compression_ratio == pytest.approx(2.0)

    def test_i8_quarters_weight_bytes_exactly(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, report = quantize_model(model, "i8")
        assert report.compression_ratio == pytest.approx(4.0)
        assert all(s.compressed_bytes < s.original_bytes for s in report.per_tensor.values())

    def test_i8_report_errors_within_bound(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, report = quantize_model(model, "i8")
        for name, stats in report.per_tensor.items():
            qp = qmodel.qparams[name]
            assert stats.max_abs_err <= qp.scale / 2 * (1 + 1e-5)

    def test_already_quantized_rejected(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, _ = quantize_model(model, "f16")
        with pytest.raises(QuantizationError):
            quantize_model(qmodel, "i8")

    def test_param_count_unchanged(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, _ = quantize_model(model, "i8")
        assert count_params(qmodel) == count_params(model)

    def test_argmax_agreement_small_inputs(self):
        # same weights as the 256px model; reduced spatial extent keeps the
        # 200-input harness inside the test budget
        model = build_lightweight_cnn(3, seed=42, input_size=32)
        rng = np.random.default_rng(99)
        batch = rng.random((200, 32, 32, 3)).astype(np.float32)
        base = forward(model, batch).data.argmax(axis=1)
        for mode in ("f16", "i8"):
            qmodel, _ = quantize_model(model, mode)
            q = forward(qmodel, batch).data.argmax(axis=1)
            agreement = float((q == base).mean())
            assert agreement >= 0.95, f"{mode} agreement {agreement}"

    def test_argmax_agreement_full_resolution_spot_check(self):
        model = build_lightweight_cnn(3, seed=42)
        qmodel, _ = quantize_model(model, "f16")
        rng = np.random.default_rng(5)
        batch = rng.random((4, 256, 256, 3)).astype(np.float32)
        base = forward(model, batch).data.argmax(axis=1)
        q = forward(qmodel, batch).data.argmax(axis=1)
        assert np.array_equal(base, q)
