"""Log scaling, the analytic Jet map, and PNG round-trips."""

from __future__ import annotations

import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from sleepspec import imaging
from sleepspec.stages import SleepStage


class TestLogScale:
    def test_paper_mode_unit_value(self):
        assert imaging.log_scale(np.array([1.0]), mode="paper")[0] == pytest.approx(1.0)

    def test_paper_mode_boundary(self):
        x = np.array([math.exp(-1.0)])
        assert imaging.log_scale(x, mode="paper")[0] == pytest.approx(0.0, abs=1e-12)

    def test_paper_mode_clamps(self):
        out = imaging.log_scale(np.array([0.0, 1e9]), mode="paper")
        assert out[0] == 0.0 and out[1] == 1.0

    def test_percentile_endpoints(self):
        stats = imaging.ScalingStats(p05=0.25, p98=4.0)
        out = imaging.log_scale(np.array([0.25, 4.0]), stats=stats)
        np.testing.assert_allclose(out, [0.0, 1.0])

    def test_degenerate_range(self):
        stats = imaging.ScalingStats(p05=1.0, p98=1.0)
        with pytest.raises(imaging.DegenerateRange):
            imaging.log_scale(np.array([1.0]), stats=stats)

    def test_percentiles_computed_over_floored_power(self):
        values = np.concatenate([np.zeros(5), np.linspace(0.1, 10.0, 95)])
        stats = imaging.power_percentiles(values)
        assert stats.p05 > 0
        assert stats.p05 < stats.p98


class TestJet:
    @pytest.mark.parametrize(
        "u,expected",
        [
            (0.0, (0.0, 0.0, 0.5)),
            (0.25, (0.0, 0.5, 1.0)),
            (0.5, (0.5, 1.0, 0.5)),
            (0.75, (1.0, 0.5, 0.0)),
            (1.0, (0.5, 0.0, 0.0)),
        ],
    )
    def test_breakpoints(self, u, expected):
        np.testing.assert_allclose(imaging.jet(u), expected)

    def test_blue_to_red_progression(self):
        ramp = imaging.jet(np.linspace(0, 1, 101))
        blue, red = ramp[:, 2], ramp[:, 0]
        assert blue[0] > red[0]
        assert red[-1] > blue[-1]
        assert np.argmax(blue) < np.argmax(ramp[:, 1]) < np.argmax(red)

    @given(st.floats(min_value=0.0, max_value=1.0, allow_nan=False))
    @settings(max_examples=200)
    def test_range_property(self, u):
        rgb = imaging.jet(u)
        assert np.all(rgb >= 0.0) and np.all(rgb <= 1.0)

    @given(st.floats(min_value=0.0, max_value=1.0 - 1e-6))
    @settings(max_examples=100)
    def test_piecewise_linear_continuity(self, u):
        a, b = imaging.jet(u), imaging.jet(u + 1e-6)
        assert np.all(np.abs(a - b) <= 4.1e-6)


def _checker_image(h=16, w=16):
    rng = np.random.default_rng(0)
    pixels = imaging.jet(rng.random((h, w)))
    return imaging.EpochImage(
        pixels=pixels, label=SleepStage.W, subject_id="S01", night=1, epoch_index=0
    )


class TestPng:
    def test_round_trip(self, tmp_path):
        image = _checker_image()
        path = tmp_path / "x.png"
        imaging.encode_png(image, path)
        np.testing.assert_array_equal(imaging.decode_png(path), image.quantized())

    def test_all_zero_round_trip(self, tmp_path):
        zero = np.zeros((8, 8, 3), dtype=np.uint8)
        path = tmp_path / "zero.png"
        imaging.encode_png(zero, path)
        np.testing.assert_array_equal(imaging.decode_png(path), zero)

    def test_byte_identical_across_encodes(self, tmp_path):
        image = _checker_image()
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        imaging.encode_png(image, p1)
        imaging.encode_png(image, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_quantization_rule(self):
        image = imaging.EpochImage(
            pixels=np.full((2, 2, 3), 0.5),
            label=SleepStage.R,
            subject_id="S",
            night=1,
            epoch_index=0,
        )
        # round(127.5) half-up -> 128
        assert image.quantized()[0, 0, 0] == 128

    def test_rejects_bad_arrays(self, tmp_path):
        with pytest.raises(ValueError):
            imaging.encode_png(np.zeros((4, 4), dtype=np.uint8), tmp_path / "x.png")


def test_image_filename_convention():
    name = imaging.image_filename("S07", 2, 131, SleepStage.N3)
    assert name == "S07_2_131_N3.png"


def test_row_zero_is_highest_frequency():
    from sleepspec.multitaper import Spectrogram

    power = np.zeros((4, 3))
    power[0, :] = 100.0  # strong lowest-frequency row
    spec = Spectrogram(
        power=power,
        time_centers_s=np.arange(3, dtype=float),
        freqs_hz=np.linspace(0, 30, 4),
    )
    image = imaging.spectrogram_to_image(
        spec, SleepStage.W, "S", 1, 0, mode="paper"
    )
    # hot (low-frequency) content must appear in the BOTTOM image row
    assert image.pixels[-1, 0, 0] > image.pixels[0, 0, 0]
