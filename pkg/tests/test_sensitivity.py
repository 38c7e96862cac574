"""Sensitivity-map aggregation and rendering."""

from __future__ import annotations

import numpy as np
import pytest

from sleepspec import imaging, sensitivity
from sleepspec.dataset import ManifestEntry
from sleepspec.stages import SleepStage


class TestSensitivityMap:
    def test_single_hot_pixel(self):
        grads = np.zeros((1, 8, 8, 3))
        grads[0, 2, 3] = [-1.0, 2.0, 0.0]
        smap = sensitivity.sensitivity_map(grads, SleepStage.W)
        assert smap.values[2, 3] == 1.0
        assert smap.values.sum() == 1.0
        assert not smap.degenerate
        assert smap.n_examples == 1

    def test_constant_field_is_degenerate(self):
        grads = np.full((3, 4, 4, 3), 0.7)
        smap = sensitivity.sensitivity_map(grads, SleepStage.N2)
        assert smap.degenerate
        np.testing.assert_array_equal(smap.values, 0.0)

    def test_mean_matches_bruteforce(self):
        rng = np.random.default_rng(0)
        grads = rng.standard_normal((7, 6, 6, 3))
        smap = sensitivity.sensitivity_map(grads, SleepStage.R)
        expected = np.zeros((6, 6))
        for g in grads:
            expected += np.abs(g).sum(axis=2)
        expected /= 7
        expected = (expected - expected.min()) / (expected.max() - expected.min())
        np.testing.assert_allclose(smap.values, expected, rtol=1e-6, atol=1e-12)

    def test_scale_invariance(self):
        rng = np.random.default_rng(1)
        grads = rng.standard_normal((4, 5, 5, 3))
        a = sensitivity.sensitivity_map(grads, SleepStage.W)
        b = sensitivity.sensitivity_map(17.5 * grads, SleepStage.W)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)

    def test_argmax_matches_unnormalized(self):
        rng = np.random.default_rng(2)
        grads = rng.standard_normal((5, 9, 9, 3))
        smap = sensitivity.sensitivity_map(grads, SleepStage.N3)
        raw = np.abs(grads).mean(axis=0).sum(axis=2)
        assert np.unravel_index(smap.values.argmax(), smap.values.shape) == (
            np.unravel_index(raw.argmax(), raw.shape)
        )

    def test_duplicating_identical_examples_keeps_map(self):
        rng = np.random.default_rng(3)
        one = rng.standard_normal((1, 4, 4, 3))
        many = np.repeat(one, 5, axis=0)
        a = sensitivity.sensitivity_map(one, SleepStage.N1)
        b = sensitivity.sensitivity_map(many, SleepStage.N1)
        np.testing.assert_allclose(a.values, b.values, rtol=1e-12)

    def test_selection_by_entries(self):
        entries = [
            ManifestEntry("a", "S01", 1, 0, "W", "p"),
            ManifestEntry("b", "S02", 1, 0, "W", "p"),
            ManifestEntry("c", "S01", 1, 1, "R", "p"),
        ]
        grads = np.zeros((3, 2, 2, 3))
        grads[0, 0, 0, 0] = 1.0
        grads[1, 1, 1, 0] = 1.0
        smap = sensitivity.sensitivity_map(
            grads, SleepStage.W, subject="S01", entries=entries
        )
        assert smap.n_examples == 1
        assert smap.values[0, 0] == 1.0

    def test_empty_selection(self):
        entries = [ManifestEntry("a", "S01", 1, 0, "W", "p")]
        with pytest.raises(sensitivity.EmptySelection):
            sensitivity.sensitivity_map(
                np.zeros((1, 2, 2, 3)), SleepStage.R, entries=entries
            )


class TestRenderMap:
    def test_zero_map_renders_jet_zero(self, tmp_path):
        smap = sensitivity.SensitivityMap(
            values=np.zeros((4, 4)),
            stage=SleepStage.W,
            subject=None,
            n_examples=1,
            degenerate=True,
        )
        path = tmp_path / "m.png"
        sensitivity.render_map(smap, path)
        pixels = imaging.decode_png(path)
        np.testing.assert_array_equal(pixels[..., 0], 0)
        np.testing.assert_array_equal(pixels[..., 1], 0)
        np.testing.assert_array_equal(pixels[..., 2], 128)  # jet(0) = (0, 0, 0.5)

    def test_peak_pixel_is_jet_one(self, tmp_path):
        values = np.zeros((3, 3))
        values[1, 1] = 1.0
        smap = sensitivity.SensitivityMap(
            values=values, stage=SleepStage.R, subject="S07", n_examples=2
        )
        path = tmp_path / "m.png"
        sensitivity.render_map(smap, path)
        pixels = imaging.decode_png(path)
        np.testing.assert_array_equal(pixels[1, 1], [128, 0, 0])  # jet(1) = (0.5, 0, 0)

    def test_render_is_deterministic(self, tmp_path):
        rng = np.random.default_rng(4)
        smap = sensitivity.sensitivity_map(
            rng.standard_normal((3, 8, 8, 3)), SleepStage.N2
        )
        p1, p2 = tmp_path / "a.png", tmp_path / "b.png"
        sensitivity.render_map(smap, p1)
        sensitivity.render_map(smap, p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_filename_convention(self):
        smap = sensitivity.SensitivityMap(
            values=np.zeros((2, 2)), stage=SleepStage.N3, subject="S07", n_examples=1
        )
        assert sensitivity.map_filename(smap) == "sensmap_S07_N3.png"
        all_subjects = sensitivity.SensitivityMap(
            values=np.zeros((2, 2)), stage=SleepStage.W, subject=None, n_examples=1
        )
        assert sensitivity.map_filename(all_subjects) == "sensmap_all_W.png"
