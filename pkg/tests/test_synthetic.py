"""Synthetic dataset generator contracts."""

import filecmp
import json

import numpy as np
import pytest

from retagg.dataset import load_dataset
from retagg.synthetic import MOTIF_CYCLE, SyntheticSpec, generate_dataset, motif


class TestSpecValidation:
    def test_bad_range(self):
        with pytest.raises(ValueError, match="length_range"):
            SyntheticSpec(length_range=(10, 5))

    def test_bad_rate(self):
        with pytest.raises(ValueError, match="rare_pattern_rate"):
            SyntheticSpec(rare_pattern_rate=1.5)

    def test_bad_sigma(self):
        with pytest.raises(ValueError, match="noise_sigma"):
            SyntheticSpec(noise_sigma=-0.1)

    def test_needs_two_series(self):
        with pytest.raises(ValueError, match="n_series"):
            SyntheticSpec(n_series=1)


class TestGenerateDataset:
    def test_manifest_counts_and_labels(self, tmp_path):
        spec = SyntheticSpec(n_series=20, length_range=(200, 400), pattern_length=64, seed=1)
        generate_dataset(spec, tmp_path)
        manifest = json.loads((tmp_path / "manifest.json").read_text())
        assert len(manifest) == 20
        labels = [rec["label"] for rec in manifest]
        assert labels.count(0) == 10 and labels.count(1) == 10

    def test_loadable_and_lengths_in_range(self, tmp_path):
        spec = SyntheticSpec(n_series=10, length_range=(150, 300), pattern_length=32, seed=2)
        generate_dataset(spec, tmp_path)
        channels = load_dataset(tmp_path)
        assert len(channels) == 10
        for ch in channels:
            assert 150 <= ch.length <= 300

    def test_label1_has_motifs_label0_does_not(self, tmp_path):
        spec = SyntheticSpec(n_series=12, length_range=(300, 500), rare_pattern_rate=0.05, pattern_length=64, seed=3)
        records = generate_dataset(spec, tmp_path)
        for rec in records:
            if rec["label"] == 1:
                assert rec["motifs"] >= 1
            else:
                assert rec["motifs"] == 0

    def test_pure_motif_degenerate_case(self, tmp_path):
        spec = SyntheticSpec(
            n_series=4, length_range=(200, 200), rare_pattern_rate=1.0, noise_sigma=0.0, pattern_length=64, seed=4
        )
        generate_dataset(spec, tmp_path)
        shape = motif(64)
        tiled = np.tile(shape, 4)[:200]
        for ch in load_dataset(tmp_path):
            if ch.label == 1:
                np.testing.assert_array_equal(ch.values, tiled)
            else:
                np.testing.assert_array_equal(ch.values, np.zeros(200))

    def test_byte_identical_regeneration(self, tmp_path):
        spec = SyntheticSpec(n_series=8, length_range=(100, 200), pattern_length=32, seed=5)
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(spec, a)
        generate_dataset(spec, b)
        names = sorted(p.name for p in a.iterdir())
        assert names == sorted(p.name for p in b.iterdir())
        match, mismatch, errors = filecmp.cmpfiles(a, b, names, shallow=False)
        assert mismatch == [] and errors == []

    def test_different_seed_differs(self, tmp_path):
        a = tmp_path / "a"
        b = tmp_path / "b"
        generate_dataset(SyntheticSpec(n_series=4, length_range=(100, 150), seed=6), a)
        generate_dataset(SyntheticSpec(n_series=4, length_range=(100, 150), seed=7), b)
        assert (a / "ch001.txt").read_text() != (b / "ch001.txt").read_text()

    def test_zero_rate_still_injects_once(self, tmp_path):
        spec = SyntheticSpec(n_series=4, length_range=(300, 300), rare_pattern_rate=0.0, pattern_length=32, seed=8)
        records = generate_dataset(spec, tmp_path)
        for rec in records:
            assert rec["motifs"] == (1 if rec["label"] == 1 else 0)


class TestMotif:
    def test_fixed_period_and_amplitude(self):
        shape = motif(MOTIF_CYCLE * 4)
        assert shape.size == MOTIF_CYCLE * 4
        np.testing.assert_allclose(shape[: MOTIF_CYCLE], shape[MOTIF_CYCLE : 2 * MOTIF_CYCLE], atol=1e-12)

    def test_near_zero_mass(self):
        shape = motif(MOTIF_CYCLE * 10)
        assert abs(shape.mean()) < 1e-12
