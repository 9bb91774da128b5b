"""Synthetic generator determinism, PGM round trips, splits, and loading."""

import numpy as np
import pytest

from mimnet.data import (PgmFormatError, Sample, SynthConfig, dataset_split,
                         generate_dataset, generate_sample, load_dataset,
                         load_manifest, read_pgm, to_mask_batch,
                         to_model_input, write_pgm, _resize)
from mimnet.metrics import connected_components


class TestGenerator:
    def test_deterministic_in_seed_and_index(self):
        cfg = SynthConfig(seed=5)
        a = generate_sample(cfg, 3)
        b = generate_sample(cfg, 3)
        assert a.image.tobytes() == b.image.tobytes()
        assert a.mask.tobytes() == b.mask.tobytes()
        c = generate_sample(cfg, 4)
        assert c.image.tobytes() != a.image.tobytes()

    def test_single_target_component_and_area_bound(self):
        cfg = SynthConfig(targets_per_image=(1, 1), target_radius=(2.0, 2.0), seed=1)
        for idx in range(10):
            sample = generate_sample(cfg, idx)
            comps = connected_components(sample.mask)
            assert len(comps) == 1
            assert comps[0].pixels <= np.pi * (2 * 2.0) ** 2

    def test_zero_contrast_keeps_mask_but_hides_target(self):
        base = SynthConfig(targets_per_image=(1, 1), target_radius=(3.0, 3.0), seed=2)
        flat = SynthConfig(targets_per_image=(1, 1), target_radius=(3.0, 3.0), seed=2,
                           contrast=(0.0, 0.0))
        s_flat = generate_sample(flat, 0)
        assert s_flat.mask.sum() > 0
        # same rng draws, so backgrounds coincide; image equals background
        s_base = generate_sample(base, 0)
        np.testing.assert_array_equal(s_flat.mask, s_base.mask)
        masked = s_flat.mask > 0
        diff = np.abs(s_flat.image.astype(int) - s_base.image.astype(int))
        assert diff[masked].max() > 0  # base run actually brightened pixels

    def test_mask_values_binary(self):
        sample = generate_sample(SynthConfig(seed=0), 0)
        assert set(np.unique(sample.mask)) <= {0, 1}

    def test_validate_rejects_bad_ranges(self):
        with pytest.raises(ValueError):
            SynthConfig(targets_per_image=(0, 2)).validate()
        with pytest.raises(ValueError):
            SynthConfig(contrast=(0.5, 0.2)).validate()
        with pytest.raises(ValueError):
            SynthConfig(h=8, w=8).validate()


class TestPgm:
    def test_roundtrip(self, rng, tmp_path):
        img = rng.integers(0, 256, size=(9, 13), dtype=np.uint8)
        path = tmp_path / "x.pgm"
        write_pgm(path, img)
        np.testing.assert_array_equal(read_pgm(path), img)

    def test_layout_row_major_after_header(self, tmp_path):
        img = np.array([[1, 2], [3, 4]], dtype=np.uint8)
        path = tmp_path / "t.pgm"
        write_pgm(path, img)
        raw = path.read_bytes()
        assert raw.startswith(b"P5\n2 2\n255\n")
        assert raw[-4:] == bytes([1, 2, 3, 4])

    def test_ascii_pgm_rejected(self, tmp_path):
        path = tmp_path / "a.pgm"
        path.write_bytes(b"P2\n2 2\n255\n1 2 3 4\n")
        with pytest.raises(PgmFormatError, match="P2"):
            read_pgm(path)

    def test_truncated_payload(self, tmp_path):
        path = tmp_path / "bad.pgm"
        path.write_bytes(b"P5\n4 4\n255\n" + bytes(7))
        with pytest.raises(PgmFormatError, match="truncated"):
            read_pgm(path)

    def test_header_comments_supported(self, tmp_path):
        path = tmp_path / "c.pgm"
        path.write_bytes(b"P5\n# comment line\n2 1\n255\n" + bytes([7, 9]))
        np.testing.assert_array_equal(read_pgm(path), [[7, 9]])

    def test_write_rejects_non_uint8(self, tmp_path):
        with pytest.raises(PgmFormatError):
            write_pgm(tmp_path / "f.pgm", np.zeros((2, 2), dtype=np.float64))


class TestSplit:
    def test_80_20(self):
        train, test = dataset_split([f"s{i}" for i in range(10)], 0.8, seed=0)
        assert len(train) == 8 and len(test) == 2

    def test_same_seed_same_split(self):
        ids = [f"s{i}" for i in range(20)]
        assert dataset_split(ids, seed=3) == dataset_split(ids, seed=3)
        assert dataset_split(ids, seed=3) != dataset_split(ids, seed=4)

    def test_disjoint_exhaustive(self):
        ids = [f"s{i}" for i in range(13)]
        train, test = dataset_split(ids, 0.8, seed=1)
        assert not set(train) & set(test)
        assert sorted(train + test) == sorted(ids)

    def test_order_independent(self):
        ids = [f"s{i}" for i in range(12)]
        shuffled = list(reversed(ids))
        assert dataset_split(ids, seed=2) == dataset_split(shuffled, seed=2)

    def test_too_small(self):
        with pytest.raises(ValueError):
            dataset_split(["only"], seed=0)


class TestDatasetIO:
    def test_generate_and_load(self, tmp_path):
        cfg = SynthConfig(seed=9)
        manifest = generate_dataset(cfg, 6, tmp_path)
        assert len(manifest.samples) == 6
        assert len(manifest.split["train"]) + len(manifest.split["test"]) == 6
        samples = load_dataset(tmp_path)
        assert [s.id for s in samples] == sorted(s.id for s in samples)
        again = load_manifest(tmp_path)
        assert again.split == manifest.split

    def test_every_generated_mask_has_a_component(self, tmp_path):
        generate_dataset(SynthConfig(seed=11), 8, tmp_path)
        for sample in load_dataset(tmp_path):
            assert len(connected_components(sample.mask)) >= 1

    def test_nonbinary_mask_rejected(self, tmp_path):
        cfg = SynthConfig(seed=0)
        generate_dataset(cfg, 2, tmp_path)
        bad = np.full((cfg.h, cfg.w), 128, dtype=np.uint8)
        write_pgm(tmp_path / "masks" / "synth_00000.pgm", bad)
        with pytest.raises(PgmFormatError, match="mask values"):
            load_dataset(tmp_path)

    def test_missing_directory(self, tmp_path):
        with pytest.raises(FileNotFoundError):
            load_dataset(tmp_path / "nope")

    def test_resize_on_load(self, tmp_path):
        generate_dataset(SynthConfig(h=64, w=64, seed=3), 2, tmp_path)
        samples = load_dataset(tmp_path, resize_to=32)
        assert samples[0].image.shape == (32, 32)
        assert set(np.unique(samples[0].mask)) <= {0, 1}

    def test_resize_methods(self, rng):
        img = rng.integers(0, 256, size=(8, 8), dtype=np.uint8)
        near = _resize(img, 4, "nearest")
        bil = _resize(img, 4, "bilinear")
        assert near.shape == bil.shape == (4, 4)
        with pytest.raises(ValueError):
            _resize(img, 4, "cubic")

    def test_model_input_batching(self):
        samples = [Sample(id="a", image=np.full((4, 4), 255, np.uint8),
                          mask=np.ones((4, 4), np.uint8))]
        x = to_model_input(samples)
        assert x.shape == (1, 3, 4, 4)
        np.testing.assert_allclose(x, 1.0)
        y = to_mask_batch(samples)
        assert y.shape == (1, 4, 4)
