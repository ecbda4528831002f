import numpy as np
import pytest

from rdsal.data import generate_dataset, generate_sample, load_dataset, sample_paths
from rdsal.errors import ImageIOError
from rdsal.netpbm import read_mask, read_pgm, read_ppm, write_pgm, write_ppm


class TestNetpbm:
    def test_pgm_roundtrip_quantization(self, tmp_path):
        rng = np.random.default_rng(130)
        arr = rng.random((9, 13))
        path = tmp_path / "x.pgm"
        write_pgm(path, arr)
        back = read_pgm(path)
        assert back.shape == (9, 13)
        assert np.abs(back - arr).max() <= 0.5 / 255 + 1e-6

    def test_ppm_roundtrip_quantization(self, tmp_path):
        rng = np.random.default_rng(131)
        arr = rng.random((3, 7, 5))
        path = tmp_path / "x.ppm"
        write_ppm(path, arr)
        back = read_ppm(path)
        assert back.shape == (3, 7, 5)
        assert np.abs(back - arr).max() <= 0.5 / 255 + 1e-6

    def test_exact_byte_roundtrip(self, tmp_path):
        arr = np.arange(256, dtype=np.float64).reshape(16, 16) / 255.0
        path = tmp_path / "x.pgm"
        write_pgm(path, arr)
        np.testing.assert_allclose(read_pgm(path), arr, atol=1e-7)

    def test_mask_binarizes_at_128(self, tmp_path):
        arr = np.array([[0.0, 127 / 255.0], [128 / 255.0, 1.0]])
        path = tmp_path / "m.pgm"
        write_pgm(path, arr)
        np.testing.assert_array_equal(read_mask(path), [[0.0, 0.0], [1.0, 1.0]])

    def test_header_comments(self, tmp_path):
        path = tmp_path / "c.pgm"
        payload = bytes(range(6))
        path.write_bytes(b"P5\n# a comment\n3 2\n# another\n255\n" + payload)
        img = read_pgm(path)
        assert img.shape == (2, 3)
        assert img[1, 2] == pytest.approx(5 / 255.0)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P4\n1 1\n255\n\x00")
        with pytest.raises(ImageIOError, match="magic"):
            read_pgm(path)

    def test_sixteen_bit_rejected(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P5\n1 1\n65535\n\x00\x00")
        with pytest.raises(ImageIOError, match="maxval"):
            read_pgm(path)

    def test_short_payload(self, tmp_path):
        path = tmp_path / "b.pgm"
        path.write_bytes(b"P5\n4 4\n255\n\x00\x01")
        with pytest.raises(ImageIOError, match="payload"):
            read_pgm(path)

    def test_write_shape_validation(self, tmp_path):
        with pytest.raises(ImageIOError):
            write_pgm(tmp_path / "x.pgm", np.zeros((2, 2, 2)))
        with pytest.raises(ImageIOError):
            write_ppm(tmp_path / "x.ppm", np.zeros((4, 2, 2)))


class TestGenerator:
    def test_determinism(self):
        a = generate_sample(32, seed=7, index=3)
        b = generate_sample(32, seed=7, index=3)
        assert (a.rgb == b.rgb).all()
        assert (a.depth == b.depth).all()
        assert (a.gt == b.gt).all()

    def test_different_indices_differ(self):
        a = generate_sample(32, seed=7, index=0)
        b = generate_sample(32, seed=7, index=1)
        assert not (a.gt == b.gt).all() or not (a.rgb == b.rgb).all()

    def test_shapes_and_ranges(self):
        s = generate_sample(48, seed=1, index=0)
        assert s.rgb.shape == (3, 48, 48)
        assert s.depth.shape == (1, 48, 48)
        assert s.gt.shape == (48, 48)
        for arr in (s.rgb, s.depth):
            assert arr.min() >= 0.0 and arr.max() <= 1.0
        assert set(np.unique(s.gt)) <= {0.0, 1.0}

    def test_foreground_ratio_bounds(self):
        for i in range(25):
            s = generate_sample(64, seed=11, index=i)
            ratio = s.gt.mean()
            assert 0.02 <= ratio <= 0.5, f"sample {i}: ratio {ratio}"

    def test_depth_separates_object(self):
        for i in range(25):
            s = generate_sample(64, seed=12, index=i)
            fg = s.gt == 1
            assert s.depth[0][fg].mean() > s.depth[0][~fg].mean()

    def test_camouflage_distractor_color_depth(self):
        # depth must be informative: some background region shares the object
        # color band but sits at background depth
        found = 0
        for i in range(10):
            s = generate_sample(64, seed=13, index=i)
            fg = s.gt == 1
            obj_color = s.rgb[:, fg].mean(axis=1)
            bg_pixels = ~fg
            close = (
                np.abs(s.rgb - obj_color[:, None, None]).max(axis=0) < 0.15
            ) & bg_pixels
            if close.sum() > 10 and s.depth[0][close].mean() < 0.6:
                found += 1
        assert found >= 8


class TestDatasetFiles:
    def test_write_load_roundtrip(self, tmp_path):
        out = tmp_path / "ds"
        generate_dataset(3, 32, seed=5, out_dir=str(out))
        samples = load_dataset(str(out))
        assert len(samples) == 3
        raw = generate_sample(32, 5, 1)
        assert np.abs(samples[1].rgb - raw.rgb).max() <= 0.5 / 255 + 1e-6
        np.testing.assert_array_equal(samples[1].gt, raw.gt)

    def test_byte_identical_regeneration(self, tmp_path):
        a, b = tmp_path / "a", tmp_path / "b"
        generate_dataset(2, 32, seed=9, out_dir=str(a))
        generate_dataset(2, 32, seed=9, out_dir=str(b))
        for i in range(2):
            for pa, pb in zip(sample_paths(str(a), i), sample_paths(str(b), i)):
                assert open(pa, "rb").read() == open(pb, "rb").read()

    def test_empty_directory(self, tmp_path):
        with pytest.raises(ImageIOError, match="no sample"):
            load_dataset(str(tmp_path))
