import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from hypothesis.extra.numpy import arrays

from hsi_dip.cube import (CubeHeader, CubeNotFoundError, CubeSizeMismatchError, HsiCube,
                          UnsupportedDtypeError, convert, devectorize, evenly_spaced_bands,
                          load_cube, normalize, save_cube, vectorize)


def _write(tmp_path, header, payload):
    (tmp_path / "c.json").write_text(json.dumps(header))
    np.asarray(payload, dtype="<f4").tofile(tmp_path / "c.raw")
    return tmp_path / "c.json"


class TestLoad:
    def test_smallest_cube(self, tmp_path):
        p = _write(tmp_path, {"width": 2, "height": 2, "bands": 1, "dtype": "f32"}, [1, 2, 3, 4])
        c = load_cube(p)
        assert c.shape == (2, 2, 1)
        np.testing.assert_array_equal(c.data[:, :, 0], [[1, 2], [3, 4]])

    def test_size_mismatch(self, tmp_path):
        p = _write(tmp_path, {"width": 2, "height": 2, "bands": 2, "dtype": "f32"}, [1, 2, 3, 4])
        with pytest.raises(CubeSizeMismatchError):
            load_cube(p)

    def test_missing_file(self, tmp_path):
        with pytest.raises(CubeNotFoundError):
            load_cube(tmp_path / "nope.json")

    def test_unsupported_dtype(self, tmp_path):
        p = _write(tmp_path, {"width": 2, "height": 2, "bands": 1, "dtype": "u16"}, [1, 2, 3, 4])
        with pytest.raises(UnsupportedDtypeError):
            load_cube(p)

    def test_errors_are_distinct(self):
        assert len({CubeNotFoundError, CubeSizeMismatchError, UnsupportedDtypeError}) == 3
        assert not issubclass(CubeSizeMismatchError, UnsupportedDtypeError)

    @pytest.mark.parametrize("interleave", ["bsq", "bil", "bip"])
    def test_interleave_roundtrip_bit_exact(self, tmp_path, rng, interleave):
        data = rng.standard_normal((5, 7, 3)).astype(np.float32)
        cube = HsiCube(data, wavelengths=[400, 500, 600])
        save_cube(cube, tmp_path / "x", interleave=interleave)
        back = load_cube(tmp_path / "x.raw")
        assert back.data.tobytes() == data.tobytes()
        assert back.wavelengths == (400.0, 500.0, 600.0)

    def test_bsq_layout_on_disk(self, tmp_path):
        # band 0 entirely first, then band 1
        payload = [1, 2, 3, 4, 10, 20, 30, 40]
        p = _write(tmp_path, {"width": 2, "height": 2, "bands": 2, "interleave": "bsq"}, payload)
        c = load_cube(p)
        np.testing.assert_array_equal(c.data[:, :, 1], [[10, 20], [30, 40]])

    def test_big_endian(self, tmp_path):
        (tmp_path / "c.json").write_text(json.dumps({"width": 1, "height": 1, "bands": 2, "order": "big"}))
        np.asarray([1.5, -2.0], dtype=">f4").tofile(tmp_path / "c.raw")
        np.testing.assert_array_equal(load_cube(tmp_path / "c").data.ravel(), [1.5, -2.0])


class TestCube:
    def test_rejects_nan(self):
        with pytest.raises(ValueError):
            HsiCube(np.array([[[np.nan]]]))

    def test_normalized_flag_checked(self):
        with pytest.raises(ValueError):
            HsiCube(np.full((2, 2, 1), 2.0), normalized=True)

    def test_immutable(self):
        c = HsiCube(np.zeros((2, 2, 1)))
        with pytest.raises(ValueError):
            c.data[0, 0, 0] = 1.0

    def test_n(self):
        assert HsiCube(np.zeros((3, 4, 5))).n == 60

    def test_dc_mall_element_count(self):
        assert CubeHeader(200, 200, 191).size == 7_640_000

    def test_crop(self, rng):
        c = HsiCube(rng.random((10, 12, 8)))
        sub = c.crop(rows=(2, 6), cols=(0, 4), bands=[0, 3, 7])
        assert sub.shape == (4, 4, 3)
        np.testing.assert_array_equal(sub.data[:, :, 1], c.data[2:6, 0:4, 3])
        with pytest.raises(ValueError):
            c.crop(rows=(0, 11))

    def test_evenly_spaced_bands(self):
        assert evenly_spaced_bands(191, 16)[0] == 0
        assert evenly_spaced_bands(191, 16)[-1] == 190
        assert len(set(evenly_spaced_bands(191, 16))) == 16


class TestNormalize:
    def test_affine(self):
        c = normalize(HsiCube(np.array([0.0, 5.0, 10.0]).reshape(1, 3, 1)))
        np.testing.assert_array_equal(c.data.ravel(), [0.0, 0.5, 1.0])
        assert c.normalized

    def test_identity_on_unit_range(self, rng):
        d = rng.random((4, 4, 3)).astype(np.float32)
        d.flat[0], d.flat[1] = 0.0, 1.0
        np.testing.assert_array_equal(normalize(HsiCube(d)).data, d)

    def test_constant(self):
        np.testing.assert_array_equal(normalize(HsiCube(np.full((2, 2, 2), 7.0))).data, 0.0)

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, (3, 4, 2), elements=st.floats(-1e3, 1e3, width=32)))
    def test_idempotent_within_one_ulp(self, data):
        once = normalize(HsiCube(data))
        twice = normalize(once)
        ulp = np.spacing(np.maximum(np.abs(once.data), np.float32(1e-30)))
        assert np.all(np.abs(twice.data - once.data) <= ulp)


class TestVectorize:
    def test_roundtrip_small(self):
        c = HsiCube(np.arange(4, dtype=np.float32).reshape(2, 2, 1))
        v = vectorize(c)
        assert v.shape == (4,)
        assert devectorize(v, c.header()).data.tobytes() == c.data.tobytes()

    def test_length_mismatch(self):
        with pytest.raises(CubeSizeMismatchError):
            devectorize(np.zeros(5), CubeHeader(2, 2, 1))

    @settings(max_examples=50, deadline=None)
    @given(arrays(np.float32, st.tuples(st.integers(1, 5), st.integers(1, 5), st.integers(1, 4)),
                  elements=st.floats(-1e6, 1e6, width=32)))
    def test_bijection(self, data):
        c = HsiCube(data)
        assert devectorize(vectorize(c), c.header()).data.tobytes() == c.data.tobytes()


class TestConvert:
    def test_npy(self, tmp_path, rng):
        d = rng.random((4, 6, 3)).astype(np.float32)
        np.save(tmp_path / "a.npy", d)
        convert(tmp_path / "a.npy", tmp_path / "out")
        assert load_cube(tmp_path / "out").data.tobytes() == d.tobytes()

    def test_mat(self, tmp_path, rng):
        from scipy.io import savemat

        d = rng.random((4, 6, 3)).astype(np.float32)
        savemat(tmp_path / "s.mat", {"salinas_corrected": d, "small": np.ones((2, 2))})
        convert(tmp_path / "s.mat", tmp_path / "out")
        np.testing.assert_array_equal(load_cube(tmp_path / "out").data, d)

    def test_band_first_tiff(self, tmp_path, rng):
        import tifffile

        d = rng.random((3, 8, 9)).astype(np.float32)
        tifffile.imwrite(tmp_path / "dc.tif", d, photometric="minisblack")
        c = convert(tmp_path / "dc.tif", tmp_path / "out")
        assert c.shape == (8, 9, 3)
        np.testing.assert_array_equal(c.data[:, :, 2], d[2])

    def test_unknown_suffix(self, tmp_path):
        (tmp_path / "a.xyz").write_text("")
        with pytest.raises(UnsupportedDtypeError):
            convert(tmp_path / "a.xyz", tmp_path / "out")
