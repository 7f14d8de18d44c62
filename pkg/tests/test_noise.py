import numpy as np
import pytest

from hsi_dip import metrics
from hsi_dip.cube import HsiCube
from hsi_dip.noise import NoiseSpec, add_gaussian_snr, add_sparse, add_stripes, apply_spec
from hsi_dip.scenes import synthetic_scene
from oracles import empirical_noise_stats


@pytest.fixture(scope="module")
def scene():
    return synthetic_scene(64, 64, 32, seed=3)  # n = 131072 >= 1e5


class TestGaussian:
    def test_noiseless_limit(self, scene):
        out, sigma = add_gaussian_snr(scene, np.inf, seed=0)
        assert sigma == 0.0
        np.testing.assert_array_equal(out.data, scene.data)

    @pytest.mark.parametrize("snr", [0.0, 5.0, 10.0])
    def test_realized_snr(self, scene, snr):
        out, sigma = add_gaussian_snr(scene, snr, seed=7)
        stats = empirical_noise_stats(scene.data, out.data)
        assert abs(stats["realized_snr_db"] - snr) <= 0.1
        expected = np.sqrt(np.mean(scene.data.astype(np.float64) ** 2) / 10 ** (snr / 10))
        assert sigma == pytest.approx(expected, rel=1e-12)

    def test_not_clamped(self, scene):
        out, _ = add_gaussian_snr(scene, 0.0, seed=1)
        assert out.data.min() < 0 and out.data.max() > 1

    def test_noisy_mpsnr_at_5db_matches_dc_calibration(self):
        # the synthetic scene is calibrated to the DC Mall mean-square power;
        # the reported noisy MPSNR on DC Mall at 5 dB is 17.47
        clean = synthetic_scene(128, 128, 16, seed=0)
        noisy, _ = add_gaussian_snr(clean, 5.0, seed=0)
        assert abs(metrics.mpsnr(clean, noisy)[0] - 17.47) <= 0.5


class TestSparse:
    def test_zero_fraction_identity(self, interior_cube):
        np.testing.assert_array_equal(add_sparse(interior_cube, 0.0, 1).data, interior_cube.data)

    def test_full_fraction(self, interior_cube):
        out = add_sparse(interior_cube, 1.0, 1).data
        assert set(np.unique(out)) <= {0.0, 1.0}

    def test_exact_count(self, interior_cube):
        out = add_sparse(interior_cube, 0.05, seed=11)
        stats = empirical_noise_stats(interior_cube.data, out.data)
        assert stats["altered_voxel_count"] == 5000
        changed = out.data != interior_cube.data
        assert set(np.unique(out.data[changed])) <= {0.0, 1.0}

    def test_both_polarities(self, interior_cube):
        vals = add_sparse(interior_cube, 0.05, seed=2).data
        assert (vals == 0).sum() > 2000 and (vals == 1).sum() > 2000

    @pytest.mark.parametrize("bad", [-0.1, 1.5])
    def test_out_of_range(self, interior_cube, bad):
        with pytest.raises(ValueError):
            add_sparse(interior_cube, bad)


class TestStripes:
    def test_zero_bands_identity(self, interior_cube):
        np.testing.assert_array_equal(add_stripes(interior_cube, 0, seed=1).data, interior_cube.data)

    def test_column_constant(self, rng):
        cube = HsiCube(rng.random((20, 30, 1)))
        out = add_stripes(cube, 1, column_fraction=1.0, amplitude=0.3, seed=5)
        diff = out.data.astype(np.float64) - cube.data
        # float32 storage: a column offset is constant up to rounding
        assert np.all(np.var(diff, axis=0) < 1e-12)
        assert np.all(np.abs(diff) <= 0.3 + 1e-6)

    def test_exact_band_count(self, rng):
        cube = HsiCube(rng.uniform(0.1, 0.9, (16, 16, 191)))
        out = add_stripes(cube, 50, 0.2, 0.25, seed=9)
        assert len(empirical_noise_stats(cube.data, out.data)["striped_band_set"]) == 50

    def test_column_count(self, rng):
        cube = HsiCube(rng.uniform(0.1, 0.9, (8, 40, 4)))
        out = add_stripes(cube, 4, 0.25, 0.25, seed=3)
        diff = out.data != cube.data
        for b in range(4):
            assert diff[:, :, b].any(axis=0).sum() == 10

    def test_too_many_bands(self, interior_cube):
        with pytest.raises(ValueError):
            add_stripes(interior_cube, 11)


class TestSpec:
    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            NoiseSpec()

    def test_deterministic(self, scene):
        spec = NoiseSpec(gaussian_snr_db=10, sparse_fraction=0.05, seed=42)
        a, sa = apply_spec(scene, spec)
        b, sb = apply_spec(scene, spec)
        assert a.data.tobytes() == b.data.tobytes() and sa == sb

    def test_sigma_reported(self, scene):
        _, s = apply_spec(scene, NoiseSpec(sparse_fraction=0.01, seed=1))
        assert s == 0.0
        _, s = apply_spec(scene, NoiseSpec(gaussian_snr_db=5, seed=1))
        assert s > 0

    def test_sparse_applied_last(self, interior_cube):
        spec = NoiseSpec(gaussian_snr_db=10, sparse_fraction=0.05, stripe_band_count=3, seed=4)
        out, _ = apply_spec(interior_cube, spec)
        assert ((out.data == 0) | (out.data == 1)).sum() == 5000

    def test_components_independent(self, scene):
        # adding the sparse component does not change the Gaussian realisation
        g, _ = apply_spec(scene, NoiseSpec(gaussian_snr_db=5, seed=8))
        gs, _ = apply_spec(scene, NoiseSpec(gaussian_snr_db=5, sparse_fraction=0.05, seed=8))
        untouched = (gs.data != 0) & (gs.data != 1)
        np.testing.assert_array_equal(g.data[untouched], gs.data[untouched])

    def test_stripe_count_checked_against_cube(self, interior_cube):
        with pytest.raises(ValueError):
            apply_spec(interior_cube, NoiseSpec(stripe_band_count=20))

    def test_roundtrip_dict(self):
        spec = NoiseSpec(gaussian_snr_db=0, stripe_band_count=50, seed=3)
        assert NoiseSpec.from_dict(spec.to_dict()) == spec
