import numpy as np
import pytest

from aird.data import (
    Dataset,
    IdentifyProtocol,
    ShiftConfig,
    VerifyProtocol,
    build_protocol,
    downsample,
    generate_dataset,
    load_protocol,
    sample_identities,
    save_protocol,
)
from aird.errors import ConfigError, DimensionError


def _catmull_rom_weight(d):
    ad = abs(d)
    if ad <= 1.0:
        return 1.5 * ad**3 - 2.5 * ad**2 + 1.0
    if ad < 2.0:
        return -0.5 * (ad**3 - 5.0 * ad**2 + 8.0 * ad - 4.0)
    return 0.0


def oracle_bicubic(img, factor):
    """Direct 2-D tap-by-tap resampler (independent of the separable path)."""
    h, w = img.shape
    oh, ow = h // factor, w // factor
    out = np.zeros((oh, ow))
    for oy in range(oh):
        for ox in range(ow):
            py = (oy + 0.5) * factor - 0.5
            px = (ox + 0.5) * factor - 0.5
            acc = 0.0
            for ty in range(int(np.floor(py)) - 1, int(np.floor(py)) + 3):
                wy = _catmull_rom_weight(py - ty)
                iy = min(max(ty, 0), h - 1)
                for tx in range(int(np.floor(px)) - 1, int(np.floor(px)) + 3):
                    wx = _catmull_rom_weight(px - tx)
                    ix = min(max(tx, 0), w - 1)
                    acc += wy * wx * img[iy, ix]
            out[oy, ox] = acc
    return np.clip(out, 0.0, 1.0)


class TestDownsample:
    def test_constant_image_preserved(self):
        img = np.full((16, 16), 0.37)
        np.testing.assert_allclose(downsample(img, 4), np.full((4, 4), 0.37), atol=1e-12)

    def test_factor_one_identity(self):
        img = np.random.default_rng(0).uniform(size=(8, 8))
        np.testing.assert_array_equal(downsample(img, 1), img)

    def test_checkerboard_matches_oracle(self):
        img = np.indices((32, 32)).sum(axis=0) % 2 * 1.0
        got = downsample(img, 4, "bicubic")
        want = oracle_bicubic(img, 4)
        assert got.shape == (8, 8)
        np.testing.assert_allclose(got, want, atol=1e-6)

    def test_random_images_match_oracle(self):
        rng = np.random.default_rng(1)
        for _ in range(5):
            img = rng.uniform(size=(16, 16))
            np.testing.assert_allclose(downsample(img, 2), oracle_bicubic(img, 2), atol=1e-6)

    def test_area_kernel_is_block_mean(self):
        rng = np.random.default_rng(2)
        img = rng.uniform(size=(8, 8))
        got = downsample(img, 4, "area")
        want = img.reshape(2, 4, 2, 4).mean(axis=(1, 3))
        np.testing.assert_allclose(got, want, atol=1e-12)

    def test_non_divisible_factor_rejected(self):
        with pytest.raises(DimensionError):
            downsample(np.zeros((9, 9)), 4)

    def test_output_clamped(self):
        img = np.zeros((8, 8))
        img[::2, ::2] = 1.0
        out = downsample(img, 2)
        assert out.min() >= 0.0 and out.max() <= 1.0


class TestGenerate:
    def test_same_seed_bitwise_identical(self):
        a = generate_dataset(3, 4, seed=5, test_samples_per_id=2)
        b = generate_dataset(3, 4, seed=5, test_samples_per_id=2)
        assert a.checksum() == b.checksum()

    def test_different_seed_differs(self):
        a = generate_dataset(3, 4, seed=5, test_samples_per_id=2)
        b = generate_dataset(3, 4, seed=6, test_samples_per_id=2)
        assert a.checksum() != b.checksum()

    def test_lr_is_downsample_of_hr_bit_for_bit(self):
        ds = generate_dataset(3, 4, seed=1, test_samples_per_id=2)
        np.testing.assert_array_equal(ds.lr, downsample(ds.hr, 4, "bicubic"))

    def test_pixel_range(self):
        ds = generate_dataset(4, 5, seed=2, shift=ShiftConfig(brightness=0.3, noise=0.1), test_samples_per_id=3)
        for arr in (ds.hr, ds.lr):
            assert arr.min() >= 0.0 and arr.max() <= 1.0

    def test_split_sizes_and_labels(self):
        ds = generate_dataset(4, 6, seed=3, test_samples_per_id=2)
        assert ds.train_indices.size == 24 and ds.test_indices.size == 8
        assert set(ds.labels[ds.train_indices]) == set(range(4))
        assert not ds.shift_applied.any()

    def test_shift_disabled_means_match(self):
        ds = generate_dataset(8, 24, seed=4, shift=None, test_samples_per_id=16)
        diff = abs(ds.hr[ds.train_indices].mean() - ds.hr[ds.test_indices].mean())
        assert diff < 0.01

    def test_brightness_shift_moves_mean(self):
        base = generate_dataset(8, 16, seed=4, shift=None, test_samples_per_id=12)
        bright = generate_dataset(8, 16, seed=4, shift=ShiftConfig(brightness=0.2), test_samples_per_id=12)
        assert bright.shift_applied[bright.test_indices].all()
        delta = bright.hr[bright.test_indices].mean() - base.hr[base.test_indices].mean()
        assert abs(delta - 0.2) < 0.01

    def test_identity_latents_twin_structure(self):
        specs = sample_identities(10, seed=9, min_distance=0.45, twin_distance=0.18)
        feats = [s.feature_vector() for s in specs]
        for i in range(10):
            for j in range(i + 1, 10):
                d = np.linalg.norm(feats[i] - feats[j])
                if j == i + 1 and i % 2 == 0:  # twin siblings: close but distinct
                    assert abs(d - 0.18) < 1e-9
                else:  # strangers: separated by the family spacing minus a twin hop
                    assert d >= 0.45 - 2 * 0.18

    def test_config_validation(self):
        with pytest.raises(ConfigError):
            generate_dataset(1, 4, seed=0)
        with pytest.raises(ConfigError):
            generate_dataset(3, 1, seed=0)
        with pytest.raises(DimensionError):
            generate_dataset(3, 4, seed=0, hr_size=32, lr_size=7)

    def test_save_load_round_trip(self, tmp_path):
        ds = generate_dataset(3, 4, seed=8, shift=ShiftConfig(brightness=0.1), test_samples_per_id=2)
        ds.save(tmp_path / "d")
        loaded = Dataset.load(tmp_path / "d")
        np.testing.assert_array_equal(loaded.hr, ds.hr)
        np.testing.assert_array_equal(loaded.lr, ds.lr)
        np.testing.assert_array_equal(loaded.labels, ds.labels)
        np.testing.assert_array_equal(loaded.is_test, ds.is_test)
        assert loaded.checksum() == ds.checksum()

    def test_corrupt_blob_detected(self, tmp_path):
        ds = generate_dataset(3, 4, seed=8, test_samples_per_id=2)
        ds.save(tmp_path / "d")
        blob = (tmp_path / "d" / "hr.f64").read_bytes()
        (tmp_path / "d" / "hr.f64").write_bytes(blob[:-8] + b"\x00" * 8)
        with pytest.raises(ConfigError, match="checksum"):
            Dataset.load(tmp_path / "d")


@pytest.fixture(scope="module")
def ds():
    return generate_dataset(5, 6, seed=11, test_samples_per_id=5)


class TestProtocols:

    def test_verify_balance(self, ds):
        proto = build_protocol(ds, "verify", pair_count=100, seed=0)
        assert proto.same.sum() == 50 and (~proto.same).sum() == 50

    def test_verify_labels_exhaustively(self, ds):
        proto = build_protocol(ds, "verify", pair_count=100, seed=0)
        for (a, b), same in zip(proto.pairs, proto.same):
            assert (ds.labels[a] == ds.labels[b]) == same
            assert ds.is_test[a] and ds.is_test[b]

    def test_verify_deterministic(self, ds):
        p1 = build_protocol(ds, "verify", pair_count=60, seed=3)
        p2 = build_protocol(ds, "verify", pair_count=60, seed=3)
        np.testing.assert_array_equal(p1.pairs, p2.pairs)

    def test_verify_shortfall_message(self, ds):
        with pytest.raises(ConfigError, match="positive pairs"):
            build_protocol(ds, "verify", pair_count=2000, seed=0)

    def test_identify_partition(self, ds):
        proto = build_protocol(ds, "identify", seed=0)
        gallery, probes = set(proto.gallery), set(proto.probes)
        assert not gallery & probes  # no sample on both sides
        assert set(ds.labels[proto.probes]) <= set(ds.labels[proto.gallery])
        for i in np.concatenate([proto.gallery, proto.probes]):
            assert ds.is_test[i]

    def test_round_trip_files(self, ds, tmp_path):
        v = build_protocol(ds, "verify", pair_count=40, seed=1)
        save_protocol(v, tmp_path / "v.txt")
        v2 = load_protocol(tmp_path / "v.txt")
        assert isinstance(v2, VerifyProtocol)
        np.testing.assert_array_equal(v.pairs, v2.pairs)
        np.testing.assert_array_equal(v.same, v2.same)

        i = build_protocol(ds, "identify", seed=1)
        save_protocol(i, tmp_path / "i.txt")
        i2 = load_protocol(tmp_path / "i.txt")
        assert isinstance(i2, IdentifyProtocol)
        np.testing.assert_array_equal(i.gallery, i2.gallery)
        np.testing.assert_array_equal(i.probes, i2.probes)


class TestImageImport:
    def test_directory_loader(self, tmp_path):
        PIL = pytest.importorskip("PIL.Image")
        rng = np.random.default_rng(12)
        for ident in ("alice", "bob"):
            d = tmp_path / ident
            d.mkdir()
            for k in range(2):
                img = (rng.uniform(size=(32, 32)) * 255).astype(np.uint8)
                PIL.fromarray(img, mode="L").save(d / f"{k}.png")
        ds = __import__("aird.data", fromlist=["load_image_directory"]).load_image_directory(tmp_path)
        assert ds.hr.shape == (4, 1, 32, 32)
        assert ds.lr.shape == (4, 1, 8, 8)
        assert list(np.unique(ds.labels)) == [0, 1]
