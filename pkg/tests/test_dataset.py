import struct

import numpy as np
import pytest

from wavehist.cluster import partition_dataset
from wavehist.dataset import (
    HEADER_SIZE,
    DatasetError,
    SampleConfig,
    ZipfConfig,
    build_frequency_vector,
    generate_zipf,
    read_keys,
    read_meta,
    sample_positions,
    sample_split,
    split_rng,
    write_dataset,
)


class TestFileFormat:
    def test_header_layout(self, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(path, [3, 1, 4, 1, 5], 8)
        raw = path.read_bytes()
        assert raw[:4] == b"WVH1"
        assert struct.unpack_from("<HHIQ", raw, 4) == (1, 4, 8, 5)
        assert len(raw) == HEADER_SIZE + 5 * 4
        assert list(np.frombuffer(raw[HEADER_SIZE:], "<u4")) == [3, 1, 4, 1, 5]

    def test_round_trip_with_payload(self, tmp_path):
        meta = write_dataset(tmp_path / "d.bin", [2, 2, 7], 8, record_size=16)
        again = read_meta(meta.path)
        assert again == meta
        assert list(read_keys(again)) == [2, 2, 7]
        assert list(read_keys(again, 1, 2)) == [2, 7]

    def test_domain_is_padded(self, tmp_path):
        meta = write_dataset(tmp_path / "d.bin", [1, 5, 6], 6)
        assert meta.u == 8

    def test_key_out_of_range(self, tmp_path):
        with pytest.raises(DatasetError, match="key 9"):
            write_dataset(tmp_path / "d.bin", [1, 9], 8)

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(path, [1], 4)
        data = bytearray(path.read_bytes())
        data[:4] = b"NOPE"
        path.write_bytes(bytes(data))
        with pytest.raises(DatasetError, match="magic"):
            read_meta(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "d.bin"
        write_dataset(path, [1, 2, 3], 4)
        path.write_bytes(path.read_bytes()[:-2])
        with pytest.raises(DatasetError, match="expected"):
            read_meta(path)


class TestZipf:
    def test_uniform_when_alpha_zero(self, tmp_path):
        n, u = 200_000, 16
        meta = generate_zipf(ZipfConfig(n, u, 0.0, seed=1), tmp_path / "z.bin")
        counts = build_frequency_vector(read_keys(meta), u)
        sigma = np.sqrt(n * (1 / u) * (1 - 1 / u))
        assert np.all(np.abs(counts - n / u) < 5 * sigma)

    def test_log_log_slope(self, tmp_path):
        meta = generate_zipf(ZipfConfig(10**6, 2**10, 1.1, seed=2), tmp_path / "z.bin")
        counts = np.sort(build_frequency_vector(read_keys(meta), 2**10))[::-1][:100]
        slope = np.polyfit(np.log(np.arange(1, 101)), np.log(counts), 1)[0]
        assert slope == pytest.approx(-1.1, abs=0.1)

    def test_deterministic(self, tmp_path):
        cfg = ZipfConfig(5000, 256, 1.1, seed=9, record_size=8)
        a = generate_zipf(cfg, tmp_path / "a.bin")
        b = generate_zipf(cfg, tmp_path / "b.bin")
        assert a.path.read_bytes() == b.path.read_bytes()

    def test_keys_permuted_and_in_range(self, tmp_path):
        meta = generate_zipf(ZipfConfig(50_000, 1024, 1.4, seed=3), tmp_path / "z.bin")
        keys = read_keys(meta)
        assert keys.size == 50_000 and keys.min() >= 1 and keys.max() <= 1024
        # the most frequent key is a random key, not rank 1
        top = np.argmax(build_frequency_vector(keys, 1024)) + 1
        assert top != 1

    def test_no_long_runs(self, tmp_path):
        meta = generate_zipf(ZipfConfig(10**6, 1024, 1.4, seed=4), tmp_path / "z.bin")
        keys = read_keys(meta)
        change = np.flatnonzero(np.diff(keys)) + 1
        runs = np.diff(np.concatenate(([0], change, [keys.size])))
        assert runs.max() < 64

    def test_rejects_bad_config(self, tmp_path):
        with pytest.raises(DatasetError):
            generate_zipf(ZipfConfig(0, 16), tmp_path / "z.bin")
        with pytest.raises(DatasetError):
            generate_zipf(ZipfConfig(10, 1), tmp_path / "z.bin")


class TestFrequencyVector:
    def test_small(self):
        assert list(build_frequency_vector([1, 1, 2], 4)) == [2, 1, 0, 0]

    def test_empty(self):
        assert not build_frequency_vector([], 8).any()

    def test_additive(self):
        a, b = [1, 3, 3], [2, 3, 4, 4]
        np.testing.assert_array_equal(build_frequency_vector(a + b, 4),
                                      build_frequency_vector(a, 4) + build_frequency_vector(b, 4))

    def test_names_bad_key(self):
        with pytest.raises(DatasetError, match="key 7"):
            build_frequency_vector([1, 7], 4)


class TestSampler:
    def _split(self, tmp_path, keys, u=16):
        meta = write_dataset(tmp_path / "s.bin", keys, u)
        return partition_dataset(meta, len(keys))[0]

    def test_full_sample_is_exact(self, tmp_path):
        keys = [1, 2, 2, 5, 5, 5]
        split = self._split(tmp_path, keys)
        got_keys, got_counts = sample_split(split, SampleConfig(epsilon=1.0, n=1))
        assert dict(zip(got_keys.tolist(), got_counts.tolist())) == {1: 1, 2: 2, 5: 3}

    def test_without_replacement_cardinality(self):
        pos = sample_positions(100, 0.5, np.random.default_rng(0))
        assert pos.size == 50
        assert np.all(np.diff(pos) > 0)  # distinct and one ascending sweep

    def test_rounds_half_up(self):
        assert sample_positions(5, 0.5, np.random.default_rng(0)).size == 3

    def test_coinflip_count_varies(self):
        sizes = {sample_positions(1000, 0.1, np.random.default_rng(s), "coinflip").size for s in range(20)}
        assert len(sizes) > 1

    def test_deterministic(self, tmp_path):
        split = self._split(tmp_path, np.random.default_rng(0).integers(1, 17, 500))
        cfg = SampleConfig(epsilon=0.1, n=500, seed=4)
        a, b = sample_split(split, cfg), sample_split(split, cfg)
        np.testing.assert_array_equal(a[0], b[0])
        np.testing.assert_array_equal(a[1], b[1])

    def test_short_read(self, tmp_path):
        split = self._split(tmp_path, [1, 2, 3, 4])
        split.n = 10
        with pytest.raises(DatasetError):
            sample_split(split, SampleConfig(epsilon=1.0, n=1))

    @pytest.mark.parametrize("mode", ["noreplace", "coinflip"])
    def test_unbiased(self, tmp_path, mode):
        rng = np.random.default_rng(11)
        keys = rng.choice(np.arange(1, 17), size=400, p=np.arange(16, 0, -1) / 136)
        split = self._split(tmp_path, keys)
        v = build_frequency_vector(keys, 16)
        # p * n_j = 100 exactly, so both modes have E[s_j(x)] = p * v_j(x)
        cfg = SampleConfig(epsilon=0.05, n=1600, mode=mode)
        p = cfg.p
        assert p == pytest.approx(0.25)
        trials = 10_000
        est = np.zeros((trials, 16))
        for t in range(trials):
            k_, c = sample_split(split, cfg, rng=split_rng(t, 1, "sample"))
            est[t, k_ - 1] = c / p
        top5 = np.argsort(-v)[:5]
        mean = est.mean(axis=0)
        se = est.std(axis=0, ddof=1) / np.sqrt(trials)
        assert np.all(np.abs(mean[top5] - v[top5]) <= 3 * se[top5])
        assert np.all(np.abs(mean - v) <= 4 * np.maximum(se, 1e-12))
