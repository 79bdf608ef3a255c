import csv

import numpy as np
import pytest

from wavehist.cluster import (
    CommLedger,
    Emissions,
    JobError,
    partition_dataset,
    payload_bytes,
    run_job,
    splits_for_m,
    sum_reducer,
)
from wavehist.dataset import HEADER_SIZE, write_dataset


@pytest.fixture
def meta1000(tmp_path):
    keys = np.random.default_rng(0).integers(1, 65, 1000)
    return write_dataset(tmp_path / "d.bin", keys, 64)


def count_mapper(split, _):
    keys, counts = np.unique(split.keys(), return_counts=True)
    return Emissions(keys, counts.astype(np.int64), 4), None


class TestPartition:
    def test_sizes(self, meta1000):
        splits = partition_dataset(meta1000, 256)
        assert [s.n for s in splits] == [256, 256, 256, 232]
        assert [s.id for s in splits] == [1, 2, 3, 4]

    def test_one_split_when_beta_large(self, meta1000):
        assert len(partition_dataset(meta1000, 5000)) == 1

    def test_byte_ranges_tile_the_file(self, meta1000):
        splits = partition_dataset(meta1000, 300)
        offset = HEADER_SIZE
        for s in splits:
            start, length = s.byte_range
            assert start == offset
            offset += length
        assert offset == meta1000.path.stat().st_size

    def test_keys_concatenate(self, meta1000):
        from wavehist.dataset import read_keys

        splits = partition_dataset(meta1000, 333)
        np.testing.assert_array_equal(np.concatenate([s.keys() for s in splits]), read_keys(meta1000))

    def test_for_m(self, meta1000):
        assert len(splits_for_m(meta1000, 8)) == 8

    def test_rejects_zero(self, meta1000):
        with pytest.raises(ValueError):
            partition_dataset(meta1000, 0)


class TestRunJob:
    def test_counts_match_bincount(self, meta1000):
        splits = partition_dataset(meta1000, 100)
        ledger = CommLedger()
        out = run_job(splits, count_mapper, sum_reducer, None, 1, ledger)
        from wavehist.dataset import read_keys

        expected = np.bincount(read_keys(meta1000), minlength=65)
        assert out == {k: expected[k] for k in range(1, 65) if expected[k]}
        assert list(out) == sorted(out)

    def test_empty_mappers(self, meta1000):
        ledger = CommLedger()
        out = run_job(partition_dataset(meta1000, 250), lambda s, b: (None, None), sum_reducer, None, 1, ledger)
        assert out == {}
        assert ledger.totals().pairs == 0 and ledger.totals().bytes == 0

    def test_bytes_charged_per_pair(self, meta1000):
        ledger = CommLedger()

        def mapper(split, _):
            return Emissions([1, 2, 3], np.zeros(3), 8), None

        run_job(partition_dataset(meta1000, 1000), mapper, sum_reducer, None, 1, ledger, "x")
        assert ledger.get("x", 1).pairs == 3
        assert ledger.get("x", 1).bytes == 36

    def test_execution_order_irrelevant(self, meta1000):
        splits = partition_dataset(meta1000, 90)
        seen = []

        def reducer(key, values, sources):
            seen.append(list(sources))
            return values.sum()

        a = run_job(splits, count_mapper, reducer, None, 1, CommLedger())
        first = list(seen)
        seen.clear()
        perm = np.random.default_rng(3).permutation(len(splits))
        b = run_job(splits, count_mapper, reducer, None, 1, CommLedger(), order=perm)
        assert a == b
        assert seen == first
        assert all(s == sorted(s) for s in seen)

    def test_bad_order(self, meta1000):
        with pytest.raises(ValueError):
            run_job(partition_dataset(meta1000, 500), count_mapper, sum_reducer, None, 1, CommLedger(), order=[0, 0])

    def test_state_persists_between_rounds(self, meta1000):
        splits = partition_dataset(meta1000, 400)

        def first(split, _):
            return None, {"n": split.n}

        def second(split, _):
            return Emissions([1], [split.state["n"]], 8), split.state

        run_job(splits, first, sum_reducer, None, 1, CommLedger())
        out = run_job(splits, second, sum_reducer, None, 2, CommLedger())
        assert out == {1: 1000}

    def test_mapper_failure(self, meta1000):
        def bad(split, _):
            raise RuntimeError("boom")

        with pytest.raises(JobError, match="split 1"):
            run_job(partition_dataset(meta1000, 500), bad, sum_reducer, None, 1, CommLedger())

    def test_broadcast_charged_per_mapper(self, meta1000):
        ledger = CommLedger()
        bcast = {"T": 1.5, "R": np.arange(10, dtype=np.uint32)}
        run_job(partition_dataset(meta1000, 250), lambda s, b: (None, None), sum_reducer, bcast, 2, ledger, "x")
        assert ledger.get("x", 2).broadcast_bytes == 4 * (8 + 40)


class TestLedger:
    def test_totals_and_csv(self, tmp_path):
        ledger = CommLedger()
        ledger.charge("a", 1, 3, 36)
        ledger.charge("a", 2, 1, 12)
        ledger.charge("b", 1, 5, 40)
        ledger.charge_broadcast("a", 2, 16)
        assert ledger.rounds("a") == [1, 2]
        t = ledger.totals("a")
        assert (t.pairs, t.bytes, t.broadcast_bytes) == (4, 48, 16)
        assert ledger.totals().pairs == 9
        path = tmp_path / "ledger.csv"
        ledger.to_csv(path)
        rows = list(csv.reader(path.open()))
        assert rows[0] == ["algorithm", "round", "pairs", "bytes", "broadcast_bytes"]
        assert rows[1:] == [["a", "1", "3", "36", "0"], ["a", "2", "1", "12", "16"], ["b", "1", "5", "40", "0"]]

    def test_payload_sizes(self):
        assert payload_bytes(None) == 0
        assert payload_bytes(3) == 8
        assert payload_bytes(True) == 1
        assert payload_bytes(np.zeros(5, np.uint32)) == 20
        with pytest.raises(TypeError):
            payload_bytes("text")

    def test_pairs_by_split(self, meta1000):
        ledger = CommLedger()

        def mapper(split, _):
            return Emissions(np.arange(1, split.id + 1), np.zeros(split.id), 8), None

        run_job(partition_dataset(meta1000, 250), mapper, sum_reducer, None, 1, ledger, "x")
        assert ledger.pairs_by_split("x", 1) == {1: 1, 2: 2, 3: 3, 4: 4}
        assert ledger.pairs_by_split("x", 2) == {}
