"""Binary key datasets: file format, Zipfian generation and split sampling.

File layout (little endian)::

    offset  size  field
    0       4     magic b"WVH1"
    4       2     format version (1)
    6       2     record size in bytes (>= 4)
    8       4     key domain size u
    12      8     record count n
    20      n * record_size records; the first 4 bytes of each are the key

Keys are unsigned and 1-based, ``1 <= key <= u``. Any remaining record bytes
are opaque payload (written as zeros).
"""

from __future__ import annotations

import os
import struct
from dataclasses import dataclass
from pathlib import Path
from typing import Iterable

import numpy as np

from .wavelet import is_power_of_two, next_power_of_two

MAGIC = b"WVH1"
VERSION = 1
HEADER = struct.Struct("<4sHHIQ")
HEADER_SIZE = HEADER.size
MAX_FILE_BYTES = 1 << 40

SAMPLE_MODES = ("noreplace", "coinflip")


class DatasetError(ValueError):
    pass


@dataclass(frozen=True)
class DatasetMeta:
    n: int
    u: int
    record_size: int
    path: Path

    @property
    def data_bytes(self) -> int:
        return self.n * self.record_size


@dataclass(frozen=True)
class ZipfConfig:
    n: int
    u: int
    alpha: float = 1.1
    seed: int = 0
    record_size: int = 4


@dataclass(frozen=True)
class SampleConfig:
    """First-level sampling rate ``p = min(1, 1 / (epsilon**2 * n))``."""

    epsilon: float
    n: int
    seed: int = 0
    mode: str = "noreplace"

    def __post_init__(self):
        if self.epsilon <= 0:
            raise ValueError("epsilon must be positive")
        if self.mode not in SAMPLE_MODES:
            raise ValueError(f"unknown sample mode {self.mode!r}")

    @property
    def p(self) -> float:
        return min(1.0, 1.0 / (self.epsilon**2 * self.n))


def record_dtype(record_size: int) -> np.dtype:
    if record_size < 4:
        raise DatasetError("record size must be at least 4 bytes")
    if record_size == 4:
        return np.dtype("<u4")
    return np.dtype([("key", "<u4"), ("payload", f"V{record_size - 4}")])


def write_dataset(path, keys, u: int, record_size: int = 4) -> DatasetMeta:
    """Write ``keys`` (1-based, in file order) as a dataset file.

    A domain that is not a power of two is padded up to the next one; the
    padded keys simply have zero frequency.
    """
    keys = np.asarray(keys)
    u_padded = u if is_power_of_two(u) else next_power_of_two(u)
    if keys.size and (keys.min() < 1 or keys.max() > u):
        bad = keys[(keys < 1) | (keys > u)][0]
        raise DatasetError(f"key {bad} outside [1, {u}]")
    n = int(keys.size)
    if n * record_size > MAX_FILE_BYTES:
        raise DatasetError(f"dataset of {n} x {record_size} bytes exceeds the size limit")
    dtype = record_dtype(record_size)
    records = np.zeros(n, dtype=dtype)
    if dtype.names:
        records["key"] = keys
    else:
        records[:] = keys
    path = Path(path)
    with open(path, "wb") as fh:
        fh.write(HEADER.pack(MAGIC, VERSION, record_size, u_padded, n))
        records.tofile(fh)
    return DatasetMeta(n=n, u=u_padded, record_size=record_size, path=path)


def read_meta(path) -> DatasetMeta:
    path = Path(path)
    with open(path, "rb") as fh:
        raw = fh.read(HEADER_SIZE)
    if len(raw) < HEADER_SIZE:
        raise DatasetError(f"{path}: truncated header")
    magic, version, record_size, u, n = HEADER.unpack(raw)
    if magic != MAGIC:
        raise DatasetError(f"{path}: bad magic {magic!r}")
    if version != VERSION:
        raise DatasetError(f"{path}: unsupported version {version}")
    expected = HEADER_SIZE + n * record_size
    actual = os.path.getsize(path)
    if actual != expected:
        raise DatasetError(f"{path}: expected {expected} bytes, found {actual}")
    return DatasetMeta(n=n, u=u, record_size=record_size, path=path)


def _record_map(meta: DatasetMeta) -> np.ndarray:
    if meta.n == 0:
        return np.zeros(0, dtype=record_dtype(meta.record_size))
    return np.memmap(meta.path, dtype=record_dtype(meta.record_size), mode="r",
                     offset=HEADER_SIZE, shape=(meta.n,))


def _keys_of(records: np.ndarray) -> np.ndarray:
    return records["key"] if records.dtype.names else records


def read_keys(meta: DatasetMeta, start: int = 0, count: int | None = None) -> np.ndarray:
    """Keys of records ``start .. start+count-1`` as an int64 array."""
    count = meta.n - start if count is None else count
    if start < 0 or count < 0 or start + count > meta.n:
        raise DatasetError(f"record range [{start}, {start + count}) outside dataset of {meta.n}")
    return np.array(_keys_of(_record_map(meta)[start : start + count]), dtype=np.int64)


def zipf_probabilities(u: int, alpha: float) -> np.ndarray:
    ranks = np.arange(1, u + 1, dtype=np.float64)
    w = ranks ** (-alpha)
    return w / w.sum()


def generate_zipf(cfg: ZipfConfig, out) -> DatasetMeta:
    """Write ``cfg.n`` records whose keys follow Zipf(alpha) over ``cfg.u`` ranks.

    Ranks are mapped to keys through a seeded random permutation, so the most
    frequent key is not key 1. Records are drawn i.i.d., hence their order in
    the file is already random.
    """
    if cfg.n < 1:
        raise DatasetError("n must be >= 1")
    if cfg.u < 2:
        raise DatasetError("u must be >= 2")
    if cfg.alpha < 0:
        raise DatasetError("alpha must be >= 0")
    if cfg.n * cfg.record_size > MAX_FILE_BYTES:
        raise DatasetError(f"dataset of {cfg.n} x {cfg.record_size} bytes exceeds the size limit")
    rng = np.random.default_rng(cfg.seed)
    rank_to_key = rng.permutation(cfg.u) + 1
    cdf = np.cumsum(zipf_probabilities(cfg.u, cfg.alpha))
    cdf[-1] = 1.0
    ranks = np.searchsorted(cdf, rng.random(cfg.n), side="right")
    keys = rank_to_key[np.minimum(ranks, cfg.u - 1)]
    return write_dataset(out, keys, cfg.u, cfg.record_size)


def build_frequency_vector(keys: Iterable[int], u: int) -> np.ndarray:
    """Dense counts of 1-based keys over ``[1, u]``."""
    arr = np.fromiter(keys, dtype=np.int64) if not isinstance(keys, np.ndarray) else keys.astype(np.int64)
    if arr.size and (arr.min() < 1 or arr.max() > u):
        bad = arr[(arr < 1) | (arr > u)][0]
        raise DatasetError(f"key {bad} outside [1, {u}]")
    return np.bincount(arr - 1, minlength=u).astype(np.int64)


def local_counts(keys: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Distinct keys (ascending) and their multiplicities."""
    return np.unique(np.asarray(keys, dtype=np.int64), return_counts=True)


def sample_size(p: float, n_j: int) -> int:
    """Records drawn from a split of ``n_j`` records, rounding half up."""
    return int(np.floor(p * n_j + 0.5))


def sample_positions(n_j: int, p: float, rng: np.random.Generator, mode: str = "noreplace") -> np.ndarray:
    """Ascending record positions to read from a split.

    ``noreplace`` draws exactly ``round(p * n_j)`` distinct positions;
    ``coinflip`` keeps each record independently with probability ``p``.
    """
    if not 0 < p <= 1:
        raise ValueError(f"sampling rate must be in (0, 1], got {p}")
    if mode == "noreplace":
        t = min(sample_size(p, n_j), n_j)
    elif mode == "coinflip":
        t = int(rng.binomial(n_j, p))
    else:
        raise ValueError(f"unknown sample mode {mode!r}")
    if t == n_j:
        return np.arange(n_j, dtype=np.int64)
    pos = rng.choice(n_j, size=t, replace=False)
    pos.sort()
    return pos.astype(np.int64)


def sample_split(split, cfg: SampleConfig, rng: np.random.Generator | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Sample records of one split and return (distinct keys, sampled counts).

    Offsets are drawn up front, sorted, and read in one ascending sweep over
    the split, so no record is read twice.
    """
    if rng is None:
        rng = split_rng(cfg.seed, split.id, "sample")
    pos = sample_positions(split.n, cfg.p, rng, cfg.mode)
    records = _record_map(split.meta)
    chunk = records[split.start : split.start + split.n]
    if chunk.shape[0] != split.n:
        raise DatasetError(f"split {split.id}: short read")
    keys = np.array(_keys_of(chunk[pos]), dtype=np.int64)
    return local_counts(keys)


_STAGES = {"sample": 0, "second": 1, "schedule": 2}


def split_rng(seed: int, split_id: int, stage: str) -> np.random.Generator:
    """Independent RNG stream for one (seed, split, stage)."""
    return np.random.default_rng(np.random.SeedSequence([int(seed), int(split_id), _STAGES[stage]]))
