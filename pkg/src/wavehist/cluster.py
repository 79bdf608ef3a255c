"""A deterministic, single-reducer map-reduce simulator with byte accounting.

Mappers run once per split and may keep a state object that the framework
hands back to the same split in the next round. Every emitted key-value pair
is charged to a :class:`CommLedger` using the wire sizes below; broadcast
state (job configuration / distributed cache) is charged once per mapper.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass, field
from typing import Any, Callable, Iterable, Sequence

import numpy as np

from .dataset import HEADER_SIZE, DatasetMeta, read_keys

KEY_BYTES = 4
COUNT_BYTES = 4  # u32 count emitted by a mapper
WIDE_COUNT_BYTES = 8  # u64 count on the reduce side
COEF_BYTES = 8  # f64 coefficient
SPLIT_ID_BYTES = 4
TAG_BYTES = 1
NULL_BYTES = 0


@dataclass
class SplitDescriptor:
    """One contiguous run of records processed by a single mapper."""

    id: int
    start: int
    n: int
    meta: DatasetMeta
    state: Any = None

    @property
    def byte_range(self) -> tuple[int, int]:
        rs = self.meta.record_size
        return HEADER_SIZE + self.start * rs, self.n * rs

    def keys(self) -> np.ndarray:
        return read_keys(self.meta, self.start, self.n)


def partition_dataset(meta: DatasetMeta, beta: int) -> list[SplitDescriptor]:
    """Cut the file into ``ceil(n / beta)`` splits of ``beta`` records."""
    if beta < 1:
        raise ValueError("split size must be >= 1")
    m = max(1, math.ceil(meta.n / beta))
    return [
        SplitDescriptor(id=j + 1, start=j * beta, n=min(beta, meta.n - j * beta) if meta.n else 0, meta=meta)
        for j in range(m)
    ]


def splits_for_m(meta: DatasetMeta, m: int) -> list[SplitDescriptor]:
    return partition_dataset(meta, max(1, math.ceil(meta.n / m)))


@dataclass
class Emissions:
    """A batch of key-value pairs from one mapper.

    ``values`` may be any array (structured dtypes included) aligned with
    ``keys``. ``value_bytes`` is the wire size of a single value.
    """

    keys: np.ndarray
    values: np.ndarray
    value_bytes: int
    key_bytes: int = KEY_BYTES

    def __post_init__(self):
        self.keys = np.asarray(self.keys, dtype=np.int64)
        self.values = np.asarray(self.values)
        if self.keys.shape[0] != self.values.shape[0]:
            raise ValueError("keys and values differ in length")

    def __len__(self) -> int:
        return int(self.keys.shape[0])

    @property
    def nbytes(self) -> int:
        return len(self) * (self.key_bytes + self.value_bytes)


@dataclass
class RoundCost:
    pairs: int = 0
    bytes: int = 0
    broadcast_bytes: int = 0


@dataclass
class CommLedger:
    """Pairs and bytes per (algorithm, round); additions only."""

    records: dict[tuple[str, int], RoundCost] = field(default_factory=dict)
    split_pairs: dict[tuple[str, int], dict[int, int]] = field(default_factory=dict)

    def _slot(self, algorithm: str, round_id: int) -> RoundCost:
        return self.records.setdefault((algorithm, round_id), RoundCost())

    def charge(self, algorithm: str, round_id: int, pairs: int, nbytes: int, split_id: int | None = None) -> None:
        slot = self._slot(algorithm, round_id)
        slot.pairs += int(pairs)
        slot.bytes += int(nbytes)
        if split_id is not None:
            per = self.split_pairs.setdefault((algorithm, round_id), {})
            per[split_id] = per.get(split_id, 0) + int(pairs)

    def pairs_by_split(self, algorithm: str, round_id: int) -> dict[int, int]:
        """Pairs emitted by each split that emitted anything in the round."""
        return dict(self.split_pairs.get((algorithm, round_id), {}))

    def charge_broadcast(self, algorithm: str, round_id: int, nbytes: int) -> None:
        self._slot(algorithm, round_id).broadcast_bytes += int(nbytes)

    def rounds(self, algorithm: str) -> list[int]:
        return sorted(r for a, r in self.records if a == algorithm)

    def get(self, algorithm: str, round_id: int) -> RoundCost:
        return self.records.get((algorithm, round_id), RoundCost())

    def totals(self, algorithm: str | None = None) -> RoundCost:
        total = RoundCost()
        for (a, _), cost in self.records.items():
            if algorithm is None or a == algorithm:
                total.pairs += cost.pairs
                total.bytes += cost.bytes
                total.broadcast_bytes += cost.broadcast_bytes
        return total

    def rows(self) -> list[tuple[str, int, int, int, int]]:
        return [(a, r, c.pairs, c.bytes, c.broadcast_bytes) for (a, r), c in sorted(self.records.items())]

    def to_csv(self, path) -> None:
        with open(path, "w", newline="") as fh:
            writer = csv.writer(fh)
            writer.writerow(["algorithm", "round", "pairs", "bytes", "broadcast_bytes"])
            writer.writerows(self.rows())


def payload_bytes(obj: Any) -> int:
    """Serialized size of broadcast state.

    Scalars are 8 bytes, booleans 1, arrays their raw size, containers the sum
    of their elements; index sets are expected as uint32 arrays.
    """
    if obj is None:
        return 0
    if isinstance(obj, (bool, np.bool_)):
        return 1
    if isinstance(obj, (int, float, np.integer, np.floating)):
        return 8
    if isinstance(obj, np.ndarray):
        return int(obj.nbytes)
    if isinstance(obj, dict):
        return sum(payload_bytes(v) for v in obj.values())
    if isinstance(obj, (list, tuple, set, frozenset)):
        return sum(payload_bytes(v) for v in obj)
    raise TypeError(f"cannot size broadcast payload of type {type(obj).__name__}")


class JobError(RuntimeError):
    pass


MapFn = Callable[[SplitDescriptor, Any], "tuple[Emissions | None, Any]"]
ReduceFn = Callable[[int, np.ndarray, np.ndarray], Any]


def run_job(
    splits: Sequence[SplitDescriptor],
    map_fn: MapFn,
    reduce_fn: ReduceFn,
    broadcast_state: Any,
    round_id: int,
    ledger: CommLedger,
    algorithm: str = "job",
    order: Iterable[int] | None = None,
) -> dict[int, Any]:
    """Run one map-reduce round and return ``{key: reduce_fn(...)}``.

    ``map_fn(split, broadcast)`` returns ``(emissions, new_state)``; the new
    state replaces ``split.state``. ``reduce_fn(key, values, sources)`` is
    called once per distinct key in ascending key order, with values ordered
    by source split id. ``order`` optionally fixes the mapper execution order
    (a permutation of positions into ``splits``); results do not depend on it.
    """
    m = len(splits)
    ledger.charge_broadcast(algorithm, round_id, m * payload_bytes(broadcast_state))
    schedule = list(range(m)) if order is None else list(order)
    if sorted(schedule) != list(range(m)):
        raise ValueError("order must be a permutation of the split positions")

    outputs: list[Emissions | None] = [None] * m
    new_states: list[Any] = [None] * m
    for pos in schedule:
        split = splits[pos]
        try:
            emitted, state = map_fn(split, broadcast_state)
        except Exception as exc:
            raise JobError(f"mapper for split {split.id} failed in round {round_id}") from exc
        outputs[pos] = emitted
        new_states[pos] = state
    for split, state in zip(splits, new_states):
        split.state = state

    batches = [(s.id, e) for s, e in zip(splits, outputs) if e is not None and len(e)]
    batches.sort(key=lambda b: b[0])
    for sid, e in batches:
        ledger.charge(algorithm, round_id, len(e), e.nbytes, split_id=sid)
    if not batches:
        return {}

    keys = np.concatenate([e.keys for _, e in batches])
    values = np.concatenate([e.values for _, e in batches])
    sources = np.concatenate([np.full(len(e), sid, dtype=np.int64) for sid, e in batches])
    perm = np.argsort(keys, kind="stable")
    keys, values, sources = keys[perm], values[perm], sources[perm]
    cuts = np.flatnonzero(np.diff(keys)) + 1
    starts = np.concatenate(([0], cuts))
    ends = np.concatenate((cuts, [keys.size]))
    return {int(keys[a]): reduce_fn(int(keys[a]), values[a:b], sources[a:b]) for a, b in zip(starts, ends)}


def sum_reducer(key: int, values: np.ndarray, sources: np.ndarray):
    return values.sum()
