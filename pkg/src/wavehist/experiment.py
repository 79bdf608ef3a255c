"""Experiment orchestration: run algorithms over seeds and report SSE and traffic."""

from __future__ import annotations

import csv
import json
import math
import tempfile
import time
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable

import numpy as np

from .approx import basic_sampling, improved_sampling, twolevel
from .cluster import CommLedger, partition_dataset
from .dataset import SAMPLE_MODES, DatasetMeta, ZipfConfig, generate_zipf, read_keys, read_meta
from .exact import best_k_terms, hwtopk, send_coef, send_v
from .wavelet import TopK, compute_sse, haar_transform_dense, snap_integral

EXACT_ALGOS = ("send-v", "send-coef", "h-wtopk")
APPROX_ALGOS = ("basic-s", "improved-s", "twolevel-s")
ALGORITHMS = EXACT_ALGOS + APPROX_ALGOS


def run_algorithm(algo: str, splits, u: int, k: int, ledger: CommLedger, epsilon: float = 0.02,
                  seed: int = 0, mode: str = "noreplace") -> TopK:
    if algo == "send-v":
        return send_v(splits, u, k, ledger)
    if algo == "send-coef":
        return send_coef(splits, u, k, ledger)
    if algo == "h-wtopk":
        return hwtopk(splits, u, k, ledger)
    approx: dict[str, Callable] = {
        "basic-s": basic_sampling,
        "improved-s": improved_sampling,
        "twolevel-s": twolevel,
    }
    if algo not in approx:
        raise ValueError(f"unknown algorithm {algo!r}; choose from {', '.join(ALGORITHMS)}")
    return approx[algo](splits, u, k, epsilon, seed, ledger, mode=mode).top


@dataclass
class ExperimentConfig:
    algos: list[str] = field(default_factory=lambda: list(ALGORITHMS))
    k: int = 30
    epsilon: float = 0.02
    n: int = 1_000_000
    u: int = 2**16
    alpha: float = 1.1
    beta: int = 125_000
    seeds: list[int] = field(default_factory=lambda: list(range(10)))
    trials: int = 1
    output: str | None = None
    data: str | None = None
    record_size: int = 4
    sample_mode: str = "noreplace"

    def validate(self) -> None:
        for a in self.algos:
            if a not in ALGORITHMS:
                raise ValueError(f"unknown algorithm {a!r}")
        if self.sample_mode not in SAMPLE_MODES:
            raise ValueError(f"unknown sample mode {self.sample_mode!r}")
        for name in ("k", "n", "u", "beta", "trials", "record_size"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be positive")
        if self.epsilon <= 0 or self.alpha < 0:
            raise ValueError("epsilon must be positive and alpha non-negative")
        if not self.seeds:
            raise ValueError("at least one seed is required")

    @classmethod
    def from_file(cls, path) -> "ExperimentConfig":
        path = Path(path)
        text = path.read_text()
        if path.suffix == ".toml":
            try:
                import tomllib
            except ModuleNotFoundError:  # python < 3.11
                import tomli as tomllib
            raw = tomllib.loads(text)
        else:
            raw = json.loads(text)
        known = {f.name for f in fields(cls)}
        unknown = set(raw) - known
        if unknown:
            raise ValueError(f"unknown config keys: {sorted(unknown)}")
        cfg = cls(**raw)
        if isinstance(cfg.u, str):
            cfg.u = int(eval_power(cfg.u))
        return cfg


def eval_power(text: str) -> int:
    """Parse ``"2^16"`` / ``"2**16"`` / ``"65536"``."""
    text = text.replace("**", "^").strip()
    if "^" in text:
        base, exp = text.split("^")
        return int(base) ** int(exp)
    return int(text)


@dataclass
class ResultRow:
    algo: str
    trial: int
    k: int
    epsilon: float
    alpha: float
    m: int
    pairs: int
    bytes: int
    wall_time_ms: float
    sse: float
    sse_ideal: float


RESULT_FIELDS = [f.name for f in fields(ResultRow)]


def true_frequencies(meta: DatasetMeta) -> np.ndarray:
    keys = read_keys(meta)
    return np.bincount(keys - 1, minlength=meta.u).astype(np.float64)


def ideal_top_k(v: np.ndarray, k: int) -> TopK:
    return best_k_terms(np.arange(1, v.size + 1), snap_integral(haar_transform_dense(v)), k)


def trial_seed(seed: int, trial: int) -> int:
    return int(np.random.SeedSequence([seed, trial]).generate_state(1)[0])


def run_experiment(cfg: ExperimentConfig, workdir=None) -> list[ResultRow]:
    """Run every (seed, trial, algo) and return result rows in a fixed order.

    Each seed generates its own Zipf dataset unless ``cfg.data`` names an
    existing file. ``trial`` numbers (seed, trial) pairs consecutively.
    """
    cfg.validate()
    rows: list[ResultRow] = []
    with tempfile.TemporaryDirectory(dir=workdir) as tmp:
        for s_pos, seed in enumerate(cfg.seeds):
            meta = _dataset_for(cfg, seed, Path(tmp))
            v = true_frequencies(meta)
            ideal = ideal_top_k(v, cfg.k)
            sse_ideal = compute_sse(v, ideal.reconstruct(meta.u))
            for t in range(cfg.trials):
                trial = s_pos * cfg.trials + t
                for algo in cfg.algos:
                    splits = partition_dataset(meta, cfg.beta)
                    ledger = CommLedger()
                    start = time.perf_counter()
                    top = run_algorithm(algo, splits, meta.u, cfg.k, ledger, cfg.epsilon,
                                        trial_seed(seed, t), cfg.sample_mode)
                    elapsed = (time.perf_counter() - start) * 1000.0
                    total = ledger.totals(algo)
                    rows.append(ResultRow(
                        algo=algo, trial=trial, k=cfg.k, epsilon=cfg.epsilon, alpha=cfg.alpha,
                        m=len(splits), pairs=total.pairs, bytes=total.bytes,
                        wall_time_ms=round(elapsed, 3),
                        sse=compute_sse(v, top.reconstruct(meta.u)), sse_ideal=sse_ideal,
                    ))
    if cfg.output:
        write_rows(rows, cfg.output)
    return rows


def _dataset_for(cfg: ExperimentConfig, seed: int, tmp: Path) -> DatasetMeta:
    if cfg.data:
        meta = read_meta(cfg.data)
        if meta.n != cfg.n or meta.u != _padded(cfg.u):
            raise ValueError(f"dataset {cfg.data} has n={meta.n}, u={meta.u}; config says n={cfg.n}, u={cfg.u}")
        return meta
    return generate_zipf(ZipfConfig(cfg.n, cfg.u, cfg.alpha, seed, cfg.record_size), tmp / f"zipf-{seed}.bin")


def _padded(u: int) -> int:
    return 1 << max(1, math.ceil(math.log2(u)))


def write_rows(rows: list[ResultRow], path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(RESULT_FIELDS)
        for r in rows:
            writer.writerow([repr(x) if isinstance(x, float) else x for x in asdict(r).values()])


def read_rows(path) -> list[dict[str, str]]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


def write_histogram(top: TopK, path) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["index", "value"])
        for i, w in top.entries:
            writer.writerow([i, repr(w)])


def read_histogram(path) -> TopK:
    with open(path, newline="") as fh:
        entries = [(int(r["index"]), float(r["value"])) for r in csv.DictReader(fh)]
    return TopK(len(entries), entries)
