"""One-round sampling estimators of the frequency vector and its wavelet histogram.

All three methods draw a first-level sample at rate ``p = 1/(eps^2 n)`` in
every split. Basic-S ships all sampled counts, Improved-S only counts of at
least ``eps * t_j``, and TwoLevel-S ships large counts exactly and small ones
as presence markers drawn with probability proportional to the count.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .cluster import COUNT_BYTES, CommLedger, Emissions, run_job
from .dataset import SampleConfig, sample_split, split_rng
from .exact import best_k_terms
from .wavelet import TopK, coefficient_support, haar_transform_dense

PRESENCE = 0


@dataclass
class SampleResult:
    top: TopK
    v_hat: np.ndarray


def _n_total(splits) -> int:
    return int(sum(s.n for s in splits))


def _finish(reduced: dict[int, float], u: int, k: int) -> SampleResult:
    v_hat = np.zeros(u)
    if reduced:
        v_hat[np.fromiter(reduced.keys(), np.int64) - 1] = np.fromiter(reduced.values(), np.float64)
    w = haar_transform_dense(v_hat)
    return SampleResult(best_k_terms(np.arange(1, u + 1), w, k), v_hat)


def _job_config(n: int, epsilon: float) -> dict:
    return {"n": n, "epsilon": epsilon}


def basic_sampling(splits, u: int, k: int, epsilon: float, seed: int, ledger: CommLedger,
                   mode: str = "noreplace", order=None) -> SampleResult:
    """Ship every sampled key with its combined count; ``v_hat = s / p``."""
    n = _n_total(splits)
    cfg = SampleConfig(epsilon, n, seed, mode)

    def mapper(split, _):
        keys, counts = sample_split(split, cfg)
        return Emissions(keys, counts.astype(np.uint32), COUNT_BYTES), None

    p = cfg.p
    reduced = run_job(splits, mapper, lambda x, vals, src: vals.sum(dtype=np.int64) / p,
                      _job_config(n, epsilon), 1, ledger, "basic-s", order)
    return _finish(reduced, u, k)


def improved_sampling(splits, u: int, k: int, epsilon: float, seed: int, ledger: CommLedger,
                      mode: str = "noreplace", order=None) -> SampleResult:
    """Ship a sampled key only when ``s_j(x) >= eps * t_j`` (biased estimator)."""
    n = _n_total(splits)
    cfg = SampleConfig(epsilon, n, seed, mode)

    def mapper(split, _):
        keys, counts = sample_split(split, cfg)
        t_j = int(counts.sum())
        keep = counts >= epsilon * t_j
        return Emissions(keys[keep], counts[keep].astype(np.uint32), COUNT_BYTES), None

    p = cfg.p
    reduced = run_job(splits, mapper, lambda x, vals, src: vals.sum(dtype=np.int64) / p,
                      _job_config(n, epsilon), 1, ledger, "improved-s", order)
    return _finish(reduced, u, k)


def second_level_threshold(epsilon: float, m: int) -> float:
    return 1.0 / (epsilon * math.sqrt(m))


def twolevel_map(keys, counts, epsilon: float, m: int, rng: np.random.Generator) -> tuple[np.ndarray, np.ndarray]:
    """Second-level sample of one split's sampled counts.

    Counts at or above ``1/(eps sqrt m)`` are kept exactly; a smaller count
    ``c`` becomes a presence marker (value 0) with probability
    ``min(eps * sqrt(m) * c, 1)``, otherwise it is dropped.
    """
    keys = np.asarray(keys, dtype=np.int64)
    counts = np.asarray(counts, dtype=np.int64)
    rate = epsilon * math.sqrt(m)
    exact = counts >= second_level_threshold(epsilon, m)
    coins = rng.random(keys.size)
    present = ~exact & (coins < np.minimum(rate * counts, 1.0))
    send = exact | present
    return keys[send], np.where(exact[send], counts[send], PRESENCE)


@dataclass
class EstimatorState:
    """Reducer-side accumulators for one key."""

    rho: int = 0
    M: int = 0

    def s_hat(self, epsilon: float, m: int) -> float:
        return self.rho + self.M / (epsilon * math.sqrt(m))


class ProtocolViolation(ValueError):
    pass


def twolevel_reduce(values: np.ndarray, sources: np.ndarray) -> EstimatorState:
    """Fold the pairs received for one key into ``(rho, M)``.

    Each split sends at most one pair per key; a second pair from the same
    split (e.g. an exact count and a presence marker) is a protocol violation.
    """
    sources = np.asarray(sources)
    if np.unique(sources).size != sources.size:
        raise ProtocolViolation("a split sent more than one pair for the same key")
    values = np.asarray(values, dtype=np.int64)
    return EstimatorState(rho=int(values.sum()), M=int(np.count_nonzero(values == PRESENCE)))


def twolevel_estimate(grouped: dict[int, tuple[np.ndarray, np.ndarray]], epsilon: float, m: int, p: float, u: int) -> np.ndarray:
    """Estimated frequency vector from ``{key: (values, sources)}``.

    ``s_hat(x) = rho(x) + M(x) / (eps sqrt m)`` and ``v_hat(x) = s_hat(x) / p``;
    keys that received nothing are estimated as 0.
    """
    v_hat = np.zeros(u)
    for x, (vals, src) in grouped.items():
        v_hat[x - 1] = twolevel_reduce(vals, src).s_hat(epsilon, m) / p
    return v_hat


def twolevel(splits, u: int, k: int, epsilon: float, seed: int, ledger: CommLedger,
             mode: str = "noreplace", order=None) -> SampleResult:
    """Two-level sampling in one simulated round."""
    n = _n_total(splits)
    m = len(splits)
    cfg = SampleConfig(epsilon, n, seed, mode)

    def mapper(split, _):
        keys, counts = sample_split(split, cfg)
        out_keys, out_vals = twolevel_map(keys, counts, epsilon, m, split_rng(seed, split.id, "second"))
        return Emissions(out_keys, out_vals.astype(np.uint32), COUNT_BYTES), None

    p = cfg.p
    reduced = run_job(splits, mapper, lambda x, vals, src: twolevel_reduce(vals, src).s_hat(epsilon, m) / p,
                      _job_config(n, epsilon), 1, ledger, "twolevel-s", order)
    return _finish(reduced, u, k)


def coeff_variance_bound(i: int, s, epsilon: float, m: int, n: int, u: int, p: float | None = None) -> float:
    """Upper bound on ``Var[w_hat_i]`` given the first-level sample counts ``s``.

    Second-level sampling gives ``Var[M(x)] <= eps sqrt(m) s(x)``, so
    ``Var[v_hat(x)] <= s(x) / (eps sqrt(m) p^2)`` and, with
    ``psi_i(x)^2 = 2^j / u`` on the support of coefficient ``i``::

        Var[w_hat_i] <= 2^j / (u eps sqrt(m) p^2) * sum_{x in supp} s(x)

    ``p`` defaults to ``1/(eps^2 n)``, which turns the factor into
    ``eps^3 n^2 2^j / (u sqrt m)``.
    """
    if i == 1:
        raise ValueError("the bound is defined for detail coefficients (i >= 2)")
    if p is None:
        p = 1.0 / (epsilon**2 * n)
    lo, hi = coefficient_support(i, u)
    j = int(i - 1).bit_length() - 1
    mass = float(np.sum(np.asarray(s, dtype=np.float64)[lo - 1 : hi]))
    return 2**j / (u * epsilon * math.sqrt(m) * p**2) * mass


def coeff_variance_bound_closed_form(i: int, s, epsilon: float, m: int, n: int, u: int) -> float:
    """``eps 2^j n / (u sqrt m) * sum_{x in supp} s(x)``.

    Agrees with :func:`coeff_variance_bound` only when ``eps^2 n = 1``
    (``p = 1``); for ``eps^2 n > 1`` it understates the variance by that
    factor.
    """
    if i == 1:
        raise ValueError("the bound is defined for detail coefficients (i >= 2)")
    lo, hi = coefficient_support(i, u)
    j = int(i - 1).bit_length() - 1
    mass = float(np.sum(np.asarray(s, dtype=np.float64)[lo - 1 : hi]))
    return epsilon * 2**j * n / (u * math.sqrt(m)) * mass
