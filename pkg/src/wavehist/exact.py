"""Exact best k-term wavelet histograms on the simulated cluster.

``send_v`` ships local frequency vectors, ``send_coef`` ships local wavelet
coefficients, and ``hwtopk`` runs a three-round threshold protocol that
handles signed local scores and ranks items by the magnitude of their sum.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

from .cluster import (
    COEF_BYTES,
    COUNT_BYTES,
    SPLIT_ID_BYTES,
    TAG_BYTES,
    CommLedger,
    Emissions,
    SplitDescriptor,
    run_job,
)
from .dataset import local_counts
from .wavelet import (
    SparseCoeffs,
    TopK,
    haar_transform_dense,
    haar_transform_sparse,
    select_top_k,
    snap_integral,
    snap_sparse,
)

log = logging.getLogger(__name__)

KTH_HIGH = 1
KTH_LOW = 2

TAGGED = np.dtype([("split", "<u4"), ("w", "<f8"), ("tag", "u1")])
UNTAGGED = np.dtype([("split", "<u4"), ("w", "<f8")])

# relative slack on thresholds so float noise can only make pruning more conservative
REL_TOL = 1e-9


class ProtocolError(AssertionError):
    """The threshold protocol produced bounds inconsistent with the data."""


def best_k_terms(indices, values, k: int) -> TopK:
    """Top-k among nonzero coefficients."""
    indices = np.asarray(indices, dtype=np.int64)
    values = np.asarray(values, dtype=np.float64)
    nz = values != 0
    return select_top_k(values[nz], k, indices=indices[nz])


def _dense_top_k(w: np.ndarray, k: int) -> TopK:
    return best_k_terms(np.arange(1, w.size + 1), w, k)


def _local_coeffs(split: SplitDescriptor, u: int) -> SparseCoeffs:
    keys, counts = local_counts(split.keys())
    return haar_transform_sparse(keys, counts, u)


def send_v(splits, u: int, k: int, ledger: CommLedger, order=None) -> TopK:
    """Mappers emit ``(x, v_j(x))``; the reducer rebuilds ``v`` and transforms it."""

    def mapper(split, _):
        keys, counts = local_counts(split.keys())
        return Emissions(keys, counts.astype(np.uint32), COUNT_BYTES), None

    reduced = run_job(splits, mapper, lambda key, vals, src: int(vals.sum(dtype=np.int64)),
                      None, 1, ledger, "send-v", order)
    v = np.zeros(u)
    if reduced:
        v[np.fromiter(reduced.keys(), np.int64) - 1] = np.fromiter(reduced.values(), np.float64)
    return _dense_top_k(snap_integral(haar_transform_dense(v)), k)


def send_coef(splits, u: int, k: int, ledger: CommLedger, order=None) -> TopK:
    """Mappers emit every nonzero local coefficient; the reducer sums per index."""

    def mapper(split, _):
        c = _local_coeffs(split, u)
        return Emissions(c.indices, c.values, COEF_BYTES), None

    reduced = run_job(splits, mapper, lambda key, vals, src: float(vals.sum()),
                      None, 1, ledger, "send-coef", order)
    idx = np.fromiter(reduced.keys(), np.int64, len(reduced))
    vals = np.fromiter(reduced.values(), np.float64, len(reduced))
    return best_k_terms(idx, snap_sparse(idx, vals, u), k)


# --------------------------------------------------------------------------
# bound bookkeeping


def magnitude_bounds(tau_plus, tau_minus):
    """Lower and upper bounds on ``|w|`` from ``tau_minus <= w <= tau_plus``."""
    tp = np.asarray(tau_plus, dtype=np.float64)
    tm = np.asarray(tau_minus, dtype=np.float64)
    straddles = (tp >= 0) & (tm <= 0)
    tau = np.where(straddles, 0.0, np.minimum(np.abs(tp), np.abs(tm)))
    tau_prime = np.maximum(np.abs(tp), np.abs(tm))
    return tau, tau_prime


@dataclass
class ItemState:
    """Coordinator view of one coefficient index.

    ``F[j]`` is True while split ``j`` (0-based position) has not sent its
    local value for this index.
    """

    i: int
    w_hat: float
    F: np.ndarray
    tau_plus: float = 0.0
    tau_minus: float = 0.0
    tau: float = 0.0
    tau_prime: float = 0.0


def tau_bounds(item: ItemState, kth_high, kth_low) -> ItemState:
    """Fill ``item``'s bounds: unsent splits contribute their k-th high/low value."""
    tp, tm = _bounds(item.w_hat, item.F, kth_high, kth_low)
    tau, tau_prime = magnitude_bounds(tp, tm)
    item.tau_plus, item.tau_minus = float(tp), float(tm)
    item.tau, item.tau_prime = float(tau), float(tau_prime)
    return item


def _bounds(w_hat, F, high, low):
    F = np.asarray(F, dtype=np.float64)
    return w_hat + F @ np.asarray(high, np.float64), w_hat + F @ np.asarray(low, np.float64)


def threshold_T(taus, k: int) -> float:
    """k-th largest magnitude lower bound; 0 when fewer than k items are known."""
    taus = np.asarray([t.tau if isinstance(t, ItemState) else t for t in taus], dtype=np.float64)
    if taus.size < k:
        return 0.0
    return float(np.partition(taus, taus.size - k)[taus.size - k])


def round2_filter(coeffs: SparseCoeffs, T1: float, m: int, already_sent) -> np.ndarray:
    """Mask of local coefficients a split sends in round 2.

    A coefficient goes out when ``|w| >= T1/m`` and it was not sent before.
    The comparison is inclusive so that an item whose magnitude ties the
    k-th largest is never lost; any unsent value is then strictly below
    ``T1/m``.
    """
    thr = T1 / m
    slack = REL_TOL * max(1.0, thr)
    return (np.abs(coeffs.values) >= thr - slack) & ~np.asarray(already_sent, dtype=bool)


def refine_and_prune(items: list[ItemState], T1: float, m: int, k: int, kth_high=None, kth_low=None):
    """Tighten bounds with round-2 knowledge, compute T2, drop hopeless items.

    An unsent local value is bounded by ``±T1/m``; when the round-1 k-th
    high/low values are supplied the tighter of the two bounds is used.
    Returns ``(kept_items, T2)`` with ``T2 >= T1``.
    """
    cap = T1 / m
    high = np.full(m, cap) if kth_high is None else np.minimum(np.asarray(kth_high, np.float64), cap)
    low = np.full(m, -cap) if kth_low is None else np.maximum(np.asarray(kth_low, np.float64), -cap)
    for it in items:
        tau_bounds(it, high, low)
    T2 = max(T1, threshold_T(items, k))
    slack = REL_TOL * max(1.0, T2)
    return [it for it in items if it.tau_prime >= T2 - slack], T2


# --------------------------------------------------------------------------
# H-WTopk


def _kth_value(values: np.ndarray, k: int, n_zero: int, highest: bool) -> tuple[float, int | None]:
    """Bound on every unsent local value, and the position of the marked coefficient.

    ``values`` are the split's nonzero coefficients; the split sends the ``k``
    highest (or lowest) of them. Unsent nonzero values are bounded by the
    k-th one; unsent zeros by 0. Without at least ``k`` nonzero values the
    bound defaults to 0 and nothing is marked.
    """
    if values.size < k:
        return 0.0, None
    order = np.argsort(-values if highest else values, kind="stable")
    pos = int(order[k - 1])
    kth = float(values[pos])
    if n_zero > 0 and (kth < 0 if highest else kth > 0):
        return 0.0, None
    return kth, pos


def _extreme_positions(coeffs: SparseCoeffs, k: int) -> tuple[np.ndarray, np.ndarray]:
    """Positions of the k highest and k lowest local values, ties to smaller index."""
    idx, vals = coeffs.indices, coeffs.values
    high = np.lexsort((idx, -vals))[:k]
    low = np.lexsort((idx, vals))[:k]
    return high, low


@dataclass
class HWTopkTrace:
    """Coordinator-side record of one run, for inspection and audits."""

    T1: float = 0.0
    T2: float = 0.0
    r1_candidates: int = 0
    r2_candidates: int = 0
    survivors: list[int] = field(default_factory=list)
    pruned: list[int] = field(default_factory=list)
    kth_high: np.ndarray | None = None
    kth_low: np.ndarray | None = None


class _Coordinator:
    def __init__(self, m: int):
        self.m = m
        self.items: dict[int, ItemState] = {}

    def absorb(self, reduced: dict[int, tuple[float, np.ndarray]], positions: dict[int, int]) -> None:
        for i, (w_sum, sources) in reduced.items():
            it = self.items.get(i)
            if it is None:
                it = self.items[i] = ItemState(i, 0.0, np.ones(self.m, dtype=bool))
            it.w_hat += w_sum
            it.F[[positions[s] for s in sources]] = False


def hwtopk(splits, u: int, k: int, ledger: CommLedger, order=None,
           trace: HWTopkTrace | None = None, audit: bool = False) -> TopK:
    """Exact top-k coefficients by magnitude in three rounds.

    Round 1: each split sends its k highest and k lowest local coefficients,
    marking the k-th of each. Round 2: splits send unsent values with
    ``|w| >= T1/m``; the coordinator refines bounds and prunes. Round 3:
    splits send any unsent value for surviving candidates.

    With ``audit=True`` the true coefficients are computed centrally (outside
    the ledger) and every bound and pruning decision is checked against them.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    algo = "h-wtopk"
    m = len(splits)
    positions = {s.id: p for p, s in enumerate(splits)}
    trace = trace if trace is not None else HWTopkTrace()
    truth = _true_coefficients(splits, u) if audit else None

    # round 1
    def map1(split, bcast):
        c = _local_coeffs(split, u)
        kk = bcast["k"]
        high_pos, low_pos = _extreme_positions(c, kk)
        n_zero = u - len(c)
        hi_val, hi_mark = _kth_value(c.values, kk, n_zero, highest=True)
        lo_val, lo_mark = _kth_value(c.values, kk, n_zero, highest=False)
        send = np.zeros(len(c), dtype=bool)
        send[high_pos] = True
        send[low_pos] = True
        tags = np.zeros(len(c), dtype=np.uint8)
        # the marked coefficients are the k-th entries of the sorted lists, hence already sent
        if hi_mark is not None:
            tags[hi_mark] |= KTH_HIGH
        if lo_mark is not None:
            tags[lo_mark] |= KTH_LOW
        out = np.zeros(int(send.sum()), dtype=TAGGED)
        out["split"] = split.id
        out["w"] = c.values[send]
        out["tag"] = tags[send]
        state = {"coeffs": c, "sent": send}
        return Emissions(c.indices[send], out, SPLIT_ID_BYTES + COEF_BYTES + TAG_BYTES), state

    kth_high = np.zeros(m)
    kth_low = np.zeros(m)

    def reduce1(i, vals, sources):
        for rec in vals[vals["tag"] != 0]:
            p = positions[int(rec["split"])]
            if rec["tag"] & KTH_HIGH:
                kth_high[p] = rec["w"]
            if rec["tag"] & KTH_LOW:
                kth_low[p] = rec["w"]
        return float(vals["w"].sum()), vals["split"].astype(np.int64)

    coord = _Coordinator(m)
    coord.absorb(run_job(splits, map1, reduce1, {"k": k}, 1, ledger, algo, order), positions)
    items = list(coord.items.values())
    for it in items:
        tau_bounds(it, kth_high, kth_low)
    T1 = threshold_T(items, k)
    trace.T1, trace.r1_candidates = T1, len(items)
    trace.kth_high, trace.kth_low = kth_high.copy(), kth_low.copy()
    if truth is not None:
        _check_bounds(items, truth, "round 1")

    # round 2
    def map2(split, bcast):
        st = split.state
        c, sent = st["coeffs"], st["sent"]
        mask = round2_filter(c, bcast["T1"], m, sent)
        out = np.zeros(int(mask.sum()), dtype=UNTAGGED)
        out["split"] = split.id
        out["w"] = c.values[mask]
        return Emissions(c.indices[mask], out, SPLIT_ID_BYTES + COEF_BYTES), {"coeffs": c, "sent": sent | mask}

    def reduce_sum(i, vals, sources):
        return float(vals["w"].sum()), vals["split"].astype(np.int64)

    coord.absorb(run_job(splits, map2, reduce_sum, {"T1": T1}, 2, ledger, algo, order), positions)
    items = list(coord.items.values())
    kept, T2 = refine_and_prune(items, T1, m, k, kth_high, kth_low)
    kept_ids = {it.i for it in kept}
    trace.T2, trace.r2_candidates = T2, len(items)
    trace.pruned = sorted(it.i for it in items if it.i not in kept_ids)
    trace.survivors = sorted(kept_ids)
    if truth is not None:
        _check_bounds(items, truth, "round 2")
        _check_safety(trace.survivors, truth, k)
    log.debug("h-wtopk T1=%g T2=%g |R|=%d kept=%d", T1, T2, len(items), len(kept))

    # round 3
    R = np.array(trace.survivors, dtype=np.uint32)

    def map3(split, bcast):
        st = split.state
        c, sent = st["coeffs"], st["sent"]
        mask = np.isin(c.indices, bcast["R"]) & ~sent
        out = np.zeros(int(mask.sum()), dtype=UNTAGGED)
        out["split"] = split.id
        out["w"] = c.values[mask]
        return Emissions(c.indices[mask], out, SPLIT_ID_BYTES + COEF_BYTES), {"coeffs": c, "sent": sent | mask}

    coord.absorb(run_job(splits, map3, reduce_sum, {"R": R}, 3, ledger, algo, order), positions)
    idx = np.array(trace.survivors, dtype=np.int64)
    w = np.array([coord.items[i].w_hat for i in trace.survivors])
    return best_k_terms(idx, snap_sparse(idx, w, u), k)


def _true_coefficients(splits, u: int) -> np.ndarray:
    v = np.zeros(u)
    for s in splits:
        keys = s.keys()
        if keys.size:
            v += np.bincount(keys - 1, minlength=u)
    return snap_integral(haar_transform_dense(v))


def _check_bounds(items: list[ItemState], truth: np.ndarray, stage: str) -> None:
    for it in items:
        w = truth[it.i - 1]
        slack = REL_TOL * max(1.0, abs(w))
        if not (it.tau_minus - slack <= w <= it.tau_plus + slack):
            raise ProtocolError(f"{stage}: w_{it.i}={w} outside [{it.tau_minus}, {it.tau_plus}]")
        if not (it.tau - slack <= abs(w) <= it.tau_prime + slack):
            raise ProtocolError(f"{stage}: |w_{it.i}|={abs(w)} outside [{it.tau}, {it.tau_prime}]")


def _check_safety(survivors: list[int], truth: np.ndarray, k: int) -> None:
    top = _dense_top_k(truth, k).indices
    missing = set(top) - set(survivors)
    if missing:
        raise ProtocolError(f"true top-k indices pruned: {sorted(missing)}")
