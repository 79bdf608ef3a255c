"""Haar wavelet transforms, best k-term selection and reconstruction error.

Coefficients are indexed 1..u: index 1 is the scaled overall average and
index ``2**j + k + 1`` is the detail coefficient of level ``j`` and block
``k``, whose basis vector is ``-1`` on the left half of the block and ``+1``
on the right half, scaled by ``1/sqrt(u / 2**j)``. Dense coefficient arrays
store index ``i`` at position ``i - 1``.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Iterable, Sequence, Union

import numpy as np

ZERO_TOL = 1e-12


def is_power_of_two(u: int) -> bool:
    return u >= 2 and (u & (u - 1)) == 0


def next_power_of_two(u: int) -> int:
    """Smallest power of two >= max(u, 2)."""
    p = 2
    while p < u:
        p *= 2
    return p


def _check_domain(u: int) -> int:
    if not is_power_of_two(int(u)):
        raise ValueError(f"domain size must be a power of two >= 2, got {u}")
    return int(u).bit_length() - 1


def coefficient_level(i, u: int):
    """Level ``j`` of detail coefficient ``i`` (vectorised; i >= 2)."""
    i = np.asarray(i)
    return np.floor(np.log2(i - 1)).astype(np.int64)


def coefficient_support(i: int, u: int) -> tuple[int, int]:
    """1-based inclusive key range covered by coefficient ``i``."""
    _check_domain(u)
    if i == 1:
        return 1, u
    if not 2 <= i <= u:
        raise ValueError(f"coefficient index {i} outside [1, {u}]")
    j = int(i - 1).bit_length() - 1
    k = i - 1 - 2**j
    width = u >> j
    return k * width + 1, (k + 1) * width


def basis_vector(i: int, u: int) -> np.ndarray:
    """Dense Haar basis vector for coefficient ``i``."""
    _check_domain(u)
    psi = np.zeros(u)
    if i == 1:
        psi[:] = 1.0 / np.sqrt(u)
        return psi
    lo, hi = coefficient_support(i, u)
    j = int(i - 1).bit_length() - 1
    half = (hi - lo + 1) // 2
    scale = 1.0 / np.sqrt(u / 2**j)
    psi[lo - 1 : lo - 1 + half] = -scale
    psi[lo - 1 + half : hi] = scale
    return psi


def haar_transform_dense(v) -> np.ndarray:
    """Orthonormal Haar transform of a length-u signal, u a power of two."""
    a = np.asarray(v, dtype=np.float64)
    if a.ndim != 1:
        raise ValueError("expected a 1-d frequency vector")
    levels = _check_domain(a.size)
    out = np.empty_like(a)
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for _ in range(levels):
        left, right = a[0::2], a[1::2]
        half = a.size // 2
        out[half : 2 * half] = (right - left) * inv_sqrt2
        a = (left + right) * inv_sqrt2
    out[0] = a[0]
    return out


def inverse_transform(coeffs) -> np.ndarray:
    """Reconstruct the signal from a full array of u coefficients."""
    c = np.asarray(coeffs, dtype=np.float64)
    levels = _check_domain(c.size)
    a = c[:1].copy()
    inv_sqrt2 = 1.0 / np.sqrt(2.0)
    for _ in range(levels):
        d = c[a.size : 2 * a.size]
        nxt = np.empty(2 * a.size)
        nxt[0::2] = (a - d) * inv_sqrt2
        nxt[1::2] = (a + d) * inv_sqrt2
        a = nxt
    return a


@dataclass
class SparseCoeffs:
    """Nonzero coefficients as parallel arrays sorted by index."""

    u: int
    indices: np.ndarray = field(default_factory=lambda: np.empty(0, np.int64))
    values: np.ndarray = field(default_factory=lambda: np.empty(0))

    def __len__(self) -> int:
        return int(self.indices.size)

    def as_dict(self) -> dict[int, float]:
        return dict(zip(self.indices.tolist(), self.values.tolist()))

    def to_dense(self) -> np.ndarray:
        dense = np.zeros(self.u)
        dense[self.indices - 1] = self.values
        return dense


def haar_transform_sparse(keys, counts, u: int) -> SparseCoeffs:
    """Haar coefficients of a sparse frequency vector.

    ``keys`` are distinct 1-based keys and ``counts`` their positive
    frequencies. Every key only touches the ``log2(u) + 1`` coefficients on
    its root-to-leaf path, so the cost is O(len(keys) * log u). Coefficients
    with magnitude below ``ZERO_TOL`` are dropped.
    """
    levels = _check_domain(u)
    keys = np.asarray(keys, dtype=np.int64).ravel()
    counts = np.asarray(counts, dtype=np.float64).ravel()
    if keys.size != counts.size:
        raise ValueError("keys and counts differ in length")
    if keys.size == 0:
        return SparseCoeffs(u)
    if keys.min() < 1 or keys.max() > u:
        bad = keys[(keys < 1) | (keys > u)][0]
        raise ValueError(f"key {bad} outside [1, {u}]")
    if np.unique(keys).size != keys.size:
        raise ValueError("duplicate keys in sparse input")

    pos = keys - 1
    idx_parts = [np.zeros(1, np.int64)]
    val_parts = [np.array([counts.sum() / np.sqrt(u)])]
    for j in range(levels):
        width = u >> j
        block = pos // width
        sign = np.where(pos % width >= width // 2, 1.0, -1.0)
        idx_parts.append(2**j + block)
        val_parts.append(sign * counts / np.sqrt(width))
    idx = np.concatenate(idx_parts)
    val = np.concatenate(val_parts)
    uniq, inverse = np.unique(idx, return_inverse=True)
    sums = np.bincount(inverse, weights=val, minlength=uniq.size)
    keep = np.abs(sums) >= ZERO_TOL
    return SparseCoeffs(u, uniq[keep] + 1, sums[keep])


def haar_transform_2d(grid) -> np.ndarray:
    """Standard 2D Haar transform: 1D transform of every row, then of every column."""
    g = np.asarray(grid, dtype=np.float64)
    if g.ndim != 2 or g.shape[0] != g.shape[1]:
        raise ValueError(f"expected a square 2-d grid, got shape {g.shape}")
    _check_domain(g.shape[0])
    rows = np.apply_along_axis(haar_transform_dense, 1, g)
    return np.apply_along_axis(haar_transform_dense, 0, rows)


def snap_integral(coeffs) -> np.ndarray:
    """Round the dense coefficients of an integer-valued signal onto their lattice.

    For integer counts, coefficient ``i`` times ``sqrt(u / 2**j)`` is an
    integer (``sqrt(u)`` for the average). Snapping removes summation-order
    noise so that every exact algorithm produces bit-identical values and
    equal magnitudes tie exactly.
    """
    c = np.asarray(coeffs, dtype=np.float64)
    return _snap(c, np.arange(1, c.size + 1), c.size)


def _snap(values: np.ndarray, indices: np.ndarray, u: int) -> np.ndarray:
    if values.size == 0:
        return values.copy()
    scale = np.empty(values.size)
    avg = indices == 1
    scale[avg] = np.sqrt(u)
    det = ~avg
    if det.any():
        j = coefficient_level(indices[det], u)
        scale[det] = np.sqrt(u / np.exp2(j))
    return np.round(values * scale) / scale


def snap_sparse(indices, values, u: int) -> np.ndarray:
    return _snap(np.asarray(values, np.float64), np.asarray(indices, np.int64), u)


@dataclass
class TopK:
    """Best k-term representation: (index, value) sorted by magnitude."""

    k: int
    entries: list[tuple[int, float]]

    @property
    def indices(self) -> list[int]:
        return [i for i, _ in self.entries]

    @property
    def values(self) -> list[float]:
        return [w for _, w in self.entries]

    def to_dense(self, u: int) -> np.ndarray:
        dense = np.zeros(u)
        for i, w in self.entries:
            dense[i - 1] = w
        return dense

    def reconstruct(self, u: int) -> np.ndarray:
        return inverse_transform(self.to_dense(u))


CoeffsLike = Union[np.ndarray, Sequence[float], SparseCoeffs]


def select_top_k(coeffs: CoeffsLike, k: int, indices: Iterable[int] | None = None) -> TopK:
    """The ``k`` coefficients of largest magnitude, ties to the smaller index.

    Accepts a dense array (indices 1..u), a :class:`SparseCoeffs`, or values
    with an explicit ``indices`` sequence.
    """
    if k < 1:
        raise ValueError("k must be >= 1")
    if isinstance(coeffs, SparseCoeffs):
        idx, vals = coeffs.indices, coeffs.values
    else:
        vals = np.asarray(coeffs, dtype=np.float64)
        idx = np.arange(1, vals.size + 1) if indices is None else np.asarray(list(indices), np.int64)
    order = np.lexsort((idx, -np.abs(vals)))[:k]
    return TopK(k, [(int(idx[o]), float(vals[o])) for o in order])


def compute_sse(v, r) -> float:
    """Sum of squared differences between a signal and its reconstruction."""
    v = np.asarray(v, dtype=np.float64)
    r = np.asarray(r, dtype=np.float64)
    if v.shape != r.shape:
        raise ValueError(f"length mismatch: {v.shape} vs {r.shape}")
    return float(np.sum((v - r) ** 2))


def ideal_sse(v, k: int) -> float:
    """SSE of the exact best k-term representation (energy of dropped terms)."""
    w = haar_transform_dense(v)
    top = select_top_k(w, k)
    return compute_sse(v, top.reconstruct(w.size))
