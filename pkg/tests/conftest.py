from fractions import Fraction

import numpy as np
import pytest

from wavehist.cluster import SplitDescriptor
from wavehist.dataset import write_dataset


def make_splits(path, parts, u, record_size=4):
    """Write the concatenation of ``parts`` and return one split per part."""
    keys = np.concatenate([np.asarray(p, dtype=np.int64) for p in parts]) if parts else np.zeros(0, np.int64)
    meta = write_dataset(path, keys, u, record_size)
    splits, start = [], 0
    for j, p in enumerate(parts):
        splits.append(SplitDescriptor(id=j + 1, start=start, n=len(p), meta=meta))
        start += len(p)
    return meta, splits


@pytest.fixture
def split_factory(tmp_path):
    counter = iter(range(10**6))

    def factory(parts, u, record_size=4):
        return make_splits(tmp_path / f"d{next(counter)}.bin", parts, u, record_size)

    return factory


def psi(i, u):
    """Haar basis vector built directly from the step-function definition."""
    x = np.arange(1, u + 1)
    if i == 1:
        return np.ones(u) / np.sqrt(u)
    j = int(np.floor(np.log2(i - 1)))
    k = i - 1 - 2**j

    def phi(level, block):
        width = u // 2**level
        return ((x >= block * width + 1) & (x <= block * width + width)).astype(float)

    return (-phi(j + 1, 2 * k) + phi(j + 1, 2 * k + 1)) / np.sqrt(u / 2**j)


def dot_product_transform(v):
    u = len(v)
    return np.array([np.dot(v, psi(i, u)) for i in range(1, u + 1)])


def exact_top_k(v, k):
    """Brute-force top-k of an integer vector using exact arithmetic.

    Coefficient i equals D_i / sqrt(u / 2^j) with integer D_i, so magnitudes
    compare exactly as D_i^2 * 2^j / u. Zero coefficients are excluded; ties
    go to the smaller index.
    """
    v = [int(c) for c in v]
    u = len(v)
    prefix = np.concatenate(([0], np.cumsum(v, dtype=object)))
    items = [(Fraction(sum(v) ** 2, u), 1, sum(v), u)]
    for i in range(2, u + 1):
        j = int(i - 1).bit_length() - 1
        blk = i - 1 - 2**j
        width = u >> j
        lo = blk * width
        mid = lo + width // 2
        D = (prefix[lo + width] - prefix[mid]) - (prefix[mid] - prefix[lo])
        items.append((Fraction(int(D) ** 2 * 2**j, u), i, int(D), u / 2**j))
    items = [t for t in items if t[0] != 0]
    items.sort(key=lambda t: (-t[0], t[1]))
    return [(i, D / np.sqrt(scale)) for _, i, D, scale in items[:k]]


ACCEPTANCE: list[tuple[str, bool, str]] = []


def record_acceptance(label: str, ok: bool, detail: str = "") -> bool:
    """Remember one criterion outcome; shown in the terminal summary."""
    ACCEPTANCE.append((label, bool(ok), detail))
    print(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
    return bool(ok)


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for label, ok, detail in ACCEPTANCE:
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'} {label}: {detail}")
