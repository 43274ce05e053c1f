"""Sobol low-discrepancy sequence (Joe-Kuo direction numbers, Gray-code order).

Unscrambled, 32-bit precision, up to 6 dimensions.  The sequence starts at
index ``skip`` (default 1) so the first returned point is (0.5, ..., 0.5)
rather than the origin.
"""

from __future__ import annotations

import numpy as np

from .errors import ConfigError

_BITS = 32

# primitive-polynomial data per dimension >= 2: (degree s, coefficients a,
# initial direction integers m_1..m_s); dimension 1 is the van der Corput
# sequence in base 2.
_JOE_KUO = [
    (1, 0, [1]),
    (2, 1, [1, 3]),
    (3, 1, [1, 3, 1]),
    (3, 2, [1, 1, 1]),
    (4, 1, [1, 1, 3, 3]),
]

MAX_DIM = len(_JOE_KUO) + 1


def _direction_integers(dim: int) -> np.ndarray:
    """v[d, k] * 2^(k+1) as integers shifted to a common 2^_BITS scale."""
    v = np.zeros((dim, _BITS), dtype=np.uint64)
    v[0] = [1 << (_BITS - k - 1) for k in range(_BITS)]
    for d in range(1, dim):
        s, a, m_init = _JOE_KUO[d - 1]
        m = list(m_init)
        for k in range(s, _BITS):
            new = m[k - s] ^ (m[k - s] << s)
            for i in range(1, s):
                if (a >> (s - 1 - i)) & 1:
                    new ^= m[k - i] << i
            m.append(new)
        v[d] = [np.uint64(m[k]) << np.uint64(_BITS - k - 1) for k in range(_BITS)]
    return v


def sobol_points(n: int, dim: int, skip: int = 1) -> np.ndarray:
    """``n`` consecutive points of the ``dim``-dimensional sequence in [0, 1)."""
    if n < 1:
        raise ConfigError("n must be >= 1")
    if not 1 <= dim <= MAX_DIM:
        raise ConfigError(f"dimension must be in [1, {MAX_DIM}]")
    if skip < 0:
        raise ConfigError("skip must be >= 0")
    v = _direction_integers(dim)
    x = np.zeros(dim, dtype=np.uint64)
    out = np.empty((n, dim))
    j = 0
    for i in range(skip + n):
        if i >= skip:
            out[j] = x / float(1 << _BITS)
            j += 1
        # Gray-code step: flip the direction of the lowest zero bit of i
        c = 0
        while (i >> c) & 1:
            c += 1
        x ^= v[:, c]
    return out


def sobol_sample(ranges, n: int, skip: int = 1) -> np.ndarray:
    """``n`` sequence points affinely mapped into ``ranges`` ((lo, hi) pairs)."""
    ranges = np.asarray(ranges, dtype=float)
    if ranges.ndim != 2 or ranges.shape[1] != 2:
        raise ConfigError("ranges must be a sequence of (lo, hi) pairs")
    if np.any(ranges[:, 0] >= ranges[:, 1]):
        raise ConfigError("ranges must satisfy lo < hi")
    pts = sobol_points(n, ranges.shape[0], skip)
    return ranges[:, 0] + pts * (ranges[:, 1] - ranges[:, 0])


def star_discrepancy_1d(points: np.ndarray) -> float:
    """Exact 1D star discrepancy of a point set in [0, 1)."""
    x = np.sort(np.asarray(points, dtype=float))
    n = len(x)
    i = np.arange(1, n + 1)
    return float(np.max(np.maximum(i / n - x, x - (i - 1) / n)))
