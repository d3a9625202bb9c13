"""Bessel functions of the first kind for integer order.

Orders are produced by Miller's downward recurrence normalized with the
identity ``J_0 + 2 * sum(J_2k) = 1``; a truncated power series is used for
small arguments where the recurrence start index would be wasted work.
"""
from __future__ import annotations

import math

import numpy as np

MAX_ORDER = 60

_SERIES_LIMIT = 1e-3
_RESCALE = 1e250


def _series(n: int, x: float) -> float:
    half = 0.5 * x
    term = half**n / math.factorial(n)
    total = term
    q = -half * half
    k = 0
    while True:
        k += 1
        term *= q / (k * (n + k))
        total += term
        if abs(term) <= 1e-17 * abs(total):
            return total


def bessel_j_orders(nmax: int, x: float) -> np.ndarray:
    """Return ``[J_0(x), ..., J_nmax(x)]`` for real ``x >= 0``."""
    if nmax < 0:
        raise ValueError("nmax must be non-negative")
    if x < 0:
        raise ValueError("x must be non-negative; use parity for negative arguments")
    out = np.zeros(nmax + 1)
    if x == 0.0:
        out[0] = 1.0
        return out
    if x < _SERIES_LIMIT:
        for n in range(nmax + 1):
            out[n] = _series(n, x)
        return out

    top = max(nmax, int(x))
    start = top + 30 + int(math.sqrt(40.0 * top))
    start += start % 2
    j_next = 0.0
    j_cur = 1e-300
    norm = 0.0
    for k in range(start, 0, -1):
        j_prev = 2.0 * k / x * j_cur - j_next
        j_next, j_cur = j_cur, j_prev
        if k - 1 <= nmax:
            out[k - 1] = j_cur
        if (k - 1) % 2 == 0 and k - 1 > 0:
            norm += 2.0 * j_cur
        if abs(j_cur) > _RESCALE:
            j_cur /= _RESCALE
            j_next /= _RESCALE
            out /= _RESCALE
            norm /= _RESCALE
    norm += j_cur
    return out / norm


def bessel_j(n: int, x: float) -> float:
    """J_n(x) for integer ``n`` with ``|n| <= MAX_ORDER`` and real ``x``."""
    n = int(n)
    if abs(n) > MAX_ORDER:
        raise ValueError(f"order {n} exceeds supported range |n| <= {MAX_ORDER}")
    sign = 1.0
    if n < 0:
        n = -n
        sign = -1.0 if n % 2 else 1.0
    if x < 0:
        x = -x
        if n % 2:
            sign = -sign
    return sign * float(bessel_j_orders(n, x)[n])
