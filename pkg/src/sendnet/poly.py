"""Naive polynomial arithmetic over the scalar field.

Polynomials are coefficient lists, low degree first.  Everything here is
O(n^2); callers cap the domain size at ``MAX_DOMAIN``.
"""

from __future__ import annotations

from typing import Sequence

from .pairing import ORDER

MAX_DOMAIN = 4096

P = ORDER


def trim(a: Sequence[int]) -> list[int]:
    out = [x % P for x in a]
    while out and out[-1] == 0:
        out.pop()
    return out


def degree(a: Sequence[int]) -> int:
    return len(trim(a)) - 1


def evaluate(a: Sequence[int], x: int) -> int:
    acc = 0
    for c in reversed(a):
        acc = (acc * x + c) % P
    return acc


def add(a: Sequence[int], b: Sequence[int]) -> list[int]:
    n = max(len(a), len(b))
    return [((a[i] if i < len(a) else 0) + (b[i] if i < len(b) else 0)) % P for i in range(n)]


def sub(a: Sequence[int], b: Sequence[int]) -> list[int]:
    n = max(len(a), len(b))
    return [((a[i] if i < len(a) else 0) - (b[i] if i < len(b) else 0)) % P for i in range(n)]


def mul(a: Sequence[int], b: Sequence[int]) -> list[int]:
    if not a or not b:
        return []
    out = [0] * (len(a) + len(b) - 1)
    for i, x in enumerate(a):
        if x == 0:
            continue
        for j, y in enumerate(b):
            out[i + j] = (out[i + j] + x * y) % P
    return out


def scale(a: Sequence[int], k: int) -> list[int]:
    return [x * k % P for x in a]


def divmod_poly(num: Sequence[int], den: Sequence[int]) -> tuple[list[int], list[int]]:
    """Long division; returns (quotient, remainder)."""
    den = trim(den)
    if not den:
        raise ZeroDivisionError("polynomial division by zero")
    rem = trim(num)
    if len(rem) < len(den):
        return [], rem
    inv_lead = pow(den[-1], -1, P)
    q = [0] * (len(rem) - len(den) + 1)
    for k in range(len(q) - 1, -1, -1):
        coef = rem[k + len(den) - 1] * inv_lead % P
        q[k] = coef
        if coef:
            for j, d in enumerate(den):
                rem[k + j] = (rem[k + j] - coef * d) % P
    return trim(q), trim(rem[:len(den) - 1])


def divide_linear(a: Sequence[int], z: int) -> tuple[list[int], int]:
    """Synthetic division by (X - z); returns (quotient, a(z))."""
    if not a:
        return [], 0
    n = len(a)
    q = [0] * (n - 1)
    carry = a[-1] % P
    for i in range(n - 2, -1, -1):
        q[i] = carry
        carry = (a[i] + carry * z) % P
    return q, carry


def vanishing(points: Sequence[int]) -> list[int]:
    """prod (X - x_i)."""
    out = [1]
    for x in points:
        out = mul(out, [(-x) % P, 1])
    return out


def interpolate(xs: Sequence[int], ys: Sequence[int]) -> list[int]:
    """Lagrange interpolation through (xs[i], ys[i])."""
    if len(xs) != len(ys):
        raise ValueError("xs and ys differ in length")
    if len(set(x % P for x in xs)) != len(xs):
        raise ValueError("interpolation points must be distinct")
    full = vanishing(xs)
    result = [0] * len(xs)
    for xi, yi in zip(xs, ys):
        if yi % P == 0:
            continue
        basis, _ = divide_linear(full, xi)
        denom = evaluate(basis, xi)
        k = yi * pow(denom, -1, P) % P
        for j, c in enumerate(basis):
            result[j] = (result[j] + k * c) % P
    return trim(result)
