"""Prime-order pairing group used by every cryptographic module.

Scalars are plain Python ints reduced modulo ``ORDER``.  Points wrap the
BLS12-381 types from ``py_arkworks_bls12381``: ``G1Element`` is the group the
rest of the package commits and signs in, ``G2Element`` only ever appears in
verification position (the shifted ``g^tau`` terms of a KZG check), and
``GTElement`` is the pairing target.

The protocol is written for a symmetric pairing ``e: G x G -> GT``.  Over an
asymmetric curve the same checks hold as long as the right-hand argument of
every pairing is taken from G2 with the matching exponent, which is how the
kzg module lays out its parameters.
"""

from __future__ import annotations

import hashlib
from typing import Iterable, Sequence

import py_arkworks_bls12381 as _ak

# BLS12-381 scalar field modulus (255 bits, ~128-bit security)
ORDER = 0x73EDA753299D7D483339D80809A1D80553BDA402FFFE5BFEFFFFFFFF00000001

SCALAR_BYTES = 32
G1_BYTES = 48
G2_BYTES = 96


class PairingError(ValueError):
    pass


def scalar(value: int) -> int:
    return value % ORDER


def scalar_to_bytes(value: int) -> bytes:
    """Big-endian fixed-width encoding of a scalar."""
    return (value % ORDER).to_bytes(SCALAR_BYTES, "big")


def scalar_from_bytes(data: bytes) -> int:
    if len(data) != SCALAR_BYTES:
        raise PairingError(f"scalar encoding must be {SCALAR_BYTES} bytes")
    value = int.from_bytes(data, "big")
    if value >= ORDER:
        raise PairingError("scalar encoding not reduced")
    return value


def hash_to_scalar(*parts: bytes) -> int:
    """SHA-256 over the concatenated parts, reduced modulo the group order."""
    h = hashlib.sha256()
    for p in parts:
        h.update(p)
    return int.from_bytes(h.digest(), "big") % ORDER


def _ak_scalar(value: int) -> "_ak.Scalar":
    return _ak.Scalar(value % ORDER)


class _Point:
    __slots__ = ("_p",)
    _impl: type
    _size: int

    def __init__(self, raw):
        self._p = raw

    @classmethod
    def generator(cls):
        return cls(cls._impl())

    @classmethod
    def identity(cls):
        return cls(cls._impl.identity())

    def is_identity(self) -> bool:
        return self._p == self._impl.identity()

    def __add__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return type(self)(self._p + other._p)

    def __sub__(self, other):
        if type(other) is not type(self):
            return NotImplemented
        return type(self)(self._p - other._p)

    def __neg__(self):
        return type(self)(-self._p)

    def __mul__(self, s: int):
        if not isinstance(s, int):
            return NotImplemented
        return type(self)(self._p * _ak_scalar(s))

    __rmul__ = __mul__

    def __eq__(self, other) -> bool:
        return type(other) is type(self) and self._p == other._p

    def __hash__(self) -> int:
        return hash(self.to_bytes())

    def __repr__(self) -> str:
        return f"{type(self).__name__}({self.to_bytes().hex()[:16]}...)"

    def to_bytes(self) -> bytes:
        return bytes(self._p.to_compressed_bytes())

    @classmethod
    def from_bytes(cls, data: bytes):
        """Decode a compressed point; rejects off-curve and non-subgroup encodings."""
        if len(data) != cls._size:
            raise PairingError(f"{cls.__name__} encoding must be {cls._size} bytes")
        try:
            return cls(cls._impl.from_compressed_bytes(bytes(data)))
        except Exception as exc:  # the binding raises a bare Exception
            raise PairingError(f"invalid {cls.__name__} encoding: {exc}") from None


class G1Element(_Point):
    __slots__ = ()
    _impl = _ak.G1Point
    _size = G1_BYTES


class G2Element(_Point):
    __slots__ = ()
    _impl = _ak.G2Point
    _size = G2_BYTES


class GTElement:
    __slots__ = ("_v",)

    def __init__(self, raw):
        self._v = raw

    @classmethod
    def identity(cls) -> "GTElement":
        return cls(_ak.GT.one())

    def __mul__(self, other: "GTElement") -> "GTElement":
        return GTElement(self._v * other._v)

    def __eq__(self, other) -> bool:
        return isinstance(other, GTElement) and self._v == other._v

    def __hash__(self):
        raise TypeError("GTElement is not hashable")

    def __pow__(self, e: int) -> "GTElement":
        e %= ORDER
        result = GTElement.identity()
        base = self
        while e:
            if e & 1:
                result = result * base
            base = base * base
            e >>= 1
        return result


def generator() -> G1Element:
    return G1Element.generator()


def generator2() -> G2Element:
    return G2Element.generator()


def scalar_mul(s: int, point: _Point) -> _Point:
    return point * s


def in_subgroup(point: _Point) -> bool:
    # ORDER itself reduces to zero as a scalar, so multiply by ORDER-1 and add once
    return (point * (ORDER - 1) + point).is_identity()


def multi_scalar_mul(scalars: Sequence[int], points: Sequence[_Point]) -> _Point:
    if len(scalars) != len(points):
        raise PairingError(f"length mismatch: {len(scalars)} scalars, {len(points)} points")
    if not points:
        return G1Element.identity()
    cls = type(points[0])
    raw = [p._p for p in points]
    return cls(cls._impl.multiexp_unchecked(raw, [_ak_scalar(s) for s in scalars]))


def pairing(x: G1Element, y: G2Element) -> GTElement:
    if not isinstance(x, G1Element) or not isinstance(y, G2Element):
        raise PairingError("pairing takes (G1Element, G2Element)")
    return GTElement(_ak.GT.pairing(x._p, y._p))


def pairings_equal(lhs: tuple[G1Element, G2Element], rhs: tuple[G1Element, G2Element]) -> bool:
    """Check e(a, b) == e(c, d) with a single multi-pairing."""
    (a, b), (c, d) = lhs, rhs
    return _ak.GT.multi_pairing([a._p, (-c)._p], [b._p, d._p]) == _ak.GT.one()


def pairing_product_is_one(pairs: Iterable[tuple[G1Element, G2Element]]) -> bool:
    xs, ys = [], []
    for x, y in pairs:
        xs.append(x._p)
        ys.append(y._p)
    return _ak.GT.multi_pairing(xs, ys) == _ak.GT.one()
