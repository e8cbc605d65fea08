"""KZG polynomial and vector commitments over the domain {0, ..., n-1}.

The trapdoor (``tau``) is only ever a setup argument; ``KzgParams`` keeps the
powers ``tau^i * g`` and the Lagrange basis ``psi_i(tau) * g`` in G1, and the
powers ``tau^i * h`` (i <= n) in G2 for the verifier side of each pairing
check.  The G2 powers beyond index 1 are what lets a verifier commit to the
vanishing polynomial of an index set when checking a subvector proof.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass
from typing import Sequence

from . import poly
from .encoding import DecodeError, frame, u32, unframe
from .pairing import (
    ORDER,
    G1Element,
    G2Element,
    PairingError,
    generator,
    generator2,
    hash_to_scalar,
    multi_scalar_mul,
    pairings_equal,
    scalar_from_bytes,
    scalar_to_bytes,
)

P = ORDER


class KzgError(ValueError):
    pass


Commitment = G1Element


@dataclass(frozen=True)
class KzgParams:
    n: int
    powers: tuple[G1Element, ...]
    lagrange_basis: tuple[G1Element, ...]
    g2_powers: tuple[G2Element, ...]

    @property
    def verify_key(self) -> tuple[G2Element, G2Element]:
        return self.g2_powers[0], self.g2_powers[1]

    def to_bytes(self) -> bytes:
        return frame(
            u32(self.n),
            b"".join(p.to_bytes() for p in self.powers),
            b"".join(p.to_bytes() for p in self.lagrange_basis),
            b"".join(p.to_bytes() for p in self.g2_powers),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "KzgParams":
        fields = unframe(data)
        if len(fields) != 4:
            raise DecodeError("KzgParams expects 4 fields")
        n = int.from_bytes(fields[0], "big")
        powers = _split(fields[1], G1Element, n)
        basis = _split(fields[2], G1Element, n)
        g2 = _split(fields[3], G2Element, n + 1)
        return cls(n, powers, basis, g2)


def _split(blob: bytes, cls, count: int):
    size = cls._size
    if len(blob) != size * count:
        raise DecodeError(f"expected {count} {cls.__name__} encodings")
    try:
        return tuple(cls.from_bytes(blob[i:i + size]) for i in range(0, len(blob), size))
    except PairingError as exc:
        raise DecodeError(str(exc)) from None


@dataclass(frozen=True)
class EvalProof:
    point: int
    value: int
    witness: G1Element

    def to_bytes(self) -> bytes:
        return frame(scalar_to_bytes(self.point), scalar_to_bytes(self.value), self.witness.to_bytes())

    @classmethod
    def from_bytes(cls, data: bytes) -> "EvalProof":
        f = unframe(data)
        if len(f) != 3:
            raise DecodeError("EvalProof expects 3 fields")
        return cls(scalar_from_bytes(f[0]), scalar_from_bytes(f[1]), G1Element.from_bytes(f[2]))


@dataclass(frozen=True)
class SubvectorProof:
    indices: tuple[int, ...]
    values: tuple[int, ...]
    witness: G1Element

    def to_bytes(self) -> bytes:
        return frame(
            b"".join(u32(i) for i in self.indices),
            b"".join(scalar_to_bytes(v) for v in self.values),
            self.witness.to_bytes(),
        )

    @classmethod
    def from_bytes(cls, data: bytes) -> "SubvectorProof":
        f = unframe(data)
        if len(f) != 3 or len(f[0]) % 4 or len(f[1]) % 32:
            raise DecodeError("malformed SubvectorProof")
        idx = tuple(int.from_bytes(f[0][i:i + 4], "big") for i in range(0, len(f[0]), 4))
        vals = tuple(scalar_from_bytes(f[1][i:i + 32]) for i in range(0, len(f[1]), 32))
        return cls(idx, vals, G1Element.from_bytes(f[2]))


def lagrange_at(n: int, x: int) -> list[int]:
    """[psi_0(x), ..., psi_{n-1}(x)] for the domain {0..n-1}, in O(n)."""
    x %= P
    if x < n:
        return [1 if i == x else 0 for i in range(n)]
    fact = [1] * n
    for i in range(1, n):
        fact[i] = fact[i - 1] * i % P
    z = 1
    for j in range(n):
        z = z * (x - j) % P
    out = []
    for i in range(n):
        den = fact[i] * fact[n - 1 - i] % P
        if (n - 1 - i) % 2:
            den = -den % P
        out.append(z * pow((x - i) * den % P, -1, P) % P)
    return out


def setup(n: int, trapdoor: int) -> KzgParams:
    if not 1 <= n <= poly.MAX_DOMAIN:
        raise KzgError(f"size must be in [1, {poly.MAX_DOMAIN}]")
    tau = trapdoor % P
    if tau < n:
        # covers tau == 0 and any tau on the evaluation domain
        raise KzgError("degenerate trapdoor")
    g, h = generator(), generator2()
    powers, g2_powers = [], []
    t = 1
    for i in range(n + 1):
        if i < n:
            powers.append(g * t)
        g2_powers.append(h * t)
        t = t * tau % P
    basis = [g * c for c in lagrange_at(n, tau)]
    return KzgParams(n, tuple(powers), tuple(basis), tuple(g2_powers))


def seeded_setup(n: int, seed: bytes | str) -> KzgParams:
    """Reproducible parameters for fixtures; the trapdoor is derived from ``seed``."""
    if isinstance(seed, str):
        seed = seed.encode()
    tau = hash_to_scalar(b"kzg-trapdoor", seed)
    while tau < n:
        tau = hash_to_scalar(b"kzg-trapdoor", seed, tau.to_bytes(32, "big"))
    return setup(n, tau)


def random_setup(n: int) -> KzgParams:
    tau = 0
    while tau < n:
        tau = secrets.randbelow(P)
    return setup(n, tau)


def commit_poly(params: KzgParams, coeffs: Sequence[int]) -> Commitment:
    coeffs = poly.trim(coeffs)
    if len(coeffs) > params.n:
        raise KzgError(f"degree {len(coeffs) - 1} exceeds bound {params.n - 1}")
    return multi_scalar_mul(coeffs, params.powers[:len(coeffs)])


def _commit_g2(params: KzgParams, coeffs: Sequence[int]) -> G2Element:
    coeffs = poly.trim(coeffs)
    if len(coeffs) > len(params.g2_powers):
        raise KzgError("degree exceeds G2 powers")
    if not coeffs:
        return G2Element.identity()
    return multi_scalar_mul(coeffs, params.g2_powers[:len(coeffs)])


def commit_vector(params: KzgParams, v: Sequence[int]) -> Commitment:
    if len(v) != params.n:
        raise KzgError(f"vector length {len(v)} != {params.n}")
    return multi_scalar_mul([x % P for x in v], params.lagrange_basis)


def interpolate_vector(v: Sequence[int]) -> list[int]:
    return poly.interpolate(list(range(len(v))), v)


def create_witness(params: KzgParams, coeffs: Sequence[int], point: int) -> EvalProof:
    coeffs = poly.trim(coeffs)
    if len(coeffs) > params.n:
        raise KzgError(f"degree {len(coeffs) - 1} exceeds bound {params.n - 1}")
    q, value = poly.divide_linear(coeffs, point % P)
    return EvalProof(point % P, value, commit_poly(params, q))


def verify_eval(params: KzgParams, commitment: Commitment, point: int, value: int, witness: G1Element) -> bool:
    try:
        g = params.powers[0]
        h, h_tau = params.verify_key
        lhs = (commitment - g * value, h)
        rhs = (witness, h_tau - h * point)
        return pairings_equal(lhs, rhs)
    except Exception:
        return False


def update_commitment(params: KzgParams, commitment: Commitment, index: int, delta: int) -> Commitment:
    if not 0 <= index < params.n:
        raise KzgError(f"index {index} out of range")
    delta %= P
    if delta == 0:
        return commitment
    return commitment + params.lagrange_basis[index] * delta


def _check_index_set(params: KzgParams, indices: Sequence[int]) -> None:
    if not indices:
        raise KzgError("index set must be nonempty")
    if len(set(indices)) != len(indices):
        raise KzgError("index set has duplicates")
    if any(not 0 <= i < params.n for i in indices):
        raise KzgError("index out of range")


def prove_subvector(params: KzgParams, v: Sequence[int], indices: Sequence[int]) -> SubvectorProof:
    if len(v) != params.n:
        raise KzgError(f"vector length {len(v)} != {params.n}")
    idx = sorted(indices)
    _check_index_set(params, idx)
    phi = interpolate_vector(v)
    values = [v[i] % P for i in idx]
    remainder_poly = poly.interpolate(idx, values)
    q, rem = poly.divmod_poly(poly.sub(phi, remainder_poly), poly.vanishing(idx))
    if rem:
        raise AssertionError("subvector quotient is not exact")
    return SubvectorProof(tuple(idx), tuple(values), commit_poly(params, q))


def verify_subvector(
    params: KzgParams,
    commitment: Commitment,
    indices: Sequence[int],
    values: Sequence[int],
    witness: G1Element,
) -> bool:
    try:
        if len(indices) != len(values):
            return False
        _check_index_set(params, indices)
        idx = list(indices)
        r = poly.interpolate(idx, [x % P for x in values])
        a = poly.vanishing(idx)
        lhs = (commitment - commit_poly(params, r), params.g2_powers[0])
        rhs = (witness, _commit_g2(params, a))
        return pairings_equal(lhs, rhs)
    except Exception:
        return False
