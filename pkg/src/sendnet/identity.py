"""DID documents, key pairs and Schnorr signatures over G1.

Canonical DID body (all fields length-prefixed with ``encoding.frame``)::

    frame("did-v1", master_address[20], master_public[48], device_public[48], issued_at_be64)

``controller_signature`` signs ``H(body)`` with the master secret.  The device
key then signs ``H(body || controller_signature)``; covering the controller
signature ties the device endorsement to one specific issuance.

Signatures are 80 bytes: the nonce commitment ``R`` (compressed G1) followed
by the response ``s`` (32-byte big-endian).  Nonces are derived from
``(secret, digest)`` so signing is deterministic.
"""

from __future__ import annotations

import secrets
from dataclasses import dataclass, field

from .encoding import H, frame, text, u64, unframe
from .pairing import (
    ORDER,
    G1_BYTES,
    G1Element,
    PairingError,
    generator,
    hash_to_scalar,
    multi_scalar_mul,
    scalar_to_bytes,
)

SIGNATURE_BYTES = G1_BYTES + 32
ADDRESS_BYTES = 20


@dataclass(frozen=True)
class KeyPair:
    secret: int = field(repr=False)
    public: G1Element

    @classmethod
    def from_secret(cls, secret: int) -> "KeyPair":
        secret %= ORDER
        if secret == 0:
            raise ValueError("secret must be nonzero")
        return cls(secret, generator() * secret)

    @classmethod
    def generate(cls) -> "KeyPair":
        return cls.from_secret(secrets.randbelow(ORDER - 1) + 1)

    @classmethod
    def from_seed(cls, seed: bytes | str) -> "KeyPair":
        if isinstance(seed, str):
            seed = text(seed)
        s = hash_to_scalar(b"keypair", seed)
        return cls.from_secret(s or 1)


def sign(secret: int, digest: bytes) -> bytes:
    secret %= ORDER
    nonce = hash_to_scalar(b"schnorr-nonce", scalar_to_bytes(secret), digest) or 1
    r = generator() * nonce
    pub = generator() * secret
    e = hash_to_scalar(b"schnorr-challenge", r.to_bytes(), pub.to_bytes(), digest)
    s = (nonce + e * secret) % ORDER
    return r.to_bytes() + scalar_to_bytes(s)


def verify(public: G1Element, digest: bytes, signature: bytes) -> bool:
    if not isinstance(signature, (bytes, bytearray)) or len(signature) != SIGNATURE_BYTES:
        return False
    try:
        r = G1Element.from_bytes(bytes(signature[:G1_BYTES]))
    except PairingError:
        return False
    s = int.from_bytes(signature[G1_BYTES:], "big")
    if s >= ORDER or public.is_identity():
        return False
    e = hash_to_scalar(b"schnorr-challenge", r.to_bytes(), public.to_bytes(), digest)
    # s*g - e*pub == R
    return multi_scalar_mul([s, ORDER - e], [generator(), public]) == r


def sign_event(device: KeyPair, digest: bytes) -> bytes:
    return sign(device.secret, digest)


def verify_event(public: G1Element, digest: bytes, signature: bytes) -> bool:
    return verify(public, digest, signature)


def address_of(public: G1Element) -> bytes:
    return H(public.to_bytes())[-ADDRESS_BYTES:]


@dataclass(frozen=True)
class DidDocument:
    master_address: bytes
    master_public: G1Element
    device_public: G1Element
    issued_at: int
    controller_signature: bytes
    key_signature: bytes

    def body(self) -> bytes:
        return did_body(self.master_address, self.master_public, self.device_public, self.issued_at)

    def to_bytes(self) -> bytes:
        return frame(self.body(), self.controller_signature, self.key_signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "DidDocument":
        body, csig, ksig = unframe(data)
        tag, addr, master, device, ts = unframe(body)
        if tag != b"did-v1":
            raise ValueError("unknown DID document version")
        return cls(addr, G1Element.from_bytes(master), G1Element.from_bytes(device),
                   int.from_bytes(ts, "big"), csig, ksig)


def did_body(master_address: bytes, master_public: G1Element, device_public: G1Element, issued_at: int) -> bytes:
    return frame(b"did-v1", master_address, master_public.to_bytes(), device_public.to_bytes(), u64(issued_at))


def issue_did(master: KeyPair, device: KeyPair, issued_at: int) -> DidDocument:
    addr = address_of(master.public)
    body = did_body(addr, master.public, device.public, issued_at)
    controller_sig = sign(master.secret, H(body))
    key_sig = sign(device.secret, H(body, controller_sig))
    return DidDocument(addr, master.public, device.public, issued_at, controller_sig, key_sig)


def verify_did(doc: DidDocument) -> bool:
    try:
        if doc.master_address != address_of(doc.master_public):
            return False
        body = doc.body()
        return (verify(doc.master_public, H(body), doc.controller_signature)
                and verify(doc.device_public, H(body, doc.controller_signature), doc.key_signature))
    except Exception:
        return False


class DidRegistry:
    """In-memory DID lookup keyed by master address; plays the edge node's resolver role."""

    def __init__(self):
        self._docs: dict[bytes, DidDocument] = {}

    def publish(self, doc: DidDocument) -> None:
        if not verify_did(doc):
            raise ValueError("refusing to publish an invalid DID document")
        current = self._docs.get(doc.master_address)
        if current is None or doc.issued_at >= current.issued_at:
            self._docs[doc.master_address] = doc

    def resolve(self, address: bytes) -> DidDocument | None:
        return self._docs.get(address)

    def device_key(self, address: bytes) -> G1Element | None:
        doc = self._docs.get(address)
        return doc.device_public if doc else None

    def __len__(self):
        return len(self._docs)
