"""End-to-end room encryption.

Small rooms (size <= threshold) use a full mesh of pairwise sessions, each
with a send and a receive hash-ratchet chain.  Larger rooms use one shared
group key ("key A") created by whoever sends first after a reset and handed
to every other member over pairwise sessions, so a rekey costs N-1 messages
instead of N(N-1).

Pairwise root keys come from a Diffie-Hellman agreement in G1.  The DH itself
is computed the first time a session is used: a 500-member mesh has 249,500
directed sessions and most of them never carry a message in a simulation run.
"""

from __future__ import annotations

import random
from dataclasses import dataclass, field

from cryptography.exceptions import InvalidTag
from cryptography.hazmat.primitives import hashes
from cryptography.hazmat.primitives.ciphers.aead import AESGCM
from cryptography.hazmat.primitives.kdf.hkdf import HKDF

from .encoding import H, frame, text, u64, unframe
from .identity import KeyPair, sign, verify
from .pairing import G1Element

GROUP_THRESHOLD = 50
MAX_SKIP = 1000

PAIRWISE = "pairwise"
GROUP = "group"


class CryptoError(Exception):
    pass


class SignatureError(CryptoError):
    pass


class DecryptionError(CryptoError):
    pass


class SkipLimitError(CryptoError):
    pass


class UnknownKeyError(CryptoError):
    pass


class ReplayError(CryptoError):
    pass


def kdf(ikm: bytes, salt: bytes, info: bytes, length: int = 32) -> bytes:
    return HKDF(algorithm=hashes.SHA256(), length=length, salt=salt or None, info=info).derive(ikm)


@dataclass
class Keychain:
    chain_key: bytes
    index: int = 0

    def advance(self) -> tuple[int, bytes]:
        """Return (index, message key) and step the chain; the old chain key is dropped."""
        mk = H(b"msg", self.chain_key)
        i = self.index
        self.chain_key = H(b"chain", self.chain_key)
        self.index += 1
        return i, mk


class PairwiseSession:
    """One side of a DH-rooted session between ``own`` and ``peer_public``."""

    def __init__(self, own: KeyPair, peer_public: G1Element, context: bytes = b""):
        if peer_public.is_identity():
            raise CryptoError("peer public key is the identity element")
        self._own = own
        self.peer_public = peer_public
        self.context = context
        self._root: bytes | None = None
        self._send: Keychain | None = None
        self._recv: Keychain | None = None
        self.skipped: dict[int, bytes] = {}

    def _derive(self) -> None:
        shared = (self.peer_public * self._own.secret).to_bytes()
        self._root = kdf(shared, self.context, b"sendnet-root")
        mine, theirs = self._own.public.to_bytes(), self.peer_public.to_bytes()
        self._send = Keychain(kdf(self._root, b"", b"chain" + mine + theirs))
        self._recv = Keychain(kdf(self._root, b"", b"chain" + theirs + mine))
        self._own = None  # secret no longer needed

    @property
    def root_key(self) -> bytes:
        if self._root is None:
            self._derive()
        return self._root

    @property
    def send_chain(self) -> Keychain:
        if self._send is None:
            self._derive()
        return self._send

    @property
    def recv_chain(self) -> Keychain:
        if self._recv is None:
            self._derive()
        return self._recv

    def retained_secrets(self) -> list[bytes]:
        self.root_key
        return [self._root, self._send.chain_key, self._recv.chain_key, *self.skipped.values()]


def establish_session(own: KeyPair, peer_public: G1Element, context: bytes = b"") -> PairwiseSession:
    return PairwiseSession(own, peer_public, context)


@dataclass(frozen=True)
class CipherEnvelope:
    room_id: str
    sender: str
    mode: str
    key_id: bytes  # group key id, or the receiving peer's id for pairwise
    index: int
    nonce: bytes
    ciphertext: bytes
    signature: bytes = b""

    def signed_body(self) -> bytes:
        return frame(text(self.room_id), text(self.sender), text(self.mode), self.key_id,
                     u64(self.index), self.nonce, self.ciphertext)

    def to_bytes(self) -> bytes:
        return frame(self.signed_body(), self.signature)

    @classmethod
    def from_bytes(cls, data: bytes) -> "CipherEnvelope":
        body, sig = unframe(data)
        room, sender, mode, key_id, idx, nonce, ct = unframe(body)
        return cls(room.decode(), sender.decode(), mode.decode(), key_id,
                   int.from_bytes(idx, "big"), nonce, ct, sig)


def _nonce(key_id: bytes, sender: str, index: int) -> bytes:
    return H(b"nonce", key_id, text(sender), u64(index))[:12]


def _signed(env: CipherEnvelope, signer: KeyPair) -> CipherEnvelope:
    sig = sign(signer.secret, H(env.signed_body()))
    return CipherEnvelope(env.room_id, env.sender, env.mode, env.key_id, env.index,
                          env.nonce, env.ciphertext, sig)


def _check_signature(env: CipherEnvelope, sender_public: G1Element) -> None:
    if not verify(sender_public, H(env.signed_body()), env.signature):
        raise SignatureError(f"bad signature on envelope from {env.sender}")


def ratchet_encrypt(session: PairwiseSession, plaintext: bytes, *, room_id: str, sender: str,
                    peer: str, signer: KeyPair) -> CipherEnvelope:
    idx, mk = session.send_chain.advance()
    peer_id = text(peer)
    nonce = _nonce(peer_id, sender, idx)
    env = CipherEnvelope(room_id, sender, PAIRWISE, peer_id, idx, nonce, b"")
    ct = AESGCM(mk).encrypt(nonce, plaintext, env.signed_body())
    return _signed(CipherEnvelope(room_id, sender, PAIRWISE, peer_id, idx, nonce, ct), signer)


def ratchet_decrypt(session: PairwiseSession, env: CipherEnvelope, sender_public: G1Element) -> bytes:
    _check_signature(env, sender_public)
    chain = session.recv_chain
    if env.index < chain.index:
        mk = session.skipped.get(env.index)
        if mk is None:
            raise DecryptionError(f"message key {env.index} already used or erased")
        pending: dict[int, bytes] = {}
        new_chain = None
    else:
        if env.index - chain.index > MAX_SKIP:
            raise SkipLimitError(f"gap of {env.index - chain.index} exceeds {MAX_SKIP}")
        if len(session.skipped) + env.index - chain.index > MAX_SKIP:
            raise SkipLimitError("skipped-key cache full")
        new_chain = Keychain(chain.chain_key, chain.index)
        pending = {}
        while new_chain.index < env.index:
            i, k = new_chain.advance()
            pending[i] = k
        _, mk = new_chain.advance()
    aad = CipherEnvelope(env.room_id, env.sender, env.mode, env.key_id, env.index, env.nonce, b"").signed_body()
    try:
        pt = AESGCM(mk).decrypt(env.nonce, env.ciphertext, aad)
    except InvalidTag:
        raise DecryptionError("AEAD authentication failed") from None
    # commit ratchet state only after a successful decrypt
    if new_chain is None:
        del session.skipped[env.index]
    else:
        chain.chain_key, chain.index = new_chain.chain_key, new_chain.index
        session.skipped.update(pending)
    return pt


@dataclass(frozen=True)
class GroupKey:
    key_id: bytes
    key: bytes = field(repr=False)
    epoch: int

    def to_bytes(self) -> bytes:
        return frame(self.key_id, self.key, u64(self.epoch))

    @classmethod
    def from_bytes(cls, data: bytes) -> "GroupKey":
        kid, key, epoch = unframe(data)
        return cls(kid, key, int.from_bytes(epoch, "big"))


def group_encrypt(gk: GroupKey, plaintext: bytes, *, room_id: str, sender: str, index: int,
                  signer: KeyPair) -> CipherEnvelope:
    nonce = _nonce(gk.key_id, sender, index)
    env = CipherEnvelope(room_id, sender, GROUP, gk.key_id, index, nonce, b"")
    ct = AESGCM(gk.key).encrypt(nonce, plaintext, env.signed_body())
    return _signed(CipherEnvelope(room_id, sender, GROUP, gk.key_id, index, nonce, ct), signer)


def group_decrypt(gk: GroupKey, env: CipherEnvelope, sender_public: G1Element) -> bytes:
    _check_signature(env, sender_public)
    aad = CipherEnvelope(env.room_id, env.sender, env.mode, env.key_id, env.index, env.nonce, b"").signed_body()
    try:
        return AESGCM(gk.key).decrypt(env.nonce, env.ciphertext, aad)
    except InvalidTag:
        raise DecryptionError("AEAD authentication failed") from None


@dataclass(frozen=True)
class KeyShare:
    """Group key handed to one member; opens a session from the initiator's ephemeral key."""
    recipient: str
    ephemeral_public: G1Element
    envelope: CipherEnvelope


@dataclass(frozen=True)
class ExchangeBundle:
    """Signed per-epoch ephemeral key a member sends to each peer in pairwise mode."""
    member: str
    epoch: int
    ephemeral_public: G1Element
    signature: bytes

    def digest(self) -> bytes:
        return H(b"exchange", text(self.member), u64(self.epoch), self.ephemeral_public.to_bytes())


@dataclass(frozen=True)
class RoomMessage:
    mode: str
    envelopes: tuple[CipherEnvelope, ...]

    def for_recipient(self, member: str) -> CipherEnvelope | None:
        if self.mode == GROUP:
            return self.envelopes[0]
        target = text(member)
        for env in self.envelopes:
            if env.key_id == target:
                return env
        return None

    def size(self) -> int:
        return sum(len(e.to_bytes()) for e in self.envelopes)


@dataclass(frozen=True)
class ResetNotice:
    room_id: str
    epoch: int
    mode: str
    joined: tuple[str, ...]
    left: tuple[str, ...]
    exchange_messages: int


class MemberCrypto:
    """Everything one member holds for one room."""

    def __init__(self, member_id: str, device: KeyPair):
        self.member_id = member_id
        self.device = device
        self.sessions: dict[str, PairwiseSession] = {}
        self.pending_bundles: dict[str, ExchangeBundle] = {}
        self.ephemeral: KeyPair | None = None
        self.context = b""
        self.group_keys: dict[bytes, GroupKey] = {}
        self.active_key: bytes | None = None
        self.send_index: dict[bytes, int] = {}
        self.seen: set[tuple[bytes, str, int]] = set()

    def session_with(self, peer: str) -> PairwiseSession:
        session = self.sessions.get(peer)
        if session is None:
            bundle = self.pending_bundles.get(peer)
            if bundle is None:
                raise UnknownKeyError(f"{self.member_id} has no session with {peer}")
            session = self.sessions[peer] = establish_session(self.ephemeral, bundle.ephemeral_public,
                                                              self.context)
        return session

    def all_key_material(self) -> list[bytes]:
        out = [gk.key for gk in self.group_keys.values()]
        for s in self.sessions.values():
            out.extend(s.retained_secrets())
        return out


class CryptoRoom:
    """Key management for one room; ``on_exchange`` observes every key-exchange message."""

    def __init__(self, room_id: str, members: dict[str, KeyPair], *, threshold: int = GROUP_THRESHOLD,
                 rng: random.Random | None = None, on_exchange=None):
        self.room_id = room_id
        self.threshold = threshold
        self.rng = rng or random.SystemRandom()
        self.on_exchange = on_exchange
        self.epoch = 0
        self.members: dict[str, MemberCrypto] = {m: MemberCrypto(m, kp) for m, kp in members.items()}
        self.departed: dict[str, MemberCrypto] = {}
        self.exchange_messages = 0
        self.bundle_signers: dict[str, G1Element] = {}

    @property
    def mode(self) -> str:
        return PAIRWISE if len(self.members) <= self.threshold else GROUP

    def public_key(self, member: str) -> G1Element:
        m = self.members.get(member) or self.departed.get(member)
        if m is None:
            raise UnknownKeyError(member)
        return m.device.public

    def _emit(self, kind: str, src: str, dst: str) -> None:
        self.exchange_messages += 1
        if self.on_exchange is not None:
            self.on_exchange(kind, src, dst)

    def _fresh_ephemeral(self, salt: str) -> KeyPair:
        return KeyPair.from_seed(self.rng.randbytes(32) + text(salt))

    def rekey_pairwise(self) -> int:
        """Fresh ephemeral per member, sent to every other member: N(N-1) messages."""
        self.epoch += 1
        before = self.exchange_messages
        bundles = {}
        context = H(b"pairwise", text(self.room_id), u64(self.epoch))
        for mid, m in self.members.items():
            m.ephemeral = self._fresh_ephemeral(mid)
            m.context = context
            m.sessions.clear()
            m.pending_bundles.clear()
            b = ExchangeBundle(mid, self.epoch, m.ephemeral.public, b"")
            bundles[mid] = ExchangeBundle(mid, self.epoch, m.ephemeral.public,
                                          sign(m.device.secret, b.digest()))
        ids = list(self.members)
        for src in ids:
            bundle = bundles[src]
            for dst in ids:
                if dst != src:
                    self._emit("pairwise-exchange", src, dst)
                    self.members[dst].pending_bundles[src] = bundle
        for mid, bundle in bundles.items():
            if not verify(self.members[mid].device.public, bundle.digest(), bundle.signature):
                raise SignatureError(f"bad exchange bundle from {mid}")
        return self.exchange_messages - before

    def rekey_group(self, initiator: str) -> tuple[GroupKey, int]:
        """Create key A at ``initiator`` and share it with the other N-1 members."""
        self.epoch += 1
        init = self.members[initiator]
        gk = GroupKey(self.rng.randbytes(16), self.rng.randbytes(32), self.epoch)
        init.group_keys[gk.key_id] = gk
        init.active_key = gk.key_id
        eph = self._fresh_ephemeral(initiator)
        before = self.exchange_messages
        for mid, m in self.members.items():
            if mid == initiator:
                continue
            session = establish_session(eph, m.device.public, H(text(self.room_id), u64(self.epoch)))
            env = ratchet_encrypt(session, gk.to_bytes(), room_id=self.room_id, sender=initiator,
                                  peer=mid, signer=init.device)
            self._emit("group-key", initiator, mid)
            self._receive_share(m, KeyShare(mid, eph.public, env))
        return gk, self.exchange_messages - before

    def _receive_share(self, member: MemberCrypto, share: KeyShare) -> None:
        env = share.envelope
        session = establish_session(member.device, share.ephemeral_public, H(text(self.room_id), u64(self.epoch)))
        gk = GroupKey.from_bytes(ratchet_decrypt(session, env, self.public_key(env.sender)))
        member.group_keys[gk.key_id] = gk
        member.active_key = gk.key_id

    def on_membership_change(self, new_members: dict[str, KeyPair]) -> ResetNotice | None:
        joined = tuple(sorted(set(new_members) - set(self.members)))
        left = tuple(sorted(set(self.members) - set(new_members)))
        if not joined and not left:
            return None
        for mid in left:
            gone = self.members.pop(mid)
            self.departed[mid] = gone
        for mid in joined:
            self.members[mid] = MemberCrypto(mid, new_members[mid])
        for m in self.members.values():
            m.active_key = None
            for mid in left:
                m.sessions.pop(mid, None)
                m.pending_bundles.pop(mid, None)
        count = 0
        if self.mode == PAIRWISE:
            count = self.rekey_pairwise()
        else:
            self.epoch += 1
        return ResetNotice(self.room_id, self.epoch, self.mode, joined, left, count)

    def encrypt(self, sender: str, plaintext: bytes) -> RoomMessage:
        m = self.members[sender]
        if self.mode == GROUP:
            if m.active_key is None:
                self.rekey_group(sender)
            gk = m.group_keys[m.active_key]
            idx = m.send_index.get(gk.key_id, 0)
            m.send_index[gk.key_id] = idx + 1
            env = group_encrypt(gk, plaintext, room_id=self.room_id, sender=sender, index=idx, signer=m.device)
            return RoomMessage(GROUP, (env,))
        if m.ephemeral is None:
            self.rekey_pairwise()
        envs = []
        for peer in self.members:
            if peer == sender:
                continue
            envs.append(ratchet_encrypt(m.session_with(peer), plaintext, room_id=self.room_id,
                                        sender=sender, peer=peer, signer=m.device))
        return RoomMessage(PAIRWISE, tuple(envs))

    def decrypt(self, recipient: str, message: RoomMessage) -> bytes:
        m = self.members.get(recipient) or self.departed.get(recipient)
        if m is None:
            raise UnknownKeyError(recipient)
        env = message.for_recipient(recipient)
        if env is None:
            raise UnknownKeyError(f"no envelope addressed to {recipient}")
        sender_public = self.public_key(env.sender)
        if message.mode == GROUP:
            gk = m.group_keys.get(env.key_id)
            if gk is None:
                _check_signature(env, sender_public)
                raise UnknownKeyError(f"{recipient} does not hold key {env.key_id.hex()}")
            tag = (env.key_id, env.sender, env.index)
            if tag in m.seen:
                raise ReplayError("group message already received")
            pt = group_decrypt(gk, env, sender_public)
            m.seen.add(tag)
            return pt
        return ratchet_decrypt(m.session_with(env.sender), env, sender_public)


def rekey_pairwise(room: CryptoRoom) -> int:
    return room.rekey_pairwise()


def rekey_group(room: CryptoRoom, initiator: str) -> tuple[GroupKey, int]:
    return room.rekey_group(initiator)


def on_membership_change(room: CryptoRoom, new_members: dict[str, KeyPair]) -> ResetNotice | None:
    return room.on_membership_change(new_members)
