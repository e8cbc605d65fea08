"""Room event DAG with deterministic state resolution.

Resolution rule (protocol constant): for every ``(event_type, state_key)``
the winning state event is the one with the greatest ``depth``, ties broken
by the lexicographically greatest ``event_id``.  The rule only looks at the
event set, so replicas that hold the same events agree regardless of
delivery order.

Canonical event body::

    frame("evt-v1", room_id, sender, kind, event_type, state_key, content,
          frame(*sorted(prev_events)), depth_be64)

``event_id = H(body)`` and the signature covers ``event_id``.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from typing import Callable, Iterable, Mapping

from .encoding import H, frame, text, u64
from .identity import KeyPair, sign, verify
from .pairing import G1Element

MESSAGE = "message"
STATE = "state"
PARK_LIMIT = 10_000


class RoomStateError(ValueError):
    pass


class InvalidEventError(RoomStateError):
    pass


class MissingParentsError(RoomStateError):
    pass


class CycleError(RoomStateError):
    pass


@dataclass(frozen=True)
class RoomEvent:
    event_id: bytes
    room_id: str
    sender: str
    kind: str
    event_type: str
    state_key: str | None
    content: bytes
    prev_events: tuple[bytes, ...]
    depth: int
    signature: bytes

    def body(self) -> bytes:
        return event_body(self.room_id, self.sender, self.kind, self.event_type, self.state_key,
                          self.content, self.prev_events, self.depth)

    def to_json(self) -> dict:
        return {
            "event_id": self.event_id.hex(),
            "room_id": self.room_id,
            "sender": self.sender,
            "kind": self.kind,
            "type": self.event_type,
            "state_key": self.state_key,
            "content": self.content.hex(),
            "prev_events": [p.hex() for p in self.prev_events],
            "depth": self.depth,
            "signature": self.signature.hex(),
        }

    @classmethod
    def from_json(cls, d: dict) -> "RoomEvent":
        return cls(bytes.fromhex(d["event_id"]), d["room_id"], d["sender"], d["kind"], d["type"],
                   d["state_key"], bytes.fromhex(d["content"]),
                   tuple(bytes.fromhex(p) for p in d["prev_events"]), d["depth"],
                   bytes.fromhex(d["signature"]))


def event_body(room_id, sender, kind, event_type, state_key, content, prev_events, depth) -> bytes:
    sk = b"\x00" if state_key is None else b"\x01" + text(state_key)
    return frame(b"evt-v1", text(room_id), text(sender), text(kind), text(event_type), sk, content,
                 frame(*sorted(prev_events)), u64(depth))


def make_event(signer: KeyPair, *, room_id: str, sender: str, event_type: str, content: bytes,
               prev_events: Iterable[bytes], depth: int, state_key: str | None = None) -> RoomEvent:
    kind = STATE if state_key is not None else MESSAGE
    prev = tuple(sorted(prev_events))
    body = event_body(room_id, sender, kind, event_type, state_key, content, prev, depth)
    eid = H(body)
    return RoomEvent(eid, room_id, sender, kind, event_type, state_key, content, prev, depth,
                     sign(signer.secret, eid))


KeyLookup = Callable[[str], "G1Element | None"]


class RoomDag:
    def __init__(self, keys: Mapping[str, G1Element] | KeyLookup):
        self._lookup: KeyLookup = keys.get if isinstance(keys, Mapping) else keys
        self.events: dict[bytes, RoomEvent] = {}
        self.children: dict[bytes, set[bytes]] = {}
        self.forward_extremities: set[bytes] = set()
        # missing parent id -> events waiting on it
        self.parked: dict[bytes, dict[bytes, RoomEvent]] = {}
        self._parked_ids: set[bytes] = set()

    def __len__(self):
        return len(self.events)

    def __contains__(self, event_id: bytes) -> bool:
        return event_id in self.events

    @property
    def missing(self) -> set[bytes]:
        """Parents referenced by parked events that have not arrived (backfill targets)."""
        return {p for p in self.parked if p not in self.events}

    def check(self, event: RoomEvent) -> None:
        if H(event.body()) != event.event_id:
            raise InvalidEventError("event_id does not match body")
        if event.kind not in (MESSAGE, STATE) or (event.kind == STATE) != (event.state_key is not None):
            raise InvalidEventError("kind/state_key mismatch")
        key = self._lookup(event.sender)
        if key is None or not verify(key, event.event_id, event.signature):
            raise InvalidEventError(f"bad signature from {event.sender}")
        if event.event_id in event.prev_events:
            raise CycleError("event lists itself as a parent")

    def append_event(self, event: RoomEvent) -> bool:
        """Insert a verified event whose parents are all present; False if already known."""
        if event.event_id in self.events:
            return False
        self.check(event)
        missing = [p for p in event.prev_events if p not in self.events]
        if missing:
            raise MissingParentsError(f"{len(missing)} parent(s) unknown")
        self._insert(event)
        return True

    def _insert(self, event: RoomEvent) -> None:
        expected = 1 + max((self.events[p].depth for p in event.prev_events), default=0)
        if event.depth != expected:
            raise InvalidEventError(f"depth {event.depth} != {expected}")
        # depth strictly increases along every edge, which rules out cycles
        eid = event.event_id
        self.events[eid] = event
        self.children.setdefault(eid, set())
        for p in event.prev_events:
            self.children.setdefault(p, set()).add(eid)
            self.forward_extremities.discard(p)
        if not self.children[eid]:
            self.forward_extremities.add(eid)

    def merge_remote(self, events: Iterable[RoomEvent]) -> tuple[list[RoomEvent], list[tuple[RoomEvent, str]]]:
        """Apply remote events in any order; returns (newly applied, rejected with reasons).

        Events with unknown parents are parked until the parents show up.
        """
        applied: list[RoomEvent] = []
        rejected: list[tuple[RoomEvent, str]] = []
        ready: list[RoomEvent] = []
        for ev in events:
            if ev.event_id in self.events or ev.event_id in self._parked_ids:
                continue
            try:
                self.check(ev)
            except RoomStateError as exc:
                rejected.append((ev, str(exc)))
                continue
            missing = [p for p in ev.prev_events if p not in self.events]
            if missing:
                if len(self._parked_ids) >= PARK_LIMIT:
                    rejected.append((ev, "park queue full"))
                    continue
                self._parked_ids.add(ev.event_id)
                for p in missing:
                    self.parked.setdefault(p, {})[ev.event_id] = ev
            else:
                ready.append(ev)
        while ready:
            # lowest depth first, then id, keeps application order deterministic
            ready.sort(key=lambda e: (e.depth, e.event_id), reverse=True)
            ev = ready.pop()
            if ev.event_id in self.events:
                continue
            try:
                self._insert(ev)
            except RoomStateError as exc:
                rejected.append((ev, str(exc)))
                self._drop_dependents(ev.event_id, rejected)
                continue
            applied.append(ev)
            for waiting in self.parked.pop(ev.event_id, {}).values():
                if all(p in self.events for p in waiting.prev_events):
                    self._parked_ids.discard(waiting.event_id)
                    ready.append(waiting)
        return applied, rejected

    def _drop_dependents(self, event_id: bytes, rejected: list) -> None:
        for dep in self.parked.pop(event_id, {}).values():
            self._parked_ids.discard(dep.event_id)
            for waiting in self.parked.values():
                waiting.pop(dep.event_id, None)
            rejected.append((dep, "parent rejected"))
            self._drop_dependents(dep.event_id, rejected)

    def is_acyclic(self) -> bool:
        # every edge must go from a strictly deeper event to a shallower one
        return all(self.events[p].depth < e.depth for e in self.events.values() for p in e.prev_events)


StateMap = dict[tuple[str, str], bytes]


def resolve_state(dag: RoomDag) -> StateMap:
    if not dag.events:
        raise RoomStateError("cannot resolve an empty dag")
    best: dict[tuple[str, str], RoomEvent] = {}
    for ev in dag.events.values():
        if ev.kind != STATE:
            continue
        key = (ev.event_type, ev.state_key)
        cur = best.get(key)
        if cur is None or (ev.depth, ev.event_id) > (cur.depth, cur.event_id):
            best[key] = ev
    return {k: v.event_id for k, v in best.items()}


def encode_state(state: StateMap) -> bytes:
    return b"".join(frame(text(t), text(k), eid) for (t, k), eid in sorted(state.items()))


def dump_transcript(events: Iterable[RoomEvent]) -> str:
    """One JSON object per line, in the given order."""
    return "".join(json.dumps(e.to_json(), sort_keys=True) + "\n" for e in events)


def load_transcript(data: str) -> list[RoomEvent]:
    return [RoomEvent.from_json(json.loads(line)) for line in data.splitlines() if line.strip()]
