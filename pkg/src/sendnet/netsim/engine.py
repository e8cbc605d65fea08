"""Deterministic discrete-event simulator of the client-node / edge-node relay path.

Node naming: clients are ``<group>/m0007``, delegation nodes ``deleg/<name>``,
local client nodes ``local/<client>``, edge nodes ``edge/03``.  Members fill
the delegation nodes in declaration order and the rest get local nodes; the
last ``offline`` local members start offline.

One send costs, in hops:

* client -> its client node (upload, tracked but outside the delegation count)
* delegation origin: one direct delivery per co-attached recipient
* client node -> one of its k edges (the publish)
* edge -> every recipient client node of the group, the origin's own
  delegation node included (it drops that echo)
* non-origin delegation node: one direct delivery per attached member

Each transmission is also attributed to the delegation or the other-node
term of the transmission formula: deliveries and edge forwards by the class of
the receiving node, the publish by the class of the sending node.
"""

from __future__ import annotations

import heapq
import random
from collections import defaultdict, deque
from dataclasses import dataclass, field

from .. import por
from ..encoding import H, frame, text, u64
from ..group_crypto import CryptoError, CryptoRoom
from ..identity import KeyPair
from .model import predicted_terms, predicted_transmissions, same_workload_baseline
from .scenario import SimScenario

HOP_TICKS = 1
CACHE_CAPACITY = 10_000
INTERVAL_GAP = 10

CATEGORIES = ("client_to_clientnode", "clientnode_to_edge", "edge_to_clientnode", "delegation_direct",
              "key_exchange")


@dataclass
class MetricsReport:
    scenario: str
    seed: int
    counters: dict[str, int]
    predicted: dict[str, float]
    latency: dict[str, float]
    settlement: dict[str, int]

    @property
    def measured_deleg(self) -> int:
        c = self.counters
        return c["clientnode_to_edge"] + c["edge_to_clientnode"] + c["delegation_direct"]

    def matches_prediction(self) -> bool:
        c, p = self.counters, self.predicted
        return (self.measured_deleg == p["T_deleg"] and c["delegation_term"] == p["delegation_term"]
                and c["other_term"] == p["other_term"] and c["broadcast_transmissions"] == p["T_no_deleg"])

    def flat(self) -> dict[str, object]:
        out: dict[str, object] = {"scenario": self.scenario, "seed": self.seed}
        out.update({f"measured.{k}": v for k, v in self.counters.items()})
        out["measured.T_deleg"] = self.measured_deleg
        out.update({f"predicted.{k}": v for k, v in self.predicted.items()})
        out.update({f"latency.{k}": v for k, v in self.latency.items()})
        out.update({f"settlement.{k}": v for k, v in self.settlement.items()})
        return out

    def to_counters(self) -> str:
        return "".join(f"{k}={_fmt(v)}\n" for k, v in sorted(self.flat().items()))

    def to_text(self) -> str:
        c, p = self.counters, self.predicted
        rows = [
            ("T_deleg", self.measured_deleg, p["T_deleg"]),
            ("  delegation term", c["delegation_term"], p["delegation_term"]),
            ("  other-node term", c["other_term"], p["other_term"]),
            ("T_no_deleg", c["broadcast_transmissions"], p["T_no_deleg"]),
        ]
        lines = [f"scenario {self.scenario} seed {self.seed}", "",
                 f"{'quantity':<20}{'measured':>14}{'predicted':>14}  match"]
        for name, m, pr in rows:
            lines.append(f"{name:<20}{m:>14}{_fmt(pr):>14}  {'yes' if m == pr else 'NO'}")
        measured_i = c["broadcast_transmissions"] / self.measured_deleg if self.measured_deleg else float("nan")
        lines.append(f"{'improvement I':<20}{measured_i:>14.4f}{p['I']:>14.4f}")
        lines.append(f"{'same-workload I':<20}{'':>14}{p['I_same_workload']:>14.4f}")
        lines += ["", "transmissions by hop"]
        for k in CATEGORIES:
            lines.append(f"  {k:<22}{c[k]:>12}")
        lines += ["", "delivery"]
        for k in ("deliveries", "duplicate_deliveries", "missing_deliveries", "dedup_discards", "cached",
                  "cache_retrievals", "cache_drops"):
            lines.append(f"  {k:<22}{c[k]:>12}")
        lines.append(f"  {'latency mean ticks':<22}{self.latency['mean']:>12.3f}")
        lines.append(f"  {'latency max ticks':<22}{self.latency['max']:>12}")
        if self.settlement:
            lines += ["", "settlement (milli-credits)"]
            for k, v in self.settlement.items():
                lines.append(f"  {k:<22}{v:>12}")
        return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    if isinstance(v, float):
        return f"{v:.6f}".rstrip("0").rstrip(".") if v == v else "nan"
    return str(v)


@dataclass
class _Event:
    event_id: bytes
    group: str
    sender: str
    origin: str
    sent_at: int
    message: object
    envelope: por.RelayEnvelope | None = None


@dataclass
class _Network:
    client_node: dict[str, str] = field(default_factory=dict)
    node_clients: dict[tuple[str, str], list[str]] = field(default_factory=dict)  # (node, group) -> clients
    group_nodes: dict[str, list[str]] = field(default_factory=dict)
    edges_of: dict[str, list[str]] = field(default_factory=dict)
    offline: set[str] = field(default_factory=set)


def _build_network(sc: SimScenario, rng: random.Random) -> _Network:
    net = _Network()
    edges = [f"edge/{i:02d}" for i in range(sc.edges)]
    for g in sc.groups:
        idx = 0
        nodes: list[str] = []
        for dname, count in g.delegation.items():
            node = f"deleg/{dname}"
            members = [f"{g.name}/m{idx + j:04d}" for j in range(count)]
            idx += count
            net.node_clients[(node, g.name)] = members
            for m in members:
                net.client_node[m] = node
            nodes.append(node)
        others = [f"{g.name}/m{idx + j:04d}" for j in range(g.other)]
        for m in others:
            node = f"local/{m}"
            net.client_node[m] = node
            net.node_clients[(node, g.name)] = [m]
            nodes.append(node)
        net.offline.update(others[len(others) - g.offline:] if g.offline else [])
        net.group_nodes[g.name] = nodes
    for node in sorted({n for n, _ in net.node_clients}):
        net.edges_of[node] = sorted(rng.sample(edges, sc.k))
    return net


class Simulator:
    def __init__(self, sc: SimScenario):
        self.sc = sc
        self.rng = random.Random(sc.seed)
        self.net = _build_network(sc, self.rng)
        self.counters: dict[str, int] = defaultdict(int)
        self.queue: list = []
        self.seq = 0
        self.seen: dict[str, set[bytes]] = defaultdict(set)
        self.delivered: dict[tuple[str, bytes], int] = defaultdict(int)
        self.latencies: list[int] = []
        self.cache: dict[tuple[str, str], deque] = defaultdict(deque)  # (edge, client) -> events
        self.events: list[_Event] = []
        self.rooms: dict[str, CryptoRoom] = {}
        self.members: dict[str, list[str]] = {}
        self._setup_crypto()
        self.settle = sc.settlement
        if self.settle:
            self._setup_settlement()

    # --- setup ---

    def _setup_crypto(self) -> None:
        for g in self.sc.groups:
            members = [m for m, _ in sorted(self.net.client_node.items()) if m.startswith(g.name + "/")]
            self.members[g.name] = members
            keys = {m: KeyPair.from_seed(f"sim/{self.sc.seed}/{m}") for m in members}
            threshold = {"auto": self.sc.threshold, "pairwise": len(members), "group": 1}[self.sc.crypto]
            room = CryptoRoom(g.name, keys, threshold=threshold,
                              rng=random.Random(self.rng.getrandbits(64)),
                              on_exchange=lambda *_: self._count("key_exchange"))
            self.rooms[g.name] = room

    def _setup_settlement(self) -> None:
        nodes = sorted(set(self.net.edges_of) | {e for es in self.net.edges_of.values() for e in es})
        self.node_keys = {n: KeyPair.from_seed(f"sim-node/{self.sc.seed}/{n}") for n in nodes}
        self.directory = {n: k.public for n, k in self.node_keys.items()}
        self.out_ledgers = {n: por.OutboundLedger(n, self.node_keys[n]) for n in self.net.edges_of}
        self.relay_ledgers: dict[str, por.RelayLedger] = {}
        self.in_ledgers = {n: por.InboundLedger(n, self.node_keys[n]) for n in self.net.edges_of}
        self.settle_errors = 0
        self.inbound_total = 0

    # --- plumbing ---

    def _count(self, key: str, n: int = 1) -> None:
        self.counters[key] += n

    def _push(self, tick: int, kind: str, *args) -> None:
        heapq.heappush(self.queue, (tick, self.seq, kind, args))
        self.seq += 1

    def _transmit(self, category: str, term: str, n: int = 1) -> None:
        self._count(category, n)
        self._count(term, n)

    @staticmethod
    def _term(node: str) -> str:
        return "delegation_term" if node.startswith("deleg/") else "other_term"

    # --- event handlers ---

    def _on_send(self, tick: int, group: str, sender: str, n: int) -> None:
        payload = H(b"sim-payload", text(sender), u64(n)) * (self.sc.message_size // 32 + 1)
        message = self.rooms[group].encrypt(sender, payload[: self.sc.message_size])
        eid = H(b"sim-event", text(group), text(sender), u64(n))
        origin = self.net.client_node[sender]
        ev = _Event(eid, group, sender, origin, tick, message)
        self.events.append(ev)
        self._count("messages_sent")
        self._count("client_to_clientnode")
        self._push(tick + HOP_TICKS, "origin", ev)

    def _on_origin(self, tick: int, ev: _Event) -> None:
        node = ev.origin
        self.seen[node].add(ev.event_id)
        if node.startswith("deleg/"):
            local = [c for c in self.net.node_clients[(node, ev.group)] if c != ev.sender]
            self._transmit("delegation_direct", "delegation_term", len(local))
            for c in local:
                self._push(tick + HOP_TICKS, "deliver", c, ev)
        edges = self.net.edges_of[node]
        edge = edges[self.counters["messages_sent"] % len(edges)]
        self._transmit("clientnode_to_edge", self._term(node))
        if self.settle:
            ev.envelope = por.assemble_outbound(ev.event_id, _wire(ev.message), self.node_keys[node],
                                                outbound_id=node, room_id=ev.group)
            self.out_ledgers[node].record(ev.envelope)
        self._push(tick + HOP_TICKS, "edge", edge, ev)

    def _on_edge(self, tick: int, edge: str, ev: _Event) -> None:
        for node in self.net.group_nodes[ev.group]:
            if node == f"local/{ev.sender}":
                continue
            clients = self.net.node_clients[(node, ev.group)]
            if node.startswith("local/") and clients[0] in self.net.offline:
                self._cache(node, clients[0], ev)
                continue
            self._forward(tick, edge, node, ev)

    def _forward(self, tick: int, edge: str, node: str, ev: _Event) -> None:
        self._transmit("edge_to_clientnode", self._term(node))
        if self.settle:
            self._settle_segment(tick, edge, node, ev)
        self._push(tick + HOP_TICKS, "node", node, ev)

    def _cache(self, node: str, client: str, ev: _Event) -> None:
        edge = self.net.edges_of[node][0]
        q = self.cache[(edge, client)]
        if len(q) >= CACHE_CAPACITY:
            q.popleft()
            self._count("cache_drops")
        q.append(ev)
        self._count("cached")

    def _on_node(self, tick: int, node: str, ev: _Event) -> None:
        if ev.event_id in self.seen[node]:
            self._count("dedup_discards")
            return
        self.seen[node].add(ev.event_id)
        clients = self.net.node_clients[(node, ev.group)]
        if node.startswith("deleg/"):
            self._transmit("delegation_direct", "delegation_term", len(clients))
            for c in clients:
                self._push(tick + HOP_TICKS, "deliver", c, ev)
        else:
            # a local node runs on the client's own device: handing over is not a network hop
            self._push(tick, "deliver", clients[0], ev)

    def _on_deliver(self, tick: int, client: str, ev: _Event) -> None:
        try:
            self.rooms[ev.group].decrypt(client, ev.message)
        except CryptoError:
            self._count("decrypt_failures")
            return
        key = (client, ev.event_id)
        self.delivered[key] += 1
        if self.delivered[key] > 1:
            self._count("duplicate_deliveries")
            return
        self._count("deliveries")
        self.latencies.append(tick - ev.sent_at)

    def _on_reconnect(self, tick: int) -> None:
        for client in sorted(self.net.offline):
            node = self.net.client_node[client]
            self.net.offline.discard(client)
            for edge in self.net.edges_of[node]:
                q = self.cache.pop((edge, client), deque())
                self._count("cache_retrievals", len(q))
                for ev in q:
                    self._forward(tick, edge, node, ev)

    # --- settlement ---

    def _settle_segment(self, tick: int, edge: str, node: str, ev: _Event) -> None:
        members = set(self.net.group_nodes[ev.group])
        relay = self.relay_ledgers.setdefault(edge, por.RelayLedger(edge, self.node_keys[edge]))
        try:
            env = por.relay_endorse(ev.envelope, members, self.node_keys[edge], relay_id=edge, next_hop=node,
                                    directory=self.directory)
            relay.record(env)
            por.inbound_accept(env, members, self.in_ledgers[node], self.directory, tick)
            self.inbound_total += env.message_size * self.sc.coefficient
        except por.PorError:
            self.settle_errors += 1

    def _finish_settlement(self) -> dict[str, int]:
        receipts: dict[tuple[str, str], list[por.RelayReceipt]] = defaultdict(list)
        for node in sorted(self.in_ledgers):
            for r in por.flush_receipts(self.in_ledgers[node], now=0, force=True,
                                        cost_coefficient=self.sc.coefficient):
                receipts[(r.relay_id, r.outbound_id)].append(r)
        relay_total = outbound_total = bills = 0
        for (relay, outbound), rs in sorted(receipts.items()):
            try:
                bill = por.compile_bill(rs, _only(self.relay_ledgers[relay], outbound), self.directory)
                bill = por.outbound_endorse(bill, self.out_ledgers[outbound], self.directory)
            except por.PorError:
                self.settle_errors += 1
                continue
            bills += 1
            relay_total += bill.total_millis
            sent = self.out_ledgers[outbound].sent
            outbound_total += sum(sent[e] for s in bill.sections for e in s.receipt.event_ids) * self.sc.coefficient
        return {"segments": sum(len(r.event_ids) for rs in receipts.values() for r in rs), "bills": bills,
                "outbound_total": outbound_total, "relay_total": relay_total,
                "inbound_total": self.inbound_total, "errors": self.settle_errors}

    # --- driver ---

    def schedule(self) -> None:
        for interval in range(self.sc.intervals):
            base = interval * (self.sc.rate + INTERVAL_GAP)
            for j in range(self.sc.rate):
                for g in self.sc.groups:
                    online = [m for m in self.members[g.name] if m not in self.net.offline]
                    self._push(base + j, "send", g.name, self.rng.choice(online), self.seq)
        if self.net.offline:
            self._push(self.sc.reconnect, "reconnect")

    def run(self) -> MetricsReport:
        for k in CATEGORIES + ("delegation_term", "other_term", "messages_sent", "deliveries",
                               "duplicate_deliveries", "dedup_discards", "cached", "cache_retrievals",
                               "cache_drops", "decrypt_failures"):
            self.counters.setdefault(k, 0)
        for room in self.rooms.values():
            if room.mode == "pairwise":
                room.rekey_pairwise()
        self.schedule()
        handlers = {"send": self._on_send, "origin": self._on_origin, "edge": self._on_edge,
                    "node": self._on_node, "deliver": self._on_deliver, "reconnect": self._on_reconnect}
        while self.queue:
            tick, _, kind, args = heapq.heappop(self.queue)
            handlers[kind](tick, *args)
        expected = sum(len(self.members[ev.group]) - 1 for ev in self.events)
        self.counters["missing_deliveries"] = expected - self.counters["deliveries"]
        self.counters["broadcast_transmissions"] = run_broadcast(self.sc)
        settlement = self._finish_settlement() if self.settle else {}
        no_deleg, deleg, ratio = predicted_transmissions(self.sc)
        predicted = {"T_no_deleg": no_deleg, "T_deleg": deleg, "I": ratio,
                     "I_same_workload": same_workload_baseline(self.sc) / deleg, **predicted_terms(self.sc)}
        lat = self.latencies
        latency = {"mean": sum(lat) / len(lat) if lat else 0.0, "max": max(lat, default=0), "count": len(lat)}
        return MetricsReport(self.sc.name, self.sc.seed, dict(sorted(self.counters.items())), predicted, latency,
                             settlement)


def _wire(message) -> bytes:
    return frame(text(message.mode), *(e.to_bytes() for e in message.envelopes))


def _only(ledger: por.RelayLedger, outbound: str) -> por.RelayLedger:
    """View of a relay ledger restricted to one outbound node, as compile_bill expects."""
    view = por.RelayLedger(ledger.node_id, ledger.keys)
    view.endorsed = {outbound: ledger.endorsed.get(outbound, {})}
    return view


def run_broadcast(sc: SimScenario) -> int:
    """Transmissions when every member sends T messages straight to each other member."""
    queue: list = []
    seq = 0
    t = sc.messages_per_group
    for g in sc.groups:
        for m in range(g.members):
            for j in range(t):
                heapq.heappush(queue, (j, seq, g.members))
                seq += 1
    sent = 0
    while queue:
        _, _, members = heapq.heappop(queue)
        sent += members - 1
    return sent


def run(scenario: SimScenario) -> MetricsReport:
    return Simulator(scenario).run()
