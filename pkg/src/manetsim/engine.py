"""Deterministic discrete-event core: clock, radio, mobility and energy.

Events fire in (time, seq) order with seq assigned at scheduling, so equal
timestamps replay in scheduling order and a run is a pure function of
(scenario, master seed). Connectivity is the unit disk over current
positions, evaluated lazily whenever someone transmits; a unicast reaches its
addressee and is overheard by every other neighbour of the sender
(promiscuous mode), a broadcast reaches all neighbours.
"""

from __future__ import annotations

import enum
import heapq
import math
from dataclasses import dataclass, field

from .adversary import FLOOD_KINDS, AttackState
from .attestation import Keypair
from .defense import DefenseState
from .rng import RngStreams
from .routing import DataPayload, RoutingState
from .scenario import Scenario, initial_positions
from .trace import ENGINE, Trace
from .types import BROADCAST, Packet, PacketKind, TrustStatus


class EventKind(enum.Enum):
    PACKET_DELIVERY = "packet"
    TIMER_FIRE = "timer"
    MOBILITY_STEP = "mobility"
    TRAFFIC_TICK = "traffic"


@dataclass(frozen=True)
class Event:
    time: float
    seq: int
    target: int  # node id, or ENGINE
    kind: EventKind
    payload: tuple


def wire_kind(p: Packet) -> str:
    """Trace label for a packet; registry deltas are told apart from
    knowledge dumps even though they share the DUMP envelope."""
    if p.kind == PacketKind.DUMP and p.payload.what == "table":
        return "table"
    return p.kind.value


@dataclass
class WaypointState:
    target: tuple[float, float] | None = None
    speed: float = 0.0
    pause_remaining: float = 0.0


class Node:
    def __init__(self, node_id: int, x: float, y: float, sc: Scenario):
        self.id = node_id
        self.x = x
        self.y = y
        self.energy = sc.initial_energy
        self.waypoint = WaypointState()
        self.routing = RoutingState(node_id, sc.buffer_cap)
        self.defense: DefenseState | None = (
            DefenseState(node_id, sc.defense) if sc.defense.enabled else None)
        self.attack: AttackState | None = None
        self.flood_seen: set[tuple[int, int]] = set()
        self._seq = 0

    def next_seq(self) -> int:
        self._seq += 1
        return self._seq

    def distrusts(self, other: int) -> bool:
        return (self.defense is not None
                and self.defense.status(other) == TrustStatus.INFECTED)


@dataclass
class RadioStats:
    unicasts: int = 0
    broadcasts: int = 0
    deliveries: int = 0
    overhears: int = 0
    per_tx: list = field(default_factory=list)  # (neighbours, deliveries, overhears)


class Simulator:
    def __init__(self, sc: Scenario):
        self.sc = sc
        self.now = 0.0
        self.rng = RngStreams(sc.master_seed)
        self.trace = Trace()
        self.stats = RadioStats()
        self._queue: list[tuple[float, int, Event]] = []
        self._event_seq = 0
        self._pos_version = 0
        self._nbr_cache: dict[int, tuple[int, ...]] = {}
        self._delegations_done: set[tuple[int, int]] = set()

        positions = initial_positions(sc, self.rng.stream("placement"))
        self.nodes = [Node(i, x, y, sc) for i, (x, y) in enumerate(positions)]
        for profile in sc.attackers:
            self.nodes[profile.node].attack = AttackState(profile)

        self.trace.add(0.0, ENGINE, "RunParams", sc.node_count,
                       int(sc.defense.enabled), sc.radio_range, sc.prop_delay,
                       sc.defense.window_len, sc.defense.forward_grace,
                       sc.defense.drop_threshold, sc.defense.flood_threshold,
                       sc.defense.min_evidence, sc.defense.rate_cap,
                       sc.defense.reinfection_gap, sc.defense.dispatch_period,
                       sc.defense.selftest_period, sc.flood_ttl,
                       int(sc.mobility.model != "static"))
        for node in self.nodes:
            self.trace.add(0.0, node.id, "NodeInit", node.x, node.y, node.energy)

        self._setup_defense()
        self._setup_traffic()
        self._setup_attacks()
        if sc.mobility.model == "random_waypoint":
            self.schedule(1.0, ENGINE, EventKind.MOBILITY_STEP, ("step",))
        if sc.defense.enabled:
            for node in self.nodes:
                self.schedule(1.0, node.id, EventKind.TIMER_FIRE, ("defense", 1))
        if sc.energy_sample_period < sc.duration:
            self.schedule(float(sc.energy_sample_period), ENGINE,
                          EventKind.TIMER_FIRE, ("energy",))

    # -- setup -------------------------------------------------------------

    def _setup_defense(self) -> None:
        if not self.sc.defense.enabled:
            return
        for node in self.nodes:
            node.defense.keypair = Keypair.generate(self.rng.defense.randbytes(32))
        for seed in sorted(self.sc.defense.agents,
                           key=lambda s: (s.node, int(s.agent_type))):
            node = self.nodes[seed.node]
            node.defense.generate(self, node, seed.agent_type)

    def _setup_traffic(self) -> None:
        for idx, flow in enumerate(self.sc.flows):
            if flow.start < flow.end:
                self.schedule(flow.start, flow.src, EventKind.TRAFFIC_TICK,
                              ("flow", idx, 0))

    def _setup_attacks(self) -> None:
        for profile in self.sc.attackers:
            if profile.kind in FLOOD_KINDS and profile.start < profile.end:
                self.schedule(profile.start, profile.node,
                              EventKind.TRAFFIC_TICK, ("attack", 0))

    # -- scheduling ----------------------------------------------------------

    def schedule(self, time: float, target: int, kind: EventKind,
                 payload: tuple) -> Event:
        if time < self.now - 1e-9:
            raise ValueError(f"cannot schedule event at {time} before now {self.now}")
        self._event_seq += 1
        event = Event(time, self._event_seq, target, kind, payload)
        heapq.heappush(self._queue, (time, self._event_seq, event))
        return event

    def schedule_timer(self, time: float, target: int, payload: tuple) -> Event:
        return self.schedule(time, target, EventKind.TIMER_FIRE, payload)

    # -- geometry ------------------------------------------------------------

    def neighbors(self, node_id: int) -> tuple[int, ...]:
        got = self._nbr_cache.get(node_id)
        if got is None:
            me = self.nodes[node_id]
            r = self.sc.radio_range
            got = tuple(n.id for n in self.nodes
                        if n.id != node_id and math.hypot(n.x - me.x, n.y - me.y) <= r)
            self._nbr_cache[node_id] = got
        return got

    def hop_counts_from(self, origin: int) -> dict[int, int]:
        dist = {origin: 0}
        frontier = [origin]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.neighbors(u):
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    # -- radio ------------------------------------------------------------------

    def make_data_payload(self, flow: int) -> DataPayload:
        return DataPayload(flow, False)

    def transmit(self, node: Node, p: Packet, to: int | None) -> bool:
        """Put a packet on the air. `to` is the link-level addressee, None
        for broadcast. Sender pays transmit energy up front; receivers and
        overhearers pay receive energy on arrival."""
        cost = self.sc.tx_cost(p.size_bytes)
        if node.energy < cost:
            self.trace.add(self.now, node.id, "EnergyExhausted", wire_kind(p),
                           p.src, self._trace_dst(p.dst), p.seq)
            return False
        node.energy -= cost
        self.trace.add(self.now, node.id, "Tx", wire_kind(p),
                       -1 if to is None else to, p.src, self._trace_dst(p.dst),
                       p.seq, p.ttl_hops, p.size_bytes)
        nbrs = self.neighbors(node.id)
        if node.defense is not None:
            node.defense.observe_own_tx(self, node, p, to, in_range=to in nbrs)
        arrival = self.now + self.sc.prop_delay
        if to is None:
            self.stats.broadcasts += 1
            for m in nbrs:
                self.schedule(arrival, m, EventKind.PACKET_DELIVERY, (p, None, False))
            self.stats.deliveries += len(nbrs)
            self.stats.per_tx.append((len(nbrs), len(nbrs), 0))
        else:
            self.stats.unicasts += 1
            delivered = 0
            if to in nbrs:
                self.schedule(arrival, to, EventKind.PACKET_DELIVERY, (p, to, False))
                delivered = 1
            else:
                self.trace.add(self.now, node.id, "LinkLoss", to, wire_kind(p),
                               p.src, self._trace_dst(p.dst), p.seq)
            overhears = 0
            for m in nbrs:
                if m != to:
                    self.schedule(arrival, m, EventKind.PACKET_DELIVERY, (p, to, True))
                    overhears += 1
            self.stats.deliveries += delivered
            self.stats.overhears += overhears
            self.stats.per_tx.append((len(nbrs), delivered, overhears))
        return True

    @staticmethod
    def _trace_dst(dst: int) -> int:
        return -1 if dst == BROADCAST else dst

    # -- main loop ------------------------------------------------------------------

    def run(self, until: float | None = None) -> Trace:
        if until is None:
            until = self.sc.duration
        while self._queue and self._queue[0][0] <= until:
            _t, _s, event = heapq.heappop(self._queue)
            self.now = event.time
            self._handle(event)
        self.now = until
        self._finalize(until)
        return self.trace

    def _handle(self, event: Event) -> None:
        if event.kind == EventKind.PACKET_DELIVERY:
            packet, to, overhear = event.payload
            self._on_delivery(self.nodes[event.target], packet, to, overhear)
        elif event.kind == EventKind.TIMER_FIRE:
            self._on_timer(event)
        elif event.kind == EventKind.TRAFFIC_TICK:
            self._on_traffic(event)
        elif event.kind == EventKind.MOBILITY_STEP:
            self._on_mobility_step()

    def _on_timer(self, event: Event) -> None:
        tag = event.payload[0]
        if tag == "defense":
            node = self.nodes[event.target]
            k = event.payload[1]
            if node.defense is not None:
                node.defense.tick(self, node, k)
            if k + 1 <= self.sc.duration:
                self.schedule(float(k + 1), node.id, EventKind.TIMER_FIRE,
                              ("defense", k + 1))
        elif tag == "rreq_retry":
            node = self.nodes[event.target]
            _tag, dest, attempt = event.payload
            node.routing.on_retry_timer(self, node, dest, attempt)
        elif tag == "energy":
            for node in self.nodes:
                self.trace.add(self.now, node.id, "Energy", node.energy)
            nxt = self.now + self.sc.energy_sample_period
            if nxt < self.sc.duration:
                self.schedule(nxt, ENGINE, EventKind.TIMER_FIRE, ("energy",))

    def _on_traffic(self, event: Event) -> None:
        tag = event.payload[0]
        node = self.nodes[event.target]
        if tag == "flow":
            _tag, idx, k = event.payload
            flow = self.sc.flows[idx]
            p = Packet(PacketKind.DATA, flow.src, flow.dst, flow.src,
                       node.next_seq(), self.sc.flood_ttl, self.sc.data_bytes,
                       DataPayload(idx, False))
            self.trace.add(self.now, node.id, "Send", idx, p.dst, p.seq,
                           p.size_bytes)
            node.routing.originate_data(self, node, p)
            nxt = flow.start + (k + 1) / flow.rate_pps
            if nxt < flow.end:
                self.schedule(nxt, flow.src, EventKind.TRAFFIC_TICK,
                              ("flow", idx, k + 1))
        elif tag == "attack":
            _tag, k = event.payload
            profile = node.attack.profile
            node.attack.flood_tick(self, node)
            nxt = profile.start + (k + 1) / profile.flood_rate
            if nxt < min(profile.end, self.sc.duration):
                self.schedule(nxt, node.id, EventKind.TRAFFIC_TICK,
                              ("attack", k + 1))

    def _on_mobility_step(self) -> None:
        for node in self.nodes:
            self.step_mobility(node, 1.0)
        self._pos_version += 1
        self._nbr_cache.clear()
        nxt = self.now + 1.0
        if nxt <= self.sc.duration:
            self.schedule(nxt, ENGINE, EventKind.MOBILITY_STEP, ("step",))

    # -- mobility ----------------------------------------------------------------

    def step_mobility(self, node: Node, dt: float) -> None:
        """Advance one node along its random waypoint trajectory by dt."""
        if self.sc.mobility.model != "random_waypoint":
            return
        mob = self.sc.mobility
        rng = self.rng.mobility(node.id)
        w, h = self.sc.area
        remaining = dt
        st = node.waypoint
        while remaining > 1e-12:
            if st.pause_remaining > 0:
                used = min(st.pause_remaining, remaining)
                st.pause_remaining -= used
                remaining -= used
                continue
            if st.target is None:
                st.target = (rng.uniform(0.0, w), rng.uniform(0.0, h))
                st.speed = rng.uniform(mob.speed_min, mob.speed_max)
            if st.speed <= 0:
                return
            dx = st.target[0] - node.x
            dy = st.target[1] - node.y
            dist = math.hypot(dx, dy)
            reach = st.speed * remaining
            if dist <= reach:
                node.x, node.y = st.target
                remaining -= dist / st.speed
                st.target = None
                st.pause_remaining = mob.pause_s
            else:
                node.x += dx / dist * reach
                node.y += dy / dist * reach
                remaining = 0.0

    # -- packet pipeline -----------------------------------------------------------

    def _on_delivery(self, node: Node, p: Packet, to: int | None,
                     overhear: bool) -> None:
        node.energy = max(0.0, node.energy - self.sc.rx_cost(p.size_bytes))
        if node.defense is not None:
            node.defense.observe_rx(self, node, p, to, overhear)
        if overhear:
            return
        self._dispatch(node, p)

    def _dispatch(self, node: Node, p: Packet) -> None:
        if node.distrusts(p.hop_src):
            self.trace.add(self.now, node.id, "IsolationDrop", p.hop_src,
                           wire_kind(p), p.src, self._trace_dst(p.dst), p.seq)
            return
        kind = p.kind
        if kind in (PacketKind.REPORT, PacketKind.DUMP):
            flood_id = (p.src, p.seq)
            if flood_id in node.flood_seen:
                return
            node.flood_seen.add(flood_id)
            if node.defense is not None:
                if kind == PacketKind.REPORT:
                    node.defense.on_report(self, node, p)
                else:
                    node.defense.on_dump(self, node, p)
            if p.ttl_hops > 1:
                self.transmit(node, p.relayed(node.id), to=None)
            return
        if kind == PacketKind.RREQ:
            if node.attack is not None and node.attack.hijacks_rreq(self.now):
                node.attack.on_rreq(self, node, p)
            else:
                node.routing.handle_rreq(self, node, p)
            return
        if kind == PacketKind.RREP:
            node.routing.handle_rrep(self, node, p)
            return
        if kind == PacketKind.DATA:
            if p.dst == node.id:
                self.trace.add(self.now, node.id, "Deliver", p.src, p.dst, p.seq)
                return
            if node.attack is not None and node.attack.handles_data(self.now):
                if node.attack.on_data(self, node, p):
                    return
            node.routing.forward_data(self, node, p)
            return
        if kind == PacketKind.AGENT:
            if p.dst == node.id:
                if node.defense is not None:
                    node.defense.receive_agent(self, node, p)
                return
            node.routing.forward_data(self, node, p)

    # -- delegation resolution --------------------------------------------------------

    def resolve_delegation(self, requester: Node, subject: int, key: int,
                           reporter: int, rid: int, atype) -> None:
        """Pick the best-type agent host nearest the subject and move its
        agent next to the subject. Resolved once per report; ties break to
        the lowest node id, matching what the replayer recomputes."""
        token = (reporter, rid)
        if token in self._delegations_done:
            return
        self._delegations_done.add(token)
        # the subject cannot host its own watcher: observation skips self
        hosts = [n for n in self.nodes
                 if n.id != subject and n.defense is not None
                 and n.defense.has_type(atype)]
        hops = self.hop_counts_from(subject)
        reachable = [(hops[n.id], n.id) for n in hosts if n.id in hops]
        if not reachable:
            self.trace.add(self.now, requester.id, "UnhandledInfection",
                           subject, key, reporter, rid)
            return
        _d, host_id = min(reachable)
        host = self.nodes[host_id]
        if subject in self.neighbors(host_id):
            target = host_id  # already adjacent: monitor in place
        else:
            clean = [m for m in self.neighbors(subject)
                     if host.defense.status(m) == TrustStatus.CLEAN]
            if not clean:
                self.trace.add(self.now, requester.id, "UnhandledInfection",
                               subject, key, reporter, rid)
                return
            target = min(clean)
        self.trace.add(self.now, host_id, "Delegation", subject, key,
                       int(atype), host_id, target, reporter, rid)
        if target != host_id:
            host.defense.migrate_agent(self, host, atype, target)

    # -- end of run ---------------------------------------------------------------------

    def _finalize(self, until: float) -> None:
        leftovers = []
        while self._queue:
            _t, _s, event = heapq.heappop(self._queue)
            leftovers.append(event)
        for event in leftovers:
            if event.kind != EventKind.PACKET_DELIVERY:
                continue
            packet, _to, overhear = event.payload
            if not overhear and packet.kind == PacketKind.DATA:
                self.trace.add(until, event.target, "EndFlight", packet.src,
                               self._trace_dst(packet.dst), packet.seq)
        for node in self.nodes:
            for p in node.routing.buffer:
                if p.kind == PacketKind.DATA:
                    self.trace.add(until, node.id, "EndBuffered", p.src,
                                   self._trace_dst(p.dst), p.seq)
        for node in self.nodes:
            self.trace.add(until, node.id, "Energy", node.energy)
        self.trace.add(until, ENGINE, "RunEnd")


def run_simulation(sc: Scenario) -> Trace:
    return Simulator(sc).run()
