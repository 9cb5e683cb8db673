"""Reactive route discovery and hop-by-hop forwarding.

Deliberately minimal: no HELLO beacons, no route-error messages, no route
timeouts. Routes persist until replaced under the freshness rule (strictly
greater destination sequence, or equal sequence and strictly fewer hops),
which is exactly the rule a forged high-sequence reply exploits. The defense
layer, not this module, is responsible for catching that.
"""

from __future__ import annotations

from collections import deque, namedtuple
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .types import BROADCAST, Packet, PacketKind

if TYPE_CHECKING:
    from .engine import Node, Simulator

RreqPayload = namedtuple("RreqPayload",
                         "origin dest rreq_id origin_seq dest_seq_known hop_count")
RrepPayload = namedtuple("RrepPayload", "origin dest dest_seq hop_count")
DataPayload = namedtuple("DataPayload", "flow tunneled")


@dataclass
class RouteEntry:
    dest: int
    next_hop: int
    hop_count: int
    dest_seq: int
    valid: bool = True


class RoutingState:
    def __init__(self, node_id: int, buffer_cap: int):
        self.node_id = node_id
        self.buffer_cap = buffer_cap
        self.table: dict[int, RouteEntry] = {}
        self.own_seq = 0
        self.rreq_counter = 0
        self.rreq_seen: set[tuple[int, int]] = set()
        self.pending: dict[int, int] = {}  # dest -> attempt number
        self.buffer: deque[Packet] = deque()
        # Minimum acceptable sequence per destination after a route purge;
        # forces rediscovery past stale cached replies that would otherwise
        # funnel traffic back into the purged branch.
        self.seq_floor: dict[int, int] = {}

    # -- table ---------------------------------------------------------------

    def usable_route(self, node: "Node", dest: int) -> RouteEntry | None:
        entry = self.table.get(dest)
        if entry is None or not entry.valid:
            return None
        if node.distrusts(entry.next_hop):
            self.purge_routes_via(entry.next_hop)
            return None
        return entry

    def consider_install(self, sim: "Simulator", node: "Node", dest: int,
                         next_hop: int, hop_count: int, dest_seq: int) -> bool:
        if dest == node.id or node.distrusts(next_hop):
            return False
        cur = self.table.get(dest)
        if cur is not None and cur.valid:
            if not (dest_seq > cur.dest_seq
                    or (dest_seq == cur.dest_seq and hop_count < cur.hop_count)):
                return False
        self.table[dest] = RouteEntry(dest, next_hop, hop_count, dest_seq)
        sim.trace.add(sim.now, node.id, "RouteInstalled", dest, next_hop,
                      hop_count, dest_seq)
        self._flush(sim, node, dest)
        return True

    def purge_routes_via(self, bad: int) -> None:
        for dest, entry in list(self.table.items()):
            if entry.next_hop == bad:
                self.seq_floor[dest] = max(self.seq_floor.get(dest, 0),
                                           entry.dest_seq + 1)
                del self.table[dest]

    # -- route discovery ------------------------------------------------------

    def send_rreq(self, sim: "Simulator", node: "Node", dest: int) -> None:
        self.rreq_counter += 1
        self.own_seq += 1
        cached = self.table.get(dest)
        known = cached.dest_seq if cached is not None else 0
        known = max(known, self.seq_floor.get(dest, 0))
        payload = RreqPayload(node.id, dest, self.rreq_counter, self.own_seq, known, 0)
        p = Packet(PacketKind.RREQ, node.id, BROADCAST, node.id, node.next_seq(),
                   sim.sc.flood_ttl, sim.sc.ctrl_bytes, payload)
        self.rreq_seen.add((node.id, self.rreq_counter))
        sim.transmit(node, p, to=None)

    def ensure_discovery(self, sim: "Simulator", node: "Node", dest: int) -> None:
        if dest in self.pending or self.usable_route(node, dest) is not None:
            return
        self.pending[dest] = 1
        self.send_rreq(sim, node, dest)
        sim.schedule_timer(sim.now + sim.sc.rreq_retry_interval, node.id,
                           ("rreq_retry", dest, 1))

    def on_retry_timer(self, sim: "Simulator", node: "Node", dest: int,
                       attempt: int) -> None:
        if self.pending.get(dest) != attempt:
            return
        if self.usable_route(node, dest) is not None:
            self.pending.pop(dest, None)
            return
        if attempt >= sim.sc.rreq_retries:
            self.pending.pop(dest, None)
            kept = deque()
            for p in self.buffer:
                if p.dst == dest:
                    sim.trace.add(sim.now, node.id, "NoRoute", p.src, p.dst, p.seq)
                else:
                    kept.append(p)
            self.buffer = kept
            return
        self.pending[dest] = attempt + 1
        self.send_rreq(sim, node, dest)
        sim.schedule_timer(sim.now + sim.sc.rreq_retry_interval, node.id,
                           ("rreq_retry", dest, attempt + 1))

    def handle_rreq(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        rq = p.payload
        if (rq.origin, rq.rreq_id) in self.rreq_seen:
            return
        self.rreq_seen.add((rq.origin, rq.rreq_id))
        self.install_reverse(sim, node, p)
        if rq.dest == node.id:
            # Destination answers, adopting the requested freshness floor.
            self.own_seq = max(self.own_seq, rq.dest_seq_known) + 1
            self.send_rrep(sim, node, origin=rq.origin, dest=rq.dest,
                           dest_seq=self.own_seq, hop_count=0)
            return
        cached = self.table.get(rq.dest)
        if (cached is not None and cached.valid
                and cached.dest_seq >= rq.dest_seq_known
                and cached.next_hop != p.hop_src
                and not node.distrusts(cached.next_hop)):
            self.send_rrep(sim, node, origin=rq.origin, dest=rq.dest,
                           dest_seq=cached.dest_seq, hop_count=cached.hop_count)
            return
        if p.ttl_hops > 1:
            sim.transmit(node, p.relayed(node.id, hop_count=rq.hop_count + 1), to=None)

    def install_reverse(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        rq = p.payload
        if rq.origin != node.id:
            self.consider_install(sim, node, rq.origin, p.hop_src,
                                  rq.hop_count + 1, rq.origin_seq)

    def send_rrep(self, sim: "Simulator", node: "Node", origin: int, dest: int,
                  dest_seq: int, hop_count: int) -> None:
        back = self.usable_route(node, origin)
        if back is None:
            return
        payload = RrepPayload(origin, dest, dest_seq, hop_count)
        p = Packet(PacketKind.RREP, node.id, origin, node.id, node.next_seq(),
                   sim.sc.flood_ttl, sim.sc.ctrl_bytes, payload)
        sim.transmit(node, p, to=back.next_hop)

    def handle_rrep(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        rp = p.payload
        self.consider_install(sim, node, rp.dest, p.hop_src,
                              rp.hop_count + 1, rp.dest_seq)
        if rp.origin == node.id:
            return
        back = self.usable_route(node, rp.origin)
        if back is not None and p.ttl_hops > 1:
            sim.transmit(node, p.relayed(node.id, hop_count=rp.hop_count + 1),
                         to=back.next_hop)

    # -- data plane -----------------------------------------------------------

    def originate_data(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        """Send a locally generated unicast packet (data or agent transfer)."""
        route = self.usable_route(node, p.dst)
        if route is None:
            self._buffer_packet(sim, node, p)
            self.ensure_discovery(sim, node, p.dst)
            return
        sim.transmit(node, p, to=route.next_hop)

    def forward_data(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        """Relay a unicast packet addressed elsewhere."""
        route = self.usable_route(node, p.dst)
        if route is None:
            self._buffer_packet(sim, node, p)
            self.ensure_discovery(sim, node, p.dst)
            return
        if p.ttl_hops <= 1:
            sim.trace.add(sim.now, node.id, "TtlExpired", p.kind.value,
                          p.src, p.dst, p.seq)
            return
        sim.transmit(node, p.relayed(node.id), to=route.next_hop)

    def _buffer_packet(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        if len(self.buffer) >= self.buffer_cap:
            oldest = self.buffer.popleft()
            sim.trace.add(sim.now, node.id, "QueueDrop", oldest.src,
                          oldest.dst, oldest.seq)
        self.buffer.append(p)

    def _flush(self, sim: "Simulator", node: "Node", dest: int) -> None:
        self.pending.pop(dest, None)
        route = self.usable_route(node, dest)
        if route is None or not self.buffer:
            return
        kept = deque()
        for p in self.buffer:
            if p.dst != dest:
                kept.append(p)
            elif p.src == node.id:
                sim.transmit(node, p, to=route.next_hop)
            elif p.ttl_hops <= 1:
                sim.trace.add(sim.now, node.id, "TtlExpired", p.kind.value,
                              p.src, p.dst, p.seq)
            else:
                sim.transmit(node, p.relayed(node.id), to=route.next_hop)
        self.buffer = kept
