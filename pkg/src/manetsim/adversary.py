"""Per-node attack overlays: behaviour overrides for malicious nodes.

A profile replaces specific honest handlers while active; outside its
[start, end) window the node is indistinguishable from an honest one.
MaliciousDrop trace events are ground truth for scoring only, nodes never
see them.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass
from typing import TYPE_CHECKING

from .types import Packet, PacketKind

if TYPE_CHECKING:
    from .engine import Node, Simulator

# Forged route replies advertise requested_seq + FORGE_BOOST, which outruns
# any honest sequence growth in these scenarios.
FORGE_BOOST = 1000


class AttackKind(enum.Enum):
    BLACK_HOLE = "black_hole"
    GREY_HOLE = "grey_hole"
    COOP_BLACK_HOLE = "coop_black_hole"
    RESOURCE_FLOOD = "resource_flood"
    TABLE_OVERFLOW = "table_overflow"
    SLEEP_DEPRIVATION = "sleep_deprivation"


FLOOD_KINDS = frozenset({
    AttackKind.RESOURCE_FLOOD,
    AttackKind.TABLE_OVERFLOW,
    AttackKind.SLEEP_DEPRIVATION,
})

CAPTURE_KINDS = frozenset({AttackKind.BLACK_HOLE, AttackKind.COOP_BLACK_HOLE})


@dataclass(frozen=True)
class AttackProfile:
    node: int
    kind: AttackKind
    start: float
    end: float
    drop_prob: float = 1.0
    flood_rate: float = 0.0
    victim: int | None = None
    partners: tuple[int, ...] = ()

    def active(self, now: float) -> bool:
        return self.start <= now < self.end


class AttackState:
    """Runtime attack state for one node."""

    def __init__(self, profile: AttackProfile):
        self.profile = profile
        self._fake_dest_counter = 0

    def active(self, now: float) -> bool:
        return self.profile.active(now)

    # -- route request hijack (black hole family) --------------------------

    def hijacks_rreq(self, now: float) -> bool:
        return self.profile.kind in CAPTURE_KINDS and self.active(now)

    def on_rreq(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        """Answer with a forged reply instead of relaying the request."""
        rq = p.payload
        if (rq.origin, rq.rreq_id) in node.routing.rreq_seen:
            return
        node.routing.rreq_seen.add((rq.origin, rq.rreq_id))
        node.routing.install_reverse(sim, node, p)
        forged_seq = rq.dest_seq_known + FORGE_BOOST
        node.routing.send_rrep(sim, node, origin=rq.origin, dest=rq.dest,
                               dest_seq=forged_seq, hop_count=1)

    # -- data plane ---------------------------------------------------------

    def handles_data(self, now: float) -> bool:
        return self.profile.kind in (AttackKind.BLACK_HOLE, AttackKind.GREY_HOLE,
                                     AttackKind.COOP_BLACK_HOLE) and self.active(now)

    def on_data(self, sim: "Simulator", node: "Node", p: Packet) -> bool:
        """Handle a data packet in transit. Returns True when consumed."""
        kind = self.profile.kind
        if kind == AttackKind.GREY_HOLE:
            if sim.rng.attack.random() < self.profile.drop_prob:
                sim.trace.add(sim.now, node.id, "MaliciousDrop", p.src, p.dst, p.seq)
                return True
            return False  # forward honestly this time
        if kind == AttackKind.COOP_BLACK_HOLE:
            if p.payload.tunneled:
                # Partner end of a tunnel: swallow the packet here.
                sim.trace.add(sim.now, node.id, "MaliciousDrop", p.src, p.dst, p.seq)
                return True
            partner = self._partner_in_range(sim, node)
            if partner is not None:
                # Hand the packet to the partner, who drops it. To per-hop
                # watchers this first hop looks like an honest forward.
                handoff = p.relayed(node.id, tunneled=True)
                sim.transmit(node, handoff, to=partner)
                return True
            sim.trace.add(sim.now, node.id, "MaliciousDrop", p.src, p.dst, p.seq)
            return True
        # plain black hole
        sim.trace.add(sim.now, node.id, "MaliciousDrop", p.src, p.dst, p.seq)
        return True

    def _partner_in_range(self, sim: "Simulator", node: "Node") -> int | None:
        nbrs = sim.neighbors(node.id)
        for partner in sorted(self.profile.partners):
            if partner in nbrs:
                return partner
        return None

    # -- flooding family ----------------------------------------------------

    def flood_tick(self, sim: "Simulator", node: "Node") -> None:
        kind = self.profile.kind
        if kind == AttackKind.TABLE_OVERFLOW:
            # Route requests for destinations that do not exist; victims'
            # duplicate-suppression state grows and no reply ever comes back.
            dest = sim.sc.node_count + self._fake_dest_counter
            self._fake_dest_counter += 1
        elif kind == AttackKind.RESOURCE_FLOOD:
            dest = sim.rng.attack.randrange(sim.sc.node_count)
            if dest == node.id:
                dest = (dest + 1) % sim.sc.node_count
        else:  # sleep deprivation: hammer one victim
            dest = self.profile.victim
        node.routing.send_rreq(sim, node, dest)
        if kind == AttackKind.SLEEP_DEPRIVATION:
            # Junk payload addressed at the victim on top of the requests.
            junk = Packet(PacketKind.DATA, node.id, self.profile.victim, node.id,
                          node.next_seq(), sim.sc.flood_ttl, sim.sc.ctrl_bytes,
                          sim.make_data_payload(flow=-1))
            sim.trace.add(sim.now, node.id, "Send", -1, junk.dst, junk.seq, junk.size_bytes)
            node.routing.originate_data(sim, node, junk)
