"""Agent-based defense: generation, dispatch, sniffing, escalation, isolation.

Behavioural contract (mirrored exactly by the offline replayer, so treat any
change here as a protocol change):

* Observation runs only while a node hosts at least one live agent. A watcher
  expects a forward from subject R when it saw a data packet handed to R
  (its own send, or an overheard unicast addressed to R) with R not the final
  destination; the expectation resolves as forwarded if R retransmits the
  packet within the forward grace, otherwise as dropped at the next whole
  second after the grace expires. Control counting is origination-only: a
  subject's window counts route requests with the subject as requester, never
  relays, so flooding attacks cannot frame the honest nodes relaying them.
* Ticks run once per whole second per node, in this order: resolve expired
  expectations, close windows (on window-length multiples), age agents and
  dump expired ones, periodic self tests, held-agent timeouts, dispatch.
* A window closes with a verdict only if it has usable evidence: enough
  resolved forwarding expectations for the drop check (with a drop monitor
  resident), or flood coverage for the rate check (a flood monitor resident
  since the window opened). Otherwise the window is silently extended.
* Trust is monotone per (observer, subject): clean, probably infected,
  infected. Escalation to infected takes reports from two distinct reporters,
  or symptom records spanning at least the reinfection gap (repeat offender
  fast path). Infected is absorbing and triggers isolation.
"""

from __future__ import annotations

from collections import namedtuple
from dataclasses import dataclass
from typing import TYPE_CHECKING

from . import attestation
from .attestation import GlobalTable, GlobalTableEntry, Keypair, VerifyResult
from .scenario import DefenseConfig
from .types import (
    BROADCAST,
    CANONICAL_KEYS,
    AgentId,
    AgentType,
    DbEntry,
    InfectionRecord,
    Packet,
    PacketKind,
    SymptomVector,
    TrustStatus,
    closest_agent_types,
    encode_infection_key,
)

if TYPE_CHECKING:
    from .engine import Node, Simulator

AgentPayload = namedtuple("AgentPayload", "agent_id affkey sig code ttl mode")
ReportPayload = namedtuple("ReportPayload", "subject key reporter rid verdict")
DumpPayload = namedtuple("DumpPayload", "what entry records")

VERDICT_PROBABLE = "probable"
VERDICT_CLEAN = "clean"


@dataclass
class Agent:
    """One mobile defense unit. `sig` is the creator's signature over the
    attested bytes and doubles as the self-test key; `ttl` is the remaining
    lifetime in whole seconds and is the only mutable, unattested field."""

    id: AgentId
    affkey: int
    sig: bytes
    code: bytes
    ttl: int


@dataclass
class WindowState:
    start: float
    exp: int = 0
    obs: int = 0
    ctrl: int = 0
    data: int = 0
    flood_covered: bool = False


class DefenseState:
    def __init__(self, node_id: int, cfg: DefenseConfig):
        self.node_id = node_id
        self.cfg = cfg
        self.keypair: Keypair | None = None
        self.table = GlobalTable()
        self.db: dict[int, DbEntry] = {}
        self.residents: dict[AgentId, Agent] = {}
        self.held: dict[AgentId, tuple[Agent, float]] = {}
        self.windows: dict[int, WindowState] = {}
        self.pendings: dict[tuple[int, int, int], float] = {}
        self.last_dispatch: dict[tuple[int, int], float] = {}
        self.gen_count: dict[AgentType, int] = {t: 0 for t in AgentType}

    # -- trust ----------------------------------------------------------------

    def status(self, subject: int) -> TrustStatus:
        entry = self.db.get(subject)
        return entry.status if entry is not None else TrustStatus.CLEAN

    # -- residency ------------------------------------------------------------

    def resident_types(self) -> set[AgentType]:
        return {a.id.agent_type for a in self.residents.values()}

    def has_type(self, atype: AgentType) -> bool:
        return any(a.id.agent_type == atype for a in self.residents.values())

    def _add_resident(self, agent: Agent) -> None:
        self.residents[agent.id] = agent

    def _remove_resident(self, agent_id: AgentId) -> None:
        agent = self.residents.pop(agent_id, None)
        if agent is None:
            return
        if (agent.id.agent_type == AgentType.FLOOD_MONITOR
                and not self.has_type(AgentType.FLOOD_MONITOR)):
            for w in self.windows.values():
                w.flood_covered = False
        if not self.residents:
            self.windows.clear()
            self.pendings.clear()

    # -- agent lifecycle --------------------------------------------------------

    def _threshold(self, atype: AgentType) -> float:
        if atype == AgentType.DROP_MONITOR:
            return self.cfg.drop_threshold
        return self.cfg.flood_threshold

    def generate(self, sim: "Simulator", node: "Node", atype: AgentType) -> Agent | None:
        if self.keypair is None:
            return None
        count = self.gen_count[atype]
        self.gen_count[atype] = count + 1
        code = attestation.detector_code(atype, self.cfg.window_len,
                                         self._threshold(atype),
                                         self.cfg.min_evidence,
                                         self.cfg.forward_grace)
        agent_id = AgentId(node.id, atype, count)
        affkey = CANONICAL_KEYS[atype]
        blob = attestation.attested_bytes(code, agent_id, affkey)
        sig = attestation.sign(self.keypair, attestation.fingerprint(blob))
        agent = Agent(agent_id, affkey, sig, code, self.cfg.agent_ttl(atype))
        entry = GlobalTableEntry(agent_id, sig, self.keypair.public_bytes, sim.now)
        self.table_insert(sim, node, entry, flood=True)
        if attestation.verify_agent(agent, entry) != VerifyResult.VALID:
            sim.trace.add(sim.now, node.id, "CorruptAgent", agent_id.wire, "selftest")
            return None
        sim.trace.add(sim.now, node.id, "AgentGenerated", agent_id.wire, agent.ttl)
        self._add_resident(agent)
        return agent

    def receive_agent(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        ap = p.payload
        if ap.agent_id in self.residents or ap.agent_id in self.held:
            return
        agent = Agent(ap.agent_id, ap.affkey, ap.sig, ap.code, ap.ttl)
        entry = self.table.get(agent.id)
        if entry is None:
            # Unknown identity: hold without running until the registry row
            # arrives or the hold times out.
            self.held[agent.id] = (agent, sim.now + self.cfg.hold_timeout)
            sim.trace.add(sim.now, node.id, "AgentHeld", agent.id.wire)
            return
        self._admit(sim, node, agent, entry, released=False)

    def _admit(self, sim: "Simulator", node: "Node", agent: Agent,
               entry: GlobalTableEntry, released: bool) -> None:
        if attestation.verify_agent(agent, entry) == VerifyResult.VALID:
            if released:
                sim.trace.add(sim.now, node.id, "AgentReleased", agent.id.wire)
            self._add_resident(agent)
        else:
            sim.trace.add(sim.now, node.id, "CorruptAgent", agent.id.wire, "selftest")

    def self_test(self, agent: Agent) -> bool:
        entry = self.table.get(agent.id)
        if entry is None:
            return False
        return attestation.verify_agent(agent, entry) == VerifyResult.VALID

    def dump_agent(self, sim: "Simulator", node: "Node", agent: Agent) -> None:
        """Broadcast everything this node learned, then destroy the agent."""
        records = tuple((subject, r.time, r.key, r.reporter)
                        for subject in sorted(self.db)
                        for r in self.db[subject].history)
        sim.trace.add(sim.now, node.id, "KnowledgeDump", agent.id.wire, len(records))
        p = Packet(PacketKind.DUMP, node.id, BROADCAST, node.id, node.next_seq(),
                   sim.sc.flood_ttl, sim.sc.dump_bytes,
                   DumpPayload("history", None, records))
        node.flood_seen.add((node.id, p.seq))
        sim.transmit(node, p, to=None)
        self._remove_resident(agent.id)

    # -- global table ------------------------------------------------------------

    def table_insert(self, sim: "Simulator", node: "Node",
                     entry: GlobalTableEntry, flood: bool) -> str:
        outcome = self.table.insert(entry)
        if outcome == GlobalTable.ACCEPTED:
            sim.trace.add(sim.now, node.id, "TableInsert", entry.agent_id.wire)
            self._release_held(sim, node, entry.agent_id)
            if flood:
                p = Packet(PacketKind.DUMP, node.id, BROADCAST, node.id,
                           node.next_seq(), sim.sc.flood_ttl, sim.sc.dump_bytes,
                           DumpPayload("table", entry, ()))
                node.flood_seen.add((node.id, p.seq))
                sim.transmit(node, p, to=None)
        elif outcome == GlobalTable.CONFLICT:
            sim.trace.add(sim.now, node.id, "TableConflict", entry.agent_id.wire)
        return outcome

    def _release_held(self, sim: "Simulator", node: "Node", agent_id: AgentId) -> None:
        pair = self.held.pop(agent_id, None)
        if pair is None:
            return
        agent, _deadline = pair
        self._admit(sim, node, agent, self.table.get(agent_id), released=True)

    # -- observation ---------------------------------------------------------------

    def _window(self, subject: int, now: float) -> WindowState:
        w = self.windows.get(subject)
        if w is None:
            w = WindowState(start=now,
                            flood_covered=self.has_type(AgentType.FLOOD_MONITOR))
            self.windows[subject] = w
        return w

    def observe_own_tx(self, sim: "Simulator", node: "Node", p: Packet,
                       to: int | None, in_range: bool) -> None:
        if not self.residents:
            return
        if (p.kind == PacketKind.DATA and to is not None and in_range
                and to != p.dst and to != node.id):
            self.pendings[(to, p.src, p.seq)] = sim.now + self.cfg.forward_grace

    def observe_rx(self, sim: "Simulator", node: "Node", p: Packet,
                   to: int | None, overhear: bool) -> None:
        if not self.residents:
            return
        subject = p.hop_src
        if subject == node.id:
            return
        if p.kind == PacketKind.RREQ and p.src == subject:
            self._window(subject, sim.now).ctrl += 1
        elif p.kind == PacketKind.DATA:
            w = self._window(subject, sim.now)
            w.data += 1
            key = (subject, p.src, p.seq)
            deadline = self.pendings.get(key)
            if deadline is not None and sim.now <= deadline:
                del self.pendings[key]
                w.exp += 1
                w.obs += 1
            if (to is not None and to != p.dst and to != node.id
                    and self.status(subject) != TrustStatus.INFECTED
                    and to in sim.neighbors(node.id)):
                self.pendings[(to, p.src, p.seq)] = sim.now + self.cfg.forward_grace

    # -- per-second tick ----------------------------------------------------------

    def tick(self, sim: "Simulator", node: "Node", k: int) -> None:
        now = sim.now
        # 1. expectations whose grace has passed resolve as drops
        due = [key for key, deadline in self.pendings.items() if deadline <= now]
        for key in due:
            del self.pendings[key]
            self._window(key[0], now).exp += 1
        # 2. window close
        if k % self.cfg.window_len == 0 and k > 0:
            self._close_windows(sim, node)
        # 3. agent aging
        expired = []
        for aid in sorted(self.residents):
            agent = self.residents[aid]
            agent.ttl -= 1
            if agent.ttl <= 0:
                expired.append(agent)
        for agent in expired:
            self.dump_agent(sim, node, agent)
        # 4. periodic self test of resident agents (foreign code injection)
        if k % self.cfg.selftest_period == 0:
            for aid in sorted(self.residents):
                if not self.self_test(self.residents[aid]):
                    sim.trace.add(now, node.id, "CorruptAgent", aid.wire, "selftest")
                    self._remove_resident(aid)
        # 5. held-agent timeouts
        for aid in sorted(self.held):
            _agent, deadline = self.held[aid]
            if now >= deadline:
                del self.held[aid]
                sim.trace.add(now, node.id, "CorruptAgent", aid.wire, "timeout")
        # 6. dispatch copies to clean neighbours
        if k % self.cfg.dispatch_period == 0:
            self.dispatch_agents(sim, node)

    def _close_windows(self, sim: "Simulator", node: "Node") -> None:
        now = sim.now
        drop_resident = self.has_type(AgentType.DROP_MONITOR)
        flood_resident = self.has_type(AgentType.FLOOD_MONITOR)
        for subject in sorted(self.windows):
            w = self.windows[subject]
            span = now - w.start
            if span <= 0:
                continue
            drop_ok = drop_resident and w.exp >= self.cfg.min_evidence
            flood_ok = flood_resident and w.flood_covered
            if not drop_ok and not flood_ok:
                continue  # extended: not enough evidence yet
            drop_ratio = (1.0 - w.obs / w.exp) if drop_ok else None
            ctrl_rate = (w.ctrl / span) if flood_ok else None
            flagged = ((drop_ok and drop_ratio > self.cfg.drop_threshold)
                       or (flood_ok and ctrl_rate > self.cfg.flood_threshold))
            if flagged:
                vec = SymptomVector(drop_ratio, ctrl_rate, w.data / span, span)
                key = encode_infection_key(vec, self.cfg.rate_cap)
                sim.trace.add(now, node.id, "VerdictPosted", subject,
                              VERDICT_PROBABLE, key, w.exp, w.obs, w.ctrl, w.start)
                self._broadcast_verdict(sim, node, subject, key)
            else:
                sim.trace.add(now, node.id, "VerdictPosted", subject,
                              VERDICT_CLEAN, 0, w.exp, w.obs, w.ctrl, w.start)
            self.windows[subject] = WindowState(start=now, flood_covered=flood_resident)

    # -- reports and escalation ------------------------------------------------------

    def _broadcast_verdict(self, sim: "Simulator", node: "Node", subject: int,
                           key: int) -> None:
        rid = node.next_seq()
        sim.trace.add(sim.now, node.id, "InfectionReportTx", subject, key,
                      node.id, rid, VERDICT_PROBABLE)
        self.apply_record(sim, node, subject, sim.now, key, node.id)
        self.match_and_dispatch(sim, node, subject, key, node.id, rid)
        p = Packet(PacketKind.REPORT, node.id, BROADCAST, node.id, rid,
                   sim.sc.flood_ttl, sim.sc.report_bytes,
                   ReportPayload(subject, key, node.id, rid, VERDICT_PROBABLE))
        node.flood_seen.add((node.id, rid))
        sim.transmit(node, p, to=None)

    def broadcast_clean_vouch(self, sim: "Simulator", node: "Node", subject: int) -> None:
        """Gossip claiming a subject is clean. Trust never downgrades, so
        receivers log it and move on; colluders can only add noise."""
        rid = node.next_seq()
        sim.trace.add(sim.now, node.id, "InfectionReportTx", subject, 0,
                      node.id, rid, VERDICT_CLEAN)
        p = Packet(PacketKind.REPORT, node.id, BROADCAST, node.id, rid,
                   sim.sc.flood_ttl, sim.sc.report_bytes,
                   ReportPayload(subject, 0, node.id, rid, VERDICT_CLEAN))
        node.flood_seen.add((node.id, rid))
        sim.transmit(node, p, to=None)

    def on_report(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        rp = p.payload
        sim.trace.add(sim.now, node.id, "InfectionReportRx", rp.subject, rp.key,
                      rp.reporter, rp.rid, rp.verdict)
        if rp.verdict != VERDICT_PROBABLE or rp.reporter == rp.subject:
            return
        self.apply_record(sim, node, rp.subject, sim.now, rp.key, rp.reporter)
        self.match_and_dispatch(sim, node, rp.subject, rp.key, rp.reporter, rp.rid)

    def on_dump(self, sim: "Simulator", node: "Node", p: Packet) -> None:
        dp = p.payload
        if dp.what == "table":
            self.table_insert(sim, node, dp.entry, flood=False)
            return
        for subject, t, key, reporter in dp.records:
            if reporter == subject:
                continue
            self.apply_record(sim, node, subject, t, key, reporter)

    def apply_record(self, sim: "Simulator", node: "Node", subject: int,
                     t: float, key: int, reporter: int) -> None:
        if subject == node.id:
            return
        entry = self.db.setdefault(subject, DbEntry())
        for r in entry.history:
            if r.time == t and r.reporter == reporter and r.key == key:
                return  # idempotent merge
        entry.history.append(InfectionRecord(t, key, reporter))
        if entry.status == TrustStatus.CLEAN:
            entry.status = TrustStatus.PROBABLY_INFECTED
            sim.trace.add(sim.now, node.id, "StatusChange", subject,
                          TrustStatus.PROBABLY_INFECTED.wire)
        if entry.status == TrustStatus.PROBABLY_INFECTED:
            reporters = {r.reporter for r in entry.history}
            times = [r.time for r in entry.history]
            repeat_offender = max(times) - min(times) >= self.cfg.reinfection_gap
            if len(reporters) >= 2 or repeat_offender:
                entry.status = TrustStatus.INFECTED
                sim.trace.add(sim.now, node.id, "Quarantine", subject)
                self.isolate(sim, node, subject)

    def isolate(self, sim: "Simulator", node: "Node", subject: int) -> None:
        node.routing.purge_routes_via(subject)

    # -- approximate matching ------------------------------------------------------

    def match_and_dispatch(self, sim: "Simulator", node: "Node", subject: int,
                           key: int, reporter: int, rid: int) -> str:
        """Decide whether a resident agent covers this infection class.

        A resident type attaining the global minimum Hamming distance handles
        the infection locally (its own verdict stream is the follow-up).
        Otherwise the decision is delegated: the best-type host nearest the
        subject moves its agent next to the subject.
        """
        if not self.residents:
            return "none"
        _best, argmin = closest_agent_types(key)
        if self.resident_types() & set(argmin):
            return "local"
        sim.resolve_delegation(node, subject, key, reporter, rid, argmin[0])
        return "delegated"

    # -- dispatch ---------------------------------------------------------------------

    def dispatch_agents(self, sim: "Simulator", node: "Node") -> None:
        if not self.residents:
            return
        per_type: dict[AgentType, Agent] = {}
        for aid in sorted(self.residents):
            per_type.setdefault(aid.agent_type, self.residents[aid])
        for nbr in sim.neighbors(node.id):
            if self.status(nbr) != TrustStatus.CLEAN:
                continue
            for atype in sorted(per_type):
                last = self.last_dispatch.get((nbr, atype))
                if last is not None and sim.now - last < self.cfg.dispatch_period:
                    continue
                self.last_dispatch[(nbr, atype)] = sim.now
                agent = per_type[atype]
                seq = node.next_seq()
                sim.trace.add(sim.now, node.id, "AgentTransfer", nbr,
                              agent.id.wire, agent.ttl, "copy", seq)
                p = Packet(PacketKind.AGENT, node.id, nbr, node.id, seq,
                           sim.sc.flood_ttl, sim.sc.agent_bytes,
                           AgentPayload(agent.id, agent.affkey, agent.sig,
                                        agent.code, agent.ttl, "copy"))
                sim.transmit(node, p, to=nbr)

    def migrate_agent(self, sim: "Simulator", node: "Node", atype: AgentType,
                      target: int) -> None:
        """Move (not copy) the lowest-id agent of a type toward a target node."""
        chosen: Agent | None = None
        for aid in sorted(self.residents):
            if aid.agent_type == atype:
                chosen = self.residents[aid]
                break
        if chosen is None:
            return
        self._remove_resident(chosen.id)
        seq = node.next_seq()
        sim.trace.add(sim.now, node.id, "AgentTransfer", target, chosen.id.wire,
                      chosen.ttl, "move", seq)
        p = Packet(PacketKind.AGENT, node.id, target, node.id, seq,
                   sim.sc.flood_ttl, sim.sc.agent_bytes,
                   AgentPayload(chosen.id, chosen.affkey, chosen.sig,
                                chosen.code, chosen.ttl, "move"))
        node.routing.originate_data(sim, node, p)
