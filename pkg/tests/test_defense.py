from manetsim.adversary import AttackKind, AttackProfile
from manetsim.defense import AgentPayload, ReportPayload, DumpPayload
from manetsim.engine import Simulator
from manetsim.routing import DataPayload, RreqPayload
from manetsim.scenario import AgentSeed, DefenseConfig, FlowSpec, PlacementConfig, Scenario
from manetsim.trace import EVENT_FIELDS
from manetsim.types import (
    BROADCAST,
    CANONICAL_KEYS,
    AgentType,
    DbEntry,
    Packet,
    PacketKind,
    TrustStatus,
)

from conftest import grid_scenario, line_scenario

D = AgentType.DROP_MONITOR
F = AgentType.FLOOD_MONITOR
DROP_KEY = CANONICAL_KEYS[D]
FLOOD_KEY = CANONICAL_KEYS[F]


def defense_line(n=5, **cfg):
    sc = line_scenario(n, duration=120.0, defense=DefenseConfig(enabled=True, **cfg))
    return Simulator(sc)


def events(sim, kind):
    return [e for e in sim.trace if e.ev == kind]


# -- generation ----------------------------------------------------------------

def test_generation_counts_increment_per_type():
    sim = defense_line()
    node = sim.nodes[0]
    a0 = node.defense.generate(sim, node, D)
    a1 = node.defense.generate(sim, node, D)
    b0 = node.defense.generate(sim, node, F)
    assert (a0.id.count, a1.id.count, b0.id.count) == (0, 1, 0)


def test_generated_agent_passes_verification_immediately():
    from manetsim.attestation import VerifyResult, verify_agent
    sim = defense_line()
    node = sim.nodes[0]
    agent = node.defense.generate(sim, node, D)
    entry = node.defense.table.get(agent.id)
    assert verify_agent(agent, entry) == VerifyResult.VALID
    assert agent.id in node.defense.residents


def test_generation_adds_exactly_one_table_entry():
    sim = defense_line()
    node = sim.nodes[0]
    before = len(node.defense.table)
    node.defense.generate(sim, node, D)
    assert len(node.defense.table) == before + 1


def test_generation_refused_without_keypair():
    sim = defense_line()
    node = sim.nodes[0]
    node.defense.keypair = None
    assert node.defense.generate(sim, node, D) is None


# -- self test and the hold queue --------------------------------------------------

def make_transfer_packet(sim, src_node, agent, dst, mode="copy"):
    return Packet(PacketKind.AGENT, src_node.id, dst, src_node.id,
                  src_node.next_seq(), 16, sim.sc.agent_bytes,
                  AgentPayload(agent.id, agent.affkey, agent.sig, agent.code,
                               agent.ttl, mode))


def test_periodic_self_test_destroys_injected_code():
    sim = defense_line(selftest_period=10)
    node = sim.nodes[0]
    agent = node.defense.generate(sim, node, D)
    agent.code = agent.code[:-1] + b"\xff"  # foreign code injection
    sim.now = 10.0
    node.defense.tick(sim, node, 10)
    corrupt = events(sim, "CorruptAgent")
    assert corrupt and corrupt[0].get("reason") == "selftest"
    assert agent.id not in node.defense.residents


def test_unknown_agent_is_held_then_destroyed_at_timeout():
    sim = defense_line(hold_timeout=10)
    creator, receiver = sim.nodes[0], sim.nodes[1]
    agent = creator.defense.generate(sim, creator, D)
    # a receiver with no registry row for this identity
    stranger = defense_line().nodes[2]
    stranger.defense.receive_agent(sim, stranger,
                                   make_transfer_packet(sim, creator, agent, 2))
    assert agent.id in stranger.defense.held
    assert events(sim, "AgentHeld")
    sim.now = 10.0
    stranger.defense.tick(sim, stranger, 10)
    assert agent.id not in stranger.defense.held
    assert any(e.get("reason") == "timeout" for e in events(sim, "CorruptAgent"))


def test_held_agent_released_when_table_entry_arrives():
    sim = defense_line()
    creator = sim.nodes[0]
    agent = creator.defense.generate(sim, creator, D)
    entry = creator.defense.table.get(agent.id)
    stranger = defense_line().nodes[2]
    stranger.defense.receive_agent(sim, stranger,
                                   make_transfer_packet(sim, creator, agent, 2))
    assert agent.id in stranger.defense.held
    stranger.defense.table_insert(sim, stranger, entry, flood=False)
    assert agent.id in stranger.defense.residents
    assert events(sim, "AgentReleased")


def test_tampered_transfer_is_rejected_and_never_runs():
    sim = defense_line()
    creator, receiver = sim.nodes[0], sim.nodes[1]
    agent = creator.defense.generate(sim, creator, D)
    receiver.defense.table_insert(sim, receiver,
                                  creator.defense.table.get(agent.id), flood=False)
    p = make_transfer_packet(sim, creator, agent, 1)
    bad = p.payload._replace(affkey=agent.affkey ^ 1)
    tampered = Packet(p.kind, p.src, p.dst, p.hop_src, p.seq,
                      p.ttl_hops, p.size_bytes, bad)
    receiver.defense.receive_agent(sim, receiver, tampered)
    assert agent.id not in receiver.defense.residents
    assert any(e.get("reason") == "selftest" for e in events(sim, "CorruptAgent"))


# -- dispatch -----------------------------------------------------------------------

def test_dispatch_copies_to_each_clean_neighbor():
    sim = defense_line(4)
    node = sim.nodes[1]  # neighbors 0 and 2
    node.defense.generate(sim, node, D)
    node.defense.dispatch_agents(sim, node)
    transfers = events(sim, "AgentTransfer")
    assert sorted(e.get("to") for e in transfers) == [0, 2]
    assert all(e.get("mode") == "copy" for e in transfers)


def test_dispatch_skips_distrusted_neighbors():
    sim = defense_line(4)
    node = sim.nodes[1]
    node.defense.generate(sim, node, D)
    node.defense.db.setdefault(0, DbEntry()).status = TrustStatus.PROBABLY_INFECTED
    node.defense.dispatch_agents(sim, node)
    transfers = events(sim, "AgentTransfer")
    assert [e.get("to") for e in transfers] == [2]


def test_dispatch_to_all_distrusted_sends_nothing():
    sim = defense_line(3)
    node = sim.nodes[1]
    node.defense.generate(sim, node, D)
    for nbr in (0, 2):
        node.defense.db.setdefault(nbr, DbEntry()).status = TrustStatus.INFECTED
    node.defense.dispatch_agents(sim, node)
    assert not events(sim, "AgentTransfer")


def test_redispatch_within_period_suppressed():
    sim = defense_line(3, dispatch_period=5)
    node = sim.nodes[1]
    node.defense.generate(sim, node, D)
    node.defense.dispatch_agents(sim, node)
    first = len(events(sim, "AgentTransfer"))
    sim.now = 2.0
    node.defense.dispatch_agents(sim, node)
    assert len(events(sim, "AgentTransfer")) == first
    sim.now = 5.0
    node.defense.dispatch_agents(sim, node)
    assert len(events(sim, "AgentTransfer")) == 2 * first


# -- observation ------------------------------------------------------------------------

def test_full_relay_counts_observed_equals_expected():
    defense = DefenseConfig(enabled=True, agents=(AgentSeed(0, D),))
    sc = line_scenario(3, duration=25.0, defense=defense,
                       flows=[FlowSpec(0, 2, 1.0, 0.0, 25.0)])
    trace = Simulator(sc).run()
    verdicts = [e for e in trace if e.ev == "VerdictPosted"
                and e.node == 0 and e.get("subject") == 1]
    assert verdicts
    for v in verdicts:
        assert v.get("verdict") == "clean"
        assert v.get("exp") == v.get("obs") > 0


def test_subject_at_destination_owes_no_forward():
    defense = DefenseConfig(enabled=True, agents=(AgentSeed(1, D),))
    sc = line_scenario(3, duration=25.0, defense=defense,
                       flows=[FlowSpec(0, 2, 1.0, 0.0, 25.0)])
    sim = Simulator(sc)
    trace = sim.run()
    # node 1 hands packets to the destination 2: no expectations accrue
    verdicts = [e for e in trace if e.ev == "VerdictPosted"
                and e.node == 1 and e.get("subject") == 2
                and e.get("exp") > 0]
    assert not verdicts
    assert not [e for e in trace if e.ev == "Quarantine"]


def test_forward_after_grace_counts_as_dropped():
    sim = defense_line(3, forward_grace=0.5)
    watcher = sim.nodes[0]
    watcher.defense.generate(sim, watcher, D)
    from manetsim.routing import DataPayload
    p = Packet(PacketKind.DATA, 0, 2, 0, 1, 16, 512, DataPayload(0, False))
    sim.now = 1.0
    watcher.defense.observe_own_tx(sim, watcher, p, to=1, in_range=True)
    assert (1, 0, 1) in watcher.defense.pendings
    # the retransmission arrives past the grace deadline
    sim.now = 1.8
    relay = p.relayed(1)
    watcher.defense.observe_rx(sim, watcher, relay, to=2, overhear=True)
    w = watcher.defense.windows[1]
    assert (w.exp, w.obs) == (0, 0)  # not matched
    sim.now = 2.0
    watcher.defense.tick(sim, watcher, 2)
    w = watcher.defense.windows[1]
    assert (w.exp, w.obs) == (1, 0)  # resolved as a drop


def test_forward_within_grace_matches():
    sim = defense_line(3)
    watcher = sim.nodes[0]
    watcher.defense.generate(sim, watcher, D)
    from manetsim.routing import DataPayload
    p = Packet(PacketKind.DATA, 0, 2, 0, 1, 16, 512, DataPayload(0, False))
    sim.now = 1.0
    watcher.defense.observe_own_tx(sim, watcher, p, to=1, in_range=True)
    sim.now = 1.002
    watcher.defense.observe_rx(sim, watcher, p.relayed(1), to=2, overhear=True)
    w = watcher.defense.windows[1]
    assert (w.exp, w.obs) == (1, 1)


def test_relayed_route_requests_not_counted_against_relayer():
    sim = defense_line(3)
    watcher = sim.nodes[0]
    watcher.defense.generate(sim, watcher, F)
    # node 1 relaying node 2's request: not an origination, never counted
    relayed = Packet(PacketKind.RREQ, 2, BROADCAST, 1, 9, 15, 64,
                     RreqPayload(2, 4, 1, 1, 0, 1))
    sim.now = 1.0
    watcher.defense.observe_rx(sim, watcher, relayed, to=None, overhear=False)
    w = watcher.defense.windows.get(1)
    assert w is None or w.ctrl == 0
    originated = Packet(PacketKind.RREQ, 1, BROADCAST, 1, 10, 16, 64,
                        RreqPayload(1, 4, 1, 1, 0, 0))
    watcher.defense.observe_rx(sim, watcher, originated, to=None, overhear=False)
    assert watcher.defense.windows[1].ctrl == 1


# -- classification ---------------------------------------------------------------------

def run_close(sim, node, k=10):
    sim.now = float(k)
    node.defense.tick(sim, node, k)


def test_insufficient_evidence_withholds_verdict():
    sim = defense_line(3)
    node = sim.nodes[0]
    node.defense.generate(sim, node, D)
    w = node.defense._window(1, 0.0)
    w.exp, w.obs = 2, 0
    run_close(sim, node)
    assert not events(sim, "VerdictPosted")
    assert node.defense.windows[1].exp == 2  # window extended, not reset


def test_clean_forwarding_yields_clean_verdict():
    sim = defense_line(3)
    node = sim.nodes[0]
    node.defense.generate(sim, node, D)
    w = node.defense._window(1, 0.0)
    w.exp, w.obs = 10, 10
    run_close(sim, node)
    v = events(sim, "VerdictPosted")[0]
    assert v.get("verdict") == "clean"


def test_total_drop_flags_with_drop_dominant_key():
    sim = defense_line(3)
    node = sim.nodes[0]
    node.defense.generate(sim, node, D)
    w = node.defense._window(1, 0.0)
    w.exp, w.obs = 10, 0
    run_close(sim, node)
    v = events(sim, "VerdictPosted")[0]
    assert v.get("verdict") == "probable"
    assert v.get("key") == DROP_KEY  # drop_ratio 1, no flood coverage
    assert events(sim, "InfectionReportTx")
    assert node.defense.status(1) == TrustStatus.PROBABLY_INFECTED


def test_flood_rate_flags_with_flood_dominant_key():
    sim = defense_line(3, flood_threshold=5.0, rate_cap=10.0)
    node = sim.nodes[0]
    node.defense.generate(sim, node, F)
    w = node.defense._window(1, 0.0)
    w.ctrl = 200  # 20/s over a 10 s window
    w.flood_covered = True
    run_close(sim, node)
    v = events(sim, "VerdictPosted")[0]
    assert v.get("verdict") == "probable"
    assert v.get("key") == FLOOD_KEY


def test_flood_check_needs_coverage_from_window_start():
    sim = defense_line(3)
    node = sim.nodes[0]
    node.defense.generate(sim, node, F)
    w = node.defense._window(1, 0.0)
    w.ctrl = 200
    w.flood_covered = False  # monitor arrived mid-window
    run_close(sim, node)
    assert not events(sim, "VerdictPosted")


# -- escalation --------------------------------------------------------------------------

def test_two_distinct_reporters_escalate():
    sim = defense_line(5)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 1.0, DROP_KEY, 3)
    assert node.defense.status(4) == TrustStatus.PROBABLY_INFECTED
    node.defense.apply_record(sim, node, 4, 2.0, DROP_KEY, 7)
    assert node.defense.status(4) == TrustStatus.INFECTED
    assert len(events(sim, "Quarantine")) == 1


def test_single_reporter_bursts_stay_probable():
    sim = defense_line(5, reinfection_gap=10)
    node = sim.nodes[0]
    for i in range(5):
        node.defense.apply_record(sim, node, 4, 1.0 + i, DROP_KEY, 3)
    assert node.defense.status(4) == TrustStatus.PROBABLY_INFECTED
    assert not events(sim, "Quarantine")


def test_repeat_offender_fast_path():
    sim = defense_line(5, reinfection_gap=10)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 10.0, DROP_KEY, 3)
    node.defense.apply_record(sim, node, 4, 25.0, DROP_KEY, 3)
    assert node.defense.status(4) == TrustStatus.INFECTED


def test_close_records_do_not_trigger_fast_path():
    sim = defense_line(5, reinfection_gap=10)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 10.0, DROP_KEY, 3)
    node.defense.apply_record(sim, node, 4, 11.0, DROP_KEY, 3)
    assert node.defense.status(4) == TrustStatus.PROBABLY_INFECTED


def test_both_rules_firing_is_idempotent():
    sim = defense_line(5)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 10.0, DROP_KEY, 3)
    node.defense.apply_record(sim, node, 4, 25.0, DROP_KEY, 7)
    assert node.defense.status(4) == TrustStatus.INFECTED
    assert len(events(sim, "Quarantine")) == 1


def test_infected_is_absorbing_history_still_grows():
    sim = defense_line(5)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 1.0, DROP_KEY, 3)
    node.defense.apply_record(sim, node, 4, 2.0, DROP_KEY, 7)
    node.defense.apply_record(sim, node, 4, 3.0, DROP_KEY, 8)
    assert node.defense.status(4) == TrustStatus.INFECTED
    assert len(node.defense.db[4].history) == 3
    assert len(events(sim, "Quarantine")) == 1


def test_self_reports_discarded():
    sim = defense_line(5)
    node = sim.nodes[0]
    p = Packet(PacketKind.REPORT, 4, 0xFFFFFFFFFFFFFFFF, 4, 1, 16, 96,
               ReportPayload(4, DROP_KEY, 4, 1, "probable"))
    node.defense.on_report(sim, node, p)
    assert node.defense.status(4) == TrustStatus.CLEAN


def test_clean_vouch_cannot_downgrade():
    sim = defense_line(5)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 4, 1.0, DROP_KEY, 3)
    p = Packet(PacketKind.REPORT, 2, 0xFFFFFFFFFFFFFFFF, 2, 1, 16, 96,
               ReportPayload(4, 0, 2, 1, "clean"))
    node.defense.on_report(sim, node, p)
    assert node.defense.status(4) == TrustStatus.PROBABLY_INFECTED


def test_records_about_self_ignored():
    sim = defense_line(5)
    node = sim.nodes[0]
    node.defense.apply_record(sim, node, 0, 1.0, DROP_KEY, 3)
    assert node.defense.status(0) == TrustStatus.CLEAN
    assert 0 not in node.defense.db


# -- isolation ----------------------------------------------------------------------------

def test_packets_from_quarantined_node_are_dropped():
    sim = defense_line(3)
    node = sim.nodes[1]
    node.defense.apply_record(sim, node, 0, 1.0, DROP_KEY, 3)
    node.defense.apply_record(sim, node, 0, 2.0, DROP_KEY, 4)
    from manetsim.routing import DataPayload
    p = Packet(PacketKind.DATA, 0, 2, 0, 5, 16, 512, DataPayload(0, False))
    sim._dispatch(node, p)
    assert events(sim, "IsolationDrop")
    assert not [e for e in sim.trace if e.ev == "Tx" and e.get("kind") == "data"]


def test_quarantine_purges_routes_and_rediscovery_avoids_attacker():
    # 2x3 grid, flow 0 -> 2 along the bottom row, black hole at 1
    positions = ((0.0, 0.0), (80.0, 0.0), (160.0, 0.0),
                 (0.0, 80.0), (80.0, 80.0), (160.0, 80.0))
    defense = DefenseConfig(enabled=True, agents=(AgentSeed(0, D),))
    sc = Scenario(node_count=6, area=(400.0, 400.0),
                  placement=PlacementConfig("explicit", positions=positions),
                  duration=80.0, flows=(FlowSpec(0, 2, 4.0, 0.0, 80.0),),
                  attackers=(AttackProfile(1, AttackKind.BLACK_HOLE, 20.0, 80.0),),
                  defense=defense)
    sim = Simulator(sc)
    trace = sim.run()
    quarantines = [e for e in trace if e.ev == "Quarantine" and e.node == 0]
    assert quarantines
    qt = quarantines[0].t
    reroutes = [e for e in trace if e.ev == "RouteInstalled" and e.node == 0
                and e.get("dest") == 2 and e.t > qt]
    assert reroutes and reroutes[-1].get("next") == 3
    late_delivers = [e for e in trace if e.ev == "Deliver" and e.t > qt + 1.0]
    assert late_delivers
    # per-observer isolation: node 0 never transmits to 1 again
    assert not [e for e in trace if e.ev == "Tx" and e.node == 0
                and e.get("to") == 1 and e.t > qt]


# -- lifetime ----------------------------------------------------------------------------

def test_dump_fires_exactly_at_expiry():
    sim = defense_line(3, drop_agent_ttl=30)
    node = sim.nodes[0]
    sim.now = 10.0
    agent = node.defense.generate(sim, node, D)
    for k in range(11, 50):
        sim.now = float(k)
        node.defense.tick(sim, node, k)
    dumps = events(sim, "KnowledgeDump")
    assert len(dumps) == 1
    assert dumps[0].t == 40.0
    assert agent.id not in node.defense.residents
    # nothing mentions the agent after the dump
    after = [e for e in sim.trace if e.t > 40.0
             and any(name == "agent" for name, _ in EVENT_FIELDS[e.ev])
             and e.get("agent") == agent.id.wire]
    assert not after


def test_agent_types_expire_independently():
    sim = defense_line(3, drop_agent_ttl=60, flood_agent_ttl=45)
    node = sim.nodes[0]
    sim.now = 0.0
    a = node.defense.generate(sim, node, D)
    b = node.defense.generate(sim, node, F)
    for k in range(1, 70):
        sim.now = float(k)
        node.defense.tick(sim, node, k)
    dumps = {e.get("agent"): e.t for e in events(sim, "KnowledgeDump")}
    assert dumps[b.id.wire] == 45.0
    assert dumps[a.id.wire] == 60.0


def test_dump_merges_history_at_receiver():
    sim = defense_line(5)
    node = sim.nodes[0]
    records = ((4, 10.0, DROP_KEY, 2), (4, 25.0, DROP_KEY, 2))
    p = Packet(PacketKind.DUMP, 3, 0xFFFFFFFFFFFFFFFF, 3, 1, 16, 192,
               DumpPayload("history", None, records))
    node.defense.on_dump(sim, node, p)
    assert len(node.defense.db[4].history) == 2
    # merged records satisfy the repeat-offender rule
    assert node.defense.status(4) == TrustStatus.INFECTED


def test_dump_merge_is_idempotent():
    sim = defense_line(5)
    node = sim.nodes[0]
    records = ((4, 10.0, DROP_KEY, 2),)
    p = Packet(PacketKind.DUMP, 3, 0xFFFFFFFFFFFFFFFF, 3, 1, 16, 192,
               DumpPayload("history", None, records))
    node.defense.on_dump(sim, node, p)
    node.defense.on_dump(sim, node, p)
    assert len(node.defense.db[4].history) == 1


# -- approximate matching -------------------------------------------------------------------

def matching_sim():
    """Line 0-1-2-3-4: drop monitors resident at 2 and 3, flood monitor at 4."""
    sim = defense_line(5)
    for nid, atype in ((2, D), (3, D), (4, F)):
        node = sim.nodes[nid]
        node.defense.generate(sim, node, atype)
    return sim


def test_matching_resident_argmin_handles_locally():
    sim = matching_sim()
    node = sim.nodes[2]
    outcome = node.defense.match_and_dispatch(sim, node, 0, DROP_KEY, 1, 50)
    assert outcome == "local"
    assert not events(sim, "Delegation")


def test_matching_without_argmin_type_delegates_to_closest_host():
    sim = matching_sim()
    node = sim.nodes[4]  # flood monitor only
    outcome = node.defense.match_and_dispatch(sim, node, 0, DROP_KEY, 1, 51)
    assert outcome == "delegated"
    d = events(sim, "Delegation")[0]
    # hosts with drop monitors: node 2 (2 hops from subject 0) and 3 (3 hops)
    assert d.get("atype") == int(D)
    assert d.get("host") == 2
    assert d.get("target") == 1  # clean neighbour of the subject
    moves = [e for e in events(sim, "AgentTransfer") if e.get("mode") == "move"]
    assert moves and moves[0].node == 2 and moves[0].get("to") == 1
    assert not sim.nodes[2].defense.has_type(D)


def test_matching_tie_breaks_to_lowest_node_id():
    sim = defense_line(5)
    for nid in (1, 3):
        node = sim.nodes[nid]
        node.defense.generate(sim, node, D)
    flood_host = sim.nodes[4]
    flood_host.defense.generate(sim, flood_host, F)
    # subject 2 sits between the two drop-monitor hosts, both 1 hop away
    outcome = flood_host.defense.match_and_dispatch(sim, flood_host, 2,
                                                    DROP_KEY, 0, 52)
    assert outcome == "delegated"
    d = events(sim, "Delegation")[0]
    assert d.get("host") == 1
    assert d.get("target") == 1  # already adjacent: monitors in place
    assert not [e for e in events(sim, "AgentTransfer") if e.get("mode") == "move"]


def test_matching_with_no_host_anywhere_is_unhandled():
    sim = defense_line(5)
    node = sim.nodes[4]
    node.defense.generate(sim, node, F)
    outcome = node.defense.match_and_dispatch(sim, node, 0, DROP_KEY, 1, 53)
    assert outcome == "delegated"
    assert events(sim, "UnhandledInfection")
    assert not events(sim, "Delegation")


def test_delegation_resolved_once_per_report():
    sim = matching_sim()
    for nid in (4,):
        node = sim.nodes[nid]
        node.defense.match_and_dispatch(sim, node, 0, DROP_KEY, 1, 60)
        node.defense.match_and_dispatch(sim, node, 0, DROP_KEY, 1, 60)
    assert len(events(sim, "Delegation")) == 1
