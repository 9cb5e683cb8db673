import hashlib

import pytest

from manetsim import attestation
from manetsim.attestation import (
    GlobalTable,
    GlobalTableEntry,
    Keypair,
    VerifyResult,
    attested_bytes,
    detector_code,
    fingerprint,
    sign,
    verify,
    verify_agent,
    verify_attested,
)
from manetsim.defense import Agent
from manetsim.engine import Simulator
from manetsim.types import AgentId, AgentType, CANONICAL_KEYS

from conftest import drop_defense, grid_scenario


def make_keypair(seed=b"k" * 32) -> Keypair:
    return Keypair.generate(seed)


def make_agent(keypair=None, ttl=60) -> tuple[Agent, GlobalTableEntry]:
    keypair = keypair or make_keypair()
    code = detector_code(AgentType.DROP_MONITOR, 10, 0.5, 5, 0.5)
    aid = AgentId(3, AgentType.DROP_MONITOR, 0)
    affkey = CANONICAL_KEYS[AgentType.DROP_MONITOR]
    sig = sign(keypair, fingerprint(attested_bytes(code, aid, affkey)))
    agent = Agent(aid, affkey, sig, code, ttl)
    entry = GlobalTableEntry(aid, sig, keypair.public_bytes, 0.0)
    return agent, entry


# -- fingerprint ------------------------------------------------------------

def test_fingerprint_deterministic():
    assert fingerprint(b"hello") == fingerprint(b"hello")
    assert len(fingerprint(b"hello")) == 32


def test_fingerprint_of_empty_input():
    assert fingerprint(b"") == hashlib.sha256(b"").digest()


def test_fingerprint_changes_on_every_bit_flip():
    message = bytes(range(64))
    base = fingerprint(message)
    for byte_idx in range(64):
        for bit in range(8):
            mutated = bytearray(message)
            mutated[byte_idx] ^= 1 << bit
            assert fingerprint(bytes(mutated)) != base


# -- signatures ---------------------------------------------------------------

def test_sign_verify_round_trip():
    kp = make_keypair()
    digest = fingerprint(b"message")
    sig = sign(kp, digest)
    assert verify(kp.public_bytes, digest, sig)


def test_wrong_public_key_fails():
    kp1, kp2 = make_keypair(b"a" * 32), make_keypair(b"b" * 32)
    digest = fingerprint(b"message")
    sig = sign(kp1, digest)
    assert not verify(kp2.public_bytes, digest, sig)


def test_wrong_digest_fails():
    kp = make_keypair()
    sig = sign(kp, fingerprint(b"message"))
    assert not verify(kp.public_bytes, fingerprint(b"other"), sig)


def test_sign_requires_32_byte_digest():
    with pytest.raises(ValueError):
        sign(make_keypair(), b"short")


def test_signing_is_deterministic():
    kp = make_keypair()
    digest = fingerprint(b"x")
    assert sign(kp, digest) == sign(kp, digest)


def test_keypair_seed_must_be_32_bytes():
    with pytest.raises(ValueError):
        Keypair.generate(b"short")


# -- canonical layout -------------------------------------------------------------

def test_attested_layout_is_pinned():
    # Frozen byte layout: u32 code length, code, u64 source/type/count, u64 key.
    # This constant is the cross-implementation contract; do not regenerate it
    # casually.
    code = detector_code(AgentType.DROP_MONITOR, 10, 0.5, 5, 0.5)
    aid = AgentId(3, AgentType.DROP_MONITOR, 0)
    blob = attested_bytes(code, aid, CANONICAL_KEYS[AgentType.DROP_MONITOR])
    assert code.hex() == (
        "0000000000000001"   # type 1
        "0000000000989680"   # window 10 s in us
        "000000000007a120"   # threshold 0.5 in micro units
        "0000000000000005"   # evidence floor
        "000000000007a120"   # grace 0.5 s in us
    )
    assert blob.hex() == (
        "00000028" + code.hex()
        + "0000000000000003"  # source
        + "0000000000000001"  # type
        + "0000000000000000"  # count
        + "00000000ffffffff"  # affinity key
    )
    assert fingerprint(blob).hex() == hashlib.sha256(blob).hexdigest()


# -- agent verification --------------------------------------------------------------

def test_fresh_agent_verifies():
    agent, entry = make_agent()
    assert verify_agent(agent, entry) == VerifyResult.VALID


def test_affinity_key_flip_invalidates():
    agent, entry = make_agent()
    agent.affkey ^= 1
    assert verify_agent(agent, entry) == VerifyResult.BAD_SIGNATURE


def test_ttl_change_keeps_agent_valid():
    agent, entry = make_agent(ttl=60)
    agent.ttl = 1
    assert verify_agent(agent, entry) == VerifyResult.VALID


def test_id_mismatch_is_a_distinct_error():
    agent, entry = make_agent()
    other = GlobalTableEntry(AgentId(9, AgentType.DROP_MONITOR, 0),
                             entry.sig, entry.creator_pubkey, 0.0)
    assert verify_agent(agent, other) == VerifyResult.ID_MISMATCH


def test_every_single_bit_flip_is_detected():
    # tamper totality over the full attested byte string
    agent, entry = make_agent()
    blob = attested_bytes(agent.code, agent.id, agent.affkey)
    assert verify_attested(blob, entry)
    for byte_idx in range(len(blob)):
        for bit in range(8):
            mutated = bytearray(blob)
            mutated[byte_idx] ^= 1 << bit
            assert not verify_attested(bytes(mutated), entry), \
                f"flip at byte {byte_idx} bit {bit} went undetected"


# -- global table ----------------------------------------------------------------------

def test_table_first_writer_wins():
    agent, entry = make_agent()
    table = GlobalTable()
    assert table.insert(entry) == GlobalTable.ACCEPTED
    forged = GlobalTableEntry(entry.agent_id, b"\x00" * 64,
                              entry.creator_pubkey, 1.0)
    assert table.insert(forged) == GlobalTable.CONFLICT
    assert table.get(entry.agent_id).sig == entry.sig


def test_table_identical_reinsert_is_silent():
    agent, entry = make_agent()
    table = GlobalTable()
    table.insert(entry)
    assert table.insert(entry) == GlobalTable.DUPLICATE


def test_table_replicates_to_every_node_within_flood_time():
    sc = grid_scenario(duration=5.0, defense=drop_defense(), flows=())
    sim = Simulator(sc)
    trace = sim.run()
    inserts: dict[str, list] = {}
    for e in trace:
        if e.ev == "TableInsert":
            inserts.setdefault(e.get("agent"), []).append(e)
    assert len(inserts) == 4
    diameter = 8
    for aid, events in inserts.items():
        assert len(events) == 25  # every node accepted exactly once
        assert max(ev.t for ev in events) <= diameter * sc.prop_delay + 0.005
    assert not [e for e in trace if e.ev == "TableConflict"]


def test_table_entries_never_mutate_across_a_run():
    sc = grid_scenario(duration=60.0, defense=drop_defense(), flows=())
    sim = Simulator(sc)
    sim.run()
    reference = {}
    for node in sim.nodes:
        for aid in (AgentId(0, AgentType.DROP_MONITOR, 0),
                    AgentId(4, AgentType.DROP_MONITOR, 0)):
            entry = node.defense.table.get(aid)
            assert entry is not None
            key = (entry.sig, entry.creator_pubkey)
            reference.setdefault(aid, key)
            assert reference[aid] == key
