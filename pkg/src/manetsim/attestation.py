"""Agent attestation: fingerprints, creator signatures and the global table.

The attested byte layout is canonical and pinned by test: fixed field order,
big-endian fixed-width integers, because every replica must recompute the
same fingerprint bit for bit. An agent's remaining lifetime is deliberately
outside the attested bytes (it mutates legitimately while the agent runs).
"""

from __future__ import annotations

import hashlib
import struct
from dataclasses import dataclass

from cryptography.exceptions import InvalidSignature
from cryptography.hazmat.primitives.asymmetric.ed25519 import (
    Ed25519PrivateKey,
    Ed25519PublicKey,
)

from .types import AgentId, AgentType

DIGEST_LEN = 32
_MICRO = 1_000_000


def fingerprint(message: bytes) -> bytes:
    """32-byte collision-resistant digest of an arbitrary byte stream."""
    return hashlib.sha256(message).digest()


@dataclass(frozen=True)
class Keypair:
    """Per-node signing identity. The private half never leaves its node."""

    private: Ed25519PrivateKey
    public_bytes: bytes

    @classmethod
    def generate(cls, seed32: bytes) -> "Keypair":
        if len(seed32) != 32:
            raise ValueError("keypair seed must be 32 bytes")
        priv = Ed25519PrivateKey.from_private_bytes(seed32)
        pub = priv.public_key().public_bytes_raw()
        return cls(priv, pub)


def sign(keypair: Keypair, digest: bytes) -> bytes:
    """Sign a 32-byte fingerprint. Ed25519 is deterministic, so repeated
    signatures of the same digest are identical and runs stay reproducible."""
    if len(digest) != DIGEST_LEN:
        raise ValueError("can only sign a 32-byte digest")
    return keypair.private.sign(digest)


def verify(public_bytes: bytes, digest: bytes, sig: bytes) -> bool:
    try:
        Ed25519PublicKey.from_public_bytes(public_bytes).verify(sig, digest)
        return True
    except (InvalidSignature, ValueError):
        return False


# --------------------------------------------------------------------------
# Canonical serialization of attested agent content
# --------------------------------------------------------------------------

def detector_code(agent_type: AgentType, window_len: int, threshold: float,
                  min_evidence: int, forward_grace: float) -> bytes:
    """Canonical code blob: detector family plus its tuning parameters.

    Layout (all big-endian u64): type, window length in microseconds,
    threshold in micro-units, evidence floor, forward grace in microseconds.
    Real-valued parameters ride as micro-unit integers so the blob contains
    integers only and stays byte-identical across platforms.
    """
    return struct.pack(
        ">QQQQQ",
        int(agent_type),
        window_len * _MICRO,
        round(threshold * _MICRO),
        min_evidence,
        round(forward_grace * _MICRO),
    )


def attested_bytes(code: bytes, agent_id: AgentId, affkey: int) -> bytes:
    """Byte string the creator signs: code, identity, affinity key.

    Layout: u32 code length, code bytes, u64 source, u64 type, u64 count,
    u64 affinity key.
    """
    return (
        struct.pack(">I", len(code))
        + code
        + struct.pack(">QQQ", agent_id.source, int(agent_id.agent_type), agent_id.count)
        + struct.pack(">Q", affkey)
    )


@dataclass(frozen=True)
class GlobalTableEntry:
    """Immutable registry row binding an agent id to its creator's signature."""

    agent_id: AgentId
    sig: bytes
    creator_pubkey: bytes
    created_at: float


class VerifyResult:
    VALID = "valid"
    BAD_SIGNATURE = "bad_signature"
    ID_MISMATCH = "id_mismatch"


def verify_attested(blob: bytes, entry: GlobalTableEntry) -> bool:
    return verify(entry.creator_pubkey, fingerprint(blob), entry.sig)


def verify_agent(agent, entry: GlobalTableEntry) -> str:
    """Check an agent against its registry row.

    `agent` needs .id, .code and .affkey; remaining lifetime is excluded on
    purpose. Returns a VerifyResult constant.
    """
    if entry.agent_id != agent.id:
        return VerifyResult.ID_MISMATCH
    blob = attested_bytes(agent.code, agent.id, agent.affkey)
    if verify_attested(blob, entry):
        return VerifyResult.VALID
    return VerifyResult.BAD_SIGNATURE


class GlobalTable:
    """Append-only replica of the agent registry held by one node.

    First writer wins per agent id; a later entry with different content is
    a conflict, while re-inserting the identical entry is a silent no-op.
    """

    ACCEPTED = "accepted"
    DUPLICATE = "duplicate"
    CONFLICT = "conflict"

    def __init__(self):
        self._entries: dict[AgentId, GlobalTableEntry] = {}

    def insert(self, entry: GlobalTableEntry) -> str:
        existing = self._entries.get(entry.agent_id)
        if existing is None:
            self._entries[entry.agent_id] = entry
            return self.ACCEPTED
        if existing.sig == entry.sig and existing.creator_pubkey == entry.creator_pubkey:
            return self.DUPLICATE
        return self.CONFLICT

    def get(self, agent_id: AgentId) -> GlobalTableEntry | None:
        return self._entries.get(agent_id)

    def __len__(self) -> int:
        return len(self._entries)

    def __contains__(self, agent_id: AgentId) -> bool:
        return agent_id in self._entries
