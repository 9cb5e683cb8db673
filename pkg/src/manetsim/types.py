"""Shared domain vocabulary: identifiers, keys, trust statuses and packets.

Everything here is a plain value type. The only stateful structure owned by a
node (its security database) lives in :mod:`manetsim.defense`; this module
holds the encodings those structures agree on, in particular the 64-bit
affinity/infection key scheme used by the approximate matcher.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass, field
from typing import Any

# Reserved all-ones node id used as the radio broadcast address.
BROADCAST = 0xFFFFFFFFFFFFFFFF

KEY_BITS = 64
_HALF = KEY_BITS // 2
_KEY_MASK = (1 << KEY_BITS) - 1


class AgentType(enum.IntEnum):
    """Detector families a defense agent can embody.

    DROP_MONITOR watches forwarding behaviour (black/grey holes),
    FLOOD_MONITOR watches route-request emission rates (resource floods,
    table overflow, sleep deprivation).
    """

    DROP_MONITOR = 1
    FLOOD_MONITOR = 2

    @property
    def wire(self) -> str:
        return _AGENT_TYPE_WIRE[self]

    @classmethod
    def from_wire(cls, name: str) -> "AgentType":
        for t, w in _AGENT_TYPE_WIRE.items():
            if w == name:
                return t
        raise ValueError(f"unknown agent type {name!r}")


_AGENT_TYPE_WIRE = {
    AgentType.DROP_MONITOR: "drop_monitor",
    AgentType.FLOOD_MONITOR: "flood_monitor",
}

# Canonical affinity key per agent type: the unary-fill pattern of the pure
# symptom each detector exists for. The two constants differ in all 64 bit
# positions, comfortably above the 32-position separation floor.
DROP_MONITOR_KEY = (1 << _HALF) - 1                 # low 32 bits set
FLOOD_MONITOR_KEY = ((1 << _HALF) - 1) << _HALF     # high 32 bits set

CANONICAL_KEYS: dict[AgentType, int] = {
    AgentType.DROP_MONITOR: DROP_MONITOR_KEY,
    AgentType.FLOOD_MONITOR: FLOOD_MONITOR_KEY,
}


class TrustStatus(enum.IntEnum):
    """Per-(observer, subject) trust level. Only ever moves rightward."""

    CLEAN = 0
    PROBABLY_INFECTED = 1
    INFECTED = 2

    @property
    def wire(self) -> str:
        return _STATUS_WIRE[self]


_STATUS_WIRE = {
    TrustStatus.CLEAN: "clean",
    TrustStatus.PROBABLY_INFECTED: "probable",
    TrustStatus.INFECTED: "infected",
}


@dataclass(frozen=True, order=True)
class AgentId:
    """Globally unique agent identity: (creator, type, per-creator counter)."""

    source: int
    agent_type: AgentType
    count: int

    @property
    def wire(self) -> str:
        return f"{self.source}:{int(self.agent_type)}:{self.count}"

    @classmethod
    def from_wire(cls, text: str) -> "AgentId":
        src, typ, cnt = text.split(":")
        return cls(int(src), AgentType(int(typ)), int(cnt))


class PacketKind(enum.Enum):
    RREQ = "rreq"
    RREP = "rrep"
    DATA = "data"
    AGENT = "agent"
    REPORT = "report"
    DUMP = "dump"


# Routing control kinds; defense traffic deliberately not included so defense
# chatter can never trip the flood detector.
CONTROL_KINDS = frozenset({PacketKind.RREQ, PacketKind.RREP})


@dataclass(frozen=True)
class Packet:
    """Radio envelope shared by routing, data and defense messages.

    `src`/`dst` are end-to-end (dst may be BROADCAST); `hop_src` is the last
    transmitter and is rewritten on every relay. `seq` is drawn from the
    originator's counter, so (src, seq) identifies a packet across hops.
    """

    kind: PacketKind
    src: int
    dst: int
    hop_src: int
    seq: int
    ttl_hops: int
    size_bytes: int
    payload: Any

    def relayed(self, hop_src: int, **payload_changes: Any) -> "Packet":
        """Copy for retransmission: new hop source, hop TTL decremented."""
        payload = self.payload
        if payload_changes:
            payload = payload._replace(**payload_changes)
        return Packet(self.kind, self.src, self.dst, hop_src, self.seq,
                      self.ttl_hops - 1, self.size_bytes, payload)


@dataclass(frozen=True)
class SymptomVector:
    """Measured misbehaviour symptoms for one subject over one window.

    A component is None when the window produced no usable evidence for it
    (for drop_ratio: fewer forwarding opportunities than the evidence floor).
    """

    drop_ratio: float | None
    ctrl_tx_rate: float | None
    data_tx_rate: float
    window_len: float

    def validate(self) -> None:
        for name, v in (("drop_ratio", self.drop_ratio),
                        ("ctrl_tx_rate", self.ctrl_tx_rate),
                        ("data_tx_rate", self.data_tx_rate)):
            if v is None:
                continue
            if math.isnan(v):
                raise ValueError(f"{name} is NaN")
            if v < 0:
                raise ValueError(f"{name} is negative")
        if self.drop_ratio is not None and self.drop_ratio > 1:
            raise ValueError("drop_ratio above 1")
        if not self.window_len > 0:
            raise ValueError("window_len must be positive")


def hamming_distance(a: int, b: int) -> int:
    """Number of differing bit positions between two 64-bit patterns."""
    if not 0 <= a <= _KEY_MASK or not 0 <= b <= _KEY_MASK:
        raise ValueError("keys must be 64-bit unsigned patterns")
    return (a ^ b).bit_count()


def encode_infection_key(s: SymptomVector, rate_cap: float) -> int:
    """Quantize a symptom vector into a 64-bit infection key.

    Low half: unary fill of round(drop_ratio * 32). High half: unary fill of
    the control-origination rate clamped at `rate_cap`. Unary fill keeps
    Hamming distance monotone in symptom intensity, so a pure-drop symptom
    lands nearest DROP_MONITOR_KEY and a pure-flood one nearest
    FLOOD_MONITOR_KEY.
    """
    s.validate()
    if not rate_cap > 0:
        raise ValueError("rate_cap must be positive")
    drop = s.drop_ratio or 0.0
    rate = s.ctrl_tx_rate or 0.0
    low_bits = round(drop * _HALF)
    high_bits = round(min(rate / rate_cap, 1.0) * _HALF)
    low = (1 << low_bits) - 1
    high = ((1 << high_bits) - 1) << _HALF
    return low | high


def closest_agent_types(key: int) -> tuple[int, list[AgentType]]:
    """Minimum Hamming distance over all canonical keys and its argmin set.

    The argmin list is sorted by enum value, which is also the declared
    tie-break (DROP_MONITOR wins a tie).
    """
    dists = {t: hamming_distance(k, key) for t, k in CANONICAL_KEYS.items()}
    best = min(dists.values())
    return best, sorted(t for t, d in dists.items() if d == best)


@dataclass
class InfectionRecord:
    """One history entry: who reported which symptom key, and when."""

    time: float
    key: int
    reporter: int


@dataclass
class DbEntry:
    """Security-database row for one subject node."""

    status: TrustStatus = TrustStatus.CLEAN
    history: list[InfectionRecord] = field(default_factory=list)
