"""Line-oriented run trace: schema, rendering and strict parsing.

One event per line, `t=<sec> node=<id> ev=<kind> k=v ...` with a fixed field
order per event kind. The renderer and parser are exact inverses so a written
trace replays byte-identically; the offline replayer consumes this format.

Field types: i = int, f = float (repr round-trip), x = 64-bit hex key,
n = node id where -1 renders the broadcast/none sentinel `*`,
s = short token string.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Iterable

ENGINE = -1  # node field for engine-level lines

EVENT_FIELDS: dict[str, tuple[tuple[str, str], ...]] = {
    # engine bookkeeping
    "RunParams": (("n", "i"), ("defense", "i"), ("range", "f"), ("prop", "f"),
                  ("window", "i"), ("grace", "f"), ("dropthr", "f"),
                  ("floodthr", "f"), ("minev", "i"), ("ratecap", "f"),
                  ("regap", "i"), ("dispatch", "i"), ("selftest", "i"),
                  ("floodttl", "i"), ("mobile", "i")),
    "NodeInit": (("x", "f"), ("y", "f"), ("energy", "f")),
    "Energy": (("e", "f"),),
    "RunEnd": (),
    # radio / packets
    "Tx": (("kind", "s"), ("to", "n"), ("src", "n"), ("dst", "n"),
           ("seq", "i"), ("ttl", "i"), ("size", "i")),
    "Send": (("flow", "i"), ("dst", "n"), ("seq", "i"), ("size", "i")),
    "Deliver": (("src", "n"), ("dst", "n"), ("seq", "i")),
    "EnergyExhausted": (("kind", "s"), ("src", "n"), ("dst", "n"), ("seq", "i")),
    "LinkLoss": (("to", "n"), ("kind", "s"), ("src", "n"), ("dst", "n"), ("seq", "i")),
    "TtlExpired": (("kind", "s"), ("src", "n"), ("dst", "n"), ("seq", "i")),
    "EndFlight": (("src", "n"), ("dst", "n"), ("seq", "i")),
    "EndBuffered": (("src", "n"), ("dst", "n"), ("seq", "i")),
    # routing
    "RouteInstalled": (("dest", "n"), ("next", "n"), ("hops", "i"), ("dseq", "i")),
    "NoRoute": (("src", "n"), ("dst", "n"), ("seq", "i")),
    "QueueDrop": (("src", "n"), ("dst", "n"), ("seq", "i")),
    # adversary ground truth (trace-only; nodes never read these)
    "MaliciousDrop": (("src", "n"), ("dst", "n"), ("seq", "i")),
    # defense
    "AgentGenerated": (("agent", "s"), ("ttl", "i")),
    "AgentTransfer": (("to", "n"), ("agent", "s"), ("ttl", "i"),
                      ("mode", "s"), ("seq", "i")),
    "AgentHeld": (("agent", "s"),),
    "AgentReleased": (("agent", "s"),),
    "CorruptAgent": (("agent", "s"), ("reason", "s")),
    "VerdictPosted": (("subject", "n"), ("verdict", "s"), ("key", "x"),
                      ("exp", "i"), ("obs", "i"), ("ctrl", "i"), ("ws", "f")),
    "StatusChange": (("subject", "n"), ("status", "s")),
    "Quarantine": (("subject", "n"),),
    "InfectionReportTx": (("subject", "n"), ("key", "x"), ("reporter", "n"),
                          ("rid", "i"), ("verdict", "s")),
    "InfectionReportRx": (("subject", "n"), ("key", "x"), ("reporter", "n"),
                          ("rid", "i"), ("verdict", "s")),
    "IsolationDrop": (("hsrc", "n"), ("kind", "s"), ("src", "n"),
                      ("dst", "n"), ("seq", "i")),
    "KnowledgeDump": (("agent", "s"), ("records", "i")),
    "TableInsert": (("agent", "s"),),
    "TableConflict": (("agent", "s"),),
    "Delegation": (("subject", "n"), ("key", "x"), ("atype", "i"),
                   ("host", "n"), ("target", "n"), ("reporter", "n"), ("rid", "i")),
    "UnhandledInfection": (("subject", "n"), ("key", "x"), ("reporter", "n"),
                           ("rid", "i")),
}

_SENTINEL = -1  # rendered as '*' for n-typed fields


class TraceParseError(Exception):
    def __init__(self, lineno: int, message: str):
        super().__init__(f"line {lineno}: {message}")
        self.lineno = lineno


@dataclass(frozen=True)
class TraceEvent:
    t: float
    node: int
    ev: str
    fields: tuple

    def get(self, name: str):
        for (fname, _), value in zip(EVENT_FIELDS[self.ev], self.fields):
            if fname == name:
                return value
        raise KeyError(name)


def _render_value(value, ftype: str) -> str:
    if ftype == "i":
        return str(value)
    if ftype == "f":
        return repr(float(value))
    if ftype == "x":
        return f"0x{value:016x}"
    if ftype == "n":
        return "*" if value == _SENTINEL else str(value)
    return str(value)


def _parse_value(text: str, ftype: str, lineno: int):
    try:
        if ftype == "i":
            return int(text)
        if ftype == "f":
            return float(text)
        if ftype == "x":
            if not text.startswith("0x"):
                raise ValueError
            return int(text, 16)
        if ftype == "n":
            return _SENTINEL if text == "*" else int(text)
        return text
    except ValueError:
        raise TraceParseError(lineno, f"bad value {text!r} for type {ftype}") from None


def render_event(e: TraceEvent) -> str:
    parts = [f"t={e.t:.6f}", f"node={e.node}", f"ev={e.ev}"]
    for (name, ftype), value in zip(EVENT_FIELDS[e.ev], e.fields):
        parts.append(f"{name}={_render_value(value, ftype)}")
    return " ".join(parts)


def parse_line(line: str, lineno: int) -> TraceEvent:
    tokens = line.split(" ")
    if len(tokens) < 3:
        raise TraceParseError(lineno, "too few fields")
    pairs = []
    for tok in tokens:
        if "=" not in tok:
            raise TraceParseError(lineno, f"malformed token {tok!r}")
        pairs.append(tok.split("=", 1))
    if pairs[0][0] != "t" or pairs[1][0] != "node" or pairs[2][0] != "ev":
        raise TraceParseError(lineno, "line must start with t= node= ev=")
    try:
        t = float(pairs[0][1])
        node = int(pairs[1][1])
    except ValueError:
        raise TraceParseError(lineno, "bad t/node value") from None
    ev = pairs[2][1]
    schema = EVENT_FIELDS.get(ev)
    if schema is None:
        raise TraceParseError(lineno, f"unknown event kind {ev!r}")
    body = pairs[3:]
    if len(body) != len(schema):
        raise TraceParseError(lineno, f"{ev} expects {len(schema)} fields, got {len(body)}")
    values = []
    for (name, ftype), (key, raw) in zip(schema, body):
        if key != name:
            raise TraceParseError(lineno, f"{ev} field {len(values)} must be {name}, got {key}")
        values.append(_parse_value(raw, ftype, lineno))
    return TraceEvent(t, node, ev, tuple(values))


class Trace:
    """Ordered event log for one run."""

    def __init__(self, events: list[TraceEvent] | None = None):
        self.events: list[TraceEvent] = events or []

    def add(self, t: float, node: int, ev: str, *values) -> None:
        schema = EVENT_FIELDS[ev]
        if len(values) != len(schema):
            raise ValueError(f"{ev} expects {len(schema)} fields, got {len(values)}")
        self.events.append(TraceEvent(t, node, ev, tuple(values)))

    def __iter__(self):
        return iter(self.events)

    def __len__(self) -> int:
        return len(self.events)

    def render(self) -> str:
        return "\n".join(render_event(e) for e in self.events) + "\n"

    def write(self, path) -> None:
        with open(path, "w") as fh:
            fh.write(self.render())

    @classmethod
    def parse(cls, text: str) -> "Trace":
        events = []
        lines = text.splitlines()
        for lineno, line in enumerate(lines, start=1):
            if not line.strip():
                raise TraceParseError(lineno, "blank line")
            events.append(parse_line(line, lineno))
        if not events:
            raise TraceParseError(0, "empty trace")
        if events[-1].ev != "RunEnd":
            raise TraceParseError(len(lines), "trace truncated: missing RunEnd")
        return cls(events)

    @classmethod
    def load(cls, path) -> "Trace":
        with open(path) as fh:
            return cls.parse(fh.read())


def events_of(trace: Iterable[TraceEvent], *kinds: str) -> list[TraceEvent]:
    wanted = set(kinds)
    return [e for e in trace if e.ev in wanted]
