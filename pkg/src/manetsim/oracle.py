"""Offline trace replayer: an independent re-derivation of what the defense
should have concluded, diffed against what the trace says it did.

The replayer reconstructs, from the trace alone (positions, transmissions and
the defense's claim lines), every node's audible packet stream, observation
windows, verdicts, report receipts, trust transitions and matching decisions,
then reports every divergence. It deliberately shares nothing with the live
defense implementation beyond the key primitives (Hamming distance, the
symptom encoding and the canonical keys), which have their own direct tests.

Position-dependent checks assume static placements; traces from mobile runs
get the position-free subset (delivery accounting, escalation legality from
logged receipts, lifetime bounds) plus a note.
"""

from __future__ import annotations

import heapq
import math
from collections import Counter
from dataclasses import dataclass, field

from .types import (
    AgentId,
    AgentType,
    SymptomVector,
    closest_agent_types,
    encode_infection_key,
)
from .trace import Trace, TraceEvent

_PROBABLE = "probable"
_CLEAN = "clean"
_INFECTED = "infected"


def _t6(t: float) -> float:
    return round(t, 6)


@dataclass
class OracleReport:
    problems: list[str] = field(default_factory=list)
    notes: list[str] = field(default_factory=list)
    pdr_overall: float = 1.0
    pdr_per_flow: dict[int, float] = field(default_factory=dict)
    checked: Counter = field(default_factory=Counter)

    @property
    def ok(self) -> bool:
        return not self.problems

    def problem(self, text: str) -> None:
        self.problems.append(text)

    def render(self) -> str:
        lines = [f"checked: {dict(sorted(self.checked.items()))}",
                 f"pdr_overall: {self.pdr_overall!r}"]
        for idx in sorted(self.pdr_per_flow):
            lines.append(f"pdr_flow{idx}: {self.pdr_per_flow[idx]!r}")
        for note in self.notes:
            lines.append(f"note: {note}")
        if self.problems:
            lines.append(f"PROBLEMS ({len(self.problems)}):")
            lines.extend(f"  - {p}" for p in self.problems)
        else:
            lines.append("verdict: empty diff")
        return "\n".join(lines) + "\n"


@dataclass
class _Window:
    start: float
    exp: int = 0
    obs: int = 0
    ctrl: int = 0
    data: int = 0
    flood_covered: bool = False


@dataclass
class _DbRow:
    status: str = _CLEAN
    records: list[tuple[float, int, int]] = field(default_factory=list)  # (t, key, reporter)


class _NodeView:
    """The oracle's model of one node's defense state."""

    def __init__(self, node_id: int):
        self.id = node_id
        self.residents: dict[AgentId, tuple[AgentType, int]] = {}  # aid -> (type, expiry)
        self.windows: dict[int, _Window] = {}
        self.pendings: dict[tuple[int, int, int], float] = {}
        self.db: dict[int, _DbRow] = {}
        self.flood_seen: set[tuple[int, int]] = set()
        self.last_energy: float | None = None

    def status(self, subject: int) -> str:
        row = self.db.get(subject)
        return row.status if row is not None else _CLEAN

    def has_type(self, atype: AgentType) -> bool:
        return any(t == atype for t, _ in self.residents.values())

    def resident_types(self) -> set[AgentType]:
        return {t for t, _ in self.residents.values()}

    def drop_resident(self, aid: AgentId) -> None:
        info = self.residents.pop(aid, None)
        if info is None:
            return
        if info[0] == AgentType.FLOOD_MONITOR and not self.has_type(AgentType.FLOOD_MONITOR):
            for w in self.windows.values():
                w.flood_covered = False
        if not self.residents:
            self.windows.clear()
            self.pendings.clear()


class _Replay:
    def __init__(self, trace: Trace):
        self.trace = trace
        self.report = OracleReport()
        events = trace.events
        if not events or events[0].ev != "RunParams":
            raise ValueError("trace must start with RunParams")
        p = events[0]
        self.n = p.get("n")
        self.defense_on = bool(p.get("defense"))
        self.range_m = p.get("range")
        self.prop = p.get("prop")
        self.window_len = p.get("window")
        self.grace = p.get("grace")
        self.drop_thr = p.get("dropthr")
        self.flood_thr = p.get("floodthr")
        self.min_ev = p.get("minev")
        self.rate_cap = p.get("ratecap")
        self.regap = p.get("regap")
        self.mobile = bool(p.get("mobile"))
        self.duration = events[-1].t

        self.positions: dict[int, tuple[float, float]] = {}
        self.adj: dict[int, tuple[int, ...]] = {}
        self.views = [_NodeView(i) for i in range(self.n)]

        # expected-event multisets built during replay
        self.exp_verdicts: Counter = Counter()
        self.exp_status: Counter = Counter()
        self.exp_report_tx: Counter = Counter()
        self.exp_report_rx: Counter = Counter()
        self.exp_dumps: Counter = Counter()
        self.act_verdicts: Counter = Counter()
        self.act_status: Counter = Counter()
        self.act_report_tx: Counter = Counter()
        self.act_report_rx: Counter = Counter()
        self.act_dumps: Counter = Counter()

        # claim indexes for rare admission paths
        self.held_claims: set[tuple[int, str, float]] = set()
        for e in events:
            if e.ev == "AgentHeld":
                self.held_claims.add((e.node, e.get("agent"), _t6(e.t)))
            elif e.ev == "CorruptAgent":
                self.held_claims.add((e.node, e.get("agent"), _t6(e.t)))

        self.flights: dict[tuple[int, int], tuple[AgentId, AgentType, int]] = {}
        self.held_ttl: dict[tuple[int, str], int] = {}
        self.report_content: dict[tuple[int, int], tuple[int, int, str]] = {}
        self.dump_content: dict[tuple[int, int], tuple] = {}
        self.quarantined_at: dict[tuple[int, int], float] = {}
        self.demands: dict[tuple[int, int], dict] = {}
        self.resolutions: dict[tuple[int, int], list[TraceEvent]] = {}

        self.arrivals: list[tuple[float, int, int, TraceEvent]] = []
        self._arrival_seq = 0
        self.next_tick = 1

        # delivery accounting
        self.sent: dict[int, set[tuple[int, int, int]]] = {}
        self.delivered: Counter = Counter()
        self.send_flow: dict[tuple[int, int, int], int] = {}

    # -- geometry ------------------------------------------------------------

    def _build_adjacency(self) -> None:
        for i in range(self.n):
            xi, yi = self.positions[i]
            nbrs = tuple(j for j in range(self.n) if j != i
                         and math.hypot(self.positions[j][0] - xi,
                                        self.positions[j][1] - yi) <= self.range_m)
            self.adj[i] = nbrs

    # -- replay main loop -----------------------------------------------------

    def run(self) -> OracleReport:
        last_t = 0.0
        for e in self.trace.events:
            if e.t < last_t - 1e-9:
                self.report.problem(f"timestamps go backwards at t={e.t} ev={e.ev}")
            last_t = max(last_t, e.t)
            # Arrivals sharing a line's timestamp precede it: trace lines at a
            # fractional instant are consequences of deliveries at it, and the
            # arrival queue replays those deliveries in the engine's order.
            self._drain(e.t, inclusive=True)
            self._line(e)
        self._drain(self.duration, inclusive=True)
        self._finish()
        return self.report

    def _drain(self, until: float, inclusive: bool = False) -> None:
        """Run pending ticks and derived packet arrivals up to a time.

        Ticks at exactly `until` always run first: the engine schedules each
        tick a second ahead of the packets that share its timestamp, so tick
        output lines at time k describe state after the tick. Arrival times
        never coincide with whole seconds (one propagation delay past the
        traffic grids), so arrivals at `until` only matter on the final drain.
        """
        if self.mobile or not self.defense_on:
            return
        while True:
            t_arr = self.arrivals[0][0] if self.arrivals else math.inf
            t_tick = float(self.next_tick) if self.next_tick <= self.duration else math.inf
            if t_tick <= until and t_tick <= t_arr:
                self._tick(self.next_tick)
                self.next_tick += 1
                continue
            if t_arr < until or (t_arr == until and inclusive):
                _t, _s, receiver, tx = heapq.heappop(self.arrivals)
                self._arrival(_t, receiver, tx)
                continue
            break

    # -- per-second defense tick ------------------------------------------------

    def _tick(self, k: int) -> None:
        for view in self.views:
            now = float(k)
            due = [key for key, deadline in view.pendings.items() if deadline <= now]
            for key in due:
                del view.pendings[key]
                self._window(view, key[0], now).exp += 1
            if k % self.window_len == 0 and k > 0:
                self._close_windows(view, now)
            expired = [aid for aid, (_t, exp) in view.residents.items() if exp == k]
            for aid in sorted(expired):
                self.exp_dumps[(_t6(now), view.id, aid.wire)] += 1
                view.drop_resident(aid)

    def _window(self, view: _NodeView, subject: int, now: float) -> _Window:
        w = view.windows.get(subject)
        if w is None:
            w = _Window(start=now, flood_covered=view.has_type(AgentType.FLOOD_MONITOR))
            view.windows[subject] = w
        return w

    def _close_windows(self, view: _NodeView, now: float) -> None:
        drop_resident = view.has_type(AgentType.DROP_MONITOR)
        flood_resident = view.has_type(AgentType.FLOOD_MONITOR)
        for subject in sorted(view.windows):
            w = view.windows[subject]
            span = now - w.start
            if span <= 0:
                continue
            drop_ok = drop_resident and w.exp >= self.min_ev
            flood_ok = flood_resident and w.flood_covered
            if not drop_ok and not flood_ok:
                continue
            drop_ratio = (1.0 - w.obs / w.exp) if drop_ok else None
            ctrl_rate = (w.ctrl / span) if flood_ok else None
            flagged = ((drop_ok and drop_ratio > self.drop_thr)
                       or (flood_ok and ctrl_rate > self.flood_thr))
            if flagged:
                vec = SymptomVector(drop_ratio, ctrl_rate, w.data / span, span)
                key = encode_infection_key(vec, self.rate_cap)
                self.exp_verdicts[(_t6(now), view.id, subject, _PROBABLE, key,
                                   w.exp, w.obs, w.ctrl, _t6(w.start))] += 1
                self.exp_report_tx[(_t6(now), view.id, subject, key, _PROBABLE)] += 1
                self._apply_record(view, subject, now, key, view.id, now)
                self._match(view, subject, key, view.id, None, now)
            else:
                self.exp_verdicts[(_t6(now), view.id, subject, _CLEAN, 0,
                                   w.exp, w.obs, w.ctrl, _t6(w.start))] += 1
            view.windows[subject] = _Window(start=now, flood_covered=flood_resident)

    # -- trust machine (mirror of the live escalation rules) ----------------------

    def _apply_record(self, view: _NodeView, subject: int, t: float, key: int,
                      reporter: int, now: float) -> None:
        if subject == view.id:
            return
        row = view.db.setdefault(subject, _DbRow())
        for rt, rk, rr in row.records:
            if rt == t and rk == key and rr == reporter:
                return
        row.records.append((t, key, reporter))
        if row.status == _CLEAN:
            row.status = _PROBABLE
            self.exp_status[(_t6(now), view.id, subject, _PROBABLE)] += 1
        if row.status == _PROBABLE:
            reporters = {r for _t, _k, r in row.records}
            times = [rt for rt, _k, _r in row.records]
            if len(reporters) >= 2 or max(times) - min(times) >= self.regap:
                row.status = _INFECTED
                self.exp_status[(_t6(now), view.id, subject, _INFECTED)] += 1

    def _match(self, view: _NodeView, subject: int, key: int, reporter: int,
               rid: int | None, now: float) -> None:
        if not view.residents:
            return
        _best, argmin = closest_agent_types(key)
        if view.resident_types() & set(argmin):
            return
        if rid is None:
            return  # local verdicts always have their own type resident
        token = (reporter, rid)
        if token in self.demands:
            return
        atype = argmin[0]
        hosts = [v.id for v in self.views if v.id != subject and v.has_type(atype)]
        hops = self._hops_from(subject)
        reachable = sorted((hops[h], h) for h in hosts if h in hops)
        expected: dict = {"atype": int(atype), "subject": subject, "time": now}
        if not reachable:
            expected["unhandled"] = True
        else:
            host = reachable[0][1]
            if subject in self.adj[host]:
                target = host
            else:
                clean = [m for m in self.adj[subject]
                         if self.views[host].status(m) == _CLEAN]
                if not clean:
                    expected["unhandled"] = True
                    self.demands[token] = expected
                    return
                target = min(clean)
            expected["host"] = host
            expected["target"] = target
        self.demands[token] = expected

    def _hops_from(self, origin: int) -> dict[int, int]:
        dist = {origin: 0}
        frontier = [origin]
        while frontier:
            nxt = []
            for u in frontier:
                for v in self.adj[u]:
                    if v not in dist:
                        dist[v] = dist[u] + 1
                        nxt.append(v)
            frontier = nxt
        return dist

    # -- derived radio arrivals ----------------------------------------------------

    def _arrival(self, t: float, receiver: int, tx: TraceEvent) -> None:
        view = self.views[receiver]
        kind = tx.get("kind")
        transmitter = tx.node
        to = tx.get("to")
        src = tx.get("src")
        seq = tx.get("seq")
        # observation happens before any protocol handling
        if view.residents and transmitter != receiver:
            if kind == "rreq" and src == transmitter:
                self._window(view, transmitter, t).ctrl += 1
            elif kind == "data":
                w = self._window(view, transmitter, t)
                w.data += 1
                pkey = (transmitter, src, seq)
                deadline = view.pendings.get(pkey)
                if deadline is not None and t <= deadline:
                    del view.pendings[pkey]
                    w.exp += 1
                    w.obs += 1
                dst = tx.get("dst")
                if (to != -1 and to != dst and to != receiver
                        and view.status(transmitter) != _INFECTED
                        and to in self.adj[receiver]):
                    view.pendings[(to, src, seq)] = t + self.grace
        overhear = to != -1 and to != receiver
        if overhear:
            return
        if view.status(transmitter) == _INFECTED and transmitter != receiver:
            return  # isolation drop
        if kind == "report":
            fid = (src, seq)
            if fid in view.flood_seen:
                return
            view.flood_seen.add(fid)
            content = self.report_content.get(fid)
            if content is None:
                return
            subject, key, verdict = content
            self.exp_report_rx[(_t6(t), receiver, subject, key, src, seq, verdict)] += 1
            if verdict == _PROBABLE and src != subject:
                self._apply_record(view, subject, t, key, src, t)
                self._match(view, subject, key, src, seq, t)
        elif kind == "dump":
            fid = (src, seq)
            if fid in view.flood_seen:
                return
            view.flood_seen.add(fid)
            for subject, rt, rk, rr in self.dump_content.get(fid, ()):
                if rr != subject:
                    self._apply_record(view, subject, rt, rk, rr, t)
        elif kind == "agent":
            if to == receiver and tx.get("dst") == receiver:
                flight = self.flights.get((src, seq))
                if flight is None:
                    return
                aid, atype, ttl = flight
                if aid in view.residents:
                    return
                if (receiver, aid.wire, _t6(t)) in self.held_claims:
                    # held or rejected on arrival per the trace claims; keep
                    # the lifetime around in case a release line follows
                    self.held_ttl[(receiver, aid.wire)] = ttl
                    return
                view.residents[aid] = (atype, int(math.floor(t)) + ttl)

    # -- trace line processing ---------------------------------------------------------

    def _line(self, e: TraceEvent) -> None:
        ev = e.ev
        if ev == "NodeInit":
            self.positions[e.node] = (e.get("x"), e.get("y"))
            self.views[e.node].last_energy = e.get("energy")
            if len(self.positions) == self.n and not self.mobile:
                self._build_adjacency()
        elif ev == "Tx":
            self._tx_line(e)
        elif ev == "Send":
            key = (e.node, e.get("dst"), e.get("seq"))
            flow = e.get("flow")
            self.sent.setdefault(flow, set()).add(key)
            self.send_flow[key] = flow
        elif ev == "Deliver":
            key = (e.get("src"), e.get("dst"), e.get("seq"))
            if key in self.send_flow:
                self.delivered[self.send_flow[key]] += 1
        elif ev == "Energy":
            view = self.views[e.node]
            value = e.get("e")
            if view.last_energy is not None and value > view.last_energy + 1e-9:
                self.report.problem(f"energy increased at node {e.node} t={e.t}")
            view.last_energy = value
        elif ev == "AgentGenerated":
            if not self.mobile:
                aid = AgentId.from_wire(e.get("agent"))
                expiry = int(math.floor(e.t)) + e.get("ttl")
                self.views[e.node].residents[aid] = (aid.agent_type, expiry)
        elif ev == "AgentTransfer":
            self._transfer_line(e)
        elif ev == "CorruptAgent":
            if not self.mobile:
                aid = AgentId.from_wire(e.get("agent"))
                self.views[e.node].drop_resident(aid)
        elif ev == "AgentReleased":
            if not self.mobile:
                aid = AgentId.from_wire(e.get("agent"))
                ttl = self.held_ttl.get((e.node, e.get("agent")))
                if ttl is not None:
                    self.views[e.node].residents[aid] = (
                        aid.agent_type, int(math.floor(e.t)) + ttl)
        elif ev == "VerdictPosted":
            self.act_verdicts[(_t6(e.t), e.node, e.get("subject"), e.get("verdict"),
                               e.get("key"), e.get("exp"), e.get("obs"),
                               e.get("ctrl"), _t6(e.get("ws")))] += 1
            self.report.checked["verdicts"] += 1
        elif ev == "StatusChange":
            self.act_status[(_t6(e.t), e.node, e.get("subject"), e.get("status"))] += 1
        elif ev == "Quarantine":
            self.act_status[(_t6(e.t), e.node, e.get("subject"), _INFECTED)] += 1
            self.quarantined_at.setdefault((e.node, e.get("subject")), e.t)
            self.report.checked["quarantines"] += 1
        elif ev == "InfectionReportTx":
            self.report_content[(e.node, e.get("rid"))] = (
                e.get("subject"), e.get("key"), e.get("verdict"))
            # originators never process their own flood echoes
            self.views[e.node].flood_seen.add((e.node, e.get("rid")))
            self.act_report_tx[(_t6(e.t), e.node, e.get("subject"), e.get("key"),
                                e.get("verdict"))] += 1
        elif ev == "InfectionReportRx":
            self.act_report_rx[(_t6(e.t), e.node, e.get("subject"), e.get("key"),
                                e.get("reporter"), e.get("rid"), e.get("verdict"))] += 1
        elif ev == "KnowledgeDump":
            self.act_dumps[(_t6(e.t), e.node, e.get("agent"))] += 1
        elif ev in ("Delegation", "UnhandledInfection"):
            token = (e.get("reporter"), e.get("rid"))
            self.resolutions.setdefault(token, []).append(e)
            self.report.checked["delegations"] += 1

    def _tx_line(self, e: TraceEvent) -> None:
        to = e.get("to")
        if to != -1:
            qt = self.quarantined_at.get((e.node, to))
            if qt is not None and e.t > qt:
                self.report.problem(
                    f"node {e.node} transmitted to quarantined {to} at t={e.t}")
        if self.mobile:
            return
        kind = e.get("kind")
        src = e.get("src")
        seq = e.get("seq")
        if kind == "dump" and e.node == src and (src, seq) not in self.dump_content:
            view = self.views[src]
            view.flood_seen.add((src, seq))
            self.dump_content[(src, seq)] = tuple(
                (subject, rt, rk, rr)
                for subject in sorted(view.db)
                for rt, rk, rr in view.db[subject].records)
        if not self.defense_on:
            return
        # own-transmission observation: a data handoff creates an expectation
        view = self.views[e.node]
        if (view.residents and kind == "data" and to != -1
                and to != e.get("dst") and to in self.adj.get(e.node, ())):
            view.pendings[(to, src, seq)] = e.t + self.grace
        # schedule arrivals at every node in range (addressee and overhearers)
        arrival = e.t + self.prop
        if arrival > self.duration:
            return
        for nbr in self.adj.get(e.node, ()):
            self._arrival_seq += 1
            heapq.heappush(self.arrivals, (arrival, self._arrival_seq, nbr, e))

    def _transfer_line(self, e: TraceEvent) -> None:
        if self.mobile:
            return
        sender = self.views[e.node]
        aid = AgentId.from_wire(e.get("agent"))
        receiver = e.get("to")
        if self.defense_on and sender.status(receiver) != _CLEAN:
            self.report.problem(
                f"agent sent to distrusted node {receiver} by {e.node} at t={e.t}")
        info = sender.residents.get(aid)
        if info is None:
            self.report.problem(
                f"node {e.node} transferred agent {aid.wire} it does not host at t={e.t}")
            return
        self.flights[(e.node, e.get("seq"))] = (aid, info[0], e.get("ttl"))
        if e.get("mode") == "move":
            sender.drop_resident(aid)
        self.report.checked["transfers"] += 1

    # -- final diffing -------------------------------------------------------------------

    def _diff(self, what: str, expected: Counter, actual: Counter) -> None:
        missing = expected - actual
        spurious = actual - expected
        for item, count in sorted(missing.items())[:10]:
            self.report.problem(f"missing {what} x{count}: {item}")
        for item, count in sorted(spurious.items())[:10]:
            self.report.problem(f"unexpected {what} x{count}: {item}")

    def _finish(self) -> None:
        total_sent = 0
        total_delivered = 0
        for flow, keys in sorted(self.sent.items()):
            if flow < 0:
                continue
            sent = len(keys)
            got = self.delivered.get(flow, 0)
            self.report.pdr_per_flow[flow] = got / sent if sent else 0.0
            total_sent += sent
            total_delivered += got
        self.report.pdr_overall = (total_delivered / total_sent) if total_sent else 1.0
        self.report.checked["data_sent"] = total_sent
        self.report.checked["data_delivered"] = total_delivered
        if self.mobile:
            self.report.notes.append(
                "mobile trace: window, matching and receipt checks skipped")
        if not self.defense_on:
            return
        if not self.mobile:
            self._diff("verdict", self.exp_verdicts, self.act_verdicts)
            self._diff("status transition", self.exp_status, self.act_status)
            self._diff("report tx", self.exp_report_tx, self.act_report_tx)
            self._diff("report rx", self.exp_report_rx, self.act_report_rx)
            self._diff("knowledge dump", self.exp_dumps, self.act_dumps)
            self._check_delegations()

    def _check_delegations(self) -> None:
        for token, expected in sorted(self.demands.items()):
            lines = self.resolutions.get(token)
            if not lines:
                self.report.problem(
                    f"no delegation or unhandled event for report {token}")
                continue
            if len(lines) > 1:
                self.report.problem(f"multiple resolutions for report {token}")
            e = lines[0]
            if expected.get("unhandled"):
                if e.ev != "UnhandledInfection":
                    self.report.problem(
                        f"report {token}: expected unhandled, got delegation to "
                        f"{e.get('host')}")
                continue
            if e.ev != "Delegation":
                self.report.problem(f"report {token}: expected delegation, got {e.ev}")
                continue
            if (e.get("atype") != expected["atype"]
                    or e.get("host") != expected["host"]
                    or e.get("target") != expected["target"]):
                self.report.problem(
                    f"report {token}: delegation mismatch: trace host={e.get('host')} "
                    f"target={e.get('target')} atype={e.get('atype')}, "
                    f"recomputed {expected}")
        for token, lines in sorted(self.resolutions.items()):
            if token not in self.demands:
                self.report.problem(
                    f"resolution for report {token} that no replayed receipt demanded")


def replay_oracle(trace: Trace) -> OracleReport:
    """Recompute a run's defense behaviour from its trace and diff."""
    return _Replay(trace).run()
