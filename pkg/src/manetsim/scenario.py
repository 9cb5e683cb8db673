"""Run configuration: dataclasses, defaults and a strict YAML loader.

Parsing is strict on purpose: unknown keys are fatal and every violation is
reported with its line number, all of them at once. A typo in a threshold
name must never silently run with the default.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import yaml

from .adversary import FLOOD_KINDS, AttackKind, AttackProfile
from .types import AgentType


class ScenarioError(Exception):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


@dataclass(frozen=True)
class FlowSpec:
    src: int
    dst: int
    rate_pps: float
    start: float
    end: float


@dataclass(frozen=True)
class MobilityConfig:
    model: str = "static"  # static | random_waypoint
    speed_min: float = 1.0
    speed_max: float = 5.0
    pause_s: float = 2.0


@dataclass(frozen=True)
class PlacementConfig:
    mode: str = "uniform"  # uniform | grid | explicit
    spacing: float = 80.0
    cols: int | None = None
    positions: tuple[tuple[float, float], ...] = ()


@dataclass(frozen=True)
class AgentSeed:
    node: int
    agent_type: AgentType


@dataclass(frozen=True)
class DefenseConfig:
    enabled: bool = False
    drop_threshold: float = 0.5
    min_evidence: int = 5
    window_len: int = 10
    forward_grace: float = 0.5
    dispatch_period: int = 5
    selftest_period: int = 10
    reinfection_gap: int = 10
    hold_timeout: int = 10
    honest_rreq_ceiling: float = 1.0
    flood_threshold: float = 5.0  # defaults to 5x honest_rreq_ceiling
    rate_cap: float = 10.0
    drop_agent_ttl: int = 60
    flood_agent_ttl: int = 45
    agents: tuple[AgentSeed, ...] = ()

    def agent_ttl(self, agent_type: AgentType) -> int:
        if agent_type == AgentType.DROP_MONITOR:
            return self.drop_agent_ttl
        return self.flood_agent_ttl


@dataclass(frozen=True)
class Scenario:
    node_count: int
    area: tuple[float, float] = (400.0, 400.0)
    radio_range: float = 100.0
    mobility: MobilityConfig = MobilityConfig()
    placement: PlacementConfig = PlacementConfig()
    duration: float = 300.0
    initial_energy: float = 100_000.0
    flows: tuple[FlowSpec, ...] = ()
    attackers: tuple[AttackProfile, ...] = ()
    defense: DefenseConfig = DefenseConfig()
    master_seed: int = 1
    # radio and cost constants, declared here so runs are self-describing
    prop_delay: float = 0.001
    flood_ttl: int = 16
    buffer_cap: int = 64
    rreq_retries: int = 3
    rreq_retry_interval: float = 1.0
    energy_sample_period: int = 10
    data_bytes: int = 512
    ctrl_bytes: int = 64
    agent_bytes: int = 256
    report_bytes: int = 96
    dump_bytes: int = 192

    def tx_cost(self, size_bytes: int) -> float:
        return 1.0 + size_bytes / 1024.0

    def rx_cost(self, size_bytes: int) -> float:
        return self.tx_cost(size_bytes) / 2.0

    def with_seed(self, seed: int) -> "Scenario":
        return replace(self, master_seed=seed)


def initial_positions(sc: Scenario, rng) -> list[tuple[float, float]]:
    """Resolve node coordinates for a scenario.

    `rng` is the placement random stream; only the uniform mode consumes it.
    """
    p = sc.placement
    if p.mode == "explicit":
        return list(p.positions)
    if p.mode == "grid":
        cols = p.cols or math.ceil(math.sqrt(sc.node_count))
        return [((i % cols) * p.spacing, (i // cols) * p.spacing)
                for i in range(sc.node_count)]
    w, h = sc.area
    return [(rng.uniform(0, w), rng.uniform(0, h)) for _ in range(sc.node_count)]


# --------------------------------------------------------------------------
# Strict YAML loading with line numbers
# --------------------------------------------------------------------------

class _Val:
    """A parsed YAML value plus the line it came from."""

    __slots__ = ("value", "line")

    def __init__(self, value, line: int):
        self.value = value
        self.line = line


def _wrap(node) -> _Val:
    line = node.start_mark.line + 1
    if isinstance(node, yaml.MappingNode):
        out = {}
        for key_node, value_node in node.value:
            out[str(key_node.value)] = _wrap(value_node)
        return _Val(out, line)
    if isinstance(node, yaml.SequenceNode):
        return _Val([_wrap(child) for child in node.value], line)
    return _Val(yaml.safe_load(yaml.serialize(node)), line)


class _Ctx:
    def __init__(self):
        self.errors: list[str] = []

    def err(self, line: int, message: str) -> None:
        self.errors.append(f"line {line}: {message}")


def _get_map(ctx: _Ctx, val: _Val, where: str) -> dict[str, _Val]:
    if not isinstance(val.value, dict):
        ctx.err(val.line, f"{where} must be a mapping")
        return {}
    return val.value


def _get_list(ctx: _Ctx, val: _Val, where: str) -> list[_Val]:
    if not isinstance(val.value, list):
        ctx.err(val.line, f"{where} must be a list")
        return []
    return val.value


def _check_keys(ctx: _Ctx, mapping: dict[str, _Val], allowed: set[str], where: str) -> None:
    for key, val in mapping.items():
        if key not in allowed:
            ctx.err(val.line, f"unknown key {key!r} in {where}")


def _number(ctx: _Ctx, mapping, key, where, default, *, integer=False,
            minimum=None, maximum=None, strict_min=False):
    if key not in mapping:
        return default
    val = mapping[key]
    v = val.value
    if isinstance(v, bool) or not isinstance(v, (int, float)):
        ctx.err(val.line, f"{where}.{key} must be a number")
        return default
    if integer and not isinstance(v, int):
        ctx.err(val.line, f"{where}.{key} must be an integer")
        return default
    if minimum is not None and (v <= minimum if strict_min else v < minimum):
        op = ">" if strict_min else ">="
        ctx.err(val.line, f"{where}.{key} must be {op} {minimum}")
        return default
    if maximum is not None and v > maximum:
        ctx.err(val.line, f"{where}.{key} must be <= {maximum}")
        return default
    return int(v) if integer else float(v)


def _bool(ctx: _Ctx, mapping, key, where, default):
    if key not in mapping:
        return default
    val = mapping[key]
    if not isinstance(val.value, bool):
        ctx.err(val.line, f"{where}.{key} must be true/false")
        return default
    return val.value


def _string(ctx: _Ctx, mapping, key, where, default, choices=None):
    if key not in mapping:
        return default
    val = mapping[key]
    if not isinstance(val.value, str):
        ctx.err(val.line, f"{where}.{key} must be a string")
        return default
    if choices and val.value not in choices:
        ctx.err(val.line, f"{where}.{key} must be one of {sorted(choices)}")
        return default
    return val.value


_TOP_KEYS = {"nodes", "area", "radio_range", "duration", "initial_energy",
             "seed", "mobility", "placement", "flows", "attackers", "defense",
             "radio"}
_MOBILITY_KEYS = {"model", "speed_min", "speed_max", "pause"}
_PLACEMENT_KEYS = {"mode", "spacing", "cols", "positions"}
_FLOW_KEYS = {"src", "dst", "rate_pps", "start", "end"}
_ATTACK_KEYS = {"node", "kind", "start", "end", "drop_prob", "flood_rate",
                "victim", "partners"}
_DEFENSE_KEYS = {"enabled", "drop_threshold", "min_evidence", "window_len",
                 "forward_grace", "dispatch_period", "selftest_period",
                 "reinfection_gap", "hold_timeout", "honest_rreq_ceiling",
                 "flood_threshold", "rate_cap", "agent_ttl", "agents"}
_AGENT_SEED_KEYS = {"node", "type"}
_RADIO_KEYS = {"prop_delay", "flood_ttl", "buffer_cap", "rreq_retries",
               "rreq_retry_interval", "energy_sample_period", "data_bytes",
               "ctrl_bytes", "agent_bytes", "report_bytes", "dump_bytes"}


def parse_scenario(text: str) -> Scenario:
    """Parse and validate a scenario document.

    Raises ScenarioError carrying every validation problem found, each with
    the offending line number.
    """
    ctx = _Ctx()
    try:
        root_node = yaml.compose(text)
    except yaml.YAMLError as exc:
        raise ScenarioError([f"yaml error: {exc}"]) from exc
    if root_node is None:
        raise ScenarioError(["empty document"])
    root = _wrap(root_node)
    top = _get_map(ctx, root, "document")
    _check_keys(ctx, top, _TOP_KEYS, "document")

    if "nodes" not in top:
        ctx.err(root.line, "missing required key 'nodes'")
        raise ScenarioError(ctx.errors)
    n = _number(ctx, top, "nodes", "document", 1, integer=True, minimum=1)

    duration = _number(ctx, top, "duration", "document", 300.0, minimum=0, strict_min=True)
    radio_range = _number(ctx, top, "radio_range", "document", 100.0, minimum=0, strict_min=True)
    initial_energy = _number(ctx, top, "initial_energy", "document", 100_000.0,
                             minimum=0, strict_min=True)
    seed = _number(ctx, top, "seed", "document", 1, integer=True)

    area = (400.0, 400.0)
    if "area" in top:
        raw = _get_list(ctx, top["area"], "area")
        if len(raw) != 2:
            ctx.err(top["area"].line, "area must be [width, height]")
        else:
            dims = []
            for item in raw:
                if not isinstance(item.value, (int, float)) or isinstance(item.value, bool) \
                        or item.value <= 0:
                    ctx.err(item.line, "area dimensions must be positive numbers")
                    dims.append(400.0)
                else:
                    dims.append(float(item.value))
            area = (dims[0], dims[1])

    mobility = MobilityConfig()
    if "mobility" in top:
        m = _get_map(ctx, top["mobility"], "mobility")
        _check_keys(ctx, m, _MOBILITY_KEYS, "mobility")
        model = _string(ctx, m, "model", "mobility", "static",
                        choices={"static", "random_waypoint"})
        smin = _number(ctx, m, "speed_min", "mobility", 1.0, minimum=0)
        smax = _number(ctx, m, "speed_max", "mobility", 5.0, minimum=0)
        pause = _number(ctx, m, "pause", "mobility", 2.0, minimum=0)
        if smax < smin:
            ctx.err(top["mobility"].line, "mobility.speed_max must be >= speed_min")
        mobility = MobilityConfig(model, smin, smax, pause)

    placement = PlacementConfig()
    if "placement" in top:
        p = _get_map(ctx, top["placement"], "placement")
        _check_keys(ctx, p, _PLACEMENT_KEYS, "placement")
        mode = _string(ctx, p, "mode", "placement", "uniform",
                       choices={"uniform", "grid", "explicit"})
        spacing = _number(ctx, p, "spacing", "placement", 80.0, minimum=0, strict_min=True)
        cols = _number(ctx, p, "cols", "placement", None, integer=True, minimum=1)
        positions: list[tuple[float, float]] = []
        if mode == "explicit":
            if "positions" not in p:
                ctx.err(top["placement"].line, "explicit placement requires positions")
            else:
                raw = _get_list(ctx, p["positions"], "placement.positions")
                if len(raw) != n:
                    ctx.err(p["positions"].line,
                            f"positions has {len(raw)} entries, expected {n}")
                for item in raw:
                    pair = _get_list(ctx, item, "position")
                    if len(pair) != 2 or not all(
                            isinstance(c.value, (int, float)) and not isinstance(c.value, bool)
                            for c in pair):
                        ctx.err(item.line, "position must be [x, y]")
                        continue
                    x, y = float(pair[0].value), float(pair[1].value)
                    if not (0 <= x <= area[0] and 0 <= y <= area[1]):
                        ctx.err(item.line, f"position ({x}, {y}) outside area {area}")
                    positions.append((x, y))
        placement = PlacementConfig(mode, spacing, cols, tuple(positions))

    flows: list[FlowSpec] = []
    if "flows" in top:
        for idx, item in enumerate(_get_list(ctx, top["flows"], "flows")):
            f = _get_map(ctx, item, f"flow {idx}")
            _check_keys(ctx, f, _FLOW_KEYS, f"flow {idx}")
            src = _number(ctx, f, "src", f"flow {idx}", 0, integer=True, minimum=0)
            dst = _number(ctx, f, "dst", f"flow {idx}", 0, integer=True, minimum=0)
            rate = _number(ctx, f, "rate_pps", f"flow {idx}", 1.0, minimum=0, strict_min=True)
            start = _number(ctx, f, "start", f"flow {idx}", 0.0, minimum=0)
            end = _number(ctx, f, "end", f"flow {idx}", duration, minimum=0)
            if src == dst:
                ctx.err(item.line, f"flow {idx}: src and dst are the same node")
            for label, ref in (("src", src), ("dst", dst)):
                if ref >= n:
                    ctx.err(item.line, f"flow {idx}: {label} {ref} >= node count {n}")
            if start >= end:
                ctx.err(item.line, f"flow {idx}: start must be < end")
            if end > duration:
                ctx.err(item.line, f"flow {idx}: end exceeds duration {duration}")
            flows.append(FlowSpec(src, dst, rate, start, end))

    attackers: list[AttackProfile] = []
    if "attackers" in top:
        seen_nodes: set[int] = set()
        for idx, item in enumerate(_get_list(ctx, top["attackers"], "attackers")):
            a = _get_map(ctx, item, f"attacker {idx}")
            _check_keys(ctx, a, _ATTACK_KEYS, f"attacker {idx}")
            node = _number(ctx, a, "node", f"attacker {idx}", 0, integer=True, minimum=0)
            kind_name = _string(ctx, a, "kind", f"attacker {idx}", "black_hole",
                                choices={k.value for k in AttackKind})
            kind = AttackKind(kind_name)
            start = _number(ctx, a, "start", f"attacker {idx}", 0.0, minimum=0)
            end = _number(ctx, a, "end", f"attacker {idx}", duration, minimum=0)
            drop_prob = _number(ctx, a, "drop_prob", f"attacker {idx}", 1.0,
                                minimum=0, maximum=1)
            flood_rate = _number(ctx, a, "flood_rate", f"attacker {idx}", 0.0, minimum=0)
            victim = _number(ctx, a, "victim", f"attacker {idx}", None,
                             integer=True, minimum=0)
            partners: list[int] = []
            if "partners" in a:
                for pv in _get_list(ctx, a["partners"], f"attacker {idx} partners"):
                    if not isinstance(pv.value, int) or isinstance(pv.value, bool):
                        ctx.err(pv.line, f"attacker {idx}: partner must be a node id")
                        continue
                    partners.append(pv.value)
            if node >= n:
                ctx.err(item.line, f"attacker {idx}: node {node} >= node count {n}")
            if node in seen_nodes:
                ctx.err(item.line, f"attacker {idx}: node {node} already has a profile")
            seen_nodes.add(node)
            if start > end:
                ctx.err(item.line, f"attacker {idx}: start must be <= end")
            if kind in FLOOD_KINDS and flood_rate <= 0:
                ctx.err(item.line, f"attacker {idx}: {kind.value} requires flood_rate > 0")
            if kind == AttackKind.SLEEP_DEPRIVATION:
                if victim is None:
                    ctx.err(item.line, f"attacker {idx}: sleep_deprivation requires a victim")
                elif victim >= n or victim == node:
                    ctx.err(item.line, f"attacker {idx}: bad victim {victim}")
            if kind == AttackKind.COOP_BLACK_HOLE:
                if not partners:
                    ctx.err(item.line, f"attacker {idx}: coop_black_hole requires partners")
                for pid in partners:
                    if pid >= n or pid == node:
                        ctx.err(item.line, f"attacker {idx}: bad partner {pid}")
            attackers.append(AttackProfile(node, kind, start, end, drop_prob,
                                           flood_rate, victim, tuple(partners)))

    defense = DefenseConfig()
    if "defense" in top:
        d = _get_map(ctx, top["defense"], "defense")
        _check_keys(ctx, d, _DEFENSE_KEYS, "defense")
        enabled = _bool(ctx, d, "enabled", "defense", False)
        ceiling = _number(ctx, d, "honest_rreq_ceiling", "defense", 1.0,
                          minimum=0, strict_min=True)
        flood_thr = _number(ctx, d, "flood_threshold", "defense", 5.0 * ceiling,
                            minimum=0, strict_min=True)
        ttl_drop, ttl_flood = 60, 45
        if "agent_ttl" in d:
            tmap = _get_map(ctx, d["agent_ttl"], "defense.agent_ttl")
            _check_keys(ctx, tmap, {"drop_monitor", "flood_monitor"}, "defense.agent_ttl")
            ttl_drop = _number(ctx, tmap, "drop_monitor", "defense.agent_ttl",
                               60, integer=True, minimum=1)
            ttl_flood = _number(ctx, tmap, "flood_monitor", "defense.agent_ttl",
                                45, integer=True, minimum=1)
        seeds: list[AgentSeed] = []
        if "agents" in d:
            for idx, item in enumerate(_get_list(ctx, d["agents"], "defense.agents")):
                g = _get_map(ctx, item, f"agent seed {idx}")
                _check_keys(ctx, g, _AGENT_SEED_KEYS, f"agent seed {idx}")
                gnode = _number(ctx, g, "node", f"agent seed {idx}", 0,
                                integer=True, minimum=0)
                tname = _string(ctx, g, "type", f"agent seed {idx}", "drop_monitor",
                                choices={"drop_monitor", "flood_monitor"})
                if gnode >= n:
                    ctx.err(item.line, f"agent seed {idx}: node {gnode} >= node count {n}")
                seeds.append(AgentSeed(gnode, AgentType.from_wire(tname)))
        if seeds and not enabled:
            ctx.err(top["defense"].line, "agent seeds given but defense not enabled")
        defense = DefenseConfig(
            enabled=enabled,
            drop_threshold=_number(ctx, d, "drop_threshold", "defense", 0.5,
                                   minimum=0, strict_min=True, maximum=1),
            min_evidence=_number(ctx, d, "min_evidence", "defense", 5,
                                 integer=True, minimum=1),
            window_len=_number(ctx, d, "window_len", "defense", 10,
                               integer=True, minimum=1),
            forward_grace=_number(ctx, d, "forward_grace", "defense", 0.5,
                                  minimum=0, strict_min=True),
            dispatch_period=_number(ctx, d, "dispatch_period", "defense", 5,
                                    integer=True, minimum=1),
            selftest_period=_number(ctx, d, "selftest_period", "defense", 10,
                                    integer=True, minimum=1),
            reinfection_gap=_number(ctx, d, "reinfection_gap", "defense", 10,
                                    integer=True, minimum=1),
            hold_timeout=_number(ctx, d, "hold_timeout", "defense", 10,
                                 integer=True, minimum=1),
            honest_rreq_ceiling=ceiling,
            flood_threshold=flood_thr,
            rate_cap=_number(ctx, d, "rate_cap", "defense", 10.0,
                             minimum=0, strict_min=True),
            drop_agent_ttl=ttl_drop,
            flood_agent_ttl=ttl_flood,
            agents=tuple(seeds),
        )

    radio_kwargs = {}
    if "radio" in top:
        r = _get_map(ctx, top["radio"], "radio")
        _check_keys(ctx, r, _RADIO_KEYS, "radio")
        int_keys = {"flood_ttl", "buffer_cap", "rreq_retries", "energy_sample_period",
                    "data_bytes", "ctrl_bytes", "agent_bytes", "report_bytes",
                    "dump_bytes"}
        for key in _RADIO_KEYS:
            if key in r:
                radio_kwargs[key] = _number(ctx, r, key, "radio", None,
                                            integer=key in int_keys,
                                            minimum=0, strict_min=True)

    if ctx.errors:
        raise ScenarioError(ctx.errors)

    return Scenario(
        node_count=n,
        area=area,
        radio_range=radio_range,
        mobility=mobility,
        placement=placement,
        duration=duration,
        initial_energy=initial_energy,
        flows=tuple(flows),
        attackers=tuple(attackers),
        defense=defense,
        master_seed=seed,
        **{k: v for k, v in radio_kwargs.items() if v is not None},
    )


def load_scenario(path) -> Scenario:
    with open(path) as fh:
        return parse_scenario(fh.read())
