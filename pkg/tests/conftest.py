"""Shared scenario builders for the test suite."""

from __future__ import annotations

import pytest

from manetsim.adversary import AttackKind, AttackProfile
from manetsim.scenario import (
    AgentSeed,
    DefenseConfig,
    FlowSpec,
    PlacementConfig,
    Scenario,
)
from manetsim.types import AgentType

D = AgentType.DROP_MONITOR
F = AgentType.FLOOD_MONITOR

GRID_PLACEMENT = PlacementConfig("grid", spacing=80.0, cols=5)


def drop_defense(nodes=(0, 4, 20, 24), extra=(), **overrides) -> DefenseConfig:
    seeds = tuple(AgentSeed(n, D) for n in nodes) + tuple(extra)
    return DefenseConfig(enabled=True, agents=seeds, **overrides)


def grid_scenario(duration=300.0, attackers=(), defense=None, flows=None,
                  seed=1, **overrides) -> Scenario:
    """25-node static 5x5 grid, 80 m spacing, 100 m range."""
    if flows is None:
        flows = (FlowSpec(0, 24, 4.0, 0.0, duration),)
    return Scenario(
        node_count=25,
        placement=GRID_PLACEMENT,
        duration=duration,
        flows=flows,
        attackers=tuple(attackers),
        defense=defense or DefenseConfig(),
        master_seed=seed,
        **overrides,
    )


def line_scenario(n, duration=60.0, spacing=80.0, attackers=(), defense=None,
                  flows=(), seed=1, **overrides) -> Scenario:
    positions = tuple((i * spacing, 0.0) for i in range(n))
    overrides.setdefault("area", (max(400.0, n * spacing), 400.0))
    return Scenario(
        node_count=n,
        placement=PlacementConfig("explicit", positions=positions),
        duration=duration,
        flows=tuple(flows),
        attackers=tuple(attackers),
        defense=defense or DefenseConfig(),
        master_seed=seed,
        **overrides,
    )


def blackhole(node, start=30.0, end=300.0) -> AttackProfile:
    return AttackProfile(node, AttackKind.BLACK_HOLE, start, end)


def greyhole(node, drop_prob, start=30.0, end=300.0) -> AttackProfile:
    return AttackProfile(node, AttackKind.GREY_HOLE, start, end,
                         drop_prob=drop_prob)


@pytest.fixture(scope="session")
def honest_grid_path():
    """Relay path the default grid flow takes, derived from a short probe."""
    from manetsim.engine import Simulator

    sc = grid_scenario(duration=20.0)
    trace = Simulator(sc).run()
    sends = [e for e in trace if e.ev == "Send" and e.t > 10.0]
    probe = sends[0]
    hops = [e.node for e in trace
            if e.ev == "Tx" and e.get("kind") == "data"
            and e.get("src") == 0 and e.get("seq") == probe.get("seq")]
    return hops + [24]
