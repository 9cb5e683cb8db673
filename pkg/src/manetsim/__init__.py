"""Deterministic MANET simulator with routing attacks and an immune-style
agent defense."""

from .engine import Simulator, run_simulation
from .metrics import compute_metrics
from .oracle import replay_oracle
from .runner import run_scenario
from .scenario import Scenario, parse_scenario
from .trace import Trace

__version__ = "0.1.0"

__all__ = [
    "Scenario",
    "Simulator",
    "Trace",
    "compute_metrics",
    "parse_scenario",
    "replay_oracle",
    "run_scenario",
    "run_simulation",
    "__version__",
]
