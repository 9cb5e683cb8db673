"""Multi-seed run orchestration and output files."""

from __future__ import annotations

import os
from dataclasses import dataclass

from .engine import Simulator
from .metrics import Metrics, compute_metrics, metrics_csv, summary_text
from .scenario import Scenario
from .trace import Trace


@dataclass
class RunResult:
    seed: int
    trace: Trace
    metrics: Metrics


def run_one(sc: Scenario, seed: int) -> RunResult:
    seeded = sc.with_seed(seed)
    trace = Simulator(seeded).run()
    return RunResult(seed, trace, compute_metrics(trace, seeded, seed=seed))


def run_scenario(sc: Scenario, seeds: list[int],
                 out_dir: str | None = None) -> list[RunResult]:
    """One independent deterministic run per seed. Runs share nothing, so
    order is irrelevant to the results; they execute sequentially here."""
    results = [run_one(sc, seed) for seed in seeds]
    if out_dir is not None:
        write_outputs(results, out_dir)
    return results


def write_outputs(results: list[RunResult], out_dir: str) -> None:
    os.makedirs(out_dir, exist_ok=True)
    for r in results:
        r.trace.write(os.path.join(out_dir, f"trace-{r.seed}.log"))
    per_seed = [r.metrics for r in results]
    with open(os.path.join(out_dir, "metrics.csv"), "w") as fh:
        fh.write(metrics_csv(per_seed))
    with open(os.path.join(out_dir, "summary.txt"), "w") as fh:
        fh.write(summary_text(per_seed))
