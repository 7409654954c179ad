"""Scenario generation, the push-model oracle, equivalence and latency runs."""

from .equivalence import EquivalenceReport, compare_seed, compare_seeds, period_ends, run_pipeline
from .latency import latency_report, push_lag
from .oracle import PushOracle, naive_execute, oracle_metrics, push_oracle
from .scenario import Scenario, ScenarioParams, build_scenario, generate_scenario, read_scenario, write_scenario

__all__ = [
    "EquivalenceReport", "PushOracle", "Scenario", "ScenarioParams", "build_scenario", "compare_seed",
    "compare_seeds", "generate_scenario", "latency_report", "naive_execute", "oracle_metrics",
    "period_ends", "push_lag", "push_oracle", "read_scenario", "run_pipeline", "write_scenario",
]
