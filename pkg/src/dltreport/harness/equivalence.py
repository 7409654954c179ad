"""Pull-versus-push equivalence runs."""

from __future__ import annotations

import tempfile
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path
from typing import Iterable

from ..composer import Composer
from ..mrer import ReportInstance, ReportTemplate
from ..numeric import render_decimal
from ..scope import Level, Scope
from ..warehouse import Warehouse
from .oracle import PushOracle
from .scenario import ScenarioParams, build_scenario, write_scenario

RATIONAL_TOLERANCE = Fraction(1, 10**9)


@dataclass
class PointComparison:
    template_id: str
    scope: str
    period_end: int
    point: str
    pull: str
    push: str
    abs_diff: Fraction
    ok: bool

    def to_dict(self) -> dict:
        return {"template_id": self.template_id, "scope": self.scope, "period_end": self.period_end,
                "point": self.point, "pull": self.pull, "push": self.push,
                "abs_diff": render_decimal(self.abs_diff), "ok": self.ok}


@dataclass
class EquivalenceReport:
    seeds: list = field(default_factory=list)
    comparisons: int = 0
    instances: int = 0
    failures: list = field(default_factory=list)
    max_abs_diff: Fraction = Fraction(0)
    additivity_violations: list = field(default_factory=list)
    error_failures: list = field(default_factory=list)

    @property
    def verdict(self) -> str:
        return "PASS" if not self.failures else "FAIL"

    def merge(self, other: "EquivalenceReport") -> None:
        self.seeds.extend(other.seeds)
        self.comparisons += other.comparisons
        self.instances += other.instances
        self.failures.extend(other.failures)
        self.max_abs_diff = max(self.max_abs_diff, other.max_abs_diff)
        self.additivity_violations.extend(other.additivity_violations)
        self.error_failures.extend(other.error_failures)

    def to_dict(self, max_failures: int = 50) -> dict:
        return {
            "verdict": self.verdict,
            "seeds": self.seeds,
            "instances_compared": self.instances,
            "points_compared": self.comparisons,
            "max_abs_diff": render_decimal(self.max_abs_diff),
            "failure_count": len(self.failures),
            "failures": [f.to_dict() for f in self.failures[:max_failures]],
            "additivity_violations": self.additivity_violations[:max_failures],
            "error_validation_failures": self.error_failures[:max_failures],
        }


def points_match(pull: Fraction, push: Fraction) -> tuple[bool, Fraction]:
    """Integers must agree exactly; rationals within 1e-9 after decimal rendering."""
    pull, push = Fraction(pull), Fraction(push)
    if pull.denominator == 1 and push.denominator == 1:
        return pull == push, abs(pull - push)
    diff = abs(Fraction(render_decimal(pull)) - Fraction(render_decimal(push)))
    return diff <= RATIONAL_TOLERANCE, diff


def compare_instances(pull: ReportInstance, push: ReportInstance, report: EquivalenceReport) -> None:
    report.instances += 1
    scope = str(pull.scope)
    for point in pull.values:
        ok, diff = points_match(pull.values[point], push.values[point])
        report.comparisons += 1
        report.max_abs_diff = max(report.max_abs_diff, diff)
        if not ok:
            report.failures.append(PointComparison(
                pull.template_id, scope, pull.as_of_height, point,
                render_decimal(pull.values[point]), render_decimal(push.values[point]), diff, False))
    pv = sorted((r.rule_id, r.passed) for r in pull.validation_results)
    qv = sorted((r.rule_id, r.passed) for r in push.validation_results)
    if pv != qv:
        report.failures.append(PointComparison(pull.template_id, scope, pull.as_of_height,
                                               "<validations>", str(pv), str(qv), Fraction(0), False))


def check_additivity(template: ReportTemplate, by_scope: dict, as_of: int) -> list[str]:
    """SUPRANATIONAL = sum of NATIONAL = sum of LOCAL for every additive point, exactly."""
    problems = []
    locals_ = [i for s, i in by_scope.items() if s.level is Level.LOCAL]
    nationals = [i for s, i in by_scope.items() if s.level is Level.NATIONAL]
    top = by_scope[Scope.supranational()]
    for dp in template.data_points:
        if not dp.additive:
            continue
        s_local = sum((i.values[dp.id] for i in locals_), Fraction(0))
        s_nat = sum((i.values[dp.id] for i in nationals), Fraction(0))
        if not (top.values[dp.id] == s_nat == s_local):
            problems.append(f"{template.template_id}@{as_of}:{dp.id} supra={top.values[dp.id]} "
                            f"national={s_nat} local={s_local}")
    return problems


def period_ends(frequency: int, head: int) -> list[int]:
    return list(range(frequency, head + 1, frequency))


def run_pipeline(params: ScenarioParams, directory, *, drop_every: int | None = None,
                 batch_size: int | None = None, templates: Iterable[ReportTemplate] = ()):
    """Generate, export and compose one scenario; returns (ledger, registry, warehouse)."""
    sc = build_scenario(params)
    ledger = sc.build_ledger()
    write_scenario(directory, params, ledger, sc.registry)
    wh = Warehouse(sc.registry, templates=templates)
    Composer(ledger, sc.registry, wh, drop_every=drop_every).run_to_head(batch_size)
    return ledger, sc.registry, wh


def compare_seed(params: ScenarioParams, templates: list[ReportTemplate], *,
                 drop_every: int | None = None, workdir=None) -> EquivalenceReport:
    report = EquivalenceReport(seeds=[params.seed])
    with tempfile.TemporaryDirectory() as tmp:
        directory = Path(workdir or tmp)
        _, _, wh = run_pipeline(params, directory, drop_every=drop_every, templates=templates)
        oracle = PushOracle.from_directory(directory)
        for template in templates:
            for end in period_ends(template.frequency_blocks, wh.head):
                pushed = oracle.run(template, end)
                pulled = {}
                for scope, push_inst in pushed.items():
                    pull_inst = wh.aggregate_report(template, scope, end)
                    pulled[scope] = pull_inst
                    compare_instances(pull_inst, push_inst, report)
                    for r in pull_inst.error_failures():
                        report.error_failures.append(f"{template.template_id}@{end}:{scope}:{r.rule_id}")
                report.additivity_violations.extend(check_additivity(template, pulled, end))
    return report


def compare_seeds(seeds: Iterable[int], templates: list[ReportTemplate], *, drop_every: int | None = None,
                  **scenario_kw) -> EquivalenceReport:
    total = EquivalenceReport()
    for seed in seeds:
        total.merge(compare_seed(ScenarioParams(seed=seed, **scenario_kw), templates, drop_every=drop_every))
    return total
