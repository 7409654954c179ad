"""Push-model batch oracle.

Recomputes reports the way the status-quo chain does at a period end: each
bank compiles its own report from a raw scan of the ledger export joined with
the reference-data file, the national authority consolidates its banks, and
the supranational body consolidates the national reports.

It deliberately reuses nothing from the live pipeline (composer, warehouse,
compiled evaluator, registry object model) except the parsed template AST and
the plain result containers. Lookups are linear scans; expressions are walked
node by node.
"""

from __future__ import annotations

import json
from fractions import Fraction
from pathlib import Path

from ..mrer import ReportInstance, ReportTemplate, ValidationResult
from ..mrer import expr as E
from ..mrer.template import Severity
from ..scope import Scope

_HAIRCUT = {"L1": Fraction(1), "L2A": Fraction(85, 100), "L2B": Fraction(50, 100), "NONE": Fraction(0)}


def evaluate(node, env: dict, div0: list):
    """Walk ``node`` against ``env``. AND/OR short-circuit; x/0 evaluates to 0."""
    if isinstance(node, E.Num):
        return node.value
    if isinstance(node, E.Str):
        return node.value
    if isinstance(node, E.Name):
        return env[node.name]
    if isinstance(node, E.Unary):
        v = evaluate(node.operand, env, div0)
        return (not v) if node.op == "NOT" else -v
    if isinstance(node, E.Call):
        a = evaluate(node.args[0], env, div0)
        b = evaluate(node.args[1], env, div0)
        if node.func == "min":
            return a if a <= b else b
        return a if a >= b else b
    if isinstance(node, E.Binary):
        op = node.op
        if op == "AND":
            return bool(evaluate(node.left, env, div0)) and bool(evaluate(node.right, env, div0))
        if op == "OR":
            return bool(evaluate(node.left, env, div0)) or bool(evaluate(node.right, env, div0))
        a = evaluate(node.left, env, div0)
        b = evaluate(node.right, env, div0)
        if op == "+":
            return a + b
        if op == "-":
            return a - b
        if op == "*":
            return a * b
        if op == "/":
            if b == 0:
                div0.append(node)
                return Fraction(0)
            return Fraction(a) / Fraction(b)
        if op == "=":
            return a == b
        if op == "!=":
            return a != b
        if op == "<":
            return a < b
        if op == "<=":
            return a <= b
        if op == ">":
            return a > b
        if op == ">=":
            return a >= b
    raise TypeError(f"cannot evaluate {node!r}")


def naive_aggregate(agg: str, measure, flt, rows: list[dict]) -> tuple[Fraction, int]:
    """Reference aggregation: a plain loop, row by row."""
    total = Fraction(0)
    best = None
    last = None
    n = 0
    for row in rows:
        scratch: list = []
        if flt is not None and not evaluate(flt, row, scratch):
            continue
        n += 1
        if agg == "COUNT":
            continue
        v = Fraction(evaluate(measure, row, scratch))
        if agg == "SUM":
            total += v
        elif agg == "MAX":
            best = v if best is None or v > best else best
        elif agg == "MIN":
            best = v if best is None or v < best else best
        elif agg == "LATEST":
            last = v
    if agg == "COUNT":
        return Fraction(n), n
    if agg == "SUM":
        return total, n
    if agg in ("MAX", "MIN"):
        return (best if best is not None else Fraction(0)), n
    return (last if last is not None else Fraction(0)), n


def naive_derive_and_validate(template: ReportTemplate, values: dict) -> list[ValidationResult]:
    results = []
    for dp in template.data_points:
        if dp.source.value != "DERIVED":
            continue
        div0: list = []
        values[dp.id] = Fraction(evaluate(dp.derive, values, div0))
        if div0:
            results.append(ValidationResult(f"DIV0:{dp.id}", False, Severity.WARNING))
    for rule in template.validations:
        div0 = []
        ok = bool(evaluate(rule.expr, values, div0))
        results.append(ValidationResult(rule.rule_id, ok, rule.severity))
        if div0:
            results.append(ValidationResult(f"DIV0:{rule.rule_id}", False, Severity.WARNING))
    return results


def naive_execute(template: ReportTemplate, rows: list[dict], figures: list[dict],
                  scope=None, as_of_height: int = 0) -> ReportInstance:
    """Whole-template reference execution over plain row lists."""
    values: dict = {}
    support: dict = {}
    for dp in template.data_points:
        src = dp.source.value
        if src == "DERIVED":
            values[dp.id] = None
            continue
        values[dp.id], support[dp.id] = naive_aggregate(
            dp.agg.value, dp.measure, dp.filter, rows if src == "RECORDS" else figures)
    results = naive_derive_and_validate(template, values)
    return ReportInstance(template.template_id, template.version, scope, as_of_height, values,
                          results, support, template)


class PushOracle:
    """Loads the event-log export and the registry bootstrap file once."""

    def __init__(self, events_path, registry_path):
        with open(registry_path, encoding="utf-8") as fh:
            doc = json.load(fh)
        self.institutions = {d["lei"]: d for d in doc["institutions"]}
        self.bindings = doc["bindings"]
        self.assets = doc["assets"]
        self.events = []
        with open(events_path, encoding="utf-8") as fh:
            for line in fh:
                if line.strip():
                    self.events.append(json.loads(line))
        self.events.sort(key=lambda e: (e["height"], e["index_in_block"]))
        self.legs = [leg for ev in self.events for leg in self._legs(ev)]

    @classmethod
    def from_directory(cls, directory) -> "PushOracle":
        directory = Path(directory)
        return cls(directory / "events.ndjson", directory / "registry.json")

    # -- reference-data joins (linear scans) -------------------------------------

    def _owner(self, address, height):
        if address is None:
            return None
        for b in self.bindings:
            if b["address"] != address or height < b["effective_height"]:
                continue
            if b["revoked_height"] is not None and height > b["revoked_height"]:
                continue
            lei = b["lei"]
            if self.institutions[lei]["opt_in_height"] <= height:
                return lei
            return None
        return None

    def _classification(self, asset_id, height):
        best = None
        for a in self.assets:
            if a["asset_id"] == asset_id and a["effective_height"] <= height:
                if best is None or a["effective_height"] > best["effective_height"]:
                    best = a
        if best is None:
            return {"exposure_class": "OTHER", "risk_weight": "1", "hqla_level": "NONE",
                    "outflow_factor": "1", "inflow_factor": "0"}, False
        return best, True

    def _legs(self, ev) -> list[dict]:
        h = ev["height"]
        frm = self._owner(ev["from"], h)
        to = self._owner(ev["to"], h)
        if frm is None and to is None:
            return []
        cls, classified = self._classification(ev["asset_id"], h)
        out = []
        for direction, lei, other_lei, other_addr in (("OUT", frm, to, ev["to"]), ("IN", to, frm, ev["from"])):
            if lei is None:
                continue
            if other_lei is not None:
                cp, cp_type = other_lei, "REGISTERED"
            elif other_addr is not None:
                cp, cp_type = "EXTERNAL", "EXTERNAL"
            else:
                cp, cp_type = "", "NONE"
            amount = ev["amount"]
            out.append({
                "lei": lei,
                "jurisdiction": self.institutions[lei]["jurisdiction"],
                "counterparty": cp,
                "counterparty_type": cp_type,
                "direction": direction,
                "amount": Fraction(amount),
                "signed_amount": Fraction(amount if direction == "IN" else -amount),
                "kind": ev["kind"],
                "asset_id": ev["asset_id"],
                "exposure_class": cls["exposure_class"],
                "risk_weight": Fraction(cls["risk_weight"]),
                "hqla_level": cls["hqla_level"],
                "hqla_weight": _HAIRCUT[cls["hqla_level"]],
                "outflow_factor": Fraction(cls["outflow_factor"]),
                "inflow_factor": Fraction(cls["inflow_factor"]),
                "height": Fraction(h),
                "index_in_block": Fraction(ev["index_in_block"]),
                "contract_tag": ev["contract_tag"] or "",
                "classified": classified,
            })
        return out

    def _figures(self, lei, height):
        best = None
        for f in self.institutions[lei]["capital_figures"]:
            if f["effective_height"] <= height and (best is None or f["effective_height"] > best["effective_height"]):
                best = f
        if best is None:
            return None
        return {"lei": lei, "jurisdiction": self.institutions[lei]["jurisdiction"],
                "tier1": Fraction(best["tier1"]), "cet1": Fraction(best["cet1"]),
                "hqla": Fraction(best["hqla"]), "effective_height": Fraction(best["effective_height"])}

    def _rows(self, period_end, keep) -> list[dict]:
        rows = []
        for leg in self.legs:
            if leg["height"] <= period_end and keep(leg):
                row = dict(leg)
                row["age"] = period_end - leg["height"]
                rows.append(row)
        return rows

    def _figure_rows(self, leis, period_end) -> list[dict]:
        rows = [f for f in (self._figures(lei, period_end) for lei in leis) if f is not None]
        rows.sort(key=lambda r: (r["effective_height"], r["lei"]))
        return rows

    # -- the batch run -----------------------------------------------------------

    def participants(self, period_end) -> list[str]:
        return sorted(lei for lei, d in self.institutions.items() if d["opt_in_height"] <= period_end)

    def jurisdictions(self) -> list[str]:
        return sorted({d["jurisdiction"] for d in self.institutions.values()})

    def _consolidate(self, template, children, scope, period_end, leis, keep) -> ReportInstance:
        values: dict = {}
        support: dict = {}
        scope_rows = scope_figs = None
        for dp in template.data_points:
            src = dp.source.value
            if src == "DERIVED":
                values[dp.id] = None
                continue
            agg = dp.agg.value
            support[dp.id] = sum(c.support[dp.id] for c in children)
            if agg in ("SUM", "COUNT"):
                total = Fraction(0)
                for c in children:
                    total += c.values[dp.id]
                values[dp.id] = total
            elif agg in ("MAX", "MIN"):
                picked = None
                for c in children:
                    if not c.support[dp.id]:
                        continue
                    v = c.values[dp.id]
                    if picked is None or (v > picked if agg == "MAX" else v < picked):
                        picked = v
                values[dp.id] = picked if picked is not None else Fraction(0)
            else:
                if scope_rows is None:
                    scope_rows = self._rows(period_end, keep)
                    scope_figs = self._figure_rows(leis, period_end)
                values[dp.id], support[dp.id] = naive_aggregate(
                    agg, dp.measure, dp.filter, scope_rows if src == "RECORDS" else scope_figs)
        results = naive_derive_and_validate(template, values)
        return ReportInstance(template.template_id, template.version, scope, period_end, values,
                              results, support, template)

    def run(self, template: ReportTemplate, period_end: int) -> dict[Scope, ReportInstance]:
        """All bank, national and supranational reports due at ``period_end``."""
        out: dict[Scope, ReportInstance] = {}
        banks = self.participants(period_end)
        for lei in banks:
            rows = self._rows(period_end, lambda leg, lei=lei: leg["lei"] == lei)
            figs = self._figure_rows([lei], period_end)
            out[Scope.local(lei)] = naive_execute(template, rows, figs, Scope.local(lei), period_end)
        nationals = []
        for jur in self.jurisdictions():
            members = [lei for lei in banks if self.institutions[lei]["jurisdiction"] == jur]
            scope = Scope.national(jur)
            inst = self._consolidate(template, [out[Scope.local(lei)] for lei in members], scope,
                                     period_end, members,
                                     lambda leg, jur=jur: leg["jurisdiction"] == jur)
            out[scope] = inst
            nationals.append(inst)
        top = Scope.supranational()
        out[top] = self._consolidate(template, nationals, top, period_end, banks, lambda leg: True)
        return out


def push_oracle(events_path, registry_path, template: ReportTemplate, period_end_height: int):
    """One-shot convenience wrapper around :class:`PushOracle`."""
    return PushOracle(events_path, registry_path).run(template, period_end_height)


# -- independent metric recomputation -------------------------------------------


def oracle_metrics(events_path, registry_path, lei: str, as_of: int, window: int = 30) -> dict:
    """Recompute the composer's prudential metrics from the raw exports."""
    po = PushOracle(events_path, registry_path)
    fig = po._figures(lei, as_of)
    if fig is None:
        raise LookupError(f"no figures for {lei} at {as_of}")
    positions: dict = {}
    exposures: dict = {}
    outflows = inflows = Fraction(0)
    for leg in po.legs:
        if leg["lei"] != lei or leg["height"] > as_of:
            continue
        positions[leg["asset_id"]] = positions.get(leg["asset_id"], 0) + leg["signed_amount"]
        if as_of - leg["height"] < window:
            if leg["direction"] == "OUT":
                outflows += leg["amount"] * leg["outflow_factor"]
            else:
                inflows += leg["amount"] * leg["inflow_factor"]
        if leg["kind"] in ("TRANSFER", "CONTRACT_CALL") and leg["counterparty_type"] != "NONE" \
                and leg["counterparty"] != lei:
            exposures[leg["counterparty"]] = exposures.get(leg["counterparty"], 0) + leg["amount"]
    exposure = Fraction(0)
    rwa = Fraction(0)
    hqla = fig["hqla"]
    for asset, p in positions.items():
        if p > 0:
            cls, _ = po._classification(asset, as_of)
            exposure += p
            rwa += p * Fraction(cls["risk_weight"])
            hqla += p * _HAIRCUT[cls["hqla_level"]]
    capped = inflows if inflows < outflows * Fraction(3, 4) else outflows * Fraction(3, 4)
    net = outflows - capped
    limit = fig["tier1"] / 4
    return {
        "leverage_ratio": fig["tier1"] / exposure if exposure else Fraction(0),
        "cet1_ratio": fig["cet1"] / rwa if rwa else Fraction(0),
        "total_rwa": rwa,
        "lcr": hqla / (net if net > 1 else Fraction(1)),
        "large_exposure_flags": sorted((cp, e) for cp, e in exposures.items() if e > limit),
    }
