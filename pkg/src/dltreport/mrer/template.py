"""Machine-readable report templates: parsing, execution and validation.

A template is a JSON document::

    {
      "template_id": "OWN_FUNDS_MINI",
      "version": "1.0",
      "frequency_blocks": 30,
      "annotations": {"title": "..."},           # optional, free-form
      "data_points": [
        {"id": "rwa_total", "source": "RECORDS", "agg": "SUM",
         "measure": "amount * risk_weight", "filter": "direction = \\"IN\\""},
        {"id": "cet1", "source": "FIGURES", "agg": "SUM", "measure": "cet1"},
        {"id": "cet1_ratio", "source": "DERIVED", "derive": "cet1 / rwa_total"}
      ],
      "validations": [
        {"rule_id": "V1", "expr": "cet1_ratio >= 0", "severity": "ERROR"}
      ]
    }

Execution is total: division by zero inside a derivation or a validation
evaluates to 0 and adds a ``DIV0:<id>`` WARNING entry to the instance.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Mapping, Optional, Sequence

from ..errors import TemplateError
from ..ledger import TxKind
from ..numeric import json_number
from ..registry import ExposureClass, HqlaLevel
from ..scope import Scope
from . import expr as E


class Source(str, Enum):
    RECORDS = "RECORDS"
    FIGURES = "FIGURES"
    DERIVED = "DERIVED"


class Agg(str, Enum):
    SUM = "SUM"
    COUNT = "COUNT"
    MAX = "MAX"
    MIN = "MIN"
    LATEST = "LATEST"


class Severity(str, Enum):
    ERROR = "ERROR"
    WARNING = "WARNING"


#: Aggregations whose scope value is a function of the child-scope values.
ADDITIVE = frozenset({Agg.SUM, Agg.COUNT})
FOLDABLE = frozenset({Agg.MAX, Agg.MIN})


def _enum(name, values):
    return E.EnumType(name, frozenset(v.value if isinstance(v, Enum) else v for v in values))


DIRECTION = _enum("direction", ["IN", "OUT"])
COUNTERPARTY_TYPE = _enum("counterparty_type", ["REGISTERED", "EXTERNAL", "NONE"])

#: Columns of the record view (one row per participating side of an enriched record).
RECORD_FIELDS: dict[str, E.FieldType] = {
    "lei": E.STR,
    "jurisdiction": E.STR,
    "counterparty": E.STR,
    "counterparty_type": COUNTERPARTY_TYPE,
    "direction": DIRECTION,
    "amount": E.NUM,
    "signed_amount": E.NUM,
    "kind": _enum("kind", TxKind),
    "asset_id": E.STR,
    "exposure_class": _enum("exposure_class", ExposureClass),
    "risk_weight": E.NUM,
    "hqla_level": _enum("hqla_level", HqlaLevel),
    "hqla_weight": E.NUM,
    "outflow_factor": E.NUM,
    "inflow_factor": E.NUM,
    "height": E.NUM,
    "index_in_block": E.NUM,
    "age": E.NUM,
    "contract_tag": E.STR,
    "classified": E.BOOL,
}

#: Columns of the figures view (one row per institution in scope).
FIGURE_FIELDS: dict[str, E.FieldType] = {
    "lei": E.STR,
    "jurisdiction": E.STR,
    "tier1": E.NUM,
    "cet1": E.NUM,
    "hqla": E.NUM,
    "effective_height": E.NUM,
}

_ID = re.compile(r"^[A-Za-z_][A-Za-z0-9_]*$")


@dataclass(frozen=True)
class DataPointDef:
    id: str
    source: Source
    agg: Optional[Agg] = None
    measure: Optional[E.Node] = None
    filter: Optional[E.Node] = None
    derive: Optional[E.Node] = None

    @property
    def additive(self) -> bool:
        return self.agg in ADDITIVE

    def to_dict(self) -> dict:
        d = {"id": self.id, "source": self.source.value}
        if self.source is Source.DERIVED:
            d["derive"] = E.render(self.derive)
        else:
            d["agg"] = self.agg.value
            d["measure"] = E.render(self.measure)
            if self.filter is not None:
                d["filter"] = E.render(self.filter)
        return d


@dataclass(frozen=True)
class ValidationRule:
    rule_id: str
    expr: E.Node
    severity: Severity

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "expr": E.render(self.expr), "severity": self.severity.value}


@dataclass(frozen=True)
class ReportTemplate:
    template_id: str
    version: str
    frequency_blocks: int
    data_points: tuple
    validations: tuple = ()
    annotations: Mapping = field(default_factory=dict)

    @property
    def ids(self) -> list[str]:
        return [dp.id for dp in self.data_points]

    def point(self, dp_id: str) -> DataPointDef:
        for dp in self.data_points:
            if dp.id == dp_id:
                return dp
        raise KeyError(dp_id)

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "version": self.version,
            "frequency_blocks": self.frequency_blocks,
            "annotations": dict(self.annotations),
            "data_points": [dp.to_dict() for dp in self.data_points],
            "validations": [v.to_dict() for v in self.validations],
        }

    @property
    def needs_scope_view(self) -> bool:
        """True when some point must be recomputed from scope-level rows."""
        return any(dp.agg is Agg.LATEST for dp in self.data_points)


# -- parsing --------------------------------------------------------------------

_TOP_KEYS = {"template_id", "version", "frequency_blocks", "data_points", "validations", "annotations"}
_DP_KEYS = {
    Source.RECORDS: ({"id", "source", "agg", "measure"}, {"filter"}),
    Source.FIGURES: ({"id", "source", "agg", "measure"}, set()),
    Source.DERIVED: ({"id", "source", "derive"}, set()),
}


def _syntax(msg: str, position: int | None = None):
    return TemplateError("SYNTAX_ERROR", msg, position)


def _expr(text, where: str, env, *, allow_division: bool, want: str, unknown_code="UNKNOWN_FIELD"):
    if not isinstance(text, str):
        raise _syntax(f"{where}: expression must be a string")
    try:
        node = E.parse_expression(text)
        t = E.check(node, env, allow_division=allow_division, unknown_code=unknown_code)
    except TemplateError as exc:
        wrapped = TemplateError(exc.code, f"{where}: {exc.message}")
        wrapped.position = exc.position
        raise wrapped from None
    if t != want:
        raise TemplateError("TYPE_MISMATCH", f"{where}: expected a {want} expression")
    return node


def parse_template(text) -> ReportTemplate:
    """Parse and fully validate template text (str or UTF-8 bytes)."""
    if isinstance(text, (bytes, bytearray)):
        try:
            text = bytes(text).decode("utf-8")
        except UnicodeDecodeError as exc:
            raise _syntax("template is not valid UTF-8", exc.start) from None
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise _syntax(exc.msg, exc.pos) from None
    except RecursionError:
        raise _syntax("document nested too deeply") from None
    return template_from_dict(doc)


def template_from_dict(doc) -> ReportTemplate:
    if not isinstance(doc, dict):
        raise _syntax("template must be a JSON object")
    extra = set(doc) - _TOP_KEYS
    if extra:
        raise _syntax(f"unexpected keys {sorted(extra)}")
    for key in ("template_id", "version", "frequency_blocks", "data_points"):
        if key not in doc:
            raise _syntax(f"missing {key!r}")
    tid, version, freq = doc["template_id"], doc["version"], doc["frequency_blocks"]
    if not isinstance(tid, str) or not _ID.fullmatch(tid):
        raise _syntax("template_id must be an identifier")
    if not isinstance(version, str) or not version:
        raise _syntax("version must be a non-empty string")
    if isinstance(freq, bool) or not isinstance(freq, int) or freq < 1:
        raise _syntax("frequency_blocks must be a positive integer")
    annotations = doc.get("annotations", {})
    if not isinstance(annotations, dict):
        raise _syntax("annotations must be an object")
    raw_points = doc["data_points"]
    if not isinstance(raw_points, list) or not raw_points:
        raise _syntax("data_points must be a non-empty list")
    raw_rules = doc.get("validations", [])
    if not isinstance(raw_rules, list):
        raise _syntax("validations must be a list")

    points: list[DataPointDef] = []
    defined: dict[str, str] = {}
    for i, raw in enumerate(raw_points):
        points.append(_parse_point(raw, i, defined))

    rules = []
    rule_ids = set()
    for i, raw in enumerate(raw_rules):
        if not isinstance(raw, dict) or set(raw) != {"rule_id", "expr", "severity"}:
            raise _syntax(f"validations[{i}] needs exactly rule_id, expr, severity")
        rid = raw["rule_id"]
        if not isinstance(rid, str) or not _ID.fullmatch(rid):
            raise _syntax(f"validations[{i}].rule_id must be an identifier")
        if rid in rule_ids:
            raise TemplateError("DUPLICATE_ID", f"rule {rid!r} defined twice")
        rule_ids.add(rid)
        try:
            severity = Severity(raw["severity"])
        except (ValueError, TypeError):
            raise _syntax(f"validations[{i}].severity must be ERROR or WARNING") from None
        node = _expr(raw["expr"], f"rule {rid}", defined, allow_division=True, want=E.BOOL)
        rules.append(ValidationRule(rid, node, severity))

    return ReportTemplate(tid, version, freq, tuple(points), tuple(rules), annotations)


def _parse_point(raw, i: int, defined: dict) -> DataPointDef:
    if not isinstance(raw, dict):
        raise _syntax(f"data_points[{i}] must be an object")
    dp_id = raw.get("id")
    if not isinstance(dp_id, str) or not _ID.fullmatch(dp_id):
        raise _syntax(f"data_points[{i}].id must be an identifier")
    if dp_id in defined:
        raise TemplateError("DUPLICATE_ID", f"data point {dp_id!r} defined twice")
    try:
        source = Source(raw.get("source"))
    except (ValueError, TypeError):
        raise _syntax(f"{dp_id}: source must be RECORDS, FIGURES or DERIVED") from None
    required, optional = _DP_KEYS[source]
    keys = set(raw)
    if not required <= keys or keys - required - optional:
        raise _syntax(f"{dp_id}: {source.value} points take keys {sorted(required | optional)}")

    if source is Source.DERIVED:
        node = _expr(raw["derive"], dp_id, defined, allow_division=True, want=E.NUM,
                     unknown_code="FORWARD_REFERENCE")
        dp = DataPointDef(dp_id, source, derive=node)
    else:
        try:
            agg = Agg(raw["agg"])
        except (ValueError, TypeError):
            raise _syntax(f"{dp_id}: unknown aggregation {raw['agg']!r}") from None
        env = RECORD_FIELDS if source is Source.RECORDS else FIGURE_FIELDS
        measure = _expr(raw["measure"], dp_id, env, allow_division=False, want=E.NUM)
        flt = None
        if "filter" in raw:
            flt = _expr(raw["filter"], f"{dp_id} filter", env, allow_division=False, want=E.BOOL)
        dp = DataPointDef(dp_id, source, agg=agg, measure=measure, filter=flt)
    defined[dp_id] = E.NUM
    return dp


def serialize_template(template: ReportTemplate) -> str:
    return json.dumps(template.to_dict(), indent=2, sort_keys=True, ensure_ascii=False) + "\n"


def load_template(path) -> ReportTemplate:
    with open(path, "rb") as fh:
        return parse_template(fh.read())


# -- report instances -----------------------------------------------------------


@dataclass(frozen=True)
class ValidationResult:
    rule_id: str
    passed: bool
    severity: Severity

    def to_dict(self) -> dict:
        return {"rule_id": self.rule_id, "passed": self.passed, "severity": self.severity.value}


@dataclass
class ReportInstance:
    template_id: str
    version: str
    scope: Optional[Scope]
    as_of_height: int
    values: dict
    validation_results: list
    support: dict = field(default_factory=dict)
    template: Optional[ReportTemplate] = field(default=None, repr=False, compare=False)

    @property
    def submittable(self) -> bool:
        return not any(not r.passed and r.severity is Severity.ERROR for r in self.validation_results)

    @property
    def status(self) -> str:
        return "SUBMITTABLE" if self.submittable else "NOT_SUBMITTABLE"

    def error_failures(self) -> list[ValidationResult]:
        return [r for r in self.validation_results if not r.passed and r.severity is Severity.ERROR]

    def to_dict(self) -> dict:
        return {
            "template_id": self.template_id,
            "version": self.version,
            "scope": self.scope.to_dict() if self.scope else None,
            "as_of_height": self.as_of_height,
            "values": {k: json_number(v) for k, v in self.values.items()},
            "support": dict(self.support),
            "validation_results": [r.to_dict() for r in self.validation_results],
            "status": self.status,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), sort_keys=True, separators=(",", ":"))


class _Compiled:
    """Per-template cache of compiled closures."""

    def __init__(self, template: ReportTemplate):
        self.points = []
        for dp in template.data_points:
            if dp.source is Source.DERIVED:
                self.points.append((dp, E.compile_expr(dp.derive), None))
            else:
                flt = E.compile_expr(dp.filter) if dp.filter is not None else None
                self.points.append((dp, E.compile_expr(dp.measure), flt))
        self.rules = [(r, E.compile_expr(r.expr)) for r in template.validations]


_compiled_cache: dict[int, tuple[ReportTemplate, _Compiled]] = {}


def _compiled(template: ReportTemplate) -> _Compiled:
    hit = _compiled_cache.get(id(template))
    if hit is None or hit[0] is not template:
        hit = (template, _Compiled(template))
        _compiled_cache[id(template)] = hit
    return hit[1]


def _aggregate(agg: Agg, rows: Sequence[Mapping], measure, flt) -> tuple[Fraction, int]:
    log: list = []
    if flt is not None:
        rows = [r for r in rows if flt(r, log)]
    n = len(rows)
    if agg is Agg.COUNT:
        return Fraction(n), n
    if not n:
        return Fraction(0), 0
    if agg is Agg.LATEST:
        return Fraction(measure(rows[-1], log)), n
    vals = [measure(r, log) for r in rows]
    if agg is Agg.SUM:
        return Fraction(sum(vals)), n
    if agg is Agg.MAX:
        return Fraction(max(vals)), n
    return Fraction(min(vals)), n


def _evaluate_derived(template: ReportTemplate, compiled: _Compiled, values: dict,
                      results: list) -> None:
    for dp, fn, _ in compiled.points:
        if dp.source is not Source.DERIVED:
            continue
        log: list = []
        values[dp.id] = Fraction(fn(values, log))
        if log:
            results.append(ValidationResult(f"DIV0:{dp.id}", False, Severity.WARNING))


def _evaluate_rules(compiled: _Compiled, values: Mapping) -> list[ValidationResult]:
    out = []
    for rule, fn in compiled.rules:
        log: list = []
        passed = bool(fn(values, log))
        out.append(ValidationResult(rule.rule_id, passed, rule.severity))
        if log:
            out.append(ValidationResult(f"DIV0:{rule.rule_id}", False, Severity.WARNING))
    return out


def execute(template: ReportTemplate, records: Sequence[Mapping], figures: Sequence[Mapping],
            scope: Optional[Scope] = None, as_of_height: int = 0) -> ReportInstance:
    """Run ``template`` over immutable record and figure views."""
    compiled = _compiled(template)
    values: dict[str, Fraction] = {}
    support: dict[str, int] = {}
    results: list[ValidationResult] = []
    for dp, measure, flt in compiled.points:
        if dp.source is Source.DERIVED:
            continue
        rows = records if dp.source is Source.RECORDS else figures
        values[dp.id], support[dp.id] = _aggregate(dp.agg, rows, measure, flt)
    # keep template order in the value mapping
    ordered = {dp.id: values.get(dp.id) for dp in template.data_points}
    _evaluate_derived(template, compiled, ordered, results)
    results.extend(_evaluate_rules(compiled, ordered))
    return ReportInstance(template.template_id, template.version, scope, as_of_height,
                          ordered, results, support, template)


def validate(instance: ReportInstance, template: ReportTemplate | None = None) -> list[ValidationResult]:
    """Re-evaluate the template's rules on the instance's current values; return failures."""
    template = template or instance.template
    if template is None:
        raise ValueError("instance carries no template; pass one explicitly")
    return [r for r in _evaluate_rules(_compiled(template), instance.values) if not r.passed]


def compose(template: ReportTemplate, children: Sequence[ReportInstance], scope: Scope,
            as_of_height: int, scope_records: Sequence[Mapping] | None = None,
            scope_figures: Sequence[Mapping] | None = None) -> ReportInstance:
    """Build a parent-scope instance from child instances.

    SUM/COUNT add, MAX/MIN fold over children that aggregated at least one row,
    LATEST is recomputed over the scope-level views, DERIVED is recomputed
    from the composed values; validations are evaluated afresh.
    """
    compiled = _compiled(template)
    values: dict[str, Fraction] = {}
    support: dict[str, int] = {}
    results: list[ValidationResult] = []
    for dp, measure, flt in compiled.points:
        if dp.source is Source.DERIVED:
            values[dp.id] = None
            continue
        support[dp.id] = sum(c.support.get(dp.id, 0) for c in children)
        if dp.agg in ADDITIVE:
            values[dp.id] = sum((c.values[dp.id] for c in children), Fraction(0))
        elif dp.agg in FOLDABLE:
            populated = [c.values[dp.id] for c in children if c.support.get(dp.id, 0)]
            fold = max if dp.agg is Agg.MAX else min
            values[dp.id] = fold(populated) if populated else Fraction(0)
        else:
            if scope_records is None or scope_figures is None:
                raise ValueError(f"{dp.id} is {dp.agg.value}; scope-level views are required")
            rows = scope_records if dp.source is Source.RECORDS else scope_figures
            values[dp.id], support[dp.id] = _aggregate(dp.agg, rows, measure, flt)
    _evaluate_derived(template, compiled, values, results)
    results.extend(_evaluate_rules(compiled, values))
    return ReportInstance(template.template_id, template.version, scope, as_of_height,
                          values, results, support, template)
