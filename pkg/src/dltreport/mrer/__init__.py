"""Machine-readable executable reporting templates."""

from pathlib import Path

from .expr import parse_expression, render
from .template import (
    ADDITIVE,
    FIGURE_FIELDS,
    RECORD_FIELDS,
    Agg,
    DataPointDef,
    ReportInstance,
    ReportTemplate,
    Severity,
    Source,
    ValidationResult,
    ValidationRule,
    compose,
    execute,
    load_template,
    parse_template,
    serialize_template,
    template_from_dict,
    validate,
)

TEMPLATE_DIR = Path(__file__).parent / "templates"
SHIPPED = ("OWN_FUNDS_MINI", "LIQUIDITY_MINI", "LARGE_EXPOSURES_MINI")


def shipped_templates() -> dict[str, ReportTemplate]:
    """The reference templates bundled with the package, keyed by id."""
    return {tid: load_template(TEMPLATE_DIR / f"{tid}.template.json") for tid in SHIPPED}


__all__ = [
    "ADDITIVE", "FIGURE_FIELDS", "RECORD_FIELDS", "SHIPPED", "TEMPLATE_DIR", "Agg", "DataPointDef",
    "ReportInstance", "ReportTemplate", "Severity", "Source", "ValidationResult", "ValidationRule",
    "compose", "execute", "load_template", "parse_expression", "parse_template", "render",
    "serialize_template", "shipped_templates", "template_from_dict", "validate",
]
