"""Append-only store of enriched records, the scope hierarchy, and role-based
masking of everything read out of it.

Records are kept in ledger order. A query at ``as_of`` only ever sees the
prefix of records at heights ``<= as_of``; since that prefix is immutable once
the head has passed ``as_of``, results are snapshot-stable.
"""

from __future__ import annotations

import bisect
import hashlib
import hmac
import json
import os
import threading
from dataclasses import dataclass, field, replace
from enum import Enum
from pathlib import Path
from typing import Iterable, Optional

from .composer import EXTERNAL, EnrichedRecord
from .errors import RegistryError, WarehouseError
from .mrer import ReportInstance, ReportTemplate, compose, execute
from .registry import HQLA_HAIRCUT_WEIGHTS, HqlaLevel, Registry
from .scope import Level, Scope

__all__ = [
    "Clearance", "Level", "MaskingPolicy", "Role", "RoleKind", "Scope", "Warehouse", "authorize",
    "leg_rows", "mask", "pseudonym",
]


class RoleKind(str, Enum):
    BANK = "BANK"
    NCA = "NCA"
    NCB = "NCB"
    NRA = "NRA"
    EBA = "EBA"
    ECB = "ECB"
    SRB = "SRB"
    OPERATOR = "OPERATOR"


class Clearance(str, Enum):
    GRANULAR_OWN = "GRANULAR_OWN"
    GRANULAR_JURISDICTION = "GRANULAR_JURISDICTION"
    AGGREGATE_ALL = "AGGREGATE_ALL"
    GRANULAR_ALL = "GRANULAR_ALL"
    NONE = "NONE"


NATIONAL_KINDS = frozenset({RoleKind.NCA, RoleKind.NCB, RoleKind.NRA})
SUPRANATIONAL_KINDS = frozenset({RoleKind.EBA, RoleKind.ECB, RoleKind.SRB})
DEFAULT_CLEARANCE = {
    RoleKind.BANK: Clearance.GRANULAR_OWN,
    **{k: Clearance.GRANULAR_JURISDICTION for k in NATIONAL_KINDS},
    **{k: Clearance.AGGREGATE_ALL for k in SUPRANATIONAL_KINDS},
    RoleKind.OPERATOR: Clearance.NONE,
}


@dataclass(frozen=True)
class Role:
    role_id: str
    kind: RoleKind
    jurisdiction: Optional[str] = None
    lei: Optional[str] = None
    clearance: Optional[Clearance] = None

    def __post_init__(self):
        kind = RoleKind(self.kind)
        object.__setattr__(self, "kind", kind)
        clearance = Clearance(self.clearance) if self.clearance else DEFAULT_CLEARANCE[kind]
        if clearance is not DEFAULT_CLEARANCE[kind] and clearance is not Clearance.GRANULAR_ALL:
            raise ValueError(f"{kind.value} roles cannot hold {clearance.value}")
        if clearance is Clearance.GRANULAR_ALL and kind is RoleKind.OPERATOR:
            raise ValueError("operator tokens carry no data clearance")
        object.__setattr__(self, "clearance", clearance)
        if kind is RoleKind.BANK and not self.lei:
            raise ValueError("BANK roles need a lei")
        if kind is not RoleKind.BANK and self.lei:
            raise ValueError("only BANK roles carry a lei")
        if kind in NATIONAL_KINDS and not self.jurisdiction:
            raise ValueError(f"{kind.value} roles need a jurisdiction")

    @classmethod
    def from_dict(cls, d: dict) -> "Role":
        return cls(d["role_id"], d["kind"], d.get("jurisdiction"), d.get("lei"), d.get("clearance"))


def _scope_jurisdiction(scope: Scope, registry: Registry) -> Optional[str]:
    if scope.level is Level.LOCAL:
        try:
            return registry.institution(scope.key).jurisdiction
        except RegistryError:
            return None
    return scope.key


def authorize(role: Role, endpoint: str, scope: Optional[Scope], registry: Registry) -> bool:
    """The access policy. ``endpoint`` is one of head, reports, records, audit."""
    if endpoint == "head":
        return True
    if endpoint == "audit":
        return role.kind is RoleKind.OPERATOR
    if endpoint not in ("reports", "records"):
        return False
    clearance = role.clearance
    if clearance is Clearance.NONE:
        return False
    if clearance is Clearance.GRANULAR_ALL:
        return True
    if clearance is Clearance.AGGREGATE_ALL:
        return endpoint == "reports"
    if clearance is Clearance.GRANULAR_OWN:
        return scope.level is Level.LOCAL and scope.key == role.lei
    # GRANULAR_JURISDICTION
    if scope.level is Level.SUPRANATIONAL:
        return False
    return _scope_jurisdiction(scope, registry) == role.jurisdiction


# -- masking --------------------------------------------------------------------


@dataclass(frozen=True)
class MaskingPolicy:
    pseudonym_key: bytes = b"dltreport-default-key"
    amount_bucket: int = 100
    truncate_fields: dict = field(default_factory=lambda: {
        Clearance.GRANULAR_JURISDICTION: ("amount",),
    })
    allow_granular_all: bool = False

    def __post_init__(self):
        if isinstance(self.pseudonym_key, str):
            object.__setattr__(self, "pseudonym_key", self.pseudonym_key.encode("utf-8"))
        if not self.pseudonym_key:
            raise ValueError("pseudonym_key must be non-empty")
        if self.amount_bucket <= 0:
            raise ValueError("amount_bucket must be positive")
        object.__setattr__(self, "truncate_fields",
                           {Clearance(k): tuple(v) for k, v in self.truncate_fields.items()})

    @classmethod
    def from_dict(cls, d: dict) -> "MaskingPolicy":
        kw = {}
        if "pseudonym_key" in d:
            kw["pseudonym_key"] = d["pseudonym_key"]
        if "amount_bucket" in d:
            kw["amount_bucket"] = int(d["amount_bucket"])
        if "truncate_fields" in d:
            kw["truncate_fields"] = d["truncate_fields"]
        if "allow_granular_all" in d:
            kw["allow_granular_all"] = bool(d["allow_granular_all"])
        return cls(**kw)

    @classmethod
    def load(cls, path) -> "MaskingPolicy":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))


def pseudonym(key: bytes, value: str) -> str:
    """Keyed pseudonym: HMAC-SHA-256 over the UTF-8 value, first 16 hex chars."""
    return hmac.new(key, value.encode("utf-8"), hashlib.sha256).hexdigest()[:16]


def truncate(amount: int, bucket: int) -> int:
    return (amount // bucket) * bucket


_LEI_FIELDS = ("from_lei", "to_lei", "from_counterparty", "to_counterparty")


def mask(record: EnrichedRecord, role: Role, policy: MaskingPolicy,
         clear_leis: Iterable[str] = ()) -> dict:
    """Masked JSON-ready view of one record for ``role``.

    ``clear_leis`` are the institutions inside the role's clearance; every other
    lei and every address not owned by a cleared institution is pseudonymised.
    """
    d = record.to_dict()
    if role.clearance is Clearance.GRANULAR_ALL:
        return d
    if role.clearance not in (Clearance.GRANULAR_OWN, Clearance.GRANULAR_JURISDICTION):
        raise WarehouseError("UNAUTHORIZED_SCOPE", f"{role.kind.value} receives no record-level data")
    clear = set(clear_leis)
    key = policy.pseudonym_key
    for f in _LEI_FIELDS:
        v = d[f]
        if v is not None and v != EXTERNAL and v not in clear:
            d[f] = pseudonym(key, v)
    for side in ("from", "to"):
        addr = d[f"{side}_address"]
        if addr is not None and getattr(record, f"{side}_lei") not in clear:
            d[f"{side}_address"] = pseudonym(key, addr)
    for f in policy.truncate_fields.get(role.clearance, ()):
        if isinstance(d.get(f), int):
            d[f] = truncate(d[f], policy.amount_bucket)
    return d


# -- record view ----------------------------------------------------------------


def leg_rows(rec: EnrichedRecord) -> list[dict]:
    """One template row per participating side of ``rec`` (OUT before IN)."""
    rows = []
    sides = (("OUT", rec.from_lei, rec.jurisdiction_from, rec.from_counterparty, -1),
             ("IN", rec.to_lei, rec.jurisdiction_to, rec.to_counterparty, 1))
    for direction, lei, jur, cp, sign in sides:
        if lei is None:
            continue
        if cp is None:
            cp_type, cp = "NONE", ""
        elif cp == EXTERNAL:
            cp_type = "EXTERNAL"
        else:
            cp_type = "REGISTERED"
        rows.append({
            "lei": lei,
            "jurisdiction": jur,
            "counterparty": cp,
            "counterparty_type": cp_type,
            "direction": direction,
            "amount": rec.amount,
            "signed_amount": sign * rec.amount,
            "kind": rec.kind,
            "asset_id": rec.asset_id,
            "exposure_class": rec.exposure_class,
            "risk_weight": _int_if_whole(rec.risk_weight),
            "hqla_level": rec.hqla_level,
            "hqla_weight": _int_if_whole(HQLA_HAIRCUT_WEIGHTS[HqlaLevel(rec.hqla_level)]),
            "outflow_factor": _int_if_whole(rec.outflow_factor),
            "inflow_factor": _int_if_whole(rec.inflow_factor),
            "height": rec.height,
            "index_in_block": rec.index_in_block,
            "contract_tag": rec.contract_tag or "",
            "classified": not rec.warnings,
        })
    return rows


def _int_if_whole(x):
    # plain ints keep the hot arithmetic path off Fraction where possible
    return x.numerator if x.denominator == 1 else x


class _LegIndex:
    __slots__ = ("heights", "rows")

    def __init__(self):
        self.heights: list[int] = []
        self.rows: list[dict] = []

    def add(self, row: dict) -> None:
        self.heights.append(row["height"])
        self.rows.append(row)

    def upto(self, height: int) -> list[dict]:
        return self.rows[:bisect.bisect_right(self.heights, height)]


class Warehouse:
    def __init__(self, registry: Registry, policy: MaskingPolicy | None = None,
                 templates: Iterable[ReportTemplate] = ()):
        self.registry = registry
        self.policy = policy or MaskingPolicy()
        self._lock = threading.RLock()
        self._records: list[EnrichedRecord] = []
        self._heights: list[int] = []
        self._by_lei: dict[str, _LegIndex] = {}
        self._by_jurisdiction: dict[str, _LegIndex] = {}
        self._all_legs = _LegIndex()
        self.cursor: tuple[int, int] = (-1, -1)
        self.head: int = -1
        self._templates: dict[str, ReportTemplate] = {}
        self._cache: dict = {}
        for t in templates:
            self.register_template(t)

    # -- writes ------------------------------------------------------------------

    def _check_order(self, records: list[EnrichedRecord]) -> None:
        last = self._records[-1].position if self._records else (-1, -1)
        for rec in records:
            if rec.position <= last:
                raise WarehouseError("OUT_OF_ORDER_APPEND", f"{rec.position} after {last}")
            last = rec.position

    def _store(self, rec: EnrichedRecord) -> None:
        self._records.append(rec)
        self._heights.append(rec.height)
        for row in leg_rows(rec):
            self._by_lei.setdefault(row["lei"], _LegIndex()).add(row)
            self._by_jurisdiction.setdefault(row["jurisdiction"], _LegIndex()).add(row)
            self._all_legs.add(row)

    def append(self, record: EnrichedRecord) -> None:
        with self._lock:
            self._check_order([record])
            self._store(record)

    def commit(self, records: list[EnrichedRecord], cursor: tuple[int, int], head: int) -> None:
        """Append a batch and advance the consumer cursor as one unit."""
        with self._lock:
            if tuple(cursor) < self.cursor:
                raise WarehouseError("CURSOR_REGRESSION", f"{cursor} < {self.cursor}")
            if head < self.head:
                raise WarehouseError("CURSOR_REGRESSION", f"head {head} < {self.head}")
            self._check_order(records)
            for rec in records:
                self._store(rec)
            self.cursor = tuple(cursor)
            self.head = head

    # -- reads -------------------------------------------------------------------

    def records(self, as_of: int | None = None) -> list[EnrichedRecord]:
        with self._lock:
            if as_of is None:
                return list(self._records)
            return self._records[:bisect.bisect_right(self._heights, as_of)]

    def __len__(self) -> int:
        return len(self._records)

    def _check_height(self, as_of: int) -> None:
        if as_of < 0 or as_of > self.head:
            raise WarehouseError("HEIGHT_BEYOND_HEAD", f"as_of {as_of} outside [0, {self.head}]")

    def _institutions_in(self, scope: Scope, as_of: int) -> list[str]:
        if scope.level is Level.LOCAL:
            self._known_lei(scope.key)
            return [scope.key]
        out = []
        for inst in self.registry.institutions():
            if inst.opt_in_height > as_of:
                continue
            if scope.level is Level.NATIONAL and inst.jurisdiction != scope.key:
                continue
            out.append(inst.lei)
        return out

    def _known_lei(self, lei: str) -> None:
        try:
            self.registry.institution(lei)
        except RegistryError as exc:
            if exc.code == "UNKNOWN_LEI":
                raise WarehouseError("UNKNOWN_SCOPE", f"no institution {lei}") from None
            raise

    def record_view(self, scope: Scope, as_of: int) -> list[dict]:
        """Template rows in scope at ``as_of``; ``age`` is relative to ``as_of``."""
        with self._lock:
            if scope.level is Level.LOCAL:
                index = self._by_lei.get(scope.key)
            elif scope.level is Level.NATIONAL:
                index = self._by_jurisdiction.get(scope.key)
            else:
                index = self._all_legs
            rows = index.upto(as_of) if index is not None else []
        return [{**r, "age": as_of - r["height"]} for r in rows]

    def figure_view(self, scope: Scope, as_of: int) -> list[dict]:
        rows = []
        for lei in self._institutions_in(scope, as_of):
            inst = self.registry.institution(lei)
            if inst.opt_in_height > as_of:
                continue
            try:
                f = self.registry.figures_at(lei, as_of)
            except RegistryError as exc:
                if exc.code == "NO_FIGURES_EFFECTIVE":
                    continue
                raise
            rows.append({"lei": lei, "jurisdiction": inst.jurisdiction, "tier1": f.tier1,
                         "cet1": f.cet1, "hqla": f.hqla, "effective_height": f.effective_height})
        rows.sort(key=lambda r: (r["effective_height"], r["lei"]))
        return rows

    def clear_leis(self, role: Role) -> set[str]:
        if role.clearance is Clearance.GRANULAR_OWN:
            return {role.lei}
        if role.clearance is Clearance.GRANULAR_JURISDICTION:
            return {i.lei for i in self.registry.institutions() if i.jurisdiction == role.jurisdiction}
        if role.clearance is Clearance.GRANULAR_ALL:
            return {i.lei for i in self.registry.institutions()}
        return set()

    def _check_clearance(self, role: Role) -> None:
        if role.clearance is Clearance.GRANULAR_ALL and not self.policy.allow_granular_all:
            raise WarehouseError("UNAUTHORIZED_SCOPE", "GRANULAR_ALL is disabled by policy")

    def query_records(self, scope: Scope, as_of: int, role: Role) -> list[dict]:
        self._check_clearance(role)
        if not authorize(role, "records", scope, self.registry):
            raise WarehouseError("UNAUTHORIZED_SCOPE", f"{role.role_id} may not read records of {scope}")
        self._check_height(as_of)
        if scope.level is Level.LOCAL:
            self._known_lei(scope.key)
        clear = self.clear_leis(role)
        out = []
        for rec in self.records(as_of):
            if scope.level is Level.LOCAL and scope.key not in (rec.from_lei, rec.to_lei):
                continue
            if scope.level is Level.NATIONAL and scope.key not in (rec.jurisdiction_from, rec.jurisdiction_to):
                continue
            out.append(mask(rec, role, self.policy, clear))
        return out

    # -- reports -----------------------------------------------------------------

    def register_template(self, template: ReportTemplate) -> None:
        self._templates[template.template_id] = template

    def template(self, template_id: str) -> ReportTemplate:
        try:
            return self._templates[template_id]
        except KeyError:
            raise WarehouseError("UNKNOWN_TEMPLATE", template_id) from None

    @property
    def template_ids(self) -> list[str]:
        return sorted(self._templates)

    def aggregate_report(self, template: ReportTemplate | str, scope: Scope, as_of: int) -> ReportInstance:
        if isinstance(template, str):
            template = self.template(template)
        self._check_height(as_of)
        inst = self._report(template, scope, as_of)
        return replace(inst, values=dict(inst.values), validation_results=list(inst.validation_results),
                       support=dict(inst.support))

    def _report(self, template: ReportTemplate, scope: Scope, as_of: int) -> ReportInstance:
        key = (template.template_id, template.version, id(template), scope, as_of)
        hit = self._cache.get(key)
        if hit is not None:
            return hit
        if scope.level is Level.LOCAL:
            self._known_lei(scope.key)
            inst = execute(template, self.record_view(scope, as_of), self.figure_view(scope, as_of),
                           scope, as_of)
        else:
            if scope.level is Level.NATIONAL:
                children = [self._report(template, Scope.local(lei), as_of)
                            for lei in self._institutions_in(scope, as_of)]
            else:
                children = [self._report(template, Scope.national(j), as_of)
                            for j in self.registry.jurisdictions()]
            rows = figs = None
            if template.needs_scope_view:
                rows, figs = self.record_view(scope, as_of), self.figure_view(scope, as_of)
            inst = compose(template, children, scope, as_of, rows, figs)
        self._cache[key] = inst
        return inst

    # -- export / persistence ----------------------------------------------------

    def export_text(self) -> str:
        """Unmasked newline-delimited JSON of all records (operator use)."""
        return "".join(json.dumps(r.to_dict(), sort_keys=True, separators=(",", ":")) + "\n"
                       for r in self.records())

    def export_masked(self, role: Role, as_of: int | None = None) -> str:
        as_of = self.head if as_of is None else as_of
        clear = self.clear_leis(role)
        return "".join(json.dumps(mask(r, role, self.policy, clear), sort_keys=True,
                                  separators=(",", ":")) + "\n" for r in self.records(as_of))

    def save(self, directory) -> None:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        with self._lock:
            _atomic_write(directory / "warehouse.ndjson", self.export_text())
            _atomic_write(directory / "warehouse_state.json",
                          json.dumps({"cursor": list(self.cursor), "head": self.head}) + "\n")

    @classmethod
    def load(cls, directory, registry: Registry, **kw) -> "Warehouse":
        directory = Path(directory)
        wh = cls(registry, **kw)
        state = json.loads((directory / "warehouse_state.json").read_text())
        records = [EnrichedRecord.from_dict(json.loads(line))
                   for line in (directory / "warehouse.ndjson").read_text().splitlines() if line.strip()]
        wh.commit(records, tuple(state["cursor"]), state["head"])
        return wh


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(text, encoding="utf-8")
    os.replace(tmp, path)
