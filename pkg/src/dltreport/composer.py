"""The Composer: turns the ledger's event stream into enriched warehouse records.

Events touching no participating institution are skipped. Everything else is
joined with registry data *as of the event height* and committed to the
warehouse together with the advanced cursor, one atomic batch at a time.
"""

from __future__ import annotations

import bisect
import logging
from collections import defaultdict
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Optional

from .errors import ComposerError
from .ledger import Ledger, OnChainEvent, TxKind
from .numeric import fraction_text, json_number, to_fraction
from .registry import HQLA_HAIRCUT_WEIGHTS, HqlaLevel, Registry, unclassified

log = logging.getLogger(__name__)

EXTERNAL = "EXTERNAL"
UNCLASSIFIED_WARNING = "UNCLASSIFIED_ASSET"
LCR_INFLOW_CAP = Fraction(3, 4)
LARGE_EXPOSURE_LIMIT = Fraction(1, 4)


@dataclass(frozen=True)
class EnrichedRecord:
    height: int
    index_in_block: int
    tx_id: str
    kind: str
    asset_id: str
    amount: int
    from_address: Optional[str]
    to_address: Optional[str]
    from_lei: Optional[str]
    to_lei: Optional[str]
    from_counterparty: Optional[str]
    to_counterparty: Optional[str]
    jurisdiction_from: Optional[str]
    jurisdiction_to: Optional[str]
    exposure_class: str
    risk_weight: Fraction
    hqla_level: str
    outflow_factor: Fraction
    inflow_factor: Fraction
    contract_tag: Optional[str] = None
    warnings: tuple = ()

    @property
    def position(self) -> tuple[int, int]:
        return (self.height, self.index_in_block)

    _RATIONAL = ("risk_weight", "outflow_factor", "inflow_factor")

    def to_dict(self) -> dict:
        d = {k: getattr(self, k) for k in self.__dataclass_fields__}
        for k in self._RATIONAL:
            d[k] = fraction_text(d[k])
        d["warnings"] = list(self.warnings)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "EnrichedRecord":
        d = dict(d)
        for k in cls._RATIONAL:
            d[k] = to_fraction(d[k])
        d["warnings"] = tuple(d.get("warnings", ()))
        return cls(**d)


def _counterparty(own: Optional[str], other_lei: Optional[str], other_address: Optional[str]):
    if own is None:
        return None
    if other_lei is not None:
        return other_lei
    return None if other_address is None else EXTERNAL


def enrich(event: OnChainEvent, registry: Registry, *, strict: bool = False) -> Optional[EnrichedRecord]:
    """Join one event with registry data at the event height; ``None`` means skip."""
    h = event.height
    from_lei = registry.participant(event.sender, h)
    to_lei = registry.participant(event.receiver, h)
    if from_lei is None and to_lei is None:
        return None
    cls = registry.classification_at(event.asset_id, h)
    warnings: tuple = ()
    if cls is None:
        if strict:
            raise ComposerError("UNCLASSIFIED_ASSET", f"{event.asset_id} at height {h}")
        log.warning("asset %s unclassified at height %d; treating as OTHER", event.asset_id, h)
        cls = unclassified(event.asset_id)
        warnings = (UNCLASSIFIED_WARNING,)
    return EnrichedRecord(
        height=h,
        index_in_block=event.index_in_block,
        tx_id=event.tx_id,
        kind=event.kind.value,
        asset_id=event.asset_id,
        amount=event.amount,
        from_address=event.sender,
        to_address=event.receiver,
        from_lei=from_lei,
        to_lei=to_lei,
        from_counterparty=_counterparty(from_lei, to_lei, event.receiver),
        to_counterparty=_counterparty(to_lei, from_lei, event.sender),
        jurisdiction_from=registry.institution(from_lei).jurisdiction if from_lei else None,
        jurisdiction_to=registry.institution(to_lei).jurisdiction if to_lei else None,
        exposure_class=cls.exposure_class.value,
        risk_weight=cls.risk_weight,
        hqla_level=cls.hqla_level.value,
        outflow_factor=cls.outflow_factor,
        inflow_factor=cls.inflow_factor,
        contract_tag=event.contract_tag,
        warnings=warnings,
    )


class _Series:
    """Step function of height: parallel sorted heights and values."""

    __slots__ = ("heights", "values")

    def __init__(self):
        self.heights: list[int] = []
        self.values: list = []

    def add(self, height: int, delta) -> None:
        last = self.values[-1] if self.values else 0
        if self.heights and self.heights[-1] == height:
            self.values[-1] = last + delta
        else:
            self.heights.append(height)
            self.values.append(last + delta)

    def at(self, height: int):
        i = bisect.bisect_right(self.heights, height)
        return self.values[i - 1] if i else 0


class PositionLedger:
    """Running per-institution positions, counterparty exposures and weighted flows."""

    def __init__(self):
        self.positions: dict[str, dict[str, _Series]] = defaultdict(dict)
        self.exposures: dict[str, dict[str, _Series]] = defaultdict(dict)
        self.outflows: dict[str, _Series] = defaultdict(_Series)
        self.inflows: dict[str, _Series] = defaultdict(_Series)

    def apply(self, rec: EnrichedRecord) -> None:
        h = rec.height
        if rec.from_lei is not None:
            self.positions[rec.from_lei].setdefault(rec.asset_id, _Series()).add(h, -rec.amount)
            self.outflows[rec.from_lei].add(h, rec.amount * rec.outflow_factor)
        if rec.to_lei is not None:
            self.positions[rec.to_lei].setdefault(rec.asset_id, _Series()).add(h, rec.amount)
            self.inflows[rec.to_lei].add(h, rec.amount * rec.inflow_factor)
        if rec.kind in (TxKind.TRANSFER.value, TxKind.CONTRACT_CALL.value):
            for lei, cp in ((rec.from_lei, rec.from_counterparty), (rec.to_lei, rec.to_counterparty)):
                if lei is not None and cp is not None and cp != lei:
                    self.exposures[lei].setdefault(cp, _Series()).add(h, rec.amount)

    def positions_at(self, lei: str, height: int) -> dict[str, int]:
        return {a: s.at(height) for a, s in sorted(self.positions.get(lei, {}).items())}

    def exposures_at(self, lei: str, height: int) -> dict[str, int]:
        return {cp: s.at(height) for cp, s in sorted(self.exposures.get(lei, {}).items())}

    def window_flows(self, lei: str, height: int, window: int) -> tuple[Fraction, Fraction]:
        """Weighted (outflows, inflows) over heights in ``(height - window, height]``."""
        out = self.outflows.get(lei)
        inn = self.inflows.get(lei)
        o = (out.at(height) - out.at(height - window)) if out else 0
        i = (inn.at(height) - inn.at(height - window)) if inn else 0
        return Fraction(o), Fraction(i)


@dataclass
class MetricSet:
    lei: str
    as_of_height: int
    leverage_ratio: Fraction
    cet1_ratio: Fraction
    lcr: Fraction
    total_rwa: Fraction
    total_exposure: int
    hqla_adjusted: Fraction
    net_outflows: Fraction
    large_exposure_flags: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "lei": self.lei,
            "as_of_height": self.as_of_height,
            "leverage_ratio": json_number(self.leverage_ratio),
            "cet1_ratio": json_number(self.cet1_ratio),
            "lcr": json_number(self.lcr),
            "total_rwa": json_number(self.total_rwa),
            "total_exposure": self.total_exposure,
            "hqla_adjusted": json_number(self.hqla_adjusted),
            "net_outflows": json_number(self.net_outflows),
            "large_exposure_flags": [
                {"counterparty": c, "exposure": e, "limit": json_number(lim)}
                for c, e, lim in self.large_exposure_flags
            ],
        }


def metrics_from_inputs(lei, as_of_height, figures, positions, classifications, outflows, inflows,
                        exposures, *, inflow_cap=LCR_INFLOW_CAP,
                        large_exposure_limit=LARGE_EXPOSURE_LIMIT) -> MetricSet:
    """Apply the prudential formulas to already-gathered inputs.

    ``classifications`` maps asset id to the classification in force at the
    as-of height.
    """
    total_exposure = 0
    total_rwa = Fraction(0)
    hqla_from_positions = Fraction(0)
    for asset, p in positions.items():
        if p <= 0:
            continue
        c = classifications[asset]
        total_exposure += p
        total_rwa += p * c.risk_weight
        hqla_from_positions += p * HQLA_HAIRCUT_WEIGHTS[HqlaLevel(c.hqla_level)]
    leverage = Fraction(figures.tier1, total_exposure) if total_exposure else Fraction(0)
    cet1_ratio = Fraction(figures.cet1) / total_rwa if total_rwa else Fraction(0)
    hqla_adjusted = hqla_from_positions + figures.hqla
    net = outflows - min(inflows, inflow_cap * outflows)
    lcr = hqla_adjusted / max(net, Fraction(1))
    limit = large_exposure_limit * figures.tier1
    flags = [(cp, e, limit) for cp, e in sorted(exposures.items()) if e > limit]
    return MetricSet(lei, as_of_height, leverage, cet1_ratio, lcr, total_rwa, total_exposure,
                     hqla_adjusted, net, flags)


class Composer:
    """Single consumer of the ledger stream; the warehouse persists its cursor.

    ``drop_every`` is a fault-injection knob for oracle-sensitivity tests: when
    set to *n*, every *n*-th enriched record is silently discarded.
    """

    def __init__(self, ledger: Ledger, registry: Registry, warehouse, *, strict: bool = False,
                 lcr_window: int = 30, drop_every: int | None = None):
        self.ledger = ledger
        self.registry = registry
        self.warehouse = warehouse
        self.strict = strict
        self.lcr_window = lcr_window
        self.drop_every = drop_every
        self._enriched_seen = 0
        self.book = PositionLedger()
        for rec in warehouse.records():
            self.book.apply(rec)

    def step(self, max_events: int | None = None) -> int:
        """Process one atomic batch; returns records appended (0 when drained)."""
        sub = self.ledger.subscribe(self.warehouse.cursor)
        events = sub.peek(max_events)
        if not events:
            frontier = sub.frontier()
            if frontier > self.warehouse.head:
                self.warehouse.commit([], self.warehouse.cursor, frontier)
            return 0
        records = []
        seen = self._enriched_seen
        for ev in events:
            rec = enrich(ev, self.registry, strict=self.strict)  # may raise; nothing committed yet
            if rec is None:
                continue
            seen += 1
            if self.drop_every and seen % self.drop_every == 0:
                continue
            records.append(rec)
        cursor = events[-1].position
        self.warehouse.commit(records, cursor, sub.frontier(cursor))
        self._enriched_seen = seen
        for rec in records:
            self.book.apply(rec)
        return len(records)

    def run_to_head(self, batch_size: int | None = None) -> int:
        """Drain the stream in batches of ``batch_size`` events (``None``: one batch)."""
        total = 0
        while True:
            before = self.warehouse.cursor
            total += self.step(batch_size)
            if self.warehouse.cursor == before:
                return total

    # -- metrics -----------------------------------------------------------------

    def positions_at(self, lei: str, height: int) -> dict[str, int]:
        self.registry.institution(lei)
        return self.book.positions_at(lei, height)

    def compute_metrics(self, lei: str, as_of_height: int) -> MetricSet:
        if as_of_height > self.warehouse.head:
            raise ComposerError("HEIGHT_BEYOND_HEAD", f"{as_of_height} > {self.warehouse.head}")
        figures = self.registry.figures_at(lei, as_of_height)
        positions = self.book.positions_at(lei, as_of_height)
        classifications = {}
        for asset in positions:
            c = self.registry.classification_at(asset, as_of_height)
            classifications[asset] = c if c is not None else unclassified(asset)
        out, inn = self.book.window_flows(lei, as_of_height, self.lcr_window)
        return metrics_from_inputs(lei, as_of_height, figures, positions, classifications, out, inn,
                                   self.book.exposures_at(lei, as_of_height))


__all__ = ["Composer", "EXTERNAL", "EnrichedRecord", "MetricSet", "PositionLedger", "enrich",
           "metrics_from_inputs"]
