"""ITS Datastore: supervised institutions, address bindings, capital figures and
asset classifications, all versioned by block height.

Nothing is ever overwritten; a lookup at height ``h`` is a pure function of
the registry contents and ``h``.
"""

from __future__ import annotations

import bisect
import json
import re
import threading
from dataclasses import dataclass, field
from enum import Enum
from fractions import Fraction
from typing import Optional

from .errors import RegistryError, RegistryUnavailable
from .numeric import fraction_text, to_fraction

LEI_PATTERN = re.compile(r"^[A-Z0-9]{20}$")


class ExposureClass(str, Enum):
    SOVEREIGN = "SOVEREIGN"
    INSTITUTION = "INSTITUTION"
    CORPORATE = "CORPORATE"
    RETAIL = "RETAIL"
    OTHER = "OTHER"


class HqlaLevel(str, Enum):
    L1 = "L1"
    L2A = "L2A"
    L2B = "L2B"
    NONE = "NONE"


#: Scenario defaults in the shape of the Basel standardised approach.
DEFAULT_RISK_WEIGHTS = {
    ExposureClass.SOVEREIGN: Fraction(0),
    ExposureClass.INSTITUTION: Fraction(1, 5),
    ExposureClass.CORPORATE: Fraction(1),
    ExposureClass.RETAIL: Fraction(3, 4),
    ExposureClass.OTHER: Fraction(1),
}

HQLA_HAIRCUT_WEIGHTS = {
    HqlaLevel.L1: Fraction(1),
    HqlaLevel.L2A: Fraction(17, 20),
    HqlaLevel.L2B: Fraction(1, 2),
    HqlaLevel.NONE: Fraction(0),
}


@dataclass(frozen=True)
class CapitalFigures:
    tier1: int
    cet1: int
    hqla: int
    effective_height: int = 0

    def __post_init__(self):
        for name in ("tier1", "cet1", "hqla", "effective_height"):
            v = getattr(self, name)
            if isinstance(v, bool) or not isinstance(v, int) or v < 0:
                raise RegistryError("MALFORMED_FIGURES", f"{name} must be a non-negative int")
        if self.cet1 > self.tier1:
            raise RegistryError("MALFORMED_FIGURES", "cet1 exceeds tier1")


@dataclass
class InstitutionRecord:
    lei: str
    name: str
    jurisdiction: str
    authority_id: str
    opt_in_height: int = 0
    capital_figures: list[CapitalFigures] = field(default_factory=list)

    def __post_init__(self):
        if not isinstance(self.lei, str) or not LEI_PATTERN.match(self.lei):
            raise RegistryError("MALFORMED_LEI", repr(self.lei))
        if self.opt_in_height < 0:
            raise RegistryError("MALFORMED_INSTITUTION", "opt_in_height < 0")
        heights = [f.effective_height for f in self.capital_figures]
        if any(b <= a for a, b in zip(heights, heights[1:])):
            raise RegistryError("MALFORMED_INSTITUTION", "figure heights must strictly increase")


@dataclass(frozen=True)
class AddressBinding:
    address: str
    lei: str
    effective_height: int = 0
    revoked_height: Optional[int] = None

    def covers(self, height: int) -> bool:
        # revoked_height is the last height the binding is still in force
        if height < self.effective_height:
            return False
        return self.revoked_height is None or height <= self.revoked_height

    def overlaps(self, other: "AddressBinding") -> bool:
        inf = float("inf")
        a_end = inf if self.revoked_height is None else self.revoked_height
        b_end = inf if other.revoked_height is None else other.revoked_height
        return self.effective_height <= b_end and other.effective_height <= a_end


@dataclass(frozen=True)
class AssetClassification:
    asset_id: str
    exposure_class: ExposureClass
    risk_weight: Fraction
    hqla_level: HqlaLevel = HqlaLevel.NONE
    outflow_factor: Fraction = Fraction(0)
    inflow_factor: Fraction = Fraction(0)
    effective_height: int = 0

    def __post_init__(self):
        object.__setattr__(self, "exposure_class", ExposureClass(self.exposure_class))
        object.__setattr__(self, "hqla_level", HqlaLevel(self.hqla_level))
        for name in ("risk_weight", "outflow_factor", "inflow_factor"):
            object.__setattr__(self, name, to_fraction(getattr(self, name)))
        if not 0 <= self.risk_weight <= Fraction(25, 2):
            raise RegistryError("MALFORMED_ASSET", "risk_weight outside [0, 12.5]")
        for name in ("outflow_factor", "inflow_factor"):
            if not 0 <= getattr(self, name) <= 1:
                raise RegistryError("MALFORMED_ASSET", f"{name} outside [0, 1]")

    @property
    def hqla_weight(self) -> Fraction:
        return HQLA_HAIRCUT_WEIGHTS[self.hqla_level]


#: Fallback for assets with no classification in force.
def unclassified(asset_id: str) -> AssetClassification:
    return AssetClassification(asset_id, ExposureClass.OTHER, Fraction(1), HqlaLevel.NONE,
                               outflow_factor=Fraction(1), inflow_factor=Fraction(0))


class Registry:
    def __init__(self):
        self._lock = threading.RLock()
        self._institutions: dict[str, InstitutionRecord] = {}
        self._bindings: dict[str, list[AddressBinding]] = {}
        self._assets: dict[str, list[AssetClassification]] = {}
        self.online = True

    def _check_online(self):
        if not self.online:
            raise RegistryUnavailable()

    # -- writes ------------------------------------------------------------------

    def register_institution(self, record: InstitutionRecord) -> str:
        with self._lock:
            if record.lei in self._institutions:
                raise RegistryError("DUPLICATE_LEI", record.lei)
            # store a private copy so callers cannot mutate history
            self._institutions[record.lei] = InstitutionRecord(
                record.lei, record.name, record.jurisdiction, record.authority_id,
                record.opt_in_height, list(record.capital_figures))
            return record.lei

    def add_figures(self, lei: str, figures: CapitalFigures) -> None:
        with self._lock:
            inst = self.institution(lei)
            if inst.capital_figures and figures.effective_height <= inst.capital_figures[-1].effective_height:
                raise RegistryError("MALFORMED_FIGURES", "figures must be appended in height order")
            inst.capital_figures.append(figures)

    def bind_address(self, binding: AddressBinding) -> str:
        with self._lock:
            if not binding.address:
                raise RegistryError("MALFORMED_BINDING", "empty address")
            if binding.lei not in self._institutions:
                raise RegistryError("UNKNOWN_LEI", binding.lei)
            if binding.revoked_height is not None and binding.revoked_height < binding.effective_height:
                raise RegistryError("MALFORMED_BINDING", "revoked before effective")
            existing = self._bindings.setdefault(binding.address, [])
            for other in existing:
                if other.overlaps(binding):
                    raise RegistryError(
                        "ADDRESS_ALREADY_BOUND",
                        f"{binding.address} already bound to {other.lei} over an overlapping range",
                    )
            existing.append(binding)
            existing.sort(key=lambda b: b.effective_height)
            return binding.address

    def classify_asset(self, classification: AssetClassification) -> str:
        with self._lock:
            hist = self._assets.setdefault(classification.asset_id, [])
            if any(c.effective_height == classification.effective_height for c in hist):
                raise RegistryError("DUPLICATE_CLASSIFICATION",
                                    f"{classification.asset_id}@{classification.effective_height}")
            hist.append(classification)
            hist.sort(key=lambda c: c.effective_height)
            return classification.asset_id

    # -- reads -------------------------------------------------------------------

    def institution(self, lei: str) -> InstitutionRecord:
        self._check_online()
        try:
            return self._institutions[lei]
        except KeyError:
            raise RegistryError("UNKNOWN_LEI", lei) from None

    def institutions(self) -> list[InstitutionRecord]:
        self._check_online()
        return [self._institutions[k] for k in sorted(self._institutions)]

    def jurisdictions(self) -> list[str]:
        return sorted({i.jurisdiction for i in self.institutions()})

    def bindings(self) -> list[AddressBinding]:
        return [b for addr in sorted(self._bindings) for b in self._bindings[addr]]

    def lookup_address(self, address: Optional[str], height: int) -> Optional[str]:
        self._check_online()
        if address is None:
            return None
        for b in self._bindings.get(address, ()):
            if b.covers(height):
                return b.lei
        return None

    def participant(self, address: Optional[str], height: int) -> Optional[str]:
        """The lei behind ``address`` if it is bound *and* has opted in by ``height``."""
        lei = self.lookup_address(address, height)
        if lei is None or self._institutions[lei].opt_in_height > height:
            return None
        return lei

    def figures_at(self, lei: str, height: int) -> CapitalFigures:
        figs = self.institution(lei).capital_figures
        i = bisect.bisect_right([f.effective_height for f in figs], height)
        if not i:
            raise RegistryError("NO_FIGURES_EFFECTIVE", f"{lei} has no figures at {height}")
        return figs[i - 1]

    def classification_at(self, asset_id: str, height: int) -> Optional[AssetClassification]:
        self._check_online()
        hist = self._assets.get(asset_id, ())
        found = None
        for c in hist:
            if c.effective_height <= height:
                found = c
            else:
                break
        return found

    def asset_ids(self) -> list[str]:
        return sorted(self._assets)

    # -- bootstrap file ----------------------------------------------------------

    def to_dict(self) -> dict:
        return {
            "institutions": [
                {
                    "lei": i.lei,
                    "name": i.name,
                    "jurisdiction": i.jurisdiction,
                    "authority_id": i.authority_id,
                    "opt_in_height": i.opt_in_height,
                    "capital_figures": [
                        {"tier1": f.tier1, "cet1": f.cet1, "hqla": f.hqla,
                         "effective_height": f.effective_height}
                        for f in i.capital_figures
                    ],
                }
                for i in self.institutions()
            ],
            "bindings": [
                {"address": b.address, "lei": b.lei, "effective_height": b.effective_height,
                 "revoked_height": b.revoked_height}
                for b in self.bindings()
            ],
            "assets": [
                {
                    "asset_id": c.asset_id,
                    "exposure_class": c.exposure_class.value,
                    "risk_weight": fraction_text(c.risk_weight),
                    "hqla_level": c.hqla_level.value,
                    "outflow_factor": fraction_text(c.outflow_factor),
                    "inflow_factor": fraction_text(c.inflow_factor),
                    "effective_height": c.effective_height,
                }
                for a in self.asset_ids() for c in self._assets[a]
            ],
        }

    def dumps(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    @classmethod
    def from_dict(cls, doc: dict) -> "Registry":
        reg = cls()
        for d in doc.get("institutions", []):
            figs = [CapitalFigures(f["tier1"], f["cet1"], f["hqla"], f.get("effective_height", 0))
                    for f in d.get("capital_figures", [])]
            reg.register_institution(InstitutionRecord(
                d["lei"], d["name"], d["jurisdiction"], d["authority_id"],
                d.get("opt_in_height", 0), figs))
        for d in doc.get("bindings", []):
            reg.bind_address(AddressBinding(d["address"], d["lei"], d.get("effective_height", 0),
                                            d.get("revoked_height")))
        for d in doc.get("assets", []):
            reg.classify_asset(AssetClassification(
                d["asset_id"], d["exposure_class"], d["risk_weight"], d.get("hqla_level", "NONE"),
                d.get("outflow_factor", 0), d.get("inflow_factor", 0), d.get("effective_height", 0)))
        return reg

    @classmethod
    def load(cls, path) -> "Registry":
        with open(path, encoding="utf-8") as fh:
            return cls.from_dict(json.load(fh))
