from __future__ import annotations

from fractions import Fraction

import pytest

from dltreport.composer import Composer
from dltreport.harness import ScenarioParams, run_pipeline
from dltreport.ledger import Ledger, Transaction
from dltreport.mrer import shipped_templates
from dltreport.registry import (
    AddressBinding,
    AssetClassification,
    CapitalFigures,
    ExposureClass,
    HqlaLevel,
    InstitutionRecord,
    Registry,
)
from dltreport.warehouse import Warehouse

import acceptance_log


def lei(tag: str) -> str:
    """Pad a short uppercase tag to a 20-character LEI."""
    return (tag + "0" * 20)[:20]


BANKA, BANKB, BANKC = lei("BANKA"), lei("BANKB"), lei("BANKC")


def canonical_registry() -> Registry:
    """Two banks in DK, one in DE; one corporate (rw 1) and one sovereign (rw 0) asset."""
    reg = Registry()
    reg.register_institution(InstitutionRecord(BANKA, "Bank A", "DK", "NCA-DK", 0,
                                               [CapitalFigures(8, 8, 50, 0)]))
    reg.register_institution(InstitutionRecord(BANKB, "Bank B", "DK", "NCA-DK", 0,
                                               [CapitalFigures(20, 10, 0, 0)]))
    reg.register_institution(InstitutionRecord(BANKC, "Bank C", "DE", "NCA-DE", 0,
                                               [CapitalFigures(30, 12, 5, 0)]))
    for addr, owner in (("A", BANKA), ("B", BANKB), ("C", BANKC)):
        reg.bind_address(AddressBinding(addr, owner, 0))
    reg.classify_asset(AssetClassification("CORP1", ExposureClass.CORPORATE, Fraction(1), HqlaLevel.NONE,
                                           Fraction(1, 4), Fraction(1, 2), 0))
    reg.classify_asset(AssetClassification("BOND1", ExposureClass.SOVEREIGN, Fraction(0), HqlaLevel.L1,
                                           Fraction(0), Fraction(1), 0))
    return reg


def canonical_ledger() -> Ledger:
    """rwa_total per bank: A 100, B 40, C 60 (so DK 140, DE 60, all 200)."""
    ledger = Ledger()
    ledger.append_block([
        Transaction.issue("t1", "CORP1", "A", 100),
        Transaction.issue("t2", "BOND1", "A", 50),
        Transaction.issue("t3", "CORP1", "B", 40),
        Transaction.issue("t4", "CORP1", "C", 60),
    ])
    return ledger


@pytest.fixture
def registry():
    return canonical_registry()


@pytest.fixture
def canonical():
    reg = canonical_registry()
    ledger = canonical_ledger()
    wh = Warehouse(reg, templates=shipped_templates().values())
    Composer(ledger, reg, wh).run_to_head()
    return ledger, reg, wh


@pytest.fixture(scope="session")
def templates():
    return shipped_templates()


@pytest.fixture(scope="session")
def seed1(tmp_path_factory, templates):
    """Seed-1 default scenario: (directory, ledger, registry, warehouse)."""
    directory = tmp_path_factory.mktemp("seed1")
    ledger, reg, wh = run_pipeline(ScenarioParams(seed=1), directory, templates=templates.values())
    return directory, ledger, reg, wh


def pytest_terminal_summary(terminalreporter):
    if acceptance_log.LINES:
        terminalreporter.section("acceptance criteria")
        for line in acceptance_log.LINES:
            terminalreporter.write_line(line)
