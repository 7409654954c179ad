import random
from fractions import Fraction

import pytest
from hypothesis import given, settings, strategies as st

from dltreport.composer import EXTERNAL, Composer, EnrichedRecord, enrich, metrics_from_inputs
from dltreport.errors import ComposerError, RegistryUnavailable
from dltreport.harness import ScenarioParams, build_scenario, oracle_metrics
from dltreport.ledger import Ledger, Transaction
from dltreport.registry import (
    AddressBinding,
    AssetClassification,
    CapitalFigures,
    ExposureClass,
    InstitutionRecord,
    Registry,
    unclassified,
)
from dltreport.warehouse import Warehouse

from conftest import BANKA, BANKB, BANKC, canonical_registry, lei


def run(ledger, reg, **kw):
    wh = Warehouse(reg)
    n = Composer(ledger, reg, wh, **kw).run_to_head()
    return wh, n


def test_transfer_between_registered_banks(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "CORP1", "X", 10)])
    ledger.append_block([Transaction.transfer("t", "CORP1", "X", "Y", 5)])
    # X and Y are unbound: nothing recorded yet
    wh, n = run(ledger, registry)
    assert n == 0 and wh.cursor == (1, 0) and wh.head == 1

    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "CORP1", "A", 10),
                         Transaction.transfer("t", "CORP1", "A", "C", 4)])
    wh, n = run(ledger, registry)
    assert n == 2
    rec = wh.records()[1]
    assert (rec.from_lei, rec.to_lei) == (BANKA, BANKC)
    assert (rec.from_counterparty, rec.to_counterparty) == (BANKC, BANKA)
    assert (rec.jurisdiction_from, rec.jurisdiction_to) == ("DK", "DE")
    assert rec.exposure_class == "CORPORATE" and rec.risk_weight == 1
    assert rec.outflow_factor == Fraction(1, 4) and rec.inflow_factor == Fraction(1, 2)


def test_issue_of_sovereign_asset(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "BOND1", "A", 10)])
    rec = enrich(ledger.events()[0], registry)
    assert rec.to_lei == BANKA and rec.from_lei is None
    assert rec.from_address is None and rec.to_counterparty is None
    assert rec.risk_weight == 0 and rec.exposure_class == "SOVEREIGN"


def test_external_counterparty(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "CORP1", "A", 10),
                         Transaction.transfer("t", "CORP1", "A", "outsider", 3)])
    rec = enrich(ledger.events()[1], registry)
    assert rec.from_lei == BANKA and rec.to_lei is None
    assert rec.from_counterparty == EXTERNAL and rec.to_counterparty is None


def test_opt_in_not_yet_effective():
    reg = Registry()
    reg.register_institution(InstitutionRecord(BANKA, "A", "DK", "NCA-DK", 20, [CapitalFigures(1, 1, 0)]))
    reg.bind_address(AddressBinding("A", BANKA, 0))
    reg.classify_asset(AssetClassification("X", "OTHER", 1))
    ledger = Ledger()
    for h in range(25):
        ledger.append_block([Transaction.issue(f"i{h}", "X", "A", 1)])
    assert enrich(ledger.events()[10], reg) is None
    wh, n = run(ledger, reg)
    assert n == 5
    assert [r.height for r in wh.records()] == list(range(20, 25))


def test_unclassified_asset_default_and_strict(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "MYSTERY", "A", 10)])
    rec = enrich(ledger.events()[0], registry)
    assert rec.warnings == ("UNCLASSIFIED_ASSET",)
    assert rec.exposure_class == "OTHER" and rec.risk_weight == 1
    with pytest.raises(ComposerError) as exc:
        enrich(ledger.events()[0], registry, strict=True)
    assert exc.value.code == "UNCLASSIFIED_ASSET"
    wh = Warehouse(registry)
    with pytest.raises(ComposerError):
        Composer(ledger, registry, wh, strict=True).run_to_head()
    assert wh.cursor == (-1, -1) and len(wh) == 0


def test_registry_unavailable_aborts_without_advancing(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "CORP1", "A", 10)])
    wh = Warehouse(registry)
    comp = Composer(ledger, registry, wh)
    comp.run_to_head()
    ledger.append_block([Transaction.issue("j", "CORP1", "B", 10), Transaction.issue("k", "CORP1", "C", 1)])
    registry.online = False
    with pytest.raises(RegistryUnavailable):
        comp.run_to_head()
    assert wh.cursor == (0, 0) and len(wh) == 1 and wh.head == 0
    registry.online = True
    assert comp.run_to_head() == 2
    assert wh.cursor == (1, 1)


def test_idempotent_and_head_advances_on_empty_blocks(registry):
    ledger = Ledger()
    ledger.append_block([Transaction.issue("i", "CORP1", "A", 10)])
    wh = Warehouse(registry)
    comp = Composer(ledger, registry, wh)
    assert comp.run_to_head() == 1
    assert comp.run_to_head() == 0
    ledger.append_block([])
    ledger.append_block([])
    assert comp.run_to_head() == 0
    assert wh.head == 2 and len(wh) == 1


def test_restart_resumes_from_persisted_cursor(registry, tmp_path):
    ledger = Ledger()
    for h in range(6):
        ledger.append_block([Transaction.issue(f"i{h}", "CORP1", "ABC"[h % 3], h + 1)])
    wh = Warehouse(registry)
    Composer(ledger, registry, wh).step(4)
    wh.save(tmp_path)
    reloaded = Warehouse.load(tmp_path, registry)
    Composer(ledger, registry, reloaded).run_to_head()
    reference, _ = run(ledger, registry)
    assert reloaded.export_text() == reference.export_text()


def joint_scan(event, reg_doc):
    """Reference enrichment: linear scans over the registry document."""
    def owner(addr):
        for b in reg_doc["bindings"]:
            if b["address"] == addr and b["effective_height"] <= event.height and (
                    b["revoked_height"] is None or event.height <= b["revoked_height"]):
                inst = next(i for i in reg_doc["institutions"] if i["lei"] == b["lei"])
                return inst["lei"] if inst["opt_in_height"] <= event.height else None
        return None

    f, t = owner(event.sender), owner(event.receiver)
    if f is None and t is None:
        return None
    cls = None
    for a in reg_doc["assets"]:
        if a["asset_id"] == event.asset_id and a["effective_height"] <= event.height:
            if cls is None or a["effective_height"] >= cls["effective_height"]:
                cls = a
    return f, t, cls["exposure_class"], Fraction(cls["risk_weight"])


@settings(max_examples=8, deadline=None)
@given(st.integers(0, 10**6))
def test_enrichment_equals_joint_scan(seed):
    sc = build_scenario(ScenarioParams(seed=seed, n_banks=5, n_blocks=40, txs_per_block=6))
    ledger = sc.build_ledger()
    doc = sc.registry.to_dict()
    for ev in ledger.events():
        rec = enrich(ev, sc.registry)
        ref = joint_scan(ev, doc)
        if ref is None:
            assert rec is None
        else:
            assert (rec.from_lei, rec.to_lei, rec.exposure_class, rec.risk_weight) == ref


def test_batch_size_invariance_small():
    sc = build_scenario(ScenarioParams(seed=4, n_banks=4, n_blocks=60))
    ledger = sc.build_ledger()
    exports = set()
    for batch in (1, 3, 7, 50, None):
        wh = Warehouse(sc.registry)
        Composer(ledger, sc.registry, wh).run_to_head(batch)
        exports.add(wh.export_text())
    assert len(exports) == 1


def test_position_conservation_for_internal_assets():
    reg = canonical_registry()
    ledger = Ledger()
    rng = random.Random(2)
    bal = {"A": 0, "B": 0, "C": 0}
    n = 0
    for h in range(40):
        txs = []
        for _ in range(5):
            n += 1
            holders = [a for a, v in bal.items() if v > 0]
            r = rng.random()
            if not holders or r < 0.3:
                a = rng.choice("ABC")
                amt = rng.randint(1, 100)
                txs.append(Transaction.issue(f"t{n}", "CORP1", a, amt))
                bal[a] += amt
            elif r < 0.45:
                a = rng.choice(holders)
                amt = rng.randint(1, bal[a])
                txs.append(Transaction.redeem(f"t{n}", "CORP1", a, amt))
                bal[a] -= amt
            else:
                a = rng.choice(holders)
                b = rng.choice([x for x in "ABC" if x != a])
                amt = rng.randint(0, bal[a])
                txs.append(Transaction.transfer(f"t{n}", "CORP1", a, b, amt))
                bal[a] -= amt
                bal[b] += amt
        ledger.append_block(txs)
    wh = Warehouse(reg)
    comp = Composer(ledger, reg, wh)
    comp.run_to_head()
    for h in range(0, 40, 5):
        total = sum(comp.positions_at(x, h).get("CORP1", 0) for x in (BANKA, BANKB, BANKC))
        assert total == ledger.supply_at("CORP1", h)
        for x, addr in ((BANKA, "A"), (BANKB, "B"), (BANKC, "C")):
            assert comp.positions_at(x, h).get("CORP1", 0) == ledger.balance_at(addr, "CORP1", h)


# -- metric formulas ---------------------------------------------------------------

CORP = AssetClassification("X", ExposureClass.CORPORATE, 1)
SOV = AssetClassification("S", ExposureClass.SOVEREIGN, 0, "L1")


def test_leverage_and_cet1_ratio_example():
    m = metrics_from_inputs("L", 5, CapitalFigures(8, 8, 0), {"X": 100}, {"X": CORP}, 0, 0, {})
    assert m.leverage_ratio == Fraction(8, 100) and m.cet1_ratio == Fraction(8, 100)
    assert m.total_rwa == 100 and m.total_exposure == 100


def test_lcr_example():
    m = metrics_from_inputs("L", 5, CapitalFigures(1, 1, 100), {}, {}, Fraction(80), Fraction(90), {})
    assert m.net_outflows == 20 and m.lcr == 5


def test_large_exposure_threshold():
    m = metrics_from_inputs("L", 5, CapitalFigures(100, 1, 0), {}, {}, 0, 0, {"P": 26, "Q": 25})
    assert m.large_exposure_flags == [("P", 26, 25)]


def test_zero_division_guards():
    empty = metrics_from_inputs("L", 0, CapitalFigures(8, 8, 0), {}, {}, 0, 0, {})
    assert empty.leverage_ratio == 0 and empty.cet1_ratio == 0 and empty.total_rwa == 0
    # sovereign holdings: exposure but no rwa
    sov = metrics_from_inputs("L", 0, CapitalFigures(8, 8, 7), {"S": 50}, {"S": SOV}, 0, 0, {})
    assert sov.leverage_ratio == Fraction(8, 50) and sov.cet1_ratio == 0
    # net outflows of zero fall back to a denominator of one
    assert sov.lcr == 57
    tiny = metrics_from_inputs("L", 0, CapitalFigures(8, 8, 10), {}, {}, Fraction(1, 2), 0, {})
    assert tiny.lcr == 10
    # negative positions carry no exposure
    short = metrics_from_inputs("L", 0, CapitalFigures(8, 8, 0), {"X": -40}, {"X": CORP}, 0, 0, {})
    assert short.total_exposure == 0 and short.leverage_ratio == 0
    # tier1 of zero flags every positive exposure
    zero = metrics_from_inputs("L", 0, CapitalFigures(0, 0, 0), {}, {}, 0, 0, {"P": 1})
    assert zero.large_exposure_flags == [("P", 1, 0)]


def test_compute_metrics_on_canonical(canonical):
    ledger, reg, wh = canonical
    comp = Composer(ledger, reg, wh)
    m = comp.compute_metrics(BANKA, 0)
    # A holds 100 CORP1 (rw 1) and 50 BOND1 (rw 0, L1)
    assert m.total_exposure == 150 and m.total_rwa == 100
    assert m.cet1_ratio == Fraction(8, 100) and m.leverage_ratio == Fraction(8, 150)
    assert m.hqla_adjusted == 100
    # inflows 100*1/2 + 50*1 = 100, no outflows
    assert m.net_outflows == 0 and m.lcr == 100
    with pytest.raises(ComposerError) as exc:
        comp.compute_metrics(BANKA, 1)
    assert exc.value.code == "HEIGHT_BEYOND_HEAD"
    d = m.to_dict()
    assert d["cet1_ratio"] == "0.0800000000" and d["total_rwa"] == 100


def test_unclassified_default_factors():
    u = unclassified("Q")
    assert u.exposure_class is ExposureClass.OTHER and u.risk_weight == 1
    assert u.outflow_factor == 1 and u.inflow_factor == 0


def test_metrics_equal_independent_recomputation(seed1):
    directory, ledger, reg, wh = seed1
    comp = Composer(ledger, reg, wh)
    events, registry_file = directory / "events.ndjson", directory / "registry.json"
    checked = 0
    for inst in reg.institutions():
        for h in (0, 37, 99, 150, 199):
            m = comp.compute_metrics(inst.lei, h)
            ref = oracle_metrics(events, registry_file, inst.lei, h)
            assert m.leverage_ratio == ref["leverage_ratio"]
            assert m.cet1_ratio == ref["cet1_ratio"]
            assert m.total_rwa == ref["total_rwa"]
            assert m.lcr == ref["lcr"]
            assert [(c, e) for c, e, _ in m.large_exposure_flags] == ref["large_exposure_flags"]
            assert m.leverage_ratio >= 0 and m.cet1_ratio >= 0 and m.lcr >= 0
            checked += 1
    assert checked == 40


def test_enriched_record_roundtrip(canonical):
    _, _, wh = canonical
    for rec in wh.records():
        assert EnrichedRecord.from_dict(rec.to_dict()) == rec


def test_unknown_lei_for_positions(canonical):
    ledger, reg, wh = canonical
    with pytest.raises(Exception) as exc:
        Composer(ledger, reg, wh).positions_at(lei("NOBODY"), 0)
    assert exc.value.code == "UNKNOWN_LEI"
