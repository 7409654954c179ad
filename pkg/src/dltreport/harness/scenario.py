"""Seeded synthetic scenarios: banks, addresses, assets and valid transaction blocks."""

from __future__ import annotations

import hashlib
import json
import random
from dataclasses import asdict, dataclass, field
from fractions import Fraction
from pathlib import Path

from ..ledger import Ledger, Transaction
from ..registry import (
    DEFAULT_RISK_WEIGHTS,
    AddressBinding,
    AssetClassification,
    CapitalFigures,
    ExposureClass,
    HqlaLevel,
    InstitutionRecord,
    Registry,
)

JURISDICTIONS = ["DK", "DE", "FR", "NL", "IT", "ES", "SE", "FI", "IE", "AT", "BE", "PT"]
CONTRACT_TAGS = ["repo.open", "repo.close", "swap.settle", "coupon.pay"]
KIND_WEIGHTS = [("ISSUE", 15), ("TRANSFER", 60), ("REDEEM", 10), ("CONTRACT_CALL", 15)]
OUTFLOW_CHOICES = [Fraction(0), Fraction(1, 20), Fraction(1, 10), Fraction(1, 4), Fraction(2, 5), Fraction(1)]
INFLOW_CHOICES = [Fraction(0), Fraction(1, 2), Fraction(1)]


@dataclass(frozen=True)
class ScenarioParams:
    seed: int = 1
    n_banks: int = 8
    n_jurisdictions: int = 3
    n_assets: int = 6
    n_blocks: int = 200
    txs_per_block: int = 10
    reporting_period_blocks: int = 30

    def __post_init__(self):
        for name in ("n_banks", "n_jurisdictions", "n_assets", "n_blocks", "txs_per_block",
                     "reporting_period_blocks"):
            if getattr(self, name) < 1:
                raise ValueError(f"{name} must be >= 1")
        if not 0 <= self.seed < 2**64:
            raise ValueError("seed must be a 64-bit unsigned integer")


@dataclass
class Scenario:
    params: ScenarioParams
    registry: Registry
    blocks: list = field(default_factory=list)
    addresses: list = field(default_factory=list)

    def build_ledger(self) -> Ledger:
        ledger = Ledger()
        for txs in self.blocks:
            ledger.append_block(txs)
        return ledger


def make_lei(seed: int, i: int) -> str:
    digest = hashlib.sha256(f"{seed}:{i}".encode()).hexdigest().upper()
    return f"DLT0{digest[:14]}{i % 100:02d}"


def jurisdiction_codes(n: int) -> list[str]:
    if n <= len(JURISDICTIONS):
        return JURISDICTIONS[:n]
    return JURISDICTIONS + [f"J{i}" for i in range(len(JURISDICTIONS), n)]


def _build_registry(p: ScenarioParams, rng: random.Random) -> tuple[Registry, list[str]]:
    reg = Registry()
    jurs = jurisdiction_codes(p.n_jurisdictions)
    n_early = (p.n_banks + 1) // 2
    addresses: list[str] = []
    leis = []
    for i in range(p.n_banks):
        lei = make_lei(p.seed, i)
        leis.append(lei)
        jur = jurs[i % len(jurs)]
        opt_in = 0 if i < n_early else rng.randint(1, max(1, p.n_blocks // 3))
        tier1 = rng.randint(5_000, 50_000)
        figs = [CapitalFigures(tier1, rng.randint(tier1 * 6 // 10, tier1), rng.randint(1_000, 20_000), 0)]
        if p.n_blocks > 2:
            t1 = rng.randint(5_000, 50_000)
            figs.append(CapitalFigures(t1, rng.randint(t1 * 6 // 10, t1), rng.randint(1_000, 20_000),
                                       rng.randint(1, p.n_blocks - 1)))
        reg.register_institution(InstitutionRecord(lei, f"Bank {i}", jur, f"NCA-{jur}", opt_in, figs))
        for k in range(2):
            addr = f"addr-{i:02d}-{k}"
            addresses.append(addr)
            revoked = None
            if i == 0 and k == 1 and p.n_banks > 1 and p.n_blocks > 8:
                revoked = p.n_blocks // 4
            reg.bind_address(AddressBinding(addr, lei, 0, revoked))
    n_ext = max(2, p.n_banks // 2)
    externals = [f"ext-{k:02d}" for k in range(n_ext)]
    addresses.extend(externals)
    if p.n_banks > 1 and p.n_blocks > 8:
        # an address changes hands, and an outside address joins later
        reg.bind_address(AddressBinding("addr-00-1", leis[1], p.n_blocks // 4 + 1))
        reg.bind_address(AddressBinding(externals[0], leis[1 % p.n_banks], p.n_blocks // 2))

    classes = list(ExposureClass)
    levels = list(HqlaLevel)
    for k in range(p.n_assets):
        ec = classes[k % len(classes)]
        reg.classify_asset(AssetClassification(
            f"ASSET{k}", ec, DEFAULT_RISK_WEIGHTS[ec], levels[k % len(levels)],
            rng.choice(OUTFLOW_CHOICES), rng.choice(INFLOW_CHOICES), 0))
    if p.n_blocks > 2:
        # the first asset is reclassified part-way through
        reg.classify_asset(AssetClassification(
            "ASSET0", ExposureClass.INSTITUTION, DEFAULT_RISK_WEIGHTS[ExposureClass.INSTITUTION],
            HqlaLevel.L2A, rng.choice(OUTFLOW_CHOICES), rng.choice(INFLOW_CHOICES), p.n_blocks // 2))
    return reg, addresses


def _draw_tx(rng: random.Random, tx_id: str, addresses: list[str], assets: list[str],
             balances: dict) -> Transaction:
    kinds, weights = zip(*KIND_WEIGHTS)
    while True:
        kind = rng.choices(kinds, weights)[0]
        if kind == "ISSUE":
            return Transaction.issue(tx_id, rng.choice(assets), rng.choice(addresses),
                                     rng.randint(1, 10_000))
        holders = sorted(k for k, v in balances.items() if v > 0)
        if not holders:
            continue
        frm, asset = rng.choice(holders)
        bal = balances[(frm, asset)]
        if kind == "REDEEM":
            return Transaction.redeem(tx_id, asset, frm, rng.randint(1, bal))
        to = rng.choice([a for a in addresses if a != frm])
        if kind == "TRANSFER":
            return Transaction.transfer(tx_id, asset, frm, to, rng.randint(1, bal))
        return Transaction.call(tx_id, asset, frm, to, rng.randint(0, bal), rng.choice(CONTRACT_TAGS))


def build_scenario(params: ScenarioParams) -> Scenario:
    """Deterministically derive registry and block schedule from ``params``."""
    rng = random.Random(params.seed)
    registry, addresses = _build_registry(params, rng)
    assets = [f"ASSET{k}" for k in range(params.n_assets)]
    balances: dict[tuple[str, str], int] = {}
    blocks = []
    n = 0
    for _ in range(params.n_blocks):
        txs = []
        for _ in range(params.txs_per_block):
            tx = _draw_tx(rng, f"tx-{n:06d}", addresses, assets, balances)
            n += 1
            if tx.sender is not None:
                balances[(tx.sender, tx.asset_id)] -= tx.amount
            if tx.receiver is not None:
                balances[(tx.receiver, tx.asset_id)] = balances.get((tx.receiver, tx.asset_id), 0) + tx.amount
            txs.append(tx)
        blocks.append(txs)
    return Scenario(params, registry, blocks, addresses)


def generate_scenario(params: ScenarioParams) -> tuple[Ledger, Registry]:
    sc = build_scenario(params)
    return sc.build_ledger(), sc.registry


def write_scenario(directory, params: ScenarioParams, ledger: Ledger, registry: Registry) -> Path:
    """Write ``events.ndjson``, ``registry.json`` and ``scenario.json`` into ``directory``."""
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    (directory / "events.ndjson").write_text(ledger.event_log_text(), encoding="utf-8")
    (directory / "registry.json").write_text(registry.dumps(), encoding="utf-8")
    meta = {"params": asdict(params), "head_height": ledger.head_height}
    (directory / "scenario.json").write_text(json.dumps(meta, indent=2, sort_keys=True) + "\n",
                                             encoding="utf-8")
    return directory


def read_scenario(directory) -> tuple[ScenarioParams, Ledger, Registry]:
    directory = Path(directory)
    meta = json.loads((directory / "scenario.json").read_text())
    params = ScenarioParams(**meta["params"])
    with open(directory / "events.ndjson", encoding="utf-8") as fh:
        ledger = Ledger.from_event_log(fh, meta["head_height"])
    return params, ledger, Registry.load(directory / "registry.json")
