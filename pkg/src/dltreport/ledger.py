"""Deterministic simulated permissioned ledger.

Blocks are appended by a single writer and are final immediately. Each
transaction emits exactly one :class:`OnChainEvent`; the global event order is
``(height, index_in_block)``. Consumers read the stream through
:class:`Subscription` handles that remember their own cursor.
"""

from __future__ import annotations

import bisect
import json
import threading
from collections import defaultdict
from dataclasses import dataclass
from enum import Enum
from typing import Iterable, Iterator, Optional

from .errors import LedgerError

#: Cursor that precedes every event.
START = (-1, -1)


class TxKind(str, Enum):
    ISSUE = "ISSUE"
    REDEEM = "REDEEM"
    TRANSFER = "TRANSFER"
    CONTRACT_CALL = "CONTRACT_CALL"


@dataclass(frozen=True)
class Transaction:
    tx_id: str
    kind: TxKind
    asset_id: str
    amount: int
    sender: Optional[str] = None
    receiver: Optional[str] = None
    contract_tag: Optional[str] = None

    def __post_init__(self):
        object.__setattr__(self, "kind", TxKind(self.kind))
        if not self.tx_id:
            raise LedgerError("MALFORMED_TX", "empty tx_id")
        if isinstance(self.amount, bool) or not isinstance(self.amount, int) or self.amount < 0:
            raise LedgerError("MALFORMED_TX", f"{self.tx_id}: amount must be a non-negative int")
        for addr in (self.sender, self.receiver):
            if addr is not None and (not isinstance(addr, str) or not addr):
                raise LedgerError("MALFORMED_TX", f"{self.tx_id}: empty address")
        kind = self.kind
        if (self.sender is None) != (kind is TxKind.ISSUE):
            raise LedgerError("MALFORMED_TX", f"{self.tx_id}: sender must be absent iff ISSUE")
        if (self.receiver is None) != (kind is TxKind.REDEEM):
            raise LedgerError("MALFORMED_TX", f"{self.tx_id}: receiver must be absent iff REDEEM")
        if (self.contract_tag is not None) != (kind is TxKind.CONTRACT_CALL):
            raise LedgerError("MALFORMED_TX", f"{self.tx_id}: contract_tag present iff CONTRACT_CALL")
        if kind is TxKind.TRANSFER and self.sender == self.receiver:
            raise LedgerError("MALFORMED_TX", f"{self.tx_id}: transfer to self")

    # Convenience constructors used throughout the tests and the generator.
    @classmethod
    def issue(cls, tx_id, asset_id, to, amount):
        return cls(tx_id, TxKind.ISSUE, asset_id, amount, receiver=to)

    @classmethod
    def redeem(cls, tx_id, asset_id, frm, amount):
        return cls(tx_id, TxKind.REDEEM, asset_id, amount, sender=frm)

    @classmethod
    def transfer(cls, tx_id, asset_id, frm, to, amount):
        return cls(tx_id, TxKind.TRANSFER, asset_id, amount, sender=frm, receiver=to)

    @classmethod
    def call(cls, tx_id, asset_id, frm, to, amount, tag):
        return cls(tx_id, TxKind.CONTRACT_CALL, asset_id, amount, sender=frm, receiver=to, contract_tag=tag)


@dataclass(frozen=True)
class Block:
    height: int
    timestamp: int
    transactions: tuple


@dataclass(frozen=True)
class OnChainEvent:
    height: int
    index_in_block: int
    tx_id: str
    kind: TxKind
    asset_id: str
    sender: Optional[str]
    receiver: Optional[str]
    amount: int
    contract_tag: Optional[str]

    @property
    def position(self) -> tuple[int, int]:
        return (self.height, self.index_in_block)

    def to_json(self) -> str:
        doc = {
            "height": self.height,
            "index_in_block": self.index_in_block,
            "tx_id": self.tx_id,
            "kind": self.kind.value,
            "asset_id": self.asset_id,
            "from": self.sender,
            "to": self.receiver,
            "amount": self.amount,
            "contract_tag": self.contract_tag,
        }
        return json.dumps(doc, sort_keys=True, separators=(",", ":"))

    @classmethod
    def from_json(cls, line: str) -> "OnChainEvent":
        d = json.loads(line)
        return cls(
            height=d["height"],
            index_in_block=d["index_in_block"],
            tx_id=d["tx_id"],
            kind=TxKind(d["kind"]),
            asset_id=d["asset_id"],
            sender=d["from"],
            receiver=d["to"],
            amount=d["amount"],
            contract_tag=d["contract_tag"],
        )

    def transaction(self) -> Transaction:
        return Transaction(self.tx_id, self.kind, self.asset_id, self.amount,
                           self.sender, self.receiver, self.contract_tag)


class Ledger:
    """Append-only chain with balance history and an ordered event log.

    Reads are safe from any thread; ``append_block`` is serialized by a lock.
    """

    def __init__(self):
        self._lock = threading.RLock()
        self._blocks: list[Block] = []
        self._events: list[OnChainEvent] = []
        self._positions: list[tuple[int, int]] = []
        self._tx_ids: set[str] = set()
        self._balances: dict[tuple[str, str], int] = {}
        # (address, asset) -> parallel lists of heights and balances after that height
        self._history: dict[tuple[str, str], tuple[list[int], list[int]]] = {}
        self._issued: dict[str, int] = defaultdict(int)
        self._redeemed: dict[str, int] = defaultdict(int)
        # asset -> parallel lists (heights, cumulative issued-minus-redeemed)
        self._supply_history: dict[str, tuple[list[int], list[int]]] = {}

    # -- writing -----------------------------------------------------------------

    @property
    def head_height(self) -> int:
        return len(self._blocks) - 1

    def append_block(self, transactions: Iterable[Transaction], timestamp: int | None = None) -> Block:
        txs = tuple(transactions)
        with self._lock:
            height = len(self._blocks)
            last_ts = self._blocks[-1].timestamp if self._blocks else -1
            if timestamp is None:
                timestamp = last_ts + 1
            elif timestamp <= last_ts:
                raise LedgerError("NON_MONOTONE_TIMESTAMP", f"{timestamp} <= {last_ts}")

            # Stage everything first so a rejected block leaves no trace.
            staged: dict[tuple[str, str], int] = {}
            seen: set[str] = set()
            supply_delta: dict[str, int] = defaultdict(int)

            def bal(key):
                return staged[key] if key in staged else self._balances.get(key, 0)

            for tx in txs:
                if tx.tx_id in self._tx_ids or tx.tx_id in seen:
                    raise LedgerError("DUPLICATE_TX_ID", tx.tx_id)
                seen.add(tx.tx_id)
                if tx.sender is not None:
                    key = (tx.sender, tx.asset_id)
                    if bal(key) < tx.amount:
                        raise LedgerError(
                            "INSUFFICIENT_BALANCE",
                            f"{tx.tx_id}: {tx.sender} holds {bal(key)} {tx.asset_id}, needs {tx.amount}",
                        )
                    staged[key] = bal(key) - tx.amount
                if tx.receiver is not None:
                    key = (tx.receiver, tx.asset_id)
                    staged[key] = bal(key) + tx.amount
                if tx.kind is TxKind.ISSUE:
                    supply_delta[tx.asset_id] += tx.amount
                elif tx.kind is TxKind.REDEEM:
                    supply_delta[tx.asset_id] -= tx.amount

            block = Block(height, timestamp, txs)
            self._blocks.append(block)
            self._tx_ids.update(seen)
            for key, value in staged.items():
                self._balances[key] = value
                heights, values = self._history.setdefault(key, ([], []))
                if heights and heights[-1] == height:
                    values[-1] = value
                else:
                    heights.append(height)
                    values.append(value)
            for tx in txs:
                if tx.kind is TxKind.ISSUE:
                    self._issued[tx.asset_id] += tx.amount
                elif tx.kind is TxKind.REDEEM:
                    self._redeemed[tx.asset_id] += tx.amount
            for asset, delta in supply_delta.items():
                heights, values = self._supply_history.setdefault(asset, ([], []))
                heights.append(height)
                values.append((values[-1] if values else 0) + delta)
            for i, tx in enumerate(txs):
                self._events.append(OnChainEvent(height, i, tx.tx_id, tx.kind, tx.asset_id,
                                                 tx.sender, tx.receiver, tx.amount, tx.contract_tag))
                self._positions.append((height, i))
            return block

    # -- reading -----------------------------------------------------------------

    def block(self, height: int) -> Block:
        return self._blocks[height]

    @property
    def blocks(self) -> list[Block]:
        return list(self._blocks)

    def events(self) -> list[OnChainEvent]:
        return list(self._events)

    def balance(self, address: str, asset_id: str) -> int:
        return self._balances.get((address, asset_id), 0)

    def balance_at(self, address: str, asset_id: str, height: int) -> int:
        if height > self.head_height:
            raise LedgerError("HEIGHT_BEYOND_HEAD", f"{height} > {self.head_height}")
        hist = self._history.get((address, asset_id))
        if hist is None:
            return 0
        heights, values = hist
        i = bisect.bisect_right(heights, height)
        return values[i - 1] if i else 0

    def balances_at(self, height: int) -> dict[tuple[str, str], int]:
        """Every non-zero balance as of the end of ``height``."""
        out = {}
        for key in self._history:
            v = self.balance_at(key[0], key[1], height)
            if v:
                out[key] = v
        return out

    def assets(self) -> list[str]:
        return sorted(self._supply_history)

    def supply_at(self, asset_id: str, height: int) -> int:
        """Total issued minus total redeemed up to and including ``height``."""
        hist = self._supply_history.get(asset_id)
        if hist is None:
            return 0
        heights, values = hist
        i = bisect.bisect_right(heights, height)
        return values[i - 1] if i else 0

    def totals(self, asset_id: str) -> tuple[int, int]:
        return self._issued[asset_id], self._redeemed[asset_id]

    @property
    def head_position(self) -> tuple[int, int]:
        """Position of the last event, or the end of the head block when it is empty."""
        if not self._blocks:
            return START
        return (self.head_height, len(self._blocks[-1].transactions) - 1)

    def subscribe(self, from_cursor: tuple[int, int] = START) -> "Subscription":
        cursor = tuple(from_cursor)
        if cursor != START and (cursor[0] > self.head_height or
                                (cursor[0] == self.head_height and cursor > self.head_position)):
            raise LedgerError("CURSOR_BEYOND_HEAD", f"{cursor} is past {self.head_position}")
        return Subscription(self, cursor)

    def _index_after(self, cursor: tuple[int, int]) -> int:
        return bisect.bisect_right(self._positions, cursor)

    # -- export ------------------------------------------------------------------

    def export_events(self, fh) -> int:
        n = 0
        for ev in self._events:
            fh.write(ev.to_json() + "\n")
            n += 1
        return n

    def event_log_text(self) -> str:
        return "".join(ev.to_json() + "\n" for ev in self._events)

    @classmethod
    def from_event_log(cls, lines: Iterable[str], head_height: int) -> "Ledger":
        """Rebuild a ledger from an exported event log; gaps become empty blocks."""
        by_height: dict[int, list[Transaction]] = defaultdict(list)
        for line in lines:
            if line.strip():
                ev = OnChainEvent.from_json(line)
                by_height[ev.height].append(ev.transaction())
        if by_height and max(by_height) > head_height:
            raise LedgerError("HEIGHT_BEYOND_HEAD", "event log extends past the declared head")
        ledger = cls()
        for h in range(head_height + 1):
            ledger.append_block(by_height.get(h, ()))
        return ledger


class Subscription:
    """Cursor-carrying view over the ledger's event stream.

    Each call to :meth:`poll` yields events strictly after the cursor and
    advances it; draining a handle and polling again after new blocks yields
    only the new events.
    """

    def __init__(self, ledger: Ledger, cursor: tuple[int, int]):
        self._ledger = ledger
        self.cursor = cursor

    def poll(self, max_events: int | None = None) -> list[OnChainEvent]:
        events = self.peek(max_events)
        if events:
            self.cursor = events[-1].position
        return events

    def peek(self, max_events: int | None = None) -> list[OnChainEvent]:
        """Return the next events without advancing the cursor."""
        led = self._ledger
        with led._lock:
            start = led._index_after(self.cursor)
            stop = len(led._events) if max_events is None else min(len(led._events), start + max_events)
            return led._events[start:stop]

    def frontier(self, cursor: tuple[int, int] | None = None) -> int:
        """Greatest height whose events are all at or before ``cursor``."""
        led = self._ledger
        cursor = self.cursor if cursor is None else cursor
        with led._lock:
            i = led._index_after(cursor)
            if i >= len(led._events):
                return led.head_height
            return led._events[i].height - 1

    def __iter__(self) -> Iterator[OnChainEvent]:
        while True:
            batch = self.poll(256)
            if not batch:
                return
            yield from batch
