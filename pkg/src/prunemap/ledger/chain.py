"""Single-writer hash-chained ledger and its replayable state machine."""
from __future__ import annotations

import copy
import json
import math
import threading
from dataclasses import dataclass, field
from pathlib import Path

from ..errors import ValidationError
from .contracts import ContractConfig, Verdict, contract_biomass_audit, contract_plant_audit
from .encoding import encode, sha256_hex
from .transactions import (
    FARMER,
    PLANT,
    AnomalyFlag,
    BiomassReport,
    Participant,
    PlantOutput,
    Register,
    Trade,
    tx_from_json,
    tx_to_json,
)

GENESIS_PREV_HASH = "0" * 64


def block_hash(index: int, prev_hash: str, payload) -> str:
    return sha256_hex(encode(index), encode(prev_hash), encode(list(payload)))


@dataclass(frozen=True)
class Block:
    index: int
    prev_hash: str
    payload: tuple
    block_hash: str

    def recompute_hash(self) -> str:
        return block_hash(self.index, self.prev_hash, self.payload)


@dataclass
class LedgerState:
    participants: dict[str, Participant] = field(default_factory=dict)
    addresses: dict[str, str] = field(default_factory=dict)
    field_owner: dict[str, str] = field(default_factory=dict)
    trades: list[Trade] = field(default_factory=list)
    consumed: list[bool] = field(default_factory=list)
    last_reading: dict = field(default_factory=dict)
    readings: list = field(default_factory=list)
    outputs: list[PlantOutput] = field(default_factory=list)
    anomalies: list[AnomalyFlag] = field(default_factory=list)

    def unconsumed_inputs(self, plant_id: str) -> list[int]:
        return [i for i, t in enumerate(self.trades) if t.buyer_id == plant_id and not self.consumed[i]]

    def address_of(self, unique_id: str) -> str:
        return self.participants[unique_id].chain_address

    def apply(self, tx, cfg: ContractConfig) -> list[AnomalyFlag]:
        """Validate and apply one transaction; return the anomaly flags it raises."""
        if isinstance(tx, Register):
            self._register(tx.participant)
            return []
        if isinstance(tx, Trade):
            self._check_quantity(tx.quantity)
            seller = self.participants.get(tx.seller_id)
            buyer = self.participants.get(tx.buyer_id)
            if seller is None or seller.kind != FARMER:
                raise ValidationError(f"seller {tx.seller_id!r} is not a registered farmer")
            if buyer is None or buyer.kind != PLANT:
                raise ValidationError(f"buyer {tx.buyer_id!r} is not a registered plant")
            self.trades.append(tx)
            self.consumed.append(False)
            return []
        if isinstance(tx, BiomassReport):
            r = tx.reading
            if not (isinstance(r.biomass_fraction, (int, float)) and 0.0 <= r.biomass_fraction <= 1.0):
                raise ValidationError(f"biomass fraction {r.biomass_fraction!r} outside [0, 1]")
            verdict = contract_biomass_audit(self, r, cfg)
            self.last_reading[r.field_id] = r
            self.readings.append(r)
            return self._flag(verdict, r.timestamp)
        if isinstance(tx, PlantOutput):
            self._check_quantity(tx.quantity)
            verdict = contract_plant_audit(self, tx, cfg)
            for i in self.unconsumed_inputs(tx.plant_id):
                self.consumed[i] = True
            self.outputs.append(tx)
            return self._flag(verdict, tx.timestamp)
        if isinstance(tx, AnomalyFlag):
            raise ValidationError("anomaly flags are emitted by contracts, not submitted")
        raise ValidationError(f"unknown transaction type {type(tx).__name__}")

    def _flag(self, verdict: Verdict, timestamp: int) -> list[AnomalyFlag]:
        if verdict.ok:
            return []
        return [AnomalyFlag(verdict.contract_id, verdict.subject_id, verdict.details, timestamp)]

    def _register(self, p: Participant) -> None:
        if p.kind not in (FARMER, PLANT):
            raise ValidationError(f"unknown participant kind {p.kind!r}")
        if not p.unique_id:
            raise ValidationError("participant unique_id is empty")
        if p.unique_id in self.participants:
            raise ValidationError(f"participant {p.unique_id!r} already registered")
        addr = p.chain_address
        if addr in self.addresses:
            raise ValidationError(f"chain address {addr} already assigned")
        if p.kind == FARMER:
            if not p.crop_type or p.latitude is None or p.longitude is None:
                raise ValidationError("farmer needs crop_type, latitude and longitude")
            if not p.field_yield_estimate or p.field_yield_estimate <= 0:
                raise ValidationError("farmer needs a positive field_yield_estimate")
            if p.field_id in self.field_owner:
                raise ValidationError(f"field {p.field_id!r} already registered")
            self.field_owner[p.field_id] = p.unique_id
        elif not p.product_type:
            raise ValidationError("processing plant needs a product_type")
        self.participants[p.unique_id] = p
        self.addresses[addr] = p.unique_id

    @staticmethod
    def _check_quantity(q) -> None:
        if not isinstance(q, (int, float)) or not math.isfinite(q) or q < 0:
            raise ValidationError(f"quantity {q!r} must be a finite number >= 0")


class Ledger:
    """Append-only chain with contracts evaluated during validation.

    One writer appends; readers may call :meth:`snapshot` or
    :func:`verify_chain` concurrently.  ``on_anomaly`` callbacks receive every
    committed AnomalyFlag (the regulator sink).
    """

    def __init__(self, config: ContractConfig | None = None):
        self.config = config or ContractConfig()
        self.blocks: list[Block] = []
        self.state = LedgerState()
        self.on_anomaly: list = []
        self._lock = threading.Lock()

    def __len__(self) -> int:
        return len(self.blocks)

    @property
    def tip_hash(self) -> str:
        return self.blocks[-1].block_hash if self.blocks else GENESIS_PREV_HASH

    def snapshot(self) -> LedgerState:
        return copy.deepcopy(self.state)

    def append_block(self, transactions) -> Block:
        """Validate, run contracts, and chain a new block, all or nothing."""
        transactions = list(transactions)
        with self._lock:
            staged = copy.deepcopy(self.state)
            payload = []
            flags = []
            for pos, tx in enumerate(transactions):
                try:
                    new_flags = staged.apply(tx, self.config)
                except ValidationError as exc:
                    raise type(exc)(f"transaction {pos} ({tx.kind}): {exc}", pos) from exc
                payload.append(tx)
                payload.extend(new_flags)
                flags.extend(new_flags)
            staged.anomalies.extend(flags)
            index = len(self.blocks)
            prev = self.tip_hash
            block = Block(index, prev, tuple(payload), block_hash(index, prev, payload))
            self.blocks.append(block)
            self.state = staged
        for flag in flags:
            for callback in self.on_anomaly:
                callback(flag)
        return block

    @classmethod
    def replay(cls, blocks, config: ContractConfig | None = None) -> "Ledger":
        """Rebuild state from block 0; recorded flags must match recomputed ones."""
        ledger = cls(config)
        for block in blocks:
            expected = []
            for tx in block.payload:
                if isinstance(tx, AnomalyFlag):
                    if not expected or expected.pop(0) != tx:
                        raise ValidationError(f"block {block.index}: unexpected anomaly flag")
                    ledger.state.anomalies.append(tx)
                else:
                    if expected:
                        raise ValidationError(f"block {block.index}: missing anomaly flag")
                    expected = ledger.state.apply(tx, ledger.config)
            if expected:
                raise ValidationError(f"block {block.index}: missing anomaly flag")
            ledger.blocks.append(block)
        return ledger

    def save(self, path) -> Path:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with path.open("w", encoding="utf-8") as fh:
            for block in self.blocks:
                fh.write(block_to_line(block) + "\n")
        return path

    @classmethod
    def load(cls, path, config: ContractConfig | None = None) -> "Ledger":
        blocks = read_blocks(path)
        bad = verify_chain(blocks)
        if bad is not None:
            raise ValidationError(f"{path}: chain corrupt at block {bad}", bad)
        return cls.replay(blocks, config)


def verify_chain(ledger_or_blocks) -> int | None:
    """Index of the first block whose linkage or hash does not check out, else None."""
    blocks = ledger_or_blocks.blocks if isinstance(ledger_or_blocks, Ledger) else ledger_or_blocks
    prev = GENESIS_PREV_HASH
    for pos, block in enumerate(blocks):
        if block.index != pos or block.prev_hash != prev:
            return pos
        try:
            if block.recompute_hash() != block.block_hash:
                return pos
        except TypeError:
            return pos
        prev = block.block_hash
    return None


def block_to_line(block: Block) -> str:
    obj = {
        "index": block.index,
        "prev_hash": block.prev_hash,
        "payload": [tx_to_json(tx) for tx in block.payload],
        "block_hash": block.block_hash,
    }
    return json.dumps(obj, separators=(",", ":"), ensure_ascii=False)


def block_from_line(line: str, position: int) -> Block:
    """Parse one JSON-lines record; undecodable records become unverifiable blocks."""
    try:
        obj = json.loads(line)
    except json.JSONDecodeError:
        return Block(position, "", (line,), "")
    try:
        payload = tuple(tx_from_json(t) for t in obj["payload"])
    except (KeyError, TypeError, ValueError):
        payload = ("<undecodable>", line)
    return Block(obj.get("index", position), obj.get("prev_hash", ""), payload,
                 obj.get("block_hash", ""))


def read_blocks(path) -> list[Block]:
    lines = Path(path).read_text(encoding="utf-8").splitlines()
    return [block_from_line(line, i) for i, line in enumerate(lines) if line.strip()]


class RegulatorSink:
    """Collects anomaly flags and mirrors them to a JSON file."""

    def __init__(self, path=None):
        self.path = Path(path) if path is not None else None
        self.flags: list[AnomalyFlag] = []

    def __call__(self, flag: AnomalyFlag) -> None:
        self.flags.append(flag)
        if self.path is not None:
            self.write()

    def write(self) -> None:
        self.path.parent.mkdir(parents=True, exist_ok=True)
        self.path.write_text(json.dumps([tx_to_json(f) for f in self.flags], indent=2) + "\n",
                             encoding="utf-8")


def anomaly_report(ledger: Ledger) -> list[dict]:
    out = []
    for block in ledger.blocks:
        for tx in block.payload:
            if isinstance(tx, AnomalyFlag):
                out.append({"block": block.index, **tx_to_json(tx)})
    return out


__all__ = [
    "Block",
    "GENESIS_PREV_HASH",
    "Ledger",
    "LedgerState",
    "RegulatorSink",
    "anomaly_report",
    "block_from_line",
    "block_hash",
    "block_to_line",
    "read_blocks",
    "verify_chain",
]
