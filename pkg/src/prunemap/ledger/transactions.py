"""Participant and transaction records, with their JSON forms."""
from __future__ import annotations

import dataclasses
from dataclasses import dataclass, field
from typing import ClassVar

from ..segmentation import BiomassReading
from .encoding import encode, sha256_hex

FARMER = "Farmer"
PLANT = "ProcessingPlant"


@dataclass(frozen=True)
class Participant:
    kind: str
    unique_id: str
    crop_type: str | None = None
    latitude: float | None = None
    longitude: float | None = None
    field_id: str | None = None
    field_yield_estimate: float | None = None  # tonnes per unit biomass fraction
    product_type: str | None = None

    @property
    def chain_address(self) -> str:
        """First 20 bytes of the SHA-256 of the registration payload, hex."""
        return sha256_hex(encode(self))[:40]

    @classmethod
    def farmer(cls, unique_id, crop_type, latitude, longitude, field_yield_estimate,
               field_id=None) -> "Participant":
        return cls(FARMER, unique_id, crop_type=crop_type, latitude=float(latitude),
                   longitude=float(longitude), field_id=field_id or unique_id,
                   field_yield_estimate=float(field_yield_estimate))

    @classmethod
    def plant(cls, unique_id, product_type) -> "Participant":
        return cls(PLANT, unique_id, product_type=product_type)


@dataclass(frozen=True)
class Register:
    participant: Participant
    timestamp: int = 0
    kind: ClassVar[str] = "Register"


@dataclass(frozen=True)
class Trade:
    seller_id: str
    buyer_id: str
    quantity: float
    product_id: str
    timestamp: int = 0
    kind: ClassVar[str] = "Trade"


@dataclass(frozen=True)
class BiomassReport:
    reading: BiomassReading
    kind: ClassVar[str] = "BiomassReport"

    @property
    def timestamp(self) -> int:
        return self.reading.timestamp


@dataclass(frozen=True)
class PlantOutput:
    plant_id: str
    product_id: str
    quantity: float
    timestamp: int = 0
    kind: ClassVar[str] = "PlantOutput"


@dataclass(frozen=True)
class AnomalyFlag:
    contract_id: str
    subject_id: str
    details: dict = field(default_factory=dict, hash=False)
    timestamp: int = 0
    kind: ClassVar[str] = "AnomalyFlag"


TX_TYPES = {cls.kind: cls for cls in (Register, Trade, BiomassReport, PlantOutput, AnomalyFlag)}


def tx_to_json(tx) -> dict:
    out = {"kind": tx.kind}
    for f in dataclasses.fields(tx):
        value = getattr(tx, f.name)
        out[f.name] = dataclasses.asdict(value) if dataclasses.is_dataclass(value) else value
    return out


def tx_from_json(obj: dict):
    cls = TX_TYPES[obj["kind"]]
    kwargs = {f.name: obj[f.name] for f in dataclasses.fields(cls)}
    if cls is Register:
        kwargs["participant"] = Participant(**kwargs["participant"])
    elif cls is BiomassReport:
        kwargs["reading"] = BiomassReading(**kwargs["reading"])
    return cls(**kwargs)
