"""The two audit contracts: field biomass vs recorded trades, plant output vs inputs.

Both are pure functions of the ledger state; the state machine in
``chain`` applies their side effects (latest reading, consumed inputs).
"""
from __future__ import annotations

from dataclasses import dataclass, field

from ..errors import InvalidArgument, UnknownField, UnknownPlant, UnknownYieldFactor
from ..segmentation import BiomassReading
from .transactions import FARMER, PLANT, PlantOutput

BIOMASS_CONTRACT = "biomass-audit"
PLANT_CONTRACT = "plant-output-audit"
EPSILON = 1e-9


@dataclass
class ContractConfig:
    biomass_tolerance: float = 0.10  # absolute drop in biomass fraction
    output_tolerance: float = 0.15  # relative deviation of plant output
    harvest_window: int = 3  # timestamps before a reading that count as harvest trades
    yield_factor: dict[str, float] = field(default_factory=dict)  # crop -> product t per crop t

    def __post_init__(self):
        if self.biomass_tolerance <= 0 or self.output_tolerance <= 0:
            raise InvalidArgument("tolerances must be positive")
        if self.harvest_window < 0:
            raise InvalidArgument("harvest_window must be non-negative")
        if any(v <= 0 for v in self.yield_factor.values()):
            raise InvalidArgument("yield factors must be positive")

    def to_dict(self) -> dict:
        return {
            "biomass_tolerance": self.biomass_tolerance,
            "output_tolerance": self.output_tolerance,
            "harvest_window": self.harvest_window,
            "yield_factor": dict(self.yield_factor),
        }


@dataclass
class Verdict:
    contract_id: str
    subject_id: str
    status: str  # "ok", "baseline" or "anomaly"
    details: dict = field(default_factory=dict)

    @property
    def ok(self) -> bool:
        return self.status != "anomaly"


def contract_biomass_audit(state, reading: BiomassReading, cfg: ContractConfig) -> Verdict:
    """Flag a biomass drop that recorded trades by the field's farmer do not explain."""
    farmer_id = state.field_owner.get(reading.field_id)
    if farmer_id is None:
        raise UnknownField(f"field {reading.field_id!r} is not registered")
    prev = state.last_reading.get(reading.field_id)
    if prev is None:
        return Verdict(BIOMASS_CONTRACT, farmer_id, "baseline",
                       {"current_fraction": reading.biomass_fraction})
    drop = prev.biomass_fraction - reading.biomass_fraction
    details = {
        "field_id": reading.field_id,
        "previous_fraction": prev.biomass_fraction,
        "current_fraction": reading.biomass_fraction,
        "drop": drop,
        "biomass_tolerance": cfg.biomass_tolerance,
        "harvest_window": cfg.harvest_window,
    }
    if drop <= cfg.biomass_tolerance:
        return Verdict(BIOMASS_CONTRACT, farmer_id, "ok", details)
    farmer = state.participants[farmer_id]
    required = drop * farmer.field_yield_estimate
    lo = reading.timestamp - cfg.harvest_window
    covered = sum(
        (t.quantity for t in state.trades
         if t.seller_id == farmer_id and lo <= t.timestamp <= reading.timestamp),
        0.0,
    )
    details.update(required_tonnes=required, covered_tonnes=covered,
                   uncovered_tonnes=max(0.0, required - covered))
    # relative slack so a trade matching the drop exactly is not undone by rounding
    status = "ok" if covered >= required - EPSILON * max(1.0, required) else "anomaly"
    return Verdict(BIOMASS_CONTRACT, farmer_id, status, details)


def contract_plant_audit(state, output: PlantOutput, cfg: ContractConfig) -> Verdict:
    """Compare reported plant output with the yield of its unconsumed crop inputs."""
    plant = state.participants.get(output.plant_id)
    if plant is None or plant.kind != PLANT:
        raise UnknownPlant(f"plant {output.plant_id!r} is not registered")
    expected = 0.0
    inputs = 0.0
    for i in state.unconsumed_inputs(output.plant_id):
        trade = state.trades[i]
        seller = state.participants[trade.seller_id]
        crop = seller.crop_type if seller.kind == FARMER else None
        if crop not in cfg.yield_factor:
            raise UnknownYieldFactor(f"no yield factor for crop {crop!r}")
        expected += cfg.yield_factor[crop] * trade.quantity
        inputs += trade.quantity
    deviation = abs(output.quantity - expected) / max(expected, EPSILON)
    details = {
        "product_id": output.product_id,
        "reported_tonnes": output.quantity,
        "expected_tonnes": expected,
        "input_tonnes": inputs,
        "relative_deviation": deviation,
        "output_tolerance": cfg.output_tolerance,
    }
    status = "anomaly" if deviation > cfg.output_tolerance else "ok"
    return Verdict(PLANT_CONTRACT, output.plant_id, status, details)
