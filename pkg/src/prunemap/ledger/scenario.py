"""Seeded audit scenarios: compliant traffic with a known set of planted violations.

Every planted violation clears its contract threshold by a wide margin and
every compliant event stays well inside it, so the expected flags do not
depend on floating-point ties.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from ..errors import InvalidArgument
from ..segmentation import BiomassReading
from .contracts import BIOMASS_CONTRACT, PLANT_CONTRACT, ContractConfig
from .transactions import BiomassReport, Participant, PlantOutput, Register, Trade

CROPS = {"sugarcane": 0.10, "wheat": 0.75, "maize": 0.60}


@dataclass
class Scenario:
    config: ContractConfig
    registrations: list
    events: list  # ordered transactions, one timestamp each
    expected_flags: list[tuple[str, str]]  # (contract_id, subject_id) in emission order
    compliant_events: int
    blocks: list[list] = field(default_factory=list)


def generate_scenario(seed: int, n_compliant: int = 200, k_biomass: int = 5, k_plant: int = 3,
                      n_farmers: int = 12, n_plants: int = 3, max_block: int = 6) -> Scenario:
    if min(n_compliant, k_biomass, k_plant) < 0 or n_farmers < 1 or n_plants < 1:
        raise InvalidArgument("counts must be non-negative and at least one of each participant")
    rng = np.random.default_rng(seed)
    cfg = ContractConfig(yield_factor=dict(CROPS))
    crops = sorted(CROPS)
    farmers = [
        Participant.farmer(f"farmer-{i:03d}", crops[i % len(crops)],
                           latitude=-27.0 + 0.01 * i, longitude=153.0 + 0.01 * i,
                           field_yield_estimate=float(rng.uniform(50.0, 200.0)),
                           field_id=f"field-{i:03d}")
        for i in range(n_farmers)
    ]
    plants = [Participant.plant(f"plant-{j:02d}", f"product-{j:02d}") for j in range(n_plants)]
    registrations = [Register(p) for p in farmers + plants]

    fraction = {}  # field_id -> last reported fraction
    trades = []  # (seller, buyer, quantity, timestamp, consumed)
    events = []
    expected = []
    t = 0
    window = cfg.harvest_window

    def covered(farmer_id, ts):
        return sum(q for s, _, q, tt, _ in trades if s == farmer_id and ts - window <= tt <= ts)

    def report(f, value):
        nonlocal t
        t += 1
        fraction[f.field_id] = value
        events.append(BiomassReport(BiomassReading(f.field_id, value, f.latitude, f.longitude, t)))

    def trade(f, plant, qty):
        nonlocal t
        t += 1
        trades.append([f.unique_id, plant.unique_id, qty, t, False])
        events.append(Trade(f.unique_id, plant.unique_id, qty, f"{f.crop_type}-lot", t))

    def expected_output(plant):
        total = 0.0
        for tr in trades:
            if tr[1] == plant.unique_id and not tr[4]:
                total += CROPS[crop_of[tr[0]]] * tr[2]
        return total

    crop_of = {f.unique_id: f.crop_type for f in farmers}

    def advance(dt):
        nonlocal t
        t += dt

    def output(plant, qty):
        nonlocal t
        t += 1
        for tr in trades:
            if tr[1] == plant.unique_id:
                tr[4] = True
        events.append(PlantOutput(plant.unique_id, plant.product_type, qty, t))

    # Violations are placed after a random number of compliant events.
    kinds = ["biomass"] * k_biomass + ["plant"] * k_plant
    rng.shuffle(kinds)
    slots = sorted(int(v) for v in rng.integers(len(farmers), max(n_compliant, len(farmers)) + 1,
                                                   size=len(kinds)))
    pending = list(zip(slots, kinds))

    def n_ok():
        return len(events) - len(expected)

    for f in farmers:
        report(f, round(float(rng.uniform(0.5, 0.9)), 4))
    while n_ok() < n_compliant or pending:
        if pending and pending[0][0] <= n_ok():
            _, kind = pending.pop(0)
            if kind == "biomass":
                _plant_biomass_violation(rng, farmers, fraction, cfg, covered, report, expected,
                                         lambda: t, advance)
            else:
                plant = plants[int(rng.integers(len(plants)))]
                exp = expected_output(plant)
                if exp > 0:
                    lo, hi = (1.5, 2.5) if rng.random() < 0.5 else (0.2, 0.6)
                    qty = round(exp * float(rng.uniform(lo, hi)), 4)
                else:
                    qty = round(float(rng.uniform(1.0, 10.0)), 4)
                output(plant, qty)
                expected.append((PLANT_CONTRACT, plant.unique_id))
            continue
        _compliant_event(rng, farmers, plants, fraction, cfg, covered, expected_output,
                         report, trade, output, lambda: t, single=n_compliant - n_ok() < 2)
    return Scenario(cfg, registrations, events, expected, n_ok(),
                    blocks=_chunk(rng, registrations, events, max_block))


def _plant_biomass_violation(rng, farmers, fraction, cfg, covered, report, expected, now, advance):
    def pool():
        return [f for f in farmers if covered(f.unique_id, now() + 1) == 0.0
                and fraction[f.field_id] >= cfg.biomass_tolerance + 0.2]

    candidates = pool()
    if not candidates:
        # Let every recent trade age out of the harvest window.
        advance(cfg.harvest_window + 1)
        candidates = pool()
    if not candidates:
        # Regrow one field first; the rise is a compliant report.
        f = farmers[int(rng.integers(len(farmers)))]
        report(f, 0.8)
        advance(cfg.harvest_window + 1)
        candidates = pool()
    f = candidates[int(rng.integers(len(candidates)))]
    drop = cfg.biomass_tolerance + float(rng.uniform(0.1, 0.2))
    report(f, round(max(0.0, fraction[f.field_id] - drop), 4))
    expected.append((BIOMASS_CONTRACT, f.unique_id))


def _compliant_event(rng, farmers, plants, fraction, cfg, covered, expected_output,
                     report, trade, output, now, single=False):
    choice = rng.random()
    f = farmers[int(rng.integers(len(farmers)))]
    prev = fraction[f.field_id]
    if prev < 0.45:
        # Regrowth; a rise never trips the biomass contract.
        report(f, round(float(rng.uniform(0.6, 0.9)), 4))
    elif choice < 0.35:
        # Small drift, strictly inside the tolerance.
        delta = float(rng.uniform(-cfg.biomass_tolerance * 0.5, cfg.biomass_tolerance * 0.5))
        report(f, round(min(0.95, max(0.05, prev + delta)), 4))
    elif choice < 0.65:
        plant = plants[int(rng.integers(len(plants)))]
        trade(f, plant, round(float(rng.uniform(5.0, 40.0)), 4))
    elif choice < 0.85:
        # A harvest: the large drop is covered by trades inside the window.
        drop = cfg.biomass_tolerance + float(rng.uniform(0.1, 0.2))
        need = drop * f.field_yield_estimate
        have = covered(f.unique_id, now() + 2)
        if have < need * 1.2:
            if single:
                report(f, round(min(0.95, prev + cfg.biomass_tolerance * 0.5), 4))
                return
            trade(f, plants[int(rng.integers(len(plants)))], round(need * 1.2 - have + 1.0, 4))
        report(f, round(max(0.0, prev - drop), 4))
    else:
        plant = plants[int(rng.integers(len(plants)))]
        exp = expected_output(plant)
        if exp <= 0:
            trade(f, plant, round(float(rng.uniform(5.0, 40.0)), 4))
            return
        output(plant, round(exp * float(rng.uniform(0.95, 1.05)), 6))


def _chunk(rng, registrations, events, max_block):
    blocks = [list(registrations)]
    i = 0
    while i < len(events):
        n = int(rng.integers(1, max_block + 1))
        blocks.append(events[i:i + n])
        i += n
    return blocks


__all__ = ["CROPS", "Scenario", "generate_scenario"]
