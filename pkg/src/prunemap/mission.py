"""Discrete-step UAV survey: capture, infer, report to the ledger, swap models on a tight battery.

Battery bookkeeping uses exact rationals.  Every float that enters the
energy ledger (battery, model energy, overheads, reserve fraction) is
converted with ``Fraction(x)``, which is exact for binary floats, so the
per-step energies plus the remaining charge always sum to the initial
battery with no rounding.
"""
from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from fractions import Fraction
from pathlib import Path

import numpy as np

from .errors import InvalidArgument, NoFeasibleModel
from .ledger import Ledger, contract_biomass_audit
from .ledger.transactions import BiomassReport
from .nn.checkpoint import load_checkpoint
from .nn.model import ModelGraph
from .roadmap import Budget, RoadmapEntry, read_manifest, select_model
from .segmentation import estimate_biomass, generate_field


@dataclass(frozen=True)
class ReserveFraction:
    """Keep a fraction ``r`` of the remaining battery as margin."""

    r: float = 0.2

    def __post_init__(self):
        if not 0.0 < self.r < 1.0:
            raise InvalidArgument("reserve fraction must lie in (0, 1)")

    def triggers(self, remaining: Fraction, steps_left: int, energy, overhead) -> bool:
        need = steps_left * (Fraction(energy) + Fraction(overhead))
        return remaining < need / (1 - Fraction(self.r))

    def energy_budget(self, remaining: Fraction, steps_left: int, overhead) -> Fraction:
        return remaining * (1 - Fraction(self.r)) / steps_left - Fraction(overhead)


@dataclass
class MissionConfig:
    fields_to_survey: list[str]
    battery_j: float
    roadmap: list[RoadmapEntry]
    per_capture_overhead_j: float | list[float] = 0.0  # scalar, or one value per field
    swap_policy: ReserveFraction = field(default_factory=ReserveFraction)
    latency_budget_ms: float | None = None
    seed: int = 0
    image_size: int = 32
    start_timestamp: int = 1
    initial_variant: str | None = None  # default: most accurate entry meeting the latency budget

    def __post_init__(self):
        if not self.battery_j > 0:
            raise InvalidArgument("battery_j must be positive")
        if not self.roadmap:
            raise InvalidArgument("roadmap must be non-empty")
        if not self.fields_to_survey:
            raise InvalidArgument("fields_to_survey must be non-empty")
        if isinstance(self.per_capture_overhead_j, (list, tuple)):
            if len(self.per_capture_overhead_j) != len(self.fields_to_survey):
                raise InvalidArgument("per_capture_overhead_j needs one value per field")
        if any(o < 0 for o in self.overheads()):
            raise InvalidArgument("per_capture_overhead_j must be non-negative")
        if self.initial_variant is not None and self.initial_variant not in {
                e.variant_id for e in self.roadmap}:
            raise InvalidArgument(f"initial_variant {self.initial_variant!r} is not in the roadmap")

    def overheads(self) -> list[float]:
        o = self.per_capture_overhead_j
        if isinstance(o, (list, tuple)):
            return [float(v) for v in o]
        return [float(o)] * len(self.fields_to_survey)

    def to_dict(self) -> dict:
        return {
            "fields_to_survey": list(self.fields_to_survey),
            "battery_j": self.battery_j,
            "per_capture_overhead_j": self.per_capture_overhead_j,
            "reserve_fraction": self.swap_policy.r,
            "latency_budget_ms": self.latency_budget_ms,
            "seed": self.seed,
            "image_size": self.image_size,
            "start_timestamp": self.start_timestamp,
            "initial_variant": self.initial_variant,
            "roadmap": [e.variant_id for e in self.roadmap],
        }

    @classmethod
    def from_json(cls, path) -> "MissionConfig":
        """Read a config file; ``roadmap`` may be an inline array or a manifest path."""
        path = Path(path)
        raw = json.loads(path.read_text(encoding="utf-8"))
        known = {"fields_to_survey", "battery_j", "per_capture_overhead_j", "reserve_fraction",
                 "roadmap", "latency_budget_ms", "seed", "image_size", "start_timestamp",
                 "initial_variant"}
        unknown = set(raw) - known
        if unknown:
            raise InvalidArgument(f"unknown mission config keys: {sorted(unknown)}")
        for key in ("fields_to_survey", "battery_j", "roadmap"):
            if key not in raw:
                raise InvalidArgument(f"mission config is missing {key!r}")
        roadmap = raw["roadmap"]
        if isinstance(roadmap, str):
            rpath = Path(roadmap)
            if not rpath.is_absolute():
                rpath = path.parent / rpath
            entries = read_manifest(rpath)
        else:
            entries = [RoadmapEntry.from_dict(d) for d in roadmap]
        return cls(
            fields_to_survey=list(raw["fields_to_survey"]),
            battery_j=float(raw["battery_j"]),
            roadmap=entries,
            per_capture_overhead_j=raw.get("per_capture_overhead_j", 0.0),
            swap_policy=ReserveFraction(float(raw.get("reserve_fraction", 0.2))),
            latency_budget_ms=raw.get("latency_budget_ms"),
            seed=int(raw.get("seed", 0)),
            image_size=int(raw.get("image_size", 32)),
            start_timestamp=int(raw.get("start_timestamp", 1)),
            initial_variant=raw.get("initial_variant"),
        )


class ModelStore:
    """Variant id -> model, from preloaded models or the entries' checkpoints."""

    def __init__(self, models: dict[str, ModelGraph] | None = None):
        self._models = dict(models or {})

    def get(self, entry: RoadmapEntry) -> ModelGraph:
        model = self._models.get(entry.variant_id)
        if model is None:
            if entry.checkpoint_path is None:
                raise InvalidArgument(f"no model or checkpoint for {entry.variant_id}")
            model = load_checkpoint(entry.checkpoint_path)
            self._models[entry.variant_id] = model
        return model


@dataclass
class MissionLog:
    initial_battery_exact: str
    steps: list[dict] = field(default_factory=list)
    swaps: list[dict] = field(default_factory=list)
    aborted: bool = False
    abort_reason: str | None = None
    abort_step: int | None = None
    remaining_battery_exact: str = ""
    config: dict = field(default_factory=dict)

    @property
    def remaining_battery(self) -> Fraction:
        return Fraction(self.remaining_battery_exact)

    @property
    def biomass_reports(self) -> list[float]:
        return [s["biomass_fraction"] for s in self.steps]

    def to_dict(self) -> dict:
        return {
            "config": self.config,
            "initial_battery_exact": self.initial_battery_exact,
            "remaining_battery_exact": self.remaining_battery_exact,
            "remaining_battery_j": float(self.remaining_battery),
            "aborted": self.aborted,
            "abort_reason": self.abort_reason,
            "abort_step": self.abort_step,
            "swaps": self.swaps,
            "steps": self.steps,
        }

    def to_json(self) -> str:
        return json.dumps(self.to_dict(), indent=2, sort_keys=True) + "\n"

    def summary_csv(self) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(("step", "variant", "energy", "battery"))
        for s in self.steps:
            w.writerow((s["step"], s["variant_id"], repr(s["energy_j"]), repr(s["remaining_battery_j"])))
        return buf.getvalue()

    def write(self, json_path, csv_path=None) -> tuple[Path, Path | None]:
        json_path = Path(json_path)
        json_path.parent.mkdir(parents=True, exist_ok=True)
        json_path.write_text(self.to_json(), encoding="utf-8")
        if csv_path is not None:
            csv_path = Path(csv_path)
            csv_path.write_text(self.summary_csv(), encoding="utf-8")
        return json_path, csv_path


def check_conservation(log: MissionLog | dict) -> bool:
    """Exact check that step energies plus the remaining charge equal the initial battery."""
    d = log.to_dict() if isinstance(log, MissionLog) else log
    spent = sum((Fraction(s["energy_exact"]) for s in d["steps"]), Fraction(0))
    return spent + Fraction(d["remaining_battery_exact"]) == Fraction(d["initial_battery_exact"])


def _initial_entry(cfg: MissionConfig) -> RoadmapEntry:
    if cfg.initial_variant is not None:
        return next(e for e in cfg.roadmap if e.variant_id == cfg.initial_variant)
    if cfg.latency_budget_ms is not None:
        return select_model(cfg.roadmap, Budget(max_latency_ms=cfg.latency_budget_ms))
    return min(cfg.roadmap, key=lambda e: (-e.accuracy, e.flops, e.size_mb, e.variant_id))


def _capture(cfg: MissionConfig, step: int, field_id: str):
    # One child seed per step keeps each capture independent of the swap history.
    seq = np.random.SeedSequence([cfg.seed, step])
    rng = np.random.default_rng(seq)
    cover = float(rng.uniform(0.1, 0.9))
    return generate_field(int(rng.integers(0, 2**31 - 1)), cfg.image_size, cover, field_id)


def run_mission(cfg: MissionConfig, model_store: ModelStore, ledger: Ledger) -> MissionLog:
    """Survey ``cfg.fields_to_survey`` in order; failures end up in the log, not as exceptions."""
    remaining = Fraction(cfg.battery_j)
    log = MissionLog(initial_battery_exact=str(remaining), config=cfg.to_dict())
    overheads = cfg.overheads()
    n = len(cfg.fields_to_survey)

    def abort(step, reason):
        log.aborted = True
        log.abort_step = step
        log.abort_reason = reason

    missing = [f for f in cfg.fields_to_survey if f not in ledger.state.field_owner]
    try:
        current = _initial_entry(cfg)
    except NoFeasibleModel as exc:
        current = None
        abort(0, f"NoFeasibleModel: {exc}")
    if missing and not log.aborted:
        abort(0, f"UnknownField: {', '.join(missing)} not registered on the ledger")

    for step, field_id in enumerate(cfg.fields_to_survey):
        if log.aborted:
            break
        steps_left = n - step
        overhead = overheads[step]
        swap = None
        if cfg.swap_policy.triggers(remaining, steps_left, current.energy_j, overhead):
            max_energy = cfg.swap_policy.energy_budget(remaining, steps_left, overhead)
            budget = Budget(max_energy_j=max_energy, max_latency_ms=cfg.latency_budget_ms)
            try:
                chosen = select_model(cfg.roadmap, budget)
            except NoFeasibleModel:
                abort(step, f"NoFeasibleModel: no variant fits max_energy_j={float(max_energy)!r}")
                break
            swap = {
                "step": step,
                "from": current.variant_id,
                "to": chosen.variant_id,
                "max_energy_j": float(max_energy),
                "max_energy_exact": str(max_energy),
                "max_latency_ms": cfg.latency_budget_ms,
                # a re-selection that raises FLOPs is a recovery, not a degradation
                "recovery": chosen.flops > current.flops,
            }
            log.swaps.append(swap)
            current = chosen

        cost = Fraction(current.energy_j) + Fraction(overhead)
        model = model_store.get(current)
        image = _capture(cfg, step, field_id)
        farmer = ledger.state.participants[ledger.state.field_owner[field_id]]
        reading = estimate_biomass(model, image, farmer.latitude, farmer.longitude,
                                   cfg.start_timestamp + step)
        verdict = contract_biomass_audit(ledger.state, reading, ledger.config)
        block = ledger.append_block([BiomassReport(reading)])
        remaining -= cost
        log.steps.append({
            "step": step,
            "field_id": field_id,
            "variant_id": current.variant_id,
            "model_energy_j": current.energy_j,
            "overhead_j": overhead,
            "energy_j": float(cost),
            "energy_exact": str(cost),
            "remaining_battery_j": float(remaining),
            "remaining_battery_exact": str(remaining),
            "biomass_fraction": reading.biomass_fraction,
            "true_fraction": image.biomass_fraction,
            "swap": swap,
            "verdict": {"contract_id": verdict.contract_id, "subject_id": verdict.subject_id,
                        "status": verdict.status},
            "block_index": block.index,
        })
    log.remaining_battery_exact = str(remaining)
    return log


__all__ = [
    "MissionConfig",
    "MissionLog",
    "ModelStore",
    "ReserveFraction",
    "check_conservation",
    "run_mission",
]
