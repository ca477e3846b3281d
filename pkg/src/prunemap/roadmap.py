"""Roadmap of pruned variants and budget-constrained model selection."""
from __future__ import annotations

import csv
import io
import json
import logging
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field, fields
from pathlib import Path

from .cost_model import ResourceProfile, measure_latency, profile
from .errors import InvalidArgument, NoFeasibleModel
from .nn.checkpoint import load_checkpoint, save_checkpoint
from .nn.model import ModelGraph
from .nn.train import Dataset, evaluate_accuracy
from .pruning import PruneConfig, filter_counts, iterative_prune

log = logging.getLogger(__name__)

CSV_COLUMNS = ("itr", "p", "accuracy", "flops", "size_mb", "energy_j", "latency_ms")
BASE_ID = "base"


@dataclass
class RoadmapEntry:
    variant_id: str
    itr: int
    p: float
    accuracy: float
    profile: ResourceProfile
    checkpoint_path: str | None = None
    kept_per_layer: dict[str, int] = field(default_factory=dict)
    heldout_seed: int | None = None
    heldout_size: int | None = None

    @property
    def flops(self) -> int:
        return self.profile.flops

    @property
    def size_mb(self) -> float:
        return self.profile.size_mb

    @property
    def energy_j(self) -> float:
        return self.profile.energy_j

    @property
    def latency_ms(self) -> float | None:
        return self.profile.latency_ms

    def to_dict(self) -> dict:
        return {
            "variant_id": self.variant_id,
            "itr": self.itr,
            "p": self.p,
            "accuracy": self.accuracy,
            "flops": self.flops,
            "size_mb": self.size_mb,
            "energy_j": self.energy_j,
            "latency_ms": self.latency_ms,
            "checkpoint_path": self.checkpoint_path,
            "kept_per_layer": self.kept_per_layer,
            "heldout_seed": self.heldout_seed,
            "heldout_size": self.heldout_size,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "RoadmapEntry":
        prof = ResourceProfile(d["flops"], d["size_mb"], d["energy_j"], d.get("latency_ms"))
        return cls(
            variant_id=d["variant_id"],
            itr=d["itr"],
            p=d["p"],
            accuracy=d["accuracy"],
            profile=prof,
            checkpoint_path=d.get("checkpoint_path"),
            kept_per_layer=d.get("kept_per_layer", {}),
            heldout_seed=d.get("heldout_seed"),
            heldout_size=d.get("heldout_size"),
        )


@dataclass
class Budget:
    max_flops: float | None = None
    max_energy_j: float | None = None
    max_latency_ms: float | None = None
    max_size_mb: float | None = None
    min_accuracy: float | None = None

    def __post_init__(self):
        if all(getattr(self, f.name) is None for f in fields(self)):
            raise InvalidArgument("a budget needs at least one constraint")

    def admits(self, e: RoadmapEntry) -> bool:
        if self.max_flops is not None and e.flops > self.max_flops:
            return False
        if self.max_energy_j is not None and e.energy_j > self.max_energy_j:
            return False
        if self.max_size_mb is not None and e.size_mb > self.max_size_mb:
            return False
        if self.min_accuracy is not None and e.accuracy < self.min_accuracy:
            return False
        if self.max_latency_ms is not None:
            # unprofiled entries cannot prove they meet a latency bound
            if e.latency_ms is None or e.latency_ms > self.max_latency_ms:
                return False
        return True


def variant_id(itr: int, p: float) -> str:
    return BASE_ID if itr == 0 else f"itr{itr}-p{p:.2f}"


def _entry(vid, itr, p, model, heldout, heldout_seed, out_dir):
    prof = profile(model)
    ckpt = None
    if out_dir is not None:
        path = Path(out_dir) / "checkpoints" / f"{vid}.json"
        save_checkpoint(model, path)
        ckpt = str(path)
    return RoadmapEntry(
        variant_id=vid,
        itr=itr,
        p=p,
        accuracy=evaluate_accuracy(model, heldout),
        profile=prof,
        checkpoint_path=ckpt,
        kept_per_layer={str(k): v for k, v in filter_counts(model).items()},
        heldout_seed=heldout_seed,
        heldout_size=len(heldout),
    )


def _ratio_job(args):
    base, p, itrs, train_data, heldout, heldout_seed, prune_kwargs, out_dir = args
    cfg = PruneConfig(ratio=p, iterations=max(itrs), **prune_kwargs)
    steps = iterative_prune(base, cfg, train_data)
    return [
        (_entry(variant_id(s.iteration, p), s.iteration, p, s.model, heldout, heldout_seed, out_dir),
         s.model)
        for s in steps
        if s.iteration in itrs
    ]


def build_roadmap(base: ModelGraph, itrs, ps, train_data: Dataset, heldout: Dataset, *,
                  heldout_seed: int | None = None, fine_tune_epochs: int = 5,
                  learning_rate: float = 1e-2, batch_size: int = 1, seed: int = 0,
                  out_dir=None, latency_reps: int = 0, jobs: int = 1) -> list[RoadmapEntry]:
    """Base entry plus one fine-tuned variant per (itr, p).

    The itr=k variant for ratio p is the k-th intermediate of a single
    iterative run at p, so each ratio is pruned once up to ``max(itrs)``.
    """
    itrs = sorted({int(i) for i in itrs})
    ps = sorted({float(p) for p in ps})
    if not ps:
        raise InvalidArgument("ps must be non-empty")
    if not itrs or itrs[0] < 1:
        raise InvalidArgument("itrs must be a non-empty set of positive integers")
    if any(not 0.0 < p < 1.0 for p in ps):
        raise InvalidArgument("every p must lie in (0, 1)")

    prune_kwargs = {
        "fine_tune_epochs_per_iter": fine_tune_epochs,
        "learning_rate": learning_rate,
        "batch_size": batch_size,
    }
    jobs_args = []
    for p in ps:
        kw = dict(prune_kwargs, seed=seed + int(round(p * 1000)))
        jobs_args.append((base, p, set(itrs), train_data, heldout, heldout_seed, kw, out_dir))

    built = [(_entry(BASE_ID, 0, 0.0, base, heldout, heldout_seed, out_dir), base)]
    if jobs > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for chunk in pool.map(_ratio_job, jobs_args):
                built.extend(chunk)
    else:
        for args in jobs_args:
            built.extend(_ratio_job(args))
    built.sort(key=lambda em: (em[0].itr, em[0].p))

    if latency_reps:
        # timed serially after the build so measurements never overlap
        for entry, model in built:
            entry.profile.latency_ms = measure_latency(model, repetitions=latency_reps)
    return [entry for entry, _ in built]


def load_variant(entry: RoadmapEntry) -> ModelGraph:
    if entry.checkpoint_path is None:
        raise InvalidArgument(f"{entry.variant_id} has no checkpoint")
    return load_checkpoint(entry.checkpoint_path)


def dominates(a: RoadmapEntry, b: RoadmapEntry, axes=("flops", "size_mb")) -> bool:
    """``a`` dominates ``b``: accuracy no lower, every resource axis no higher, one strict."""
    if a.accuracy < b.accuracy:
        return False
    if any(getattr(a, ax) > getattr(b, ax) for ax in axes):
        return False
    return a.accuracy > b.accuracy or any(getattr(a, ax) < getattr(b, ax) for ax in axes)


def pareto_frontier(entries, axes=("flops", "size_mb")) -> list[RoadmapEntry]:
    entries = list(entries)
    if not entries:
        raise InvalidArgument("entries must be non-empty")
    front = [e for e in entries if not any(dominates(o, e, axes) for o in entries if o is not e)]
    return sorted(front, key=lambda e: e.flops)


def select_model(entries, budget: Budget) -> RoadmapEntry:
    """Most accurate entry within budget; ties go to fewer FLOPs, smaller size, lower id."""
    entries = list(entries)
    if not entries:
        raise InvalidArgument("entries must be non-empty")
    feasible = [e for e in entries if budget.admits(e)]
    if not feasible:
        raise NoFeasibleModel(f"no roadmap entry satisfies {budget}")
    return min(feasible, key=lambda e: (-e.accuracy, e.flops, e.size_mb, e.variant_id))


def write_manifest(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps([e.to_dict() for e in entries], indent=2) + "\n", encoding="utf-8")
    return path


def read_manifest(path) -> list[RoadmapEntry]:
    """Entries of a manifest; relative checkpoint paths resolve against its directory."""
    path = Path(path)
    data = json.loads(path.read_text(encoding="utf-8"))
    if not isinstance(data, list):
        raise InvalidArgument(f"{path}: roadmap manifest must be a JSON array")
    try:
        entries = [RoadmapEntry.from_dict(d) for d in data]
    except (KeyError, TypeError) as exc:
        raise InvalidArgument(f"{path}: malformed roadmap entry ({exc!r})") from None
    for e in entries:
        if e.checkpoint_path and not Path(e.checkpoint_path).is_absolute():
            e.checkpoint_path = str(path.parent / e.checkpoint_path)
    return entries


def _fmt(v) -> str:
    return "" if v is None else repr(v)


def roadmap_csv(entries) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(CSV_COLUMNS)
    for e in entries:
        w.writerow([e.itr, _fmt(e.p), _fmt(e.accuracy), e.flops, _fmt(e.size_mb),
                    _fmt(e.energy_j), _fmt(e.latency_ms)])
    return buf.getvalue()


def write_csv(entries, path) -> Path:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(roadmap_csv(entries), encoding="utf-8")
    return path
