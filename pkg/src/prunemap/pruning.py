"""Structured l1-norm filter pruning with channel surgery.

A *channel group* is a set of conv layers whose output channels must stay
aligned: normally one layer, but a SkipAdd ties the layer feeding it to
the layer that produced the skip source.  Every conv that reads a group's
channels is one of its *consumers* and loses the matching input channels.
"""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field

import numpy as np

from .cost_model import ResourceProfile, profile
from .errors import InvalidArgument, NotPrunableLayer, ShapeMismatch, SurgeryShapeError
from .nn.layers import SkipAdd, is_conv
from .nn.model import ModelGraph
from .nn.train import Dataset, TrainConfig, evaluate_accuracy, train

log = logging.getLogger(__name__)


@dataclass(frozen=True, order=True)
class FilterScore:
    l1_norm: float
    filter_index: int
    layer_index: int


@dataclass
class ChannelGraph:
    groups: list[tuple[int, ...]]
    consumers: list[tuple[int, ...]]
    classifier_group: int

    def group_of(self, layer_index: int) -> int:
        for g, members in enumerate(self.groups):
            if layer_index in members:
                return g
        raise NotPrunableLayer(f"layer {layer_index} is not a conv layer")


def channel_graph(model: ModelGraph) -> ChannelGraph:
    parent = {i: i for i in model.conv_indices}

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    producer_at = []  # conv index whose channels flow out of each layer (None = raw input)
    reads = []  # (consumer conv, producer conv at its input)
    current = None
    for i, layer in enumerate(model.layers):
        if is_conv(layer):
            if current is not None:
                reads.append((i, current))
            current = i
        elif isinstance(layer, SkipAdd):
            other = producer_at[layer.source]
            if (current is None) != (other is None):
                raise SurgeryShapeError(f"layer {i} adds raw input channels to conv channels")
            if current is not None:
                parent[find(other)] = find(current)
        producer_at.append(current)

    roots = sorted({find(i) for i in parent}, key=lambda r: min(j for j in parent if find(j) == r))
    groups = [tuple(sorted(j for j in parent if find(j) == r)) for r in roots]
    index_of = {r: g for g, r in enumerate(roots)}
    consumers = [[] for _ in groups]
    for consumer, producer in reads:
        consumers[index_of[find(producer)]].append(consumer)
    return ChannelGraph(
        groups=groups,
        consumers=[tuple(sorted(c)) for c in consumers],
        classifier_group=index_of[find(producer_at[-1])],
    )


def filter_l1(layer) -> np.ndarray:
    return np.abs(layer.weight).astype(np.float64).sum(axis=(1, 2, 3))


def score_filters(model: ModelGraph, layer_index: int) -> list[FilterScore]:
    """Filters of one conv layer, ascending by l1 norm (ties: lower index first)."""
    if not 0 <= layer_index < len(model.layers) or not is_conv(model.layers[layer_index]):
        raise NotPrunableLayer(f"layer {layer_index} is not a conv layer")
    norms = filter_l1(model.layers[layer_index])
    return sorted(FilterScore(float(v), j, layer_index) for j, v in enumerate(norms))


def keep_count(n: int, p: float) -> int:
    # tolerance absorbs float noise such as 0.7 * 10 = 7.000000000000001
    return max(1, n - math.floor(p * n + 1e-9))


def keep_schedule(n: int, p: float, iterations: int) -> list[int]:
    counts = [n]
    for _ in range(iterations):
        counts.append(keep_count(counts[-1], p))
    return counts


def _check_ratio(p: float) -> None:
    if not 0.0 <= p < 1.0:
        raise InvalidArgument(f"pruning ratio must satisfy 0 <= p < 1, got {p}")


def prunable_groups(model: ModelGraph, prunable_layers=None) -> tuple[ChannelGraph, list[int]]:
    cg = channel_graph(model)
    if prunable_layers is None:
        chosen = [g for g in range(len(cg.groups)) if g != cg.classifier_group]
        return cg, chosen
    chosen = set()
    for idx in prunable_layers:
        g = cg.group_of(idx)
        if g == cg.classifier_group:
            raise NotPrunableLayer(f"layer {idx} produces the class logits")
        chosen.add(g)
    return cg, sorted(chosen)


def _group_keep(model: ModelGraph, members: tuple[int, ...], m: int) -> np.ndarray:
    norms = {i: filter_l1(model.layers[i]) for i in members}
    n = len(next(iter(norms.values())))
    candidates = set()
    for i in members:
        order = sorted(range(n), key=lambda j: (norms[i][j], j))
        candidates.update(order[n - m:])
    if len(candidates) > m:
        combined = sum(norms.values())
        candidates = sorted(candidates, key=lambda j: (-combined[j], j))[:m]
    return np.array(sorted(candidates), dtype=np.int64)


def plan_prune(model: ModelGraph, p: float, prunable_layers=None) -> dict[int, np.ndarray]:
    """Kept filter indices for each pruned channel group, keyed by the group's first layer."""
    _check_ratio(p)
    cg, chosen = prunable_groups(model, prunable_layers)
    plan = {}
    for g in chosen:
        members = cg.groups[g]
        n = model.layers[members[0]].out_channels
        plan[members[0]] = _group_keep(model, members, keep_count(n, p))
    return plan


def apply_keep(model: ModelGraph, plan: dict[int, np.ndarray]) -> ModelGraph:
    out = model.copy()
    cg = channel_graph(model)
    for first, keep in plan.items():
        g = cg.group_of(first)
        for i in cg.groups[g]:
            layer = out.layers[i]
            layer.weight = np.ascontiguousarray(layer.weight[keep])
            if layer.bias is not None:
                layer.bias = np.ascontiguousarray(layer.bias[keep])
            layer.out_channels = len(keep)
        for i in cg.consumers[g]:
            layer = out.layers[i]
            layer.weight = np.ascontiguousarray(layer.weight[:, keep])
            layer.in_channels = len(keep)
    try:
        out.validate()
    except ShapeMismatch as exc:
        raise SurgeryShapeError(str(exc)) from exc
    return out


def prune_step(model: ModelGraph, p: float, prunable_layers=None) -> ModelGraph:
    """Remove the lowest-l1 filters of every prunable layer.

    Each layer with n filters keeps ``max(1, n - floor(p*n))``; consumer
    layers lose the matching input channels.
    """
    return apply_keep(model, plan_prune(model, p, prunable_layers))


def filter_counts(model: ModelGraph) -> dict[int, int]:
    return {i: model.layers[i].out_channels for i in model.conv_indices}


@dataclass
class PruneConfig:
    ratio: float
    iterations: int = 1
    fine_tune_epochs_per_iter: int = 5
    prunable_layers: list[int] | None = None
    learning_rate: float = 1e-2
    batch_size: int = 1
    seed: int = 0

    def check(self) -> None:
        _check_ratio(self.ratio)
        if self.iterations < 1:
            raise InvalidArgument("iterations must be >= 1")
        if self.fine_tune_epochs_per_iter < 0:
            raise InvalidArgument("fine_tune_epochs_per_iter must be >= 0")


@dataclass
class PruneRecord:
    iteration: int
    removed: dict[int, list[int]]
    pre_counts: dict[int, int]
    post_counts: dict[int, int]
    accuracy: float | None = None
    profile: ResourceProfile | None = None
    fine_tune_losses: list[float] = field(default_factory=list)


@dataclass
class PruneStepResult:
    iteration: int
    model: ModelGraph
    record: PruneRecord


def iterative_prune(model: ModelGraph, cfg: PruneConfig, data: Dataset | None = None,
                    heldout: Dataset | None = None) -> list[PruneStepResult]:
    """Prune then fine-tune, ``cfg.iterations`` times, keeping every intermediate model.

    The ratio is re-applied to the current filter count each round.  With
    ``fine_tune_epochs_per_iter == 0`` no training data is needed.
    """
    cfg.check()
    if cfg.fine_tune_epochs_per_iter and data is None:
        raise InvalidArgument("fine-tuning requires training data")
    results = []
    current = model
    for it in range(1, cfg.iterations + 1):
        pre = filter_counts(current)
        plan = plan_prune(current, cfg.ratio, cfg.prunable_layers)
        pruned = apply_keep(current, plan)
        cg = channel_graph(current)
        removed = {}
        for first, keep in plan.items():
            n = current.layers[first].out_channels
            dropped = sorted(set(range(n)) - set(keep.tolist()))
            for i in cg.groups[cg.group_of(first)]:
                removed[i] = dropped
        losses = []
        if cfg.fine_tune_epochs_per_iter:
            tc = TrainConfig(
                learning_rate=cfg.learning_rate,
                epochs=cfg.fine_tune_epochs_per_iter,
                batch_size=cfg.batch_size,
                seed=cfg.seed * 1000 + it,
            )
            res = train(pruned, data, tc)
            pruned, losses = res.model, res.losses
        record = PruneRecord(
            iteration=it,
            removed=removed,
            pre_counts=pre,
            post_counts=filter_counts(pruned),
            accuracy=evaluate_accuracy(pruned, heldout) if heldout is not None else None,
            profile=profile(pruned),
            fine_tune_losses=losses,
        )
        log.info("p=%.2f itr=%d flops=%d acc=%s", cfg.ratio, it, record.profile.flops, record.accuracy)
        results.append(PruneStepResult(it, pruned, record))
        current = pruned
    return results


def variant_record(itr: int, p: float, model: ModelGraph, accuracy: float | None,
                   prof: ResourceProfile) -> dict:
    """Per-variant JSON record."""
    return {
        "itr": itr,
        "p": p,
        "kept_per_layer": {str(k): v for k, v in filter_counts(model).items()},
        "accuracy": accuracy,
        "flops": prof.flops,
        "size_mb": prof.size_mb,
        "energy_j": prof.energy_j,
        "latency_ms": prof.latency_ms,
    }
