import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from oracles import brute_pareto
from prunemap.cost_model import ResourceProfile, estimate_energy
from prunemap.errors import InvalidArgument, NoFeasibleModel
from prunemap.nn import forward, reference_fcn
from prunemap.roadmap import (
    CSV_COLUMNS,
    Budget,
    RoadmapEntry,
    build_roadmap,
    dominates,
    load_variant,
    pareto_frontier,
    read_manifest,
    roadmap_csv,
    select_model,
    write_csv,
    write_manifest,
)
from prunemap.segmentation import make_dataset


def entry(vid, acc, flops, size=1.0, latency=None):
    prof = ResourceProfile(flops, size, estimate_energy(flops, size), latency)
    return RoadmapEntry(vid, 1, 0.5, acc, prof)


ABC = [entry("A", 0.9, 100), entry("B", 0.8, 50), entry("C", 0.7, 60)]


def ids(es):
    return [e.variant_id for e in es]


def test_pareto_examples():
    assert ids(pareto_frontier(ABC)) == ["B", "A"]
    assert ids(pareto_frontier(ABC[:1])) == ["A"]
    twins = [entry("x", 0.5, 10), entry("y", 0.5, 10)]
    assert ids(pareto_frontier(twins)) == ["x", "y"]
    assert dominates(ABC[1], ABC[2]) and not dominates(ABC[0], ABC[1])
    with pytest.raises(InvalidArgument):
        pareto_frontier([])


def test_select_examples():
    assert select_model(ABC, Budget(max_flops=60)).variant_id == "B"
    assert select_model(ABC, Budget(min_accuracy=0.85)).variant_id == "A"
    with pytest.raises(NoFeasibleModel):
        select_model(ABC, Budget(max_flops=40))
    with pytest.raises(InvalidArgument):
        Budget()
    with pytest.raises(InvalidArgument):
        select_model([], Budget(max_flops=1))


def test_select_tie_breaks():
    es = [entry("z", 0.8, 50, 2.0), entry("y", 0.8, 50, 1.0), entry("x", 0.8, 70, 0.5), entry("w", 0.8, 50, 1.0)]
    assert select_model(es, Budget(max_flops=100)).variant_id == "w"


def test_latency_budget_skips_unprofiled_entries():
    es = [entry("fast", 0.9, 10, latency=None), entry("timed", 0.5, 20, latency=3.0)]
    assert select_model(es, Budget(max_latency_ms=5.0)).variant_id == "timed"


BUDGET_FIELDS = ("max_flops", "max_energy_j", "max_latency_ms", "max_size_mb", "min_accuracy")


def random_roadmap(rng, n):
    return [entry(f"v{i:03d}", float(rng.choice([rng.random(), round(rng.random(), 1)])),
                  int(rng.integers(1, 10**6)), float(rng.random() * 4), float(rng.random() * 10))
            for i in range(n)]


def random_budget(rng, es):
    kw = {}
    for f in BUDGET_FIELDS:
        if rng.random() < 0.5:
            attr = "accuracy" if f == "min_accuracy" else f[4:]
            vals = [getattr(e, attr) for e in es]
            kw[f] = float(rng.uniform(min(vals), max(vals)))
    if not kw:
        kw["max_flops"] = float(rng.integers(1, 10**6))
    return Budget(**kw)


def tighten(budget, field, rng):
    old = getattr(budget, field)
    kw = {f: getattr(budget, f) for f in BUDGET_FIELDS}
    if field == "min_accuracy":
        kw[field] = (old or 0.0) + rng.random() * 0.3
    else:
        base = old if old is not None else 10**6
        kw[field] = base * rng.random()
    return Budget(**kw)


@settings(max_examples=200)
@given(seed=st.integers(0, 2**32 - 1), n=st.integers(1, 30))
def test_selection_is_pareto_optimal_and_monotone(seed, n):
    rng = np.random.default_rng(seed)
    es = random_roadmap(rng, n)
    budget = random_budget(rng, es)
    feasible = [e for e in es if budget.admits(e)]
    try:
        chosen = select_model(es, budget)
    except NoFeasibleModel:
        assert not feasible
        return
    assert chosen in brute_pareto(feasible, axes=("flops", "size_mb", "energy_j"))
    assert chosen.accuracy == max(e.accuracy for e in feasible)
    field = BUDGET_FIELDS[int(rng.integers(0, len(BUDGET_FIELDS)))]
    try:
        tighter = select_model(es, tighten(budget, field, rng))
    except NoFeasibleModel:
        return
    assert tighter.accuracy <= chosen.accuracy


@pytest.fixture(scope="module")
def small_roadmap(tmp_path_factory):
    out = tmp_path_factory.mktemp("rm")
    base = reference_fcn(seed=0, widths=(4, 6, 8, 10), input_size=16)
    train_data = make_dataset(2, 16, seed=1)
    heldout = make_dataset(3, 16, seed=2)
    entries = build_roadmap(base, [1, 2], [0.5, 0.3], train_data, heldout, heldout_seed=2,
                            fine_tune_epochs=1, out_dir=out, latency_reps=3)
    return out, base, entries, (train_data, heldout)


def test_build_roadmap_shape(small_roadmap):
    _, base, entries, _ = small_roadmap
    assert [(e.itr, e.p) for e in entries] == [(0, 0.0), (1, 0.3), (1, 0.5), (2, 0.3), (2, 0.5)]
    assert entries[0].variant_id == "base" and entries[0].flops > entries[1].flops
    for e in entries:
        assert 0.0 <= e.accuracy <= 1.0 and e.latency_ms > 0
        assert e.energy_j == estimate_energy(e.flops, e.size_mb)
        assert e.heldout_seed == 2 and e.heldout_size == 3
        model = load_variant(e)
        assert forward(model, np.zeros((1, 1, 16, 16))).shape == (1, 2, 16, 16)


def test_build_roadmap_single_variant_and_errors():
    base = reference_fcn(seed=0, widths=(4, 6, 8, 10), input_size=16)
    data = make_dataset(2, 16, seed=1)
    assert len(build_roadmap(base, {1}, {0.5}, data, data, fine_tune_epochs=0)) == 2
    for itrs, ps in (([1], []), ([], [0.5]), ([0], [0.5]), ([1], [1.0]), ([1], [0.0])):
        with pytest.raises(InvalidArgument):
            build_roadmap(base, itrs, ps, data, data, fine_tune_epochs=0)


def test_parallel_build_matches_serial(small_roadmap):
    _, base, entries, (train_data, heldout) = small_roadmap
    par = build_roadmap(base, [1, 2], [0.5, 0.3], train_data, heldout, heldout_seed=2,
                        fine_tune_epochs=1, jobs=2)
    for a, b in zip(entries, par):
        assert (a.variant_id, a.accuracy, a.flops, a.size_mb) == (b.variant_id, b.accuracy, b.flops, b.size_mb)


def test_manifest_and_csv_round_trip(small_roadmap, tmp_path):
    _, _, entries, _ = small_roadmap
    path = write_manifest(entries, tmp_path / "roadmap.json")
    back = read_manifest(path)
    assert [e.to_dict() for e in back] == [e.to_dict() for e in entries]
    text = roadmap_csv(entries)
    lines = text.splitlines()
    assert lines[0].split(",") == list(CSV_COLUMNS) and len(lines) == len(entries) + 1
    assert write_csv(entries, tmp_path / "r.csv").read_text() == text


def test_manifest_relative_paths_and_errors(tmp_path):
    d = entry("v", 0.5, 10).to_dict()
    d["checkpoint_path"] = "checkpoints/v.json"
    (tmp_path / "m.json").write_text(json.dumps([d]))
    [e] = read_manifest(tmp_path / "m.json")
    assert e.checkpoint_path == str(tmp_path / "checkpoints/v.json")
    (tmp_path / "bad.json").write_text(json.dumps({"not": "a list"}))
    with pytest.raises(InvalidArgument):
        read_manifest(tmp_path / "bad.json")
    (tmp_path / "bad2.json").write_text(json.dumps([{"variant_id": "x"}]))
    with pytest.raises(InvalidArgument):
        read_manifest(tmp_path / "bad2.json")
