"""Acceptance criteria, one test each.

The session fixture drives the real ``roadmap`` command over the full
itr x p grid (base trained from scratch, every variant fine-tuned), so this
module takes a few minutes.  A pass/fail line per criterion is printed in
the terminal summary.
"""
import time
from fractions import Fraction

import numpy as np
import pytest

from gradcheck import LAYER_KINDS, check_kind
from ledger_gen import flip_byte, random_ledger
from oracles import brute_pareto
from prunemap.cli import main
from prunemap.cost_model import count_flops, estimate_energy, measure_latency, model_size_mb
from prunemap.errors import NoFeasibleModel
from prunemap.ledger import Ledger, Participant, Register, block_to_line, generate_scenario, verify_chain
from prunemap.ledger.chain import read_blocks
from prunemap.mission import MissionConfig, ModelStore, ReserveFraction, check_conservation, run_mission
from prunemap.nn import vgg16_fcn_descriptor
from prunemap.roadmap import load_variant, read_manifest, select_model
from test_roadmap import random_budget, random_roadmap, tighten

ITRS = (1, 2, 3)
PS = tuple(round(0.1 * i, 1) for i in range(1, 10))


@pytest.fixture(scope="session")
def grid(tmp_path_factory):
    out = tmp_path_factory.mktemp("roadmap")
    t0 = time.perf_counter()
    code = main(["roadmap", "--itrs", "1,2,3", "--ps", "0.1:0.9:0.1", "--out-dir", str(out)])
    elapsed = time.perf_counter() - t0
    assert code == 0
    entries = read_manifest(out / "roadmap.json")
    return {"dir": out, "entries": entries, "seconds": elapsed,
            "by_key": {(e.itr, round(e.p, 1)): e for e in entries}}


@pytest.mark.criterion(1, "gradient check on every layer kind")
def test_gradient_check():
    t0 = time.perf_counter()
    for i, kind in enumerate(LAYER_KINDS):
        worst, n = check_kind(kind, instances=20, seed=100 + i)
        assert n >= 20
        assert worst < 1e-4, (kind, worst)
    assert time.perf_counter() - t0 < 60


def _shrinks(a, b):
    return any(b.kept_per_layer[k] < a.kept_per_layer[k] for k in a.kept_per_layer)


@pytest.mark.criterion(2, "27 variants + base, cost monotone in p and itr")
def test_roadmap_cardinality_and_monotonicity(grid):
    entries, by_key = grid["entries"], grid["by_key"]
    assert len(entries) == 28 and sum(e.itr == 0 for e in entries) == 1
    assert set(by_key) == {(0, 0.0)} | {(i, p) for i in ITRS for p in PS}
    pairs = [(by_key[(i, a)], by_key[(i, b)]) for i in ITRS for a, b in zip(PS, PS[1:])]
    pairs += [(by_key[(a, p)], by_key[(b, p)]) for p in PS for a, b in zip(ITRS, ITRS[1:])]
    pairs += [(by_key[(0, 0.0)], by_key[(1, p)]) for p in PS]
    base = by_key[(0, 0.0)].kept_per_layer
    classifier = max(base, key=int)
    floor = {k: (v if k == classifier else 1) for k, v in base.items()}
    for lo, hi in pairs:
        if _shrinks(lo, hi):
            assert hi.flops < lo.flops and hi.size_mb < lo.size_mb, (lo.variant_id, hi.variant_id)
        else:
            # only allowed once the min-1 guard holds every pruned layer at one filter
            assert lo.kept_per_layer == hi.kept_per_layer == floor, (lo.variant_id, hi.variant_id)
            assert hi.flops == lo.flops
    assert grid["seconds"] < 30 * 60


@pytest.mark.criterion(3, "itr=3, p=0.9 cuts size >= 98% and FLOPs >= 99%")
def test_extreme_compression(grid):
    base, v = grid["by_key"][(0, 0.0)], grid["by_key"][(3, 0.9)]
    assert 1 - v.size_mb / base.size_mb >= 0.98
    assert 1 - v.flops / base.flops >= 0.99


@pytest.mark.criterion(4, "itr=3 vs itr=1 at p=0.2: >= 40% cheaper, <= 10 pt accuracy drop")
def test_iterative_vs_one_shot(grid):
    one, three = grid["by_key"][(1, 0.2)], grid["by_key"][(3, 0.2)]
    assert 1 - three.flops / one.flops >= 0.40
    assert 1 - three.size_mb / one.size_mb >= 0.40
    assert one.accuracy - three.accuracy <= 0.10


@pytest.mark.criterion(5, "energy identity on every entry")
def test_energy_identity(grid):
    for e in grid["entries"]:
        assert e.energy_j == e.flops * 2.3e-12 + e.size_mb * 640e-12
        model = load_variant(e)
        assert count_flops(model) == e.flops and model_size_mb(model) == e.size_mb
    assert estimate_energy(1e9, 0) == pytest.approx(2.3e-3, rel=1e-15)


@pytest.mark.criterion(6, "VGG16-FCN descriptor brackets 125 GFLOPs / 513 MB")
def test_vgg_scale_bracket():
    vgg = vgg16_fcn_descriptor()
    assert 100e9 <= count_flops(vgg) <= 150e9
    assert 450 <= model_size_mb(vgg) <= 550


@pytest.mark.criterion(7, "itr=2, p=0.5 latency <= 65% of base")
def test_latency_trend(grid):
    base = load_variant(grid["by_key"][(0, 0.0)])
    variant = load_variant(grid["by_key"][(2, 0.5)])
    x = np.random.default_rng(0).random((1, *base.input_shape)).astype(np.float32)
    t_base = measure_latency(base, x, repetitions=50)
    t_var = measure_latency(variant, x, repetitions=50)
    assert t_var <= 0.65 * t_base, (t_var, t_base)


@pytest.mark.criterion(8, "selector Pareto-optimal and monotone on 1000 roadmaps")
def test_selector_properties():
    t0 = time.perf_counter()
    rng = np.random.default_rng(2024)
    checked = 0
    for _ in range(1000):
        es = random_roadmap(rng, int(rng.integers(1, 30)))
        budget = random_budget(rng, es)
        feasible = [e for e in es if budget.admits(e)]
        try:
            chosen = select_model(es, budget)
        except NoFeasibleModel:
            assert not feasible
            continue
        assert chosen in brute_pareto(feasible, axes=("flops", "size_mb", "energy_j"))
        for field in ("max_flops", "max_energy_j", "max_latency_ms", "max_size_mb", "min_accuracy"):
            try:
                tighter = select_model(es, tighten(budget, field, rng))
            except NoFeasibleModel:
                continue
            assert tighter.accuracy <= chosen.accuracy
        checked += 1
    assert checked > 500
    assert time.perf_counter() - t0 < 60


@pytest.mark.criterion(9, "100 random chains verify; 100 byte flips caught at the right block")
def test_ledger_integrity(tmp_path):
    rng = np.random.default_rng(7)
    for seed in range(100):
        assert verify_chain(random_ledger(seed)) is None
    path = tmp_path / "chain.jsonl"
    for seed in range(100):
        ledger = random_ledger(1000 + seed, n_blocks=int(rng.integers(2, 12)))
        lines = [block_to_line(b) for b in ledger.blocks]
        target = int(rng.integers(0, len(lines)))
        path.write_text("\n".join(flip_byte(lines, target, rng)) + "\n")
        assert verify_chain(read_blocks(path)) == target


@pytest.mark.criterion(10, "seeded scenario: exactly the 8 planted anomalies")
def test_contract_soundness():
    sc = generate_scenario(seed=42, n_compliant=200, k_biomass=5, k_plant=3)
    assert sc.compliant_events == 200
    ledger = Ledger(sc.config)
    for txs in sc.blocks:
        ledger.append_block(txs)
    got = [(f.contract_id, f.subject_id) for f in ledger.state.anomalies]
    expected = list(sc.expected_flags)
    true_pos = sum(min(got.count(k), expected.count(k)) for k in set(expected))
    precision = true_pos / len(got) if got else 0.0
    recall = true_pos / len(expected)
    assert len(got) == 8 and precision == 1.0 and recall == 1.0
    assert got == expected


def _mission_ledger(fields):
    ledger = Ledger()
    ledger.append_block([Register(Participant.farmer(f"farmer-{f}", "wheat", 1.0, 2.0, 50.0, field_id=f))
                         for f in fields])
    return ledger


@pytest.mark.criterion(11, "mission replay byte-identical, energy exact, one predicted swap")
def test_mission(grid):
    entries = grid["entries"]
    base = grid["by_key"][(0, 0.0)]
    n, k, r = 6, 3, 0.25
    e0 = Fraction(base.energy_j)
    overhead_j = [base.energy_j / 100] * k + [base.energy_j * 2] * (n - k)
    overheads = [Fraction(o) for o in overhead_j]
    jump = overheads[k]
    inv = 1 / (1 - Fraction(r))
    spent = [sum((e0 + o for o in overheads[:j]), Fraction(0)) for j in range(n + 1)]
    lower = max(spent[j] + (n - j) * (e0 + overheads[j]) * inv for j in range(k))
    upper = spent[k] + (n - k) * (e0 + overheads[k]) * inv
    battery = float((lower + upper) / 2)
    assert lower <= Fraction(battery) < upper

    rem_k = Fraction(battery) - spent[k]
    budget = rem_k * (1 - Fraction(r)) / (n - k) - jump
    feasible = [e for e in entries if Fraction(e.energy_j) <= budget]
    want = min(feasible, key=lambda e: (-e.accuracy, e.flops, e.size_mb, e.variant_id))
    cost = Fraction(want.energy_j) + jump
    for j in range(k, n):  # the cheaper variant carries the mission home without another trigger
        assert rem_k - (j - k) * cost >= (n - j) * cost * inv

    fields = [f"field-{i}" for i in range(n)]
    cfg = MissionConfig(fields, battery, entries, per_capture_overhead_j=overhead_j,
                        swap_policy=ReserveFraction(r), seed=5, initial_variant=base.variant_id)
    runs = [run_mission(cfg, ModelStore(), _mission_ledger(fields)) for _ in range(2)]
    assert runs[0].to_json() == runs[1].to_json()
    assert runs[0].summary_csv() == runs[1].summary_csv()
    log = runs[0]
    assert check_conservation(log)
    assert not log.aborted and len(log.steps) == n
    assert [s["step"] for s in log.swaps] == [k]
    assert log.swaps[0]["from"] == base.variant_id and log.swaps[0]["to"] == want.variant_id
    assert log.remaining_battery == Fraction(battery) - sum(
        (Fraction(base.energy_j if j < k else want.energy_j) + overheads[j] for j in range(n)),
        Fraction(0))
