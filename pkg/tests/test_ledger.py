import json

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ledger_gen import flip_byte, random_ledger
from prunemap.errors import UnknownField, UnknownPlant, UnknownYieldFactor, ValidationError
from prunemap.ledger import (
    BIOMASS_CONTRACT,
    GENESIS_PREV_HASH,
    PLANT_CONTRACT,
    AnomalyFlag,
    BiomassReport,
    ContractConfig,
    Ledger,
    Participant,
    PlantOutput,
    Register,
    RegulatorSink,
    Trade,
    anomaly_report,
    block_to_line,
    encode,
    generate_scenario,
    read_blocks,
    tx_from_json,
    tx_to_json,
    verify_chain,
)
from prunemap.segmentation import BiomassReading

FARMER = Participant.farmer("alice", "sugarcane", -27.5, 153.0, field_yield_estimate=100.0, field_id="f1")
MILL = Participant.plant("mill", "sugar")


def fresh():
    ledger = Ledger(ContractConfig(yield_factor={"sugarcane": 0.10}))
    ledger.append_block([Register(FARMER), Register(MILL)])
    return ledger


def reading(value, ts, field="f1"):
    return BiomassReport(BiomassReading(field, value, -27.5, 153.0, ts))


def flags_of(block):
    return [tx for tx in block.payload if isinstance(tx, AnomalyFlag)]


def test_genesis_block():
    ledger = Ledger()
    block = ledger.append_block([Register(MILL)])
    assert block.index == 0 and block.prev_hash == GENESIS_PREV_HASH == "0" * 64
    assert verify_chain(Ledger()) is None


def test_identical_payloads_hash_differently():
    ledger = fresh()
    a = ledger.append_block([Trade("alice", "mill", 1.0, "cane", 1)])
    b = ledger.append_block([Trade("alice", "mill", 1.0, "cane", 1)])
    assert a.block_hash != b.block_hash and b.prev_hash == a.block_hash


def test_unregistered_seller_is_rejected():
    ledger = fresh()
    with pytest.raises(ValidationError) as exc:
        ledger.append_block([Trade("mallory", "mill", 5.0, "cane", 1)])
    assert exc.value.position == 0
    assert len(ledger) == 1


def test_duplicate_registration_rejected():
    ledger = fresh()
    with pytest.raises(ValidationError):
        ledger.append_block([Register(FARMER)])
    with pytest.raises(ValidationError):
        ledger.append_block([AnomalyFlag(BIOMASS_CONTRACT, "alice")])


def test_chain_address_is_twenty_bytes():
    assert len(FARMER.chain_address) == 40
    assert FARMER.chain_address != MILL.chain_address


def test_biomass_examples():
    ledger = fresh()
    assert not flags_of(ledger.append_block([reading(0.40, 1)]))  # baseline
    assert not flags_of(ledger.append_block([reading(0.38, 2)]))
    [flag] = flags_of(ledger.append_block([reading(0.15, 3)]))
    assert flag.contract_id == BIOMASS_CONTRACT and flag.subject_id == "alice"
    assert flag.details["drop"] == pytest.approx(0.23)
    assert flag.details["uncovered_tonnes"] == pytest.approx(23.0)
    assert flag.details["biomass_tolerance"] == 0.10

    ledger = fresh()
    ledger.append_block([reading(0.40, 1)])
    [flag] = flags_of(ledger.append_block([reading(0.15, 2)]))
    assert flag.details["uncovered_tonnes"] == pytest.approx(25.0)

    ledger = fresh()
    ledger.append_block([reading(0.40, 1)])
    block = ledger.append_block([Trade("alice", "mill", 30.0, "cane", 2), reading(0.10, 3)])
    assert not flags_of(block)


def test_harvest_window_bounds_coverage():
    ledger = fresh()
    ledger.append_block([reading(0.40, 1), Trade("alice", "mill", 30.0, "cane", 2)])
    [flag] = flags_of(ledger.append_block([reading(0.10, 6)]))  # trade at 2 < 6 - 3
    assert flag.details["covered_tonnes"] == 0.0


def test_unknown_field_and_plant():
    ledger = fresh()
    with pytest.raises(UnknownField):
        ledger.append_block([reading(0.5, 1, field="nowhere")])
    with pytest.raises(UnknownPlant):
        ledger.append_block([PlantOutput("ghost", "sugar", 1.0, 1)])
    other = Ledger()
    other.append_block([Register(FARMER), Register(MILL), Trade("alice", "mill", 1.0, "cane", 1)])
    with pytest.raises(UnknownYieldFactor):
        other.append_block([PlantOutput("mill", "sugar", 1.0, 2)])


def test_plant_output_examples():
    ledger = fresh()
    ledger.append_block([Trade("alice", "mill", 100.0, "cane", 1)])
    [flag] = flags_of(ledger.append_block([PlantOutput("mill", "sugar", 25.0, 2)]))
    assert flag.contract_id == PLANT_CONTRACT and flag.subject_id == "mill"
    assert flag.details["expected_tonnes"] == pytest.approx(10.0)
    assert flag.details["relative_deviation"] == pytest.approx(1.5)

    ledger = fresh()
    ledger.append_block([Trade("alice", "mill", 100.0, "cane", 1)])
    assert not flags_of(ledger.append_block([PlantOutput("mill", "sugar", 10.5, 2)]))
    # inputs were consumed; a second output has nothing behind it
    [flag] = flags_of(ledger.append_block([PlantOutput("mill", "sugar", 0.1, 3)]))
    assert flag.details["expected_tonnes"] == 0.0


def test_flags_follow_their_trigger_and_reach_the_sink(tmp_path):
    ledger = fresh()
    sink = RegulatorSink(tmp_path / "regulator.json")
    ledger.on_anomaly.append(sink)
    block = ledger.append_block([Trade("alice", "mill", 100.0, "cane", 1),
                                 PlantOutput("mill", "sugar", 25.0, 2),
                                 Trade("alice", "mill", 1.0, "cane", 3)])
    assert [tx.kind for tx in block.payload] == ["Trade", "PlantOutput", "AnomalyFlag", "Trade"]
    assert len(sink.flags) == 1
    assert json.loads((tmp_path / "regulator.json").read_text())[0]["subject_id"] == "mill"
    assert anomaly_report(ledger)[0]["block"] == 1


@pytest.mark.parametrize("bad", [
    Trade("alice", "mill", -1.0, "cane", 1),
    Trade("alice", "mill", float("nan"), "cane", 1),
    Trade("mill", "alice", 1.0, "cane", 1),
    Trade("alice", "nobody", 1.0, "cane", 1),
])
def test_failed_append_is_atomic(bad):
    ledger = fresh()
    ledger.append_block([reading(0.5, 1)])
    before = ledger.snapshot()
    n, tip = len(ledger), ledger.tip_hash
    with pytest.raises(ValidationError) as exc:
        ledger.append_block([Trade("alice", "mill", 3.0, "cane", 2), reading(0.1, 3), bad])
    assert exc.value.position == 2
    assert len(ledger) == n and ledger.tip_hash == tip
    assert ledger.state == before


def test_encoding_is_injective_on_tricky_pairs():
    pairs = [(["ab", "c"], ["a", "bc"]), (1, 1.0), (True, 1), ("1", 1), (None, "N"), ([], {}),
             ({"a": 1}, [("a", 1)])]
    for a, b in pairs:
        assert encode(a) != encode(b)


def test_transaction_json_round_trip():
    txs = [Register(FARMER), Register(MILL), Trade("alice", "mill", 2.5, "cane", 3), reading(0.4, 4),
           PlantOutput("mill", "sugar", 1.0, 5), AnomalyFlag("c", "s", {"x": 1.5}, 6)]
    for tx in txs:
        back = tx_from_json(json.loads(json.dumps(tx_to_json(tx))))
        assert back == tx and encode(back) == encode(tx)


@settings(max_examples=100)
@given(seed=st.integers(0, 2**32 - 1))
def test_random_sequences_verify_and_replay(seed):
    ledger = random_ledger(seed)
    assert verify_chain(ledger) is None
    replayed = Ledger.replay(ledger.blocks, ledger.config)
    assert replayed.state == ledger.state
    assert replayed.tip_hash == ledger.tip_hash


def test_save_load_round_trip(tmp_path):
    ledger = random_ledger(11, n_blocks=12)
    path = ledger.save(tmp_path / "chain.jsonl")
    loaded = Ledger.load(path, ledger.config)
    assert loaded.state == ledger.state
    assert [block_to_line(b) for b in loaded.blocks] == path.read_text().splitlines()


@pytest.mark.parametrize("seed", range(20))
def test_single_byte_tamper_detected_at_its_block(seed, tmp_path):
    ledger = random_ledger(seed, n_blocks=10)
    lines = [block_to_line(b) for b in ledger.blocks]
    rng = np.random.default_rng(seed)
    target = int(rng.integers(0, len(lines)))
    path = tmp_path / "chain.jsonl"
    path.write_text("\n".join(flip_byte(lines, target, rng)) + "\n")
    assert verify_chain(read_blocks(path)) == target
    with pytest.raises(ValidationError) as exc:
        Ledger.load(path, ledger.config)
    assert exc.value.position == target


def test_hash_and_link_mutations_detected():
    ledger = random_ledger(5, n_blocks=10)
    blocks = list(ledger.blocks)
    b = blocks[4]
    forged = type(b)(b.index, b.prev_hash, b.payload, "f" + b.block_hash[1:])
    assert verify_chain(blocks[:4] + [forged] + blocks[5:]) == 4
    # recomputing block 4's hash after editing it still breaks block 5's link
    edited = type(b)(b.index, b.prev_hash, b.payload[:-1], "")
    edited = type(b)(b.index, b.prev_hash, edited.payload, edited.recompute_hash())
    assert verify_chain(blocks[:4] + [edited] + blocks[5:]) == 5


def test_replay_rejects_forged_flags():
    ledger = fresh()
    ledger.append_block([reading(0.4, 1)])
    blocks = list(ledger.blocks)
    b = blocks[1]
    forged = AnomalyFlag(BIOMASS_CONTRACT, "alice", {}, 1)
    blocks[1] = type(b)(b.index, b.prev_hash, b.payload + (forged,), "")
    with pytest.raises(ValidationError):
        Ledger.replay(blocks, ledger.config)


@pytest.mark.parametrize("seed", range(10))
def test_seeded_scenario_flags_exactly_the_planted_violations(seed):
    sc = generate_scenario(seed)
    assert sc.compliant_events == 200
    ledger = Ledger(sc.config)
    for txs in sc.blocks:
        ledger.append_block(txs)
    got = [(f.contract_id, f.subject_id) for f in ledger.state.anomalies]
    assert got == sc.expected_flags
    assert sum(c == BIOMASS_CONTRACT for c, _ in got) == 5
    assert sum(c == PLANT_CONTRACT for c, _ in got) == 3
