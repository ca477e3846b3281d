"""Hash-chained supply-chain ledger with biomass and plant-output audit contracts."""
from .chain import (
    GENESIS_PREV_HASH,
    Block,
    Ledger,
    LedgerState,
    RegulatorSink,
    anomaly_report,
    block_from_line,
    block_hash,
    block_to_line,
    read_blocks,
    verify_chain,
)
from .contracts import (
    BIOMASS_CONTRACT,
    PLANT_CONTRACT,
    ContractConfig,
    Verdict,
    contract_biomass_audit,
    contract_plant_audit,
)
from .encoding import encode, sha256_hex
from .scenario import Scenario, generate_scenario
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

__all__ = [
    "AnomalyFlag", "BIOMASS_CONTRACT", "BiomassReport", "Block", "ContractConfig", "FARMER",
    "GENESIS_PREV_HASH", "Ledger", "LedgerState", "PLANT", "PLANT_CONTRACT", "Participant",
    "PlantOutput", "Register", "RegulatorSink", "Scenario", "Trade", "Verdict", "anomaly_report",
    "block_from_line", "block_hash", "block_to_line", "contract_biomass_audit",
    "contract_plant_audit", "encode", "generate_scenario", "read_blocks", "sha256_hex",
    "tx_from_json", "tx_to_json", "verify_chain",
]
