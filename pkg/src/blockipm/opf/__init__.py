"""Stochastic AC optimal power flow as a block-structured NLP."""
from .matpower import (
    CaseData,
    CaseParseError,
    MalformedRow,
    MissingTable,
    NoReferenceBus,
    load_case,
    parse_matpower,
    resolve_case,
)
from .model import (
    Network,
    OpfBasis,
    OpfModel,
    OpfVariableMap,
    branch_admittances,
    build_block_opf,
    inequality_count,
    network,
    opf_dims,
    reduced_matrix_bytes,
    variable_map,
)
from .scenarios import DisconnectedNetwork, ScenarioSet, generate_scenarios, is_connected

__all__ = [
    "CaseData", "CaseParseError", "DisconnectedNetwork", "MalformedRow", "MissingTable", "Network",
    "NoReferenceBus", "OpfBasis", "OpfModel", "OpfVariableMap", "ScenarioSet", "branch_admittances",
    "build_block_opf", "generate_scenarios", "inequality_count", "is_connected", "load_case", "network",
    "opf_dims", "parse_matpower", "reduced_matrix_bytes", "resolve_case", "variable_map",
]
