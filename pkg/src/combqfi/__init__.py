"""Quantum Fisher information of parametrized quantum combs via semidefinite programming."""

from .channels import adaptive_channel_qfi, n_copy_performance_operator, tensor_power_family
from .collision import FrequencyTask, InteractionKind, Scenario, build_comb_family
from .comb import (
    CombFamily,
    EnsembleDecomposition,
    ToothStructure,
    link_product,
    performance_operator,
    state_qfi,
    validate_comb,
)
from .errors import (
    CombQfiError,
    ConstantRankError,
    GaugeError,
    NotPSDError,
    SolverError,
    StructureError,
    ValidationError,
)
from .qfi import channel_qfi, comb_qfi_dual, comb_qfi_min_entropy, optimal_probe, probe_qfi
from .variational import optimize_probe

__version__ = "0.1.0"
