from .diagnostics import PairingReport, adjoint_norm_trace, block_matrix, eigen_pairing_check
from .models import (
    AdjointResult,
    DampingParams,
    OdeFunc,
    OdeModel,
    OdeState,
    SolveOptions,
    adjoint_backward_ghbnode,
    adjoint_backward_hbnode,
    adjoint_backward_node,
    ghbnode_rhs,
    hbnode_rhs,
    linear_field,
    mlp_field,
    node_rhs,
    zero_field,
)
from .solvers import OdeSolverError, SolverStats, integrate, integrate_path

__all__ = [
    "AdjointResult", "DampingParams", "OdeFunc", "OdeModel", "OdeSolverError", "OdeState",
    "PairingReport", "SolveOptions", "SolverStats", "adjoint_backward_ghbnode",
    "adjoint_backward_hbnode", "adjoint_backward_node", "adjoint_norm_trace", "block_matrix",
    "eigen_pairing_check", "ghbnode_rhs", "hbnode_rhs", "integrate", "integrate_path",
    "linear_field", "mlp_field", "node_rhs", "zero_field",
]
