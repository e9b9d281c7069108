"""Multifidelity networks: directed acyclic graphs of linear-subspace surrogates.

Each node ``i`` models an information source as
``f_i(x) = sum_{j in parents(i)} rho_ji(x) f_j(x) + delta_i(x)`` with
``rho_ji = W_ji(x) alpha_ji`` and ``delta_i = V_i(x) beta_i``; all node and
edge coefficients are fit jointly to data from every source.
"""

__version__ = "0.1.0"

from .basis import Basis, BasisError, BasisSpec, eval_basis, make_basis
from .graph import (
    CycleError,
    DanglingEdgeError,
    DuplicateEdgeError,
    Edge,
    GraphError,
    GraphSpec,
    TraversalIndex,
    UnknownNodeError,
    build_graph,
    longest_chain,
    validate,
)
from .mfnet import (
    MFNet,
    ParamLayout,
    ParamVector,
    backward_sweep,
    edge_key,
    evaluate,
    expand_to_polynomial,
    forward_sweep,
    init_params,
    node_key,
)
from .objective import NodeData, Problem, RegConfig, regularized_objective, total_nll
from .optimize import (
    FitConfig,
    FitResult,
    fit,
    fit_auto,
    fit_sparse,
    gradient_check,
    single_fidelity_fit,
)

__all__ = [
    "Basis", "BasisError", "BasisSpec", "eval_basis", "make_basis",
    "CycleError", "DanglingEdgeError", "DuplicateEdgeError", "Edge", "GraphError",
    "GraphSpec", "TraversalIndex", "UnknownNodeError", "build_graph", "longest_chain", "validate",
    "MFNet", "ParamLayout", "ParamVector", "backward_sweep", "edge_key", "evaluate",
    "expand_to_polynomial", "forward_sweep", "init_params", "node_key",
    "NodeData", "Problem", "RegConfig", "regularized_objective", "total_nll",
    "FitConfig", "FitResult", "fit", "fit_auto", "fit_sparse", "gradient_check",
    "single_fidelity_fit",
]
