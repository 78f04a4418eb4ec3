"""Deep learning on set-structured data with permutation-equivariant layers.

Self-contained: a float64 tensor core, tape-based reverse-mode autodiff,
equivariant set layers with masked variable-cardinality batches, optimizers,
data pipelines, training experiments, and a CLI.
"""

from .errors import (
    BudgetError,
    ConfigError,
    ContractError,
    DegenerateMeshError,
    DegenerateSetError,
    DimensionError,
    EmptyReductionError,
    FormatError,
    NumericError,
    SetNetError,
)
from .layers import (
    DropoutSpec,
    EquivariantLayer,
    PoolSpec,
    SetBatch,
    dense_forward,
    dropout_forward,
    equivariant_forward,
    normalize_sets,
    set_pool,
)
from .tensor import Permutation

__version__ = "0.1.0"

__all__ = [
    "SetNetError",
    "DimensionError",
    "EmptyReductionError",
    "NumericError",
    "ContractError",
    "FormatError",
    "ConfigError",
    "BudgetError",
    "DegenerateSetError",
    "DegenerateMeshError",
    "SetBatch",
    "EquivariantLayer",
    "PoolSpec",
    "DropoutSpec",
    "Permutation",
    "equivariant_forward",
    "set_pool",
    "dropout_forward",
    "dense_forward",
    "normalize_sets",
    "__version__",
]
