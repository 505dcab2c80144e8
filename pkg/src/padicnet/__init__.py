"""Finite-level p-adic deep networks.

Locally constant functions and kernels on the p-adic integers, the
fixed-point hidden state of the continuous network, recasting of layered
networks, the edge-detector toy model and Gaussian parameter priors.
"""
from .errors import (
    CapacityError,
    DomainError,
    FormatError,
    InfeasibleError,
    NumericError,
    PadicNetError,
)
from .padic import PadicIndex, children, haar_weight, next_prime, project
from .tree import (
    IDENTITY,
    PWL_SIGMOID,
    TANH,
    Activation,
    TreeFunction,
    TreeKernel,
    apply_activation,
    apply_kernel,
    convolve,
    get_activation,
    inner,
    integrate,
    kernel_l2_norm,
    kernel_operator_norm,
    l2_norm,
    lift,
    register_activation,
    tree_sum,
)
from .solver import (
    NetworkParams,
    SolveReport,
    check_constant_state,
    contraction_constant,
    forward_map,
    solve,
    solve_constant_scalar,
    solve_interval,
    theoretical_iteration_budget,
)
from ._parallel import set_threads

__version__ = "0.1.0"
