"""Nonnegative tensor decomposition by KL projection onto log-linear models on the index poset."""

__version__ = "0.1.0"

from .boltzmann import BoltzmannGraph, basis_from_graph, fit_boltzmann
from .errors import DivergenceError, LegendreError, NumericalError, OracleError, ParseError
from .eval_oracle import EvalReport, reference_projection, rmse, synthetic_tensor
from .model import (
    ModelState,
    compute_eta,
    compute_eta_hat,
    compute_psi,
    fisher_matrix,
    kl_divergence,
    reconstruct_q,
)
from .optimizer import DecompositionResult, SolverConfig, decompose, gradient, solve_gd, solve_ng
from .poset_basis import (
    Basis,
    ZetaIncidence,
    build_basis_b1,
    build_basis_b2,
    build_basis_b3,
    build_basis_full,
    build_basis_top,
    build_incidence,
    down_set,
    leq,
    load_basis_file,
    parse_basis_spec,
    up_set,
)
from .tensor_core import (
    NormalizedTensor,
    RawTensor,
    SampleSpace,
    build_sample_space,
    denormalize,
    load_tensor,
    normalize,
)
