"""Nonsmooth two-stage stochastic programs over finite scenario spaces,
modeled, penalized, solved, and certified through exact finite-vertex
codifferential calculus."""

from .codiff import (
    CodiffPair,
    QuasidiffPair,
    codiff,
    dirderiv,
    expansion_value,
    prune,
    quasidiff,
)
from .errors import (
    CodiffspError,
    DimensionMismatch,
    InfeasibleCandidate,
    NonFinite,
    NotDC,
    NotSmooth,
    ParseError,
    Unprojectable,
    ValidationError,
    VertexCapExceeded,
)
from .expectation import BlockCodiff, I_dirderiv, I_expansion, block_codiff, eval_I
from .expr import (
    Expr,
    Space,
    absolute,
    add,
    affine,
    constant,
    dc,
    dc_parts,
    evaluate,
    evaluate_batch,
    is_convex_struct,
    is_smooth_struct,
    maximum,
    minimum,
    quad,
    scale,
)
from .model import (
    FeasReport,
    FirstStageSet,
    Point,
    ScenarioSpace,
    TwoStageProblem,
    generate,
    is_feasible,
    load_point,
    load_problem,
    serialize_point,
    serialize_problem,
)
from ._minnorm import min_norm_point
from .optimality import (
    Certificate,
    check_optimality,
    inf_stationarity_measure,
    smooth_kkt_check,
)
from .penalty import (
    NondegReport,
    PenaltySpec,
    Phi_c,
    check_nondegeneracy,
    penalty_codiff,
    penalty_integrand,
    phi_dist,
    phi_l1,
)
from .solvers import (
    SolveOpts,
    SolveReport,
    codiff_descent,
    convex_subsolve,
    dc_decompose,
    dca_solve,
)

__version__ = "0.1.0"

__all__ = [
    "BlockCodiff",
    "Certificate",
    "CodiffPair",
    "CodiffspError",
    "DimensionMismatch",
    "Expr",
    "FeasReport",
    "FirstStageSet",
    "I_dirderiv",
    "I_expansion",
    "InfeasibleCandidate",
    "NonFinite",
    "NondegReport",
    "NotDC",
    "NotSmooth",
    "ParseError",
    "PenaltySpec",
    "Phi_c",
    "Point",
    "QuasidiffPair",
    "ScenarioSpace",
    "SolveOpts",
    "SolveReport",
    "Space",
    "TwoStageProblem",
    "Unprojectable",
    "ValidationError",
    "VertexCapExceeded",
    "absolute",
    "add",
    "affine",
    "block_codiff",
    "check_nondegeneracy",
    "check_optimality",
    "codiff",
    "codiff_descent",
    "constant",
    "convex_subsolve",
    "dc",
    "dc_decompose",
    "dc_parts",
    "dca_solve",
    "dirderiv",
    "eval_I",
    "evaluate",
    "evaluate_batch",
    "expansion_value",
    "generate",
    "inf_stationarity_measure",
    "is_convex_struct",
    "is_feasible",
    "is_smooth_struct",
    "load_point",
    "load_problem",
    "maximum",
    "min_norm_point",
    "minimum",
    "penalty_codiff",
    "penalty_integrand",
    "phi_dist",
    "phi_l1",
    "prune",
    "quad",
    "quasidiff",
    "scale",
    "serialize_point",
    "serialize_problem",
    "smooth_kkt_check",
    "__version__",
]
