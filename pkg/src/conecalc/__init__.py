"""Numerical calculus on completely monotone functions, Bernstein functions
and branching mechanisms."""

__version__ = "0.1.0"

from .cones import (  # noqa: E402
    BernsteinTriple,
    BranchingTriple,
    CompletelyMonotoneRep,
    cone_scale_add,
    derivative_map_B2_to_B1,
    derivative_map_B3_to_B2,
    divide_by_q_map,
    evaluate,
    integral_map,
    mul_by_q_map,
)
from .checker import (  # noqa: E402
    ConeCertificate,
    FunctionHandle,
    check_bernstein,
    check_branching,
    check_cm,
    check_stieltjes_derivative,
    drift_coefficient,
)
from .composition import (  # noqa: E402
    bochner_subordinate,
    compose,
    compose_with_e_alpha_triple,
    corollary1_check,
    internal_from_subordinator,
    invert_branching,
    is_internal,
    iterate_remark,
    ladder_functions,
    stieltjes_compose,
)
from .errors import (  # noqa: E402
    CapabilityError,
    ConeCalcError,
    DomainError,
    EstimationError,
    EvaluationError,
    PreconditionError,
    RepresentationError,
)
from .measures import Atom, PowerExp, RadonMeasure, TabulatedDensity, WeightKind  # noqa: E402
from .stable import check_lemma1, e_alpha, e_alpha_triple, lemma1_bound, nu_alpha_density, stable_density  # noqa: E402
