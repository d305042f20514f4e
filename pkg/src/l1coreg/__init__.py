"""Joint recovery of a signal and its indirect data from compressed
measurements, via strict and relaxed l1 co-regularization, with a
certificate engine for the linear error bounds."""

__version__ = "0.1.0"

from . import basis, certificates, cli, experiments, operators, regularizers, solvers
from .basis import CoefficientVector, WaveletBasis, project
from .operators import (
    BernoulliSensing,
    DenseMap,
    IntegrationOp,
    LinearMap,
    ProductMap,
    compose,
    from_descriptor,
    identity,
    materialize,
    operator_norm,
    restrict,
    to_descriptor,
)
from .regularizers import (
    QuadraticPenalty,
    Subgradient,
    WeightedL1,
    bregman_l1,
    bregman_quadratic,
    canonical_subgradient,
    eval_weighted_l1,
    prox_weighted_l1,
)
from .solvers import (
    RelaxedProblem,
    SolveResult,
    SolverConfig,
    StrictProblem,
    objective_relaxed,
    objective_strict,
    reference_solve,
    solve_relaxed,
    solve_strict,
)
from .certificates import (
    InjectivityReport,
    RateConstants,
    SourceCertificateRelaxed,
    SourceCertificateStrict,
    check_norm_bound,
    check_restricted_injectivity,
    check_variational_bounds,
    find_certificate_relaxed,
    find_certificate_strict,
    rate_constants_relaxed,
    rate_constants_strict,
)
from .experiments import (
    Phantom,
    RateFit,
    SweepConfig,
    SweepRecord,
    add_noise,
    determinism_hash,
    emit_csv,
    emit_svg,
    make_phantom,
    parse_csv,
    run_sweep,
)
