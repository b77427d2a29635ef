"""Generate multidisciplinary benchmark problems from optimization problems with known solutions."""

from mdogen.coupling import (
    CouplingSpace,
    LinearCoupling,
    LinkFunction,
    LinkKind,
    SigmoidCoupling,
    compute_alpha_beta,
    coupling_jacobians,
    domain_membership,
    eval_coupling,
    eval_link,
    link_jacobians,
    sample_linear_coupling,
    sample_sigmoid_coupling,
    solve_couplings_exact,
)
from mdogen.mda import Acceleration, Algorithm, MdaResult, MdaSettings, mpe_accelerate, normalized_residual, run_mda
from mdogen.mdf import (
    MdoProblem,
    RunMetrics,
    build_problem,
    equivalence_report,
    export_coupling_graph,
    mdf_gradient,
    mdf_objective,
)
from mdogen.optimize import OptimizerSettings, OptimizeResult, lhs_sample, minimize_box, multistart
from mdogen.problems import (
    DesignPartition,
    EvaluationRecord,
    ReferenceProblem,
    make_rosenbrock_problem,
    rosenbrock_gradient,
    rosenbrock_value,
)

__version__ = "0.1.0"
