"""Robust share-of-choice product line design from polyhedral conjoint data.

The package covers the full loop: encode pairwise survey responses as
polyhedral partworth uncertainty sets, pick product lines whose worst-case
share of choice is maximal (a dualized MILP), explain the recommendation by
recombining survey rows (dual attribution), design the next survey question
by column-generation pricing, and benchmark the adaptive designs against
fixed orthogonal plans.

The HTTP survey service lives in :mod:`prodline.service` and the command
line entry point in :mod:`prodline.cli`; neither is imported here so that
the modeling core stays importable without web dependencies.
"""

from prodline.aca import (
    SurveyState,
    apply_answers,
    cg_round,
    fpaca_next_question,
    load_orthogonal_design,
    propose_questions,
    solve_pp_ctl,
    solve_pp_emt,
)
from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductLine,
    ProductProfile,
    Question,
    ResponseSet,
    SchemaError,
    encode_question,
    flip_question,
    product_utility,
    question_from_row,
)
from prodline.gaussian import (
    PopulationModel,
    condition_on_equalities,
    fit_population,
    sample_polytope_gaussian,
)
from prodline.harness import (
    ExperimentConfig,
    ExperimentRecord,
    run_experiment,
    run_instance,
    summarize,
)
from prodline.milp import SolverError
from prodline.polyhedra import (
    InfeasiblePolyhedron,
    Polyhedron,
    analytic_center,
    chebyshev_center,
    is_feasible,
)
from prodline.respondents import (
    GroundTruth,
    draw_ground_truth,
    generate_population_synthetic,
    load_camera_population,
    outside_option_profile,
    reference_equalities,
)
from prodline.socmodels import (
    Attribution,
    SocSolution,
    compute_guarantee_bound,
    evaluate_true_soc,
    extract_attribution,
    solve_pco_rt,
    solve_socd,
    worst_case_utility,
)

__all__ = [
    "AttributeSchema",
    "Attribution",
    "ExperimentConfig",
    "ExperimentRecord",
    "GroundTruth",
    "InfeasiblePolyhedron",
    "PartworthBox",
    "Polyhedron",
    "PopulationModel",
    "ProductLine",
    "ProductProfile",
    "Question",
    "ResponseSet",
    "SchemaError",
    "SocSolution",
    "SolverError",
    "SurveyState",
    "analytic_center",
    "apply_answers",
    "cg_round",
    "chebyshev_center",
    "compute_guarantee_bound",
    "condition_on_equalities",
    "draw_ground_truth",
    "encode_question",
    "evaluate_true_soc",
    "extract_attribution",
    "fit_population",
    "flip_question",
    "fpaca_next_question",
    "generate_population_synthetic",
    "is_feasible",
    "load_camera_population",
    "load_orthogonal_design",
    "outside_option_profile",
    "product_utility",
    "propose_questions",
    "question_from_row",
    "reference_equalities",
    "run_experiment",
    "run_instance",
    "sample_polytope_gaussian",
    "solve_pco_rt",
    "solve_pp_ctl",
    "solve_pp_emt",
    "solve_socd",
    "summarize",
    "worst_case_utility",
]

__version__ = "0.1.0"
