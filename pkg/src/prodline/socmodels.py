"""Share-of-choice product line design models.

Two MILP routes to a recommended line of M products.  The point-estimate
model scores coverage against fixed partworth vectors.  The robust model
treats each customer's partworths as anywhere inside their response
polyhedron and counts a customer as covered only when the worst case over
that polyhedron is still nonnegative; LP duality turns the inner worst case
into nonnegative multipliers on the survey rows, so coverage becomes a
certificate that can be attributed back to individual questions.

Also here: the worst-case utility LP and its dual (the certificate engine),
brute-force oracles used by the test suite, and the sampling guarantee
bound for the share-of-choice estimate.
"""

from __future__ import annotations

import heapq
import itertools
import math
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
from numpy.typing import NDArray

from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductLine,
    ProductProfile,
    ResponseSet,
)
from prodline.milp import FEAS_TOL, ModelIR, SolveResult, Variable, solve_lp, solve_milp
from prodline.polyhedra import InfeasiblePolyhedron, Polyhedron, analytic_center, is_feasible

__all__ = [
    "Attribution",
    "CustomerAttribution",
    "SocSolution",
    "WorstCaseUtility",
    "big_c_for_box",
    "big_c_for_partworths",
    "build_pco_rt",
    "build_socd",
    "build_wcu_dual",
    "brute_force_pld",
    "compute_guarantee_bound",
    "customer_polyhedra",
    "describe_question_vector",
    "enumerate_profiles",
    "evaluate_true_soc",
    "extract_attribution",
    "solve_pco_rt",
    "solve_socd",
    "worst_case_coverage_oracle",
    "worst_case_utility",
    "worst_case_utility_dual",
]

DEFAULT_BETA_BOUND = 1e4


# ---------------------------------------------------------------------------
# Results
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class SocSolution:
    """A solved product-line model.

    ``alpha``, ``beta``, ``gamma`` hold the certificate variables of the
    robust model (None for the point-estimate model).  ``beta[n]`` is
    indexed by the dualized rows of customer n's polyhedron in the order
    produced by ``Polyhedron.dual_rows``.
    """

    product_line: ProductLine
    objective: float
    y: NDArray[np.float64]
    alpha: tuple[NDArray, ...] | None
    beta: tuple[NDArray, ...] | None
    gamma: tuple[NDArray, ...] | None
    schema: AttributeSchema
    status: str
    box: PartworthBox | None = None
    known_equalities: tuple[NDArray, NDArray] | None = None
    stats: dict = field(default_factory=dict)

    @property
    def covered_count(self) -> int:
        return int(np.sum(self.y > 0.5))


@dataclass(frozen=True)
class WorstCaseUtility:
    """Optimal value of the adversarial utility LP for one product line.

    ``box_supported`` is True when the minimizer leans on a box face at a
    level that the product line uses but no survey row has ever touched;
    the value is then an artifact of the box radius rather than of any
    elicited information.
    """

    value: float
    box_supported: bool
    untested_levels: tuple[int, ...]
    minimizer: NDArray[np.float64]


@dataclass(frozen=True)
class CustomerAttribution:
    customer_id: str
    covered: bool
    certificate: float
    entries: tuple[dict, ...]

    def to_json(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "covered": self.covered,
            "certificate": self.certificate,
            "entries": list(self.entries),
        }


@dataclass(frozen=True)
class Attribution:
    """Per-customer decomposition of the robust coverage certificates."""

    customers: tuple[CustomerAttribution, ...]

    def to_json(self) -> dict:
        return {"customers": [c.to_json() for c in self.customers]}


# ---------------------------------------------------------------------------
# Big-M helpers
# ---------------------------------------------------------------------------


def big_c_for_partworths(partworths: NDArray, schema: AttributeSchema) -> float:
    """1 + the largest possible |u^T x| over customers and feasible profiles."""
    U = np.atleast_2d(np.asarray(partworths, dtype=np.float64))
    worst = 0.0
    for row in U:
        total = sum(
            float(np.abs(row[list(schema.levels_of(a))]).max())
            for a in range(schema.attribute_count)
        )
        worst = max(worst, total)
    return 1.0 + worst


def big_c_for_box(box: PartworthBox) -> float:
    """1 + sum over levels of the larger box magnitude (valid for any profile)."""
    return 1.0 + float(np.maximum(np.abs(box.lower), np.abs(box.upper)).sum())


# ---------------------------------------------------------------------------
# Point-estimate model
# ---------------------------------------------------------------------------


def _add_line_variables(
    model: ModelIR,
    schema: AttributeSchema,
    M: int,
    forbidden_profiles: tuple[ProductProfile, ...] = (),
) -> None:
    for m in range(M):
        for l in range(schema.total_levels):
            model.add_variable(f"x_{m}_{l}", 0.0, 1.0, integer=True)
    for m in range(M):
        for a in range(schema.attribute_count):
            coeffs = {f"x_{m}_{l}": 1.0 for l in schema.levels_of(a)}
            model.add_constraint(coeffs, "=", 1.0, name=f"onelev_{m}_{a}")
    # a profile matches a forbidden one exactly iff it shares all A selected
    # levels, so capping the overlap at A-1 bars it without cutting others
    for i, prof in enumerate(forbidden_profiles):
        levels = prof.selected_levels(schema)
        for m in range(M):
            model.add_constraint(
                {f"x_{m}_{l}": 1.0 for l in levels},
                "<=",
                float(len(levels) - 1),
                name=f"forbid_{m}_{i}",
            )


def build_socd(
    partworths: NDArray,
    schema: AttributeSchema,
    M: int,
    bigC: float | None = None,
    forbidden_profiles: tuple[ProductProfile, ...] = (),
) -> ModelIR:
    """Coverage MILP against fixed partworth vectors.

    Customer n is covered (y_n = 1) when some offered product m has
    u_n^T x_m >= 0; bigC must dominate every achievable |u_n^T x| plus one,
    which ``big_c_for_partworths`` computes.
    """
    U = np.atleast_2d(np.asarray(partworths, dtype=np.float64))
    N, L = U.shape
    if L != schema.total_levels:
        raise ValueError(f"partworth length {L} does not match schema ({schema.total_levels})")
    if bigC is None:
        bigC = big_c_for_partworths(U, schema)
    model = ModelIR("socd")
    _add_line_variables(model, schema, M, forbidden_profiles)
    for n in range(N):
        model.add_variable(f"y_{n}", 0.0, 1.0, integer=True)
        for m in range(M):
            model.add_variable(f"z_{n}_{m}", 0.0, 1.0, integer=True)
    for n in range(N):
        for m in range(M):
            # u^T x_m + C (1 - z_nm) >= 0, written in <= form
            coeffs = {f"x_{m}_{l}": -float(U[n, l]) for l in range(L) if U[n, l] != 0.0}
            coeffs[f"z_{n}_{m}"] = bigC
            model.add_constraint(coeffs, "<=", bigC, name=f"util_{n}_{m}")
        cov = {f"z_{n}_{m}": -1.0 for m in range(M)}
        cov[f"y_{n}"] = 1.0
        model.add_constraint(cov, "<=", 0.0, name=f"cover_{n}")
    model.set_objective({f"y_{n}": 1.0 / N for n in range(N)}, "max")
    return model


# ---------------------------------------------------------------------------
# Worst-case utility of a fixed line (primal and dual)
# ---------------------------------------------------------------------------


def worst_case_utility(X: ProductLine, P: Polyhedron) -> WorstCaseUtility:
    """min over u in P of the best offered product's utility.

    Solves min c subject to u^T x_m <= c for every product and u in P.  The
    box always bounds the LP, so instead of "unbounded below" the result
    flags minimizers resting on box faces at levels untested by any row.
    """
    L = P.dimension
    model = ModelIR("wcu")
    for l in range(L):
        model.add_variable(f"u_{l}", float(P.box.lower[l]), float(P.box.upper[l]))
    model.add_variable("c", -np.inf, np.inf)
    for m, prof in enumerate(X.products):
        coeffs = {f"u_{l}": 1.0 for l in np.flatnonzero(prof.x)}
        coeffs["c"] = -1.0
        model.add_constraint(coeffs, "<=", 0.0, name=f"best_{m}")
    for k in range(P.n_rows):
        coeffs = {f"u_{l}": float(P.Q[k, l]) for l in np.flatnonzero(P.Q[k])}
        rel = "=" if P.equality_rows[k] else ">="
        model.add_constraint(coeffs, rel, float(P.r[k]), name=f"row_{k}")
    model.set_objective({"c": 1.0}, "min")
    result = solve_lp(model)
    if result.status == "infeasible":
        raise InfeasiblePolyhedron("worst-case utility LP infeasible: empty polyhedron")
    if result.status != "optimal":
        raise RuntimeError(f"worst-case utility LP ended with status {result.status}")
    u_star = result.vector([f"u_{l}" for l in range(L)])
    used = sorted({l for prof in X.products for l in np.flatnonzero(prof.x)})
    touched = np.zeros(L, dtype=bool)
    if P.n_rows:
        touched = np.abs(P.Q).sum(axis=0) > 0
    untested = []
    for l in used:
        if touched[l]:
            continue
        scale = max(1.0, abs(P.box.lower[l]), abs(P.box.upper[l]))
        at_face = (
            abs(u_star[l] - P.box.lower[l]) <= 1e-7 * scale
            or abs(u_star[l] - P.box.upper[l]) <= 1e-7 * scale
        )
        if at_face:
            untested.append(int(l))
    return WorstCaseUtility(
        value=float(result.objective),
        box_supported=bool(untested),
        untested_levels=tuple(untested),
        minimizer=u_star,
    )


def build_wcu_dual(X: ProductLine, P: Polyhedron) -> ModelIR:
    """Dual of the worst-case utility LP.

    max sum_j beta_j r_j over beta >= 0, alpha in the simplex, subject to
    sum_j beta_j q_jl = sum_m alpha_m x_ml per level, where (q_j, r_j) runs
    over the polyhedron's dualized rows (equalities split, box included).
    """
    rows, rhs, _ = P.dual_rows()
    J = rows.shape[0]
    M = X.M
    model = ModelIR("wcu_dual")
    for j in range(J):
        model.add_variable(f"beta_{j}", 0.0, np.inf)
    for m in range(M):
        model.add_variable(f"alpha_{m}", 0.0, np.inf)
    Xmat = X.as_matrix()
    for l in range(P.dimension):
        coeffs: dict[str, float] = {}
        for j in np.flatnonzero(rows[:, l]):
            coeffs[f"beta_{j}"] = float(rows[j, l])
        for m in np.flatnonzero(Xmat[:, l]):
            coeffs[f"alpha_{m}"] = coeffs.get(f"alpha_{m}", 0.0) - 1.0
        if coeffs:
            model.add_constraint(coeffs, "=", 0.0, name=f"level_{l}")
    model.add_constraint({f"alpha_{m}": 1.0 for m in range(M)}, "=", 1.0, name="simplex")
    model.set_objective(
        {f"beta_{j}": float(rhs[j]) for j in range(J) if rhs[j] != 0.0}, "max"
    )
    return model


def worst_case_utility_dual(X: ProductLine, P: Polyhedron) -> SolveResult:
    """Solve the dual LP; its optimum equals the primal worst case (strong duality)."""
    return solve_lp(build_wcu_dual(X, P))


# ---------------------------------------------------------------------------
# Robust model
# ---------------------------------------------------------------------------


def customer_polyhedra(
    responses: list[ResponseSet],
    box: PartworthBox,
    known_equalities: tuple[NDArray, NDArray] | None = None,
) -> list[Polyhedron]:
    return [Polyhedron.from_responses(rs, box, known_equalities) for rs in responses]


def build_pco_rt(
    responses: list[ResponseSet],
    schema: AttributeSchema,
    M: int,
    bigC: float | None = None,
    box: PartworthBox | None = None,
    known_equalities: tuple[NDArray, NDArray] | None = None,
    beta_bound: float = DEFAULT_BETA_BOUND,
    fix_line: ProductLine | None = None,
    relax_y: bool = False,
    check_feasible: bool = True,
    forbidden_profiles: tuple[ProductProfile, ...] = (),
    fix_coverage: NDArray | None = None,
) -> ModelIR:
    """Robust coverage MILP over the customers' response polyhedra.

    Per customer the dualized rows (q_j, r_j) of the polyhedron (equality
    rows split into pairs, box faces appended) get multipliers beta >= 0,
    and coverage y_n = 1 is allowed only when the multipliers certify
    sum beta r >= 0 while recombining into the offered line:
    sum_j beta_j q_jl = sum_m gamma_ml with gamma linking alpha to x.

    ``bigC`` defaults to ``big_c_for_box(box)``.  An uncovered customer can
    always present the zero certificate (the relaxed combination rows absorb
    the line's gamma mass), so any positive constant leaves the optimum
    unchanged; the box-derived one dominates every certificate deficit while
    staying small enough that solver row scaling cannot swallow a genuine
    violation of the y_n = 1 branch.

    ``fix_line`` pins the x variables to a given line and ``relax_y`` makes
    the y continuous; together they turn the model into the restricted
    master LP whose row duals drive adaptive question pricing.

    ``fix_coverage`` pins the coverage indicators to a known 0/1 pattern
    and drops every big-C device: covered customers get hard certificate
    rows (value >= -FEAS_TOL, recombination exact) and uncovered customers
    are held at the zero certificate.  The solve then succeeds only when a
    genuine certificate exists for each claimed-covered customer, which is
    what lets the enumeration route verify its primal scoring instead of
    re-deciding coverage under MILP tolerances.  The y are constants in
    this variant, so the objective switches to the total certificate
    value, pulling each customer's multipliers to their dual optimum;
    callers reporting a coverage share take it from the pattern itself.
    """
    if box is None:
        raise ValueError("build_pco_rt requires the partworth box")
    N = len(responses)
    if N == 0:
        raise ValueError("no customers")
    L = schema.total_levels
    polys = customer_polyhedra(responses, box, known_equalities)
    if check_feasible:
        for rs, P in zip(responses, polys):
            if not is_feasible(P):
                raise InfeasiblePolyhedron(
                    f"customer {rs.customer_id!r} has an empty response polyhedron"
                )
    cov = None if fix_coverage is None else np.asarray(fix_coverage, dtype=bool)
    if cov is not None and cov.shape != (N,):
        raise ValueError(f"fix_coverage needs one flag per customer, got shape {cov.shape}")
    model = ModelIR("pco_rt")
    _add_line_variables(model, schema, M, forbidden_profiles)
    if fix_line is not None:
        Xmat = fix_line.as_matrix()
        for m in range(M):
            for l in range(L):
                idx = model.variable_index(f"x_{m}_{l}")
                val = float(Xmat[m, l])
                model.variables[idx] = Variable(f"x_{m}_{l}", val, val, integer=False)
    for n in range(N):
        if cov is None:
            model.add_variable(f"y_{n}", 0.0, 1.0, integer=not relax_y)
        else:
            val = 1.0 if cov[n] else 0.0
            model.add_variable(f"y_{n}", val, val)
    C = bigC if bigC is not None else big_c_for_box(box)
    atts = range(schema.attribute_count)
    cert_objective: dict[str, float] = {}
    for n, P in enumerate(polys):
        rows, rhs, _ = P.dual_rows()
        J = rows.shape[0]
        beta_cap = beta_bound if cov is None or cov[n] else 0.0
        for j in range(J):
            model.add_variable(f"beta_{n}_{j}", 0.0, beta_cap)
            if cov is not None and cov[n] and rhs[j] != 0.0:
                cert_objective[f"beta_{n}_{j}"] = float(rhs[j])
        for m in range(M):
            model.add_variable(f"alpha_{n}_{m}", 0.0, 1.0)
            for l in range(L):
                model.add_variable(f"gam_{n}_{m}_{l}", 0.0, 1.0)
        # certificate value must be nonnegative when y_n = 1
        if cov is None or cov[n]:
            purch = {f"beta_{n}_{j}": -float(rhs[j]) for j in range(J) if rhs[j] != 0.0}
            if cov is None:
                purch[f"y_{n}"] = C
                model.add_constraint(purch, "<=", C, name=f"purch_{n}")
            else:
                model.add_constraint(purch, "<=", FEAS_TOL, name=f"purch_{n}")
        # recombination rows, two-sided, relaxed by 1 when y_n = 0
        for l in range(L):
            base: dict[str, float] = {}
            for j in np.flatnonzero(rows[:, l]):
                base[f"beta_{n}_{j}"] = float(rows[j, l])
            for m in range(M):
                base[f"gam_{n}_{m}_{l}"] = base.get(f"gam_{n}_{m}_{l}", 0.0) - 1.0
            if cov is None:
                up = dict(base)
                up[f"y_{n}"] = up.get(f"y_{n}", 0.0) + 1.0
                model.add_constraint(up, "<=", 1.0, name=f"comb_up_{n}_{l}")
                lo = {k: -v for k, v in base.items()}
                lo[f"y_{n}"] = lo.get(f"y_{n}", 0.0) + 1.0
                model.add_constraint(lo, "<=", 1.0, name=f"comb_lo_{n}_{l}")
            else:
                slack = 0.0 if cov[n] else 1.0
                model.add_constraint(dict(base), "<=", slack, name=f"comb_up_{n}_{l}")
                lo = {k: -v for k, v in base.items()}
                model.add_constraint(lo, "<=", slack, name=f"comb_lo_{n}_{l}")
        for m in range(M):
            for l in range(L):
                model.add_constraint(
                    {f"gam_{n}_{m}_{l}": 1.0, f"x_{m}_{l}": -1.0},
                    "<=",
                    0.0,
                    name=f"gamx_{n}_{m}_{l}",
                )
            for a in atts:
                coeffs = {f"gam_{n}_{m}_{l}": 1.0 for l in schema.levels_of(a)}
                coeffs[f"alpha_{n}_{m}"] = -1.0
                model.add_constraint(coeffs, "=", 0.0, name=f"gamsum_{n}_{m}_{a}")
        model.add_constraint(
            {f"alpha_{n}_{m}": 1.0 for m in range(M)}, "=", 1.0, name=f"asum_{n}"
        )
    if cov is None:
        model.set_objective({f"y_{n}": 1.0 / N for n in range(N)}, "max")
    else:
        model.set_objective(cert_objective, "max")
    return model


def _parse_line(values: dict[str, float], schema: AttributeSchema, M: int) -> ProductLine:
    profiles = []
    for m in range(M):
        x = np.array(
            [1 if values[f"x_{m}_{l}"] > 0.5 else 0 for l in range(schema.total_levels)],
            dtype=np.int8,
        )
        prof = ProductProfile(x=x)
        prof.validate(schema)
        profiles.append(prof)
    return ProductLine(products=tuple(profiles))


def solve_socd(
    partworths: NDArray,
    schema: AttributeSchema,
    M: int,
    bigC: float | None = None,
    forbidden_profiles: tuple[ProductProfile, ...] = (),
    **solver_kwargs,
) -> SocSolution:
    U = np.atleast_2d(np.asarray(partworths, dtype=np.float64))
    N = U.shape[0]
    model = build_socd(U, schema, M, bigC, forbidden_profiles)
    result = solve_milp(model, **solver_kwargs)
    if result.status not in ("optimal", "limit"):
        raise RuntimeError(f"point-estimate model ended with status {result.status}")
    y = result.vector([f"y_{n}" for n in range(N)])
    return SocSolution(
        product_line=_parse_line(result.values, schema, M),
        objective=float(result.objective),
        y=y,
        alpha=None,
        beta=None,
        gamma=None,
        schema=schema,
        status=result.status,
        stats=dict(result.stats),
    )


def _solve_with_bound_guard(
    make_model,
    polys: list[Polyhedron],
    beta_bound: float,
    solver_kwargs: dict,
) -> tuple[SolveResult, list[NDArray], float]:
    """Solve a robust model, escalating the beta bound if the solution hits it.

    A certificate multiplier landing within 1% of its bound may mean the
    bound truncated the dual polyhedron, so the model is re-solved with the
    bound scaled by 10.  An infeasible status escalates the same way: with
    a fixed coverage pattern the bound is a hard cap on the certificate
    rows, so a cap-starved model reports infeasible instead of
    undercovered, and only a model still infeasible after the escalations
    is genuinely impossible.  Saturation without an objective change is
    benign (expanded equality rows admit cancelling ray directions a
    solver vertex may sit on) and accepted quietly; the warning fires only
    when the objective is still moving after three escalations.
    """
    current_bound = beta_bound
    prev_objective = None
    for attempt in range(4):
        result = solve_milp(make_model(current_bound), **solver_kwargs)
        if result.status == "infeasible" and attempt < 3:
            current_bound *= 10.0
            continue
        if result.status not in ("optimal", "limit"):
            raise RuntimeError(f"robust model ended with status {result.status}")
        max_beta = 0.0
        betas: list[NDArray] = []
        for n, P in enumerate(polys):
            _, _, tags = P.dual_rows()
            J = len(tags)
            b = result.vector([f"beta_{n}_{j}" for j in range(J)])
            # expanded equality pairs admit a neutral shift (both rows are
            # exact negatives, certificate and combination unchanged), so
            # strip the common mass before judging the bound
            for j in range(J - 1):
                kind, k, sign = tags[j]
                if kind == "row" and sign == +1 and tags[j + 1] == ("row", k, -1):
                    t = min(b[j], b[j + 1])
                    if t > 0.0:
                        b[j] -= t
                        b[j + 1] -= t
            betas.append(b)
            if b.size:
                max_beta = max(max_beta, float(b.max()))
        if max_beta < 0.99 * current_bound:
            break
        if prev_objective is not None and abs(result.objective - prev_objective) <= 1e-9:
            break
        if attempt == 3:
            warnings.warn(
                "certificate multipliers still near their bound after escalation; "
                "objective may undercount coverage",
                stacklevel=2,
            )
            break
        prev_objective = result.objective
        current_bound *= 10.0
    return result, betas, current_bound


def _solution_from_result(
    result: SolveResult,
    betas: list[NDArray],
    bound_used: float,
    responses: list[ResponseSet],
    schema: AttributeSchema,
    M: int,
    box: PartworthBox,
    known_equalities: tuple[NDArray, NDArray] | None,
    extra_stats: dict | None = None,
    objective_override: float | None = None,
) -> SocSolution:
    N = len(responses)
    L = schema.total_levels
    y = result.vector([f"y_{n}" for n in range(N)])
    alpha = tuple(
        result.vector([f"alpha_{n}_{m}" for m in range(M)]) for n in range(N)
    )
    gamma = tuple(
        np.array(
            [[result.values[f"gam_{n}_{m}_{l}"] for l in range(L)] for m in range(M)]
        )
        for n in range(N)
    )
    stats = dict(result.stats)
    stats["beta_bound"] = bound_used
    if extra_stats:
        stats.update(extra_stats)
    objective = float(result.objective) if objective_override is None else objective_override
    return SocSolution(
        product_line=_parse_line(result.values, schema, M),
        objective=objective,
        y=y,
        alpha=alpha,
        beta=tuple(betas),
        gamma=gamma,
        schema=schema,
        status=result.status,
        box=box,
        known_equalities=known_equalities,
        stats=stats,
    )


def solve_pco_rt(
    responses: list[ResponseSet],
    schema: AttributeSchema,
    M: int,
    box: PartworthBox,
    known_equalities: tuple[NDArray, NDArray] | None = None,
    bigC: float | None = None,
    beta_bound: float = DEFAULT_BETA_BOUND,
    forbidden_profiles: tuple[ProductProfile, ...] = (),
    method: str = "milp",
    line_budget: int = 20_000,
    **solver_kwargs,
) -> SocSolution:
    """Solve the robust coverage model and return the certified solution.

    ``method`` selects the search over product lines:

    * ``"milp"`` solves the single dualized MILP directly.
    * ``"enumerate"`` walks the finite space of candidate lines with a
      sound pruning filter (see ``_enumerate_best_line``), then re-solves
      the model with the winning line and its coverage pattern both fixed,
      so the returned solution carries a genuine dual certificate for
      every covered customer; a claimed coverage with no certificate
      aborts the solve instead of silently adjusting the count.  Requires
      the line space to be at most ``line_budget``.
    * ``"auto"`` enumerates when the line space fits the budget, else MILP.

    Both routes optimize the identical model; the test suite checks them
    against each other on shared instances.
    """
    N = len(responses)
    polys = customer_polyhedra(responses, box, known_equalities)
    if method not in ("milp", "enumerate", "auto"):
        raise ValueError(f"unknown method {method!r}")
    if method == "auto":
        method = "enumerate" if _line_space_size(schema, M) <= line_budget else "milp"

    if method == "enumerate":
        for rs, P in zip(responses, polys):
            if not is_feasible(P):
                raise InfeasiblePolyhedron(
                    f"customer {rs.customer_id!r} has an empty response polyhedron"
                )
        best_line, coverage, enum_stats = _enumerate_best_line(
            polys, schema, M, forbidden_profiles, line_budget
        )
        make_model = lambda bound: build_pco_rt(  # noqa: E731
            responses,
            schema,
            M,
            bigC=bigC,
            box=box,
            known_equalities=known_equalities,
            beta_bound=bound,
            forbidden_profiles=forbidden_profiles,
            fix_line=best_line,
            fix_coverage=coverage,
            check_feasible=False,
        )
        try:
            result, betas, bound_used = _solve_with_bound_guard(
                make_model, polys, beta_bound, solver_kwargs
            )
        except RuntimeError as exc:
            raise RuntimeError(
                "the dual certificate solve rejected the enumerated optimum "
                f"({enum_stats['best_count']}/{N} covered): {exc}"
            ) from exc
        return _solution_from_result(
            result, betas, bound_used, responses, schema, M, box,
            known_equalities, extra_stats=enum_stats,
            objective_override=int(coverage.sum()) / N,
        )

    make_model = lambda bound: build_pco_rt(  # noqa: E731
        responses,
        schema,
        M,
        bigC=bigC,
        box=box,
        known_equalities=known_equalities,
        beta_bound=bound,
        forbidden_profiles=forbidden_profiles,
    )
    result, betas, bound_used = _solve_with_bound_guard(
        make_model, polys, beta_bound, solver_kwargs
    )
    return _solution_from_result(
        result, betas, bound_used, responses, schema, M, box, known_equalities
    )


def _line_space_size(schema: AttributeSchema, M: int) -> int:
    P = 1
    for size in schema.levels_per_attribute:
        P *= size
    return math.comb(P + M - 1, M)


def _enumerate_best_line(
    polys: list[Polyhedron],
    schema: AttributeSchema,
    M: int,
    forbidden_profiles: tuple[ProductProfile, ...],
    line_budget: int,
) -> tuple[ProductLine, NDArray, dict]:
    """Exact best-first search over candidate product lines.

    Soundness of the pruning filter: a customer is covered by a line only
    if every point of their polyhedron gives it nonnegative utility, so
    any collection of points inside the polyhedron yields an upper bound
    on the coverage count.  The point pools start at the analytic centers
    and absorb every worst-case minimizer (a vertex of the polyhedron)
    computed along the way, so the bound tightens as the search runs.
    Lines are kept in a max-queue keyed by their last known bound and are
    re-scored lazily on pop; the search stops once no queued bound beats
    the best exact count found.

    Returns the winning line, its per-customer coverage flags from the
    exact (LP-scored) pass, and search statistics.
    """
    t0 = time.perf_counter()
    N = len(polys)
    forbidden = {prof for prof in forbidden_profiles}
    profiles = [p for p in enumerate_profiles(schema) if p not in forbidden]
    if not profiles:
        raise ValueError("every candidate profile is forbidden")
    lines = (
        [(i,) for i in range(len(profiles))]
        if M == 1
        else list(itertools.combinations_with_replacement(range(len(profiles)), M))
    )
    if len(lines) > line_budget:
        raise ValueError(
            f"line space {len(lines)} exceeds the enumeration budget {line_budget}"
        )
    X_mat = np.array([p.x for p in profiles], dtype=np.float64)  # (P, L)

    # per-customer running minimum, over the point pool, of each profile's
    # utility; for M = 1 a line is optimistically covered iff this is >= -tol
    min_util = [analytic_center(P)[None, :] @ X_mat.T for P in polys]
    pool_util = [mu.copy() for mu in min_util]  # full pools, only needed for M > 1
    min_util = [mu[0] for mu in min_util]

    def optimistic(n: int, line: tuple[int, ...]) -> bool:
        if M == 1:
            return bool(min_util[n][line[0]] >= -FEAS_TOL)
        return bool(pool_util[n][:, list(line)].max(axis=1).min() >= -FEAS_TOL)

    def count_bound(line: tuple[int, ...]) -> int:
        if M == 1:
            p = line[0]
            return int(sum(min_util[n][p] >= -FEAS_TOL for n in range(N)))
        return int(sum(optimistic(n, line) for n in range(N)))

    def absorb(n: int, point: NDArray) -> None:
        util = point @ X_mat.T
        min_util[n] = np.minimum(min_util[n], util)
        if M > 1:
            pool_util[n] = np.vstack([pool_util[n], util[None, :]])

    heap: list[tuple[int, int]] = []
    if M == 1:
        stacked = np.vstack(min_util)  # (N, P)
        counts = (stacked >= -FEAS_TOL).sum(axis=0)
        heap = [(-int(c), i) for i, c in enumerate(counts)]
        heapq.heapify(heap)
    else:
        for i, line in enumerate(lines):
            heapq.heappush(heap, (-count_bound(line), i))

    best_count = -1
    best_idx = 0
    best_mask = np.zeros(N, dtype=bool)
    lp_calls = 0
    examined = 0
    while heap:
        neg_bound, idx = heapq.heappop(heap)
        line = lines[idx]
        fresh = count_bound(line)
        if fresh < -neg_bound:
            heapq.heappush(heap, (-fresh, idx))
            continue
        if fresh <= best_count:
            break
        examined += 1
        X = ProductLine(products=tuple(profiles[p] for p in line))
        hopeful = [n for n in range(N) if optimistic(n, line)]
        hopeful.sort(
            key=lambda n: min_util[n][list(line)].max() if M > 1 else min_util[n][line[0]]
        )
        mask = np.zeros(N, dtype=bool)
        covered = 0
        remaining = len(hopeful)
        for n in hopeful:
            wcu = worst_case_utility(X, polys[n])
            lp_calls += 1
            remaining -= 1
            if wcu.value >= -FEAS_TOL:
                mask[n] = True
                covered += 1
            else:
                absorb(n, wcu.minimizer)
            if covered + remaining <= best_count:
                break
        else:
            if covered > best_count:
                best_count = covered
                best_idx = idx
                best_mask = mask
    stats = {
        "method": "enumerate",
        "best_count": best_count,
        "lines_examined": examined,
        "wcu_lp_calls": lp_calls,
        "enumeration_ms": 1e3 * (time.perf_counter() - t0),
    }
    line = ProductLine(products=tuple(profiles[p] for p in lines[best_idx]))
    return line, best_mask, stats


# ---------------------------------------------------------------------------
# Attribution
# ---------------------------------------------------------------------------


def describe_question_vector(schema: AttributeSchema, q: NDArray) -> str:
    """Human-readable rendering of a question row as level trades."""
    parts = []
    for a in range(schema.attribute_count):
        lv = list(schema.levels_of(a))
        seg = q[lv]
        plus = [lv[i] for i in np.flatnonzero(seg > 0)]
        minus = [lv[i] for i in np.flatnonzero(seg < 0)]
        if plus or minus:
            left = "+".join(f"L{l}" for l in plus) or "0"
            right = "+".join(f"L{l}" for l in minus) or "0"
            parts.append(f"attr{a}: {left} vs {right}")
    return "; ".join(parts) if parts else "empty"


def _render_dual_row(
    tag: tuple[str, int, int],
    rs: ResponseSet,
    schema: AttributeSchema,
    box: PartworthBox,
    n_response_rows: int,
) -> str:
    kind, idx, sign = tag
    if kind == "box":
        if sign > 0:
            return f"box: u[{idx}] >= {box.lower[idx]:g}"
        return f"box: u[{idx}] <= {box.upper[idx]:g}"
    if idx < n_response_rows:
        question = rs.questions[idx]
        text = describe_question_vector(schema, np.asarray(question.q, dtype=float))
        side = "" if sign > 0 else " (reverse side)"
        return f"question {idx + 1} [{question.kind}] {text}{side}"
    side = "" if sign > 0 else " (reverse side)"
    return f"calibration row {idx - n_response_rows + 1}{side}"


def extract_attribution(sol: SocSolution, responses: list[ResponseSet]) -> Attribution:
    """Decompose each covered customer's certificate into per-row contributions.

    Rows with multiplier below 1e-6 are omitted; the retained contributions
    sum to the certificate.  Coverage itself only promises a certificate
    down to -FEAS_TOL (the boundary convention), so the assertion allows
    twice that before declaring the coverage claim false.
    """
    if sol.beta is None or sol.box is None:
        raise ValueError("attribution requires a solved robust model")
    customers = []
    for n, rs in enumerate(responses):
        P = Polyhedron.from_responses(rs, sol.box, sol.known_equalities)
        _, rhs, tags = P.dual_rows()
        beta = sol.beta[n]
        certificate = float(beta @ rhs)
        covered = bool(sol.y[n] > 0.5)
        if covered and certificate < -2.0 * FEAS_TOL:
            raise AssertionError(
                f"covered customer {rs.customer_id!r} has negative certificate {certificate}"
            )
        entries = []
        for j in np.flatnonzero(beta > 1e-6):
            entries.append(
                {
                    "index": int(j),
                    "beta": float(beta[j]),
                    "rendering": _render_dual_row(tags[j], rs, sol.schema, sol.box, len(rs)),
                    "r": float(rhs[j]),
                    "contribution": float(beta[j] * rhs[j]),
                }
            )
        customers.append(
            CustomerAttribution(
                customer_id=rs.customer_id,
                covered=covered,
                certificate=certificate,
                entries=tuple(entries),
            )
        )
    return Attribution(customers=tuple(customers))


# ---------------------------------------------------------------------------
# Evaluation and oracles
# ---------------------------------------------------------------------------


def evaluate_true_soc(X: ProductLine, true_partworths: NDArray) -> float:
    """Fraction of customers whose best offered product has nonnegative utility."""
    U = np.atleast_2d(np.asarray(true_partworths, dtype=np.float64))
    best = (U @ X.as_matrix().T.astype(np.float64)).max(axis=1)
    return float(np.mean(best >= 0.0))


def enumerate_profiles(schema: AttributeSchema) -> tuple[ProductProfile, ...]:
    """All feasible profiles in lexicographic order of local level choices."""
    locals_ = [range(c) for c in schema.levels_per_attribute]
    return tuple(
        ProductProfile.from_levels(schema, combo) for combo in itertools.product(*locals_)
    )


def brute_force_pld(
    objective_oracle, schema: AttributeSchema, M: int, budget: int = 10**6
) -> tuple[ProductLine, float]:
    """Exhaustive maximization over unordered lines of M profiles.

    Ties break toward the lexicographically smallest encoding (the sorted
    tuple of profile one-hot vectors).
    """
    profiles = enumerate_profiles(schema)
    P = len(profiles)
    total = math.comb(P + M - 1, M)
    if total > budget:
        raise ValueError(f"enumeration of {total} lines exceeds budget {budget}")
    best_value = -np.inf
    best_line = None
    best_key = None
    for combo in itertools.combinations_with_replacement(profiles, M):
        line = ProductLine(products=tuple(combo))
        value = float(objective_oracle(line))
        key = tuple(sorted(tuple(int(v) for v in prof.x) for prof in combo))
        if value > best_value + 1e-12 or (
            abs(value - best_value) <= 1e-12 and (best_key is None or key < best_key)
        ):
            best_value = value
            best_line = line
            best_key = key
    assert best_line is not None
    return best_line, best_value


def worst_case_coverage_oracle(
    polys: list[Polyhedron],
) -> callable:
    """Objective oracle counting customers whose worst-case utility is >= 0.

    Matches the robust MILP objective by construction; intended for the
    brute-force equivalence tests.
    """

    def oracle(line: ProductLine) -> float:
        covered = 0
        for P in polys:
            if worst_case_utility(line, P).value >= -FEAS_TOL:
                covered += 1
        return covered / len(polys)

    return oracle


def compute_guarantee_bound(L: int, M: int, N: int, A: int, theta: float, d: float) -> float:
    """Coverage-estimate guarantee: 4 ln2 e sqrt(2(LM+2)/N) + theta sqrt(A) d.

    The first term is the sampling error of estimating the share over N
    customers for a product line with LM+2 effective parameters; the second
    scales the polyhedral diameter d by an exogenous Lipschitz constant.
    """
    if L < 1 or M < 1 or N < 1:
        raise ValueError("L, M, N must be positive")
    if A < 0 or theta < 0 or d < 0:
        raise ValueError("A, theta, d must be nonnegative")
    sampling = 4.0 * math.log(2.0) * math.e * math.sqrt(2.0 * (L * M + 2) / N)
    return sampling + theta * math.sqrt(A) * d
