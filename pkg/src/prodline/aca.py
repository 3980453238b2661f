"""Adaptive question design by pricing against the robust master's duals.

Each survey round re-solves the robust coverage model on the answers so
far, extracts the dual prices of its dualized response rows, and asks the
question whose appended row has the largest expected improvement for the
restricted master.  Two pricing models cover the two answer formats:

* metric surveys price the conditional expected gain of an equality row
  (the expectation is linear in the question once the per-customer
  conditional mean is precomputed), and
* choice surveys price a shared comparison with prices, sampling each
  customer's partworths to score which side of the offer they take.

The module also carries the two non-adaptive baselines: the fixed
orthogonal design shipped as a data asset, and the longest-axis heuristic
that queries along the top eigenvector of a sampled uncertainty set.
"""

from __future__ import annotations

import dataclasses
import warnings
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ._assets import read_asset
from .conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductLine,
    ProductProfile,
    Question,
    ResponseSet,
    SchemaError,
    encode_question,
    flip_question,
    question_from_row,
)
from .gaussian import (
    PopulationModel,
    condition_on_equalities,
    fit_population,
    sample_polytope_gaussian,
)
from .milp import ModelIR, check_strong_duality, solve_lp, solve_milp
from .polyhedra import Polyhedron, analytic_center
from .socmodels import (
    DEFAULT_BETA_BOUND,
    SocSolution,
    build_pco_rt,
    customer_polyhedra,
    solve_pco_rt,
)

__all__ = [
    "DualBundle",
    "PricingResult",
    "SurveyState",
    "extract_duals",
    "pricing_coefficients",
    "build_pp_emt",
    "solve_pp_emt",
    "build_pp_ctl",
    "solve_pp_ctl",
    "propose_questions",
    "apply_answers",
    "cg_round",
    "fpaca_next_question",
    "load_orthogonal_design",
    "DESIGN_ROW_COUNT",
    "DEFAULT_SAMPLE_COUNT",
    "DEFAULT_PRICE_BOUNDS",
]

DESIGN_ROW_COUNT = 27
DEFAULT_SAMPLE_COUNT = 30
DEFAULT_PRICE_BOUNDS = (0.0, 5.0)
_DUALITY_TOL = 1e-6
_GAIN_TOL = 1e-6
_DEPENDENCE_TOL = 1e-8


def _extraction_bigC(box: PartworthBox, schema: AttributeSchema) -> float:
    """Purchase-row constant for the dual-extraction LP.

    Sized to dominate any customer's certificate deficit: a product line's
    utility is attribute-separable, so its magnitude never exceeds the sum
    over attributes of the largest absolute box bound.  A constant at
    least that large keeps every uncovered customer's relaxed coverage
    variable interior, which is what makes their purchase row bind and
    produce a nonzero dual price.  A much larger constant would price the
    same rows but amplify solver noise past the duality tolerance.
    """
    worst = 0.0
    for a in range(schema.attribute_count):
        levels = list(schema.levels_of(a))
        worst += max(
            max(abs(float(box.lower[l])), abs(float(box.upper[l]))) for l in levels
        )
    return 1.0 + worst


# ---------------------------------------------------------------------------
# domain types


@dataclass(frozen=True)
class DualBundle:
    """Sign-normalized duals of the restricted master LP, stacked by customer.

    ``lam[n]`` prices customer n's purchase row, ``eta[n]`` the upper and
    ``kappa[n]`` the lower level-combination rows.  All entries are duals
    of ``<=`` rows in a maximization, so they are nonnegative.
    """

    lam: NDArray[np.float64]
    eta: NDArray[np.float64]
    kappa: NDArray[np.float64]
    master_objective: float

    def __post_init__(self) -> None:
        lam = np.asarray(self.lam, dtype=np.float64).reshape(-1)
        eta = np.atleast_2d(np.asarray(self.eta, dtype=np.float64))
        kappa = np.atleast_2d(np.asarray(self.kappa, dtype=np.float64))
        if eta.shape != kappa.shape or eta.shape[0] != lam.shape[0]:
            raise ValueError(
                f"dual shapes disagree: lam {lam.shape}, eta {eta.shape}, kappa {kappa.shape}"
            )
        for name, arr in (("lam", lam), ("eta", eta), ("kappa", kappa)):
            if not np.isfinite(arr).all():
                raise ValueError(f"dual block {name} has non-finite entries")
            if arr.min(initial=0.0) < 0.0:
                raise ValueError(f"dual block {name} has negative entries")
        for arr in (lam, eta, kappa):
            arr.setflags(write=False)
        object.__setattr__(self, "lam", lam)
        object.__setattr__(self, "eta", eta)
        object.__setattr__(self, "kappa", kappa)
        object.__setattr__(self, "master_objective", float(self.master_objective))

    @property
    def customer_count(self) -> int:
        return self.lam.shape[0]

    @property
    def dimension(self) -> int:
        return self.eta.shape[1]


@dataclass(frozen=True)
class PricingResult:
    """One customer's proposed next question and its predicted payoff.

    ``predicted_gain`` is the pricing objective restricted to this
    customer: the expected reduced cost of the row their answer will
    append.  Choice pricing additionally reports the shared price pair and
    the per-sample side indicators (+1 first profile, -1 second).
    """

    customer_id: int
    question: Question
    predicted_gain: float
    prices: tuple[float, float] | None = None
    sample_signs: tuple[int, ...] | None = None

    def to_json(self) -> dict:
        return {
            "customer_id": self.customer_id,
            "question": self.question.to_json(),
            "predicted_gain": self.predicted_gain,
            "prices": list(self.prices) if self.prices is not None else None,
            "sample_signs": list(self.sample_signs) if self.sample_signs is not None else None,
        }

    @classmethod
    def from_json(cls, data: dict) -> "PricingResult":
        prices = data.get("prices")
        signs = data.get("sample_signs")
        return cls(
            customer_id=int(data["customer_id"]),
            question=Question.from_json(data["question"]),
            predicted_gain=float(data["predicted_gain"]),
            prices=tuple(prices) if prices is not None else None,
            sample_signs=tuple(int(s) for s in signs) if signs is not None else None,
        )


# ---------------------------------------------------------------------------
# dual extraction


def extract_duals(
    responses: list[ResponseSet],
    schema: AttributeSchema,
    M: int,
    incumbent_X: ProductLine,
    *,
    box: PartworthBox,
    known_equalities: tuple[NDArray, NDArray] | None = None,
    bigC: float | None = None,
    beta_bound: float = DEFAULT_BETA_BOUND,
) -> DualBundle:
    """Price the master's rows at a fixed line by solving the restricted LP.

    The line variables are pinned to ``incumbent_X`` and the coverage
    indicators relaxed to [0, 1]; the resulting LP is feasible whenever the
    incumbent was, and its row duals are read off by name.  Strong duality
    is checked on every extraction.

    The purchase-row constant defaults to a box-derived deficit bound
    rather than the master's conservative derivation; see
    ``_extraction_bigC`` for why both a tiny and a huge constant would
    starve or drown the pricing signal.
    """
    model = build_pco_rt(
        responses,
        schema,
        M,
        bigC=_extraction_bigC(box, schema) if bigC is None else bigC,
        box=box,
        known_equalities=known_equalities,
        beta_bound=beta_bound,
        fix_line=incumbent_X,
        relax_y=True,
    )
    result = solve_lp(model)
    if result.status != "optimal":
        raise AssertionError(
            f"restricted master LP reported {result.status!r}; "
            "a feasible incumbent line cannot make it infeasible"
        )
    gap = check_strong_duality(model, result)
    scale = max(1.0, abs(result.objective))
    if gap > _DUALITY_TOL * scale:
        raise AssertionError(f"restricted master duality gap {gap:.3e} exceeds tolerance")
    N = len(responses)
    L = schema.total_levels
    lam = np.zeros(N)
    eta = np.zeros((N, L))
    kappa = np.zeros((N, L))
    for n in range(N):
        lam[n] = result.duals.get(f"purch_{n}", 0.0)
        for l in range(L):
            eta[n, l] = result.duals.get(f"comb_up_{n}_{l}", 0.0)
            kappa[n, l] = result.duals.get(f"comb_lo_{n}_{l}", 0.0)
    for arr in (lam, eta, kappa):
        if arr.min(initial=0.0) < -1e-7 * scale:
            raise AssertionError("a <=-row dual came back negative beyond tolerance")
        np.clip(arr, 0.0, None, out=arr)
    return DualBundle(lam=lam, eta=eta, kappa=kappa, master_objective=float(result.objective))


# ---------------------------------------------------------------------------
# metric pricing


def _stacked_equalities(
    rs: ResponseSet,
    known_equalities: tuple[NDArray, NDArray] | None,
    L: int,
) -> tuple[NDArray, NDArray]:
    rows: list[NDArray] = []
    rhs: list[float] = []
    if known_equalities is not None:
        Qk, rk = known_equalities
        Qk = np.atleast_2d(np.asarray(Qk, dtype=np.float64))
        for row, val in zip(Qk, np.asarray(rk, dtype=np.float64).reshape(-1)):
            rows.append(row)
            rhs.append(float(val))
    for question in rs.questions:
        if question.kind == "metric":
            rows.append(np.asarray(question.q, dtype=np.float64))
            rhs.append(float(question.intensity))
    if not rows:
        return np.zeros((0, L)), np.zeros(0)
    return np.vstack(rows), np.asarray(rhs)


def pricing_coefficients(
    duals: DualBundle,
    population: PopulationModel,
    responses: list[ResponseSet],
    schema: AttributeSchema,
    known_equalities: tuple[NDArray, NDArray] | None = None,
) -> NDArray[np.float64]:
    """Per-customer linear objective of metric pricing, one row per customer.

    The expected reduced cost of appending the equality row (q, u . q) is
    lam_n E[u . q | answers] + (kappa_n - eta_n) . q, so with the
    conditional mean m_n precomputed the objective is c_n . q with
    c_n = lam_n m_n + kappa_n - eta_n.
    """
    N = len(responses)
    L = schema.total_levels
    if duals.customer_count != N or duals.dimension != L:
        raise ValueError("dual bundle does not match the responses or schema")
    coeffs = np.zeros((N, L))
    for n, rs in enumerate(responses):
        Q, r = _stacked_equalities(rs, known_equalities, L)
        cond = condition_on_equalities(population, Q, r) if Q.shape[0] else population
        coeffs[n] = duals.lam[n] * cond.mu + (duals.kappa[n] - duals.eta[n])
    return coeffs


def _add_question_block(
    model: ModelIR, schema: AttributeSchema, tag: str
) -> None:
    """Binary profile-pair variables for one question, identical profiles excluded.

    The overlap variables w count levels the two profiles share; capping
    their sum at attribute_count - 1 forces a difference somewhere.
    """
    A = schema.attribute_count
    for l in range(schema.total_levels):
        model.add_variable(f"x1_{tag}_{l}", 0.0, 1.0, integer=True)
        model.add_variable(f"x2_{tag}_{l}", 0.0, 1.0, integer=True)
        model.add_variable(f"w_{tag}_{l}", 0.0, 1.0)
    for a in range(A):
        levels = list(schema.levels_of(a))
        model.add_constraint({f"x1_{tag}_{l}": 1.0 for l in levels}, "=", 1.0, f"pick1_{tag}_{a}")
        model.add_constraint({f"x2_{tag}_{l}": 1.0 for l in levels}, "=", 1.0, f"pick2_{tag}_{a}")
    for l in range(schema.total_levels):
        model.add_constraint(
            {f"x1_{tag}_{l}": 1.0, f"x2_{tag}_{l}": 1.0, f"w_{tag}_{l}": -1.0},
            "<=",
            1.0,
            f"overlap_{tag}_{l}",
        )
    model.add_constraint(
        {f"w_{tag}_{l}": 1.0 for l in range(schema.total_levels)},
        "<=",
        float(A - 1),
        f"distinct_{tag}",
    )


def _read_question_block(
    values: dict[str, float], schema: AttributeSchema, tag: str
) -> tuple[ProductProfile, ProductProfile]:
    first_levels: list[int] = []
    second_levels: list[int] = []
    for a in range(schema.attribute_count):
        levels = list(schema.levels_of(a))
        l1 = [i for i, l in enumerate(levels) if values[f"x1_{tag}_{l}"] > 0.5]
        l2 = [i for i, l in enumerate(levels) if values[f"x2_{tag}_{l}"] > 0.5]
        if len(l1) != 1 or len(l2) != 1:
            raise AssertionError(f"pricing solution picks {len(l1)}/{len(l2)} levels on attribute {a}")
        first_levels.append(l1[0])
        second_levels.append(l2[0])
    return (
        ProductProfile.from_levels(schema, first_levels),
        ProductProfile.from_levels(schema, second_levels),
    )


def _build_pp_emt_from_coeffs(
    coeffs: NDArray, schema: AttributeSchema, shared_question: bool
) -> ModelIR:
    model = ModelIR("pp_emt")
    objective: dict[str, float] = {}
    if shared_question:
        _add_question_block(model, schema, "s")
        total = coeffs.sum(axis=0)
        for l in range(schema.total_levels):
            if total[l] != 0.0:
                objective[f"x1_s_{l}"] = float(total[l])
                objective[f"x2_s_{l}"] = -float(total[l])
    else:
        for n in range(coeffs.shape[0]):
            _add_question_block(model, schema, str(n))
            for l in range(schema.total_levels):
                if coeffs[n, l] != 0.0:
                    objective[f"x1_{n}_{l}"] = float(coeffs[n, l])
                    objective[f"x2_{n}_{l}"] = -float(coeffs[n, l])
    model.set_objective(objective, "max")
    return model


def build_pp_emt(
    duals: DualBundle,
    population: PopulationModel,
    responses: list[ResponseSet],
    schema: AttributeSchema,
    *,
    known_equalities: tuple[NDArray, NDArray] | None = None,
    shared_question: bool = False,
) -> ModelIR:
    """Metric pricing MILP: pick the profile pair with the best expected row.

    One binary profile pair per customer by default; ``shared_question``
    collapses them to a single pair scored by the summed coefficients.
    Only metric surveys are accepted, because the conditional mean that
    linearizes the objective comes from equality rows alone.
    """
    for rs in responses:
        if any(q.kind != "metric" for q in rs.questions):
            raise ValueError(
                f"customer {rs.customer_id!r} has choice rows; metric pricing "
                "conditions on equality answers only"
            )
    coeffs = pricing_coefficients(duals, population, responses, schema, known_equalities)
    return _build_pp_emt_from_coeffs(coeffs, schema, shared_question)


def solve_pp_emt(
    duals: DualBundle,
    population: PopulationModel,
    responses: list[ResponseSet],
    schema: AttributeSchema,
    *,
    known_equalities: tuple[NDArray, NDArray] | None = None,
    shared_question: bool = False,
    gap: float = 1e-9,
) -> list[PricingResult]:
    """Solve metric pricing and return each customer's proposed question."""
    for rs in responses:
        if any(q.kind != "metric" for q in rs.questions):
            raise ValueError(
                f"customer {rs.customer_id!r} has choice rows; metric pricing "
                "conditions on equality answers only"
            )
    coeffs = pricing_coefficients(duals, population, responses, schema, known_equalities)
    model = _build_pp_emt_from_coeffs(coeffs, schema, shared_question)
    result = solve_milp(model, gap=gap)
    if result.status != "optimal":
        raise AssertionError(f"metric pricing MILP reported {result.status!r} on a valid schema")
    out: list[PricingResult] = []
    reconstructed = 0.0
    for n, rs in enumerate(responses):
        tag = "s" if shared_question else str(n)
        first, second = _read_question_block(result.values, schema, tag)
        question = encode_question(first, second, "metric", intensity=0.0, schema=schema)
        gain = float(coeffs[n] @ question.q)
        reconstructed += gain
        out.append(PricingResult(rs.customer_id, question, gain))
    scale = max(1.0, abs(result.objective))
    if abs(reconstructed - result.objective) > _GAIN_TOL * scale:
        raise AssertionError(
            f"pricing objective {result.objective:.9g} does not match the "
            f"per-customer gains (sum {reconstructed:.9g})"
        )
    return out


# ---------------------------------------------------------------------------
# choice pricing


def build_pp_ctl(
    duals: DualBundle,
    conditional_samples: list[NDArray],
    schema: AttributeSchema,
    price_bounds: tuple[float, float] = DEFAULT_PRICE_BOUNDS,
    bigC: float | None = None,
) -> ModelIR:
    """Choice pricing MILP over one shared comparison with prices.

    For sample s of customer n the appended halfspace row is oriented by
    which priced profile the sample prefers; the contribution z_ns equals
    the reduced cost of that oriented row.  Indicator pairs y+/y- select
    the orientation consistently with the sample's preference, and big-C
    rows cap z at the oriented reduced cost.  The default big-C dominates
    every indicator expression and twice the reduced-cost range, so no
    valid configuration is cut off.
    """
    N = duals.customer_count
    if len(conditional_samples) != N:
        raise ValueError("one sample block per customer is required")
    samples = []
    for n, block in enumerate(conditional_samples):
        arr = np.atleast_2d(np.asarray(block, dtype=np.float64))
        if arr.shape[0] == 0:
            raise ValueError(f"customer block {n} has no samples")
        if arr.shape[1] != schema.total_levels:
            raise ValueError(f"customer block {n} sample length {arr.shape[1]} != schema")
        samples.append(arr)
    pl, pu = float(price_bounds[0]), float(price_bounds[1])
    if not pl < pu:
        raise ValueError("price bounds must satisfy lower < upper")
    price_gap = pu - pl
    sample_mag = max(float(np.abs(arr).sum(axis=1).max()) for arr in samples)
    diff = duals.kappa - duals.eta
    gain_mag = float((duals.lam * price_gap + np.abs(diff).sum(axis=1)).max(initial=0.0))
    needed = 1.0 + max(sample_mag + price_gap, 2.0 * gain_mag)
    if bigC is None:
        bigC = needed
    elif bigC < needed - 1e-9:
        raise ValueError(
            f"bigC {bigC:g} does not dominate the indicator expressions (needs {needed:g})"
        )
    zbound = 1.0 + gain_mag

    model = ModelIR("pp_ctl")
    _add_question_block(model, schema, "s")
    model.add_variable("p1", pl, pu)
    model.add_variable("p2", pl, pu)
    objective: dict[str, float] = {}
    for n in range(N):
        lam = float(duals.lam[n])
        d_n = diff[n]
        for s in range(samples[n].shape[0]):
            u_hat = samples[n][s]
            zname = model.add_variable(f"z_{n}_{s}", -zbound, zbound)
            ypos = model.add_variable(f"ypos_{n}_{s}", 0.0, 1.0, integer=True)
            yneg = model.add_variable(f"yneg_{n}_{s}", 0.0, 1.0, integer=True)
            model.add_constraint({ypos: 1.0, yneg: 1.0}, "=", 1.0, f"pair_{n}_{s}")
            ind_pos: dict[str, float] = {"p1": 1.0, "p2": -1.0, ypos: bigC}
            ind_neg: dict[str, float] = {"p1": -1.0, "p2": 1.0, yneg: bigC}
            for l in range(schema.total_levels):
                if u_hat[l] != 0.0:
                    ind_pos[f"x1_s_{l}"] = -float(u_hat[l])
                    ind_pos[f"x2_s_{l}"] = float(u_hat[l])
                    ind_neg[f"x1_s_{l}"] = float(u_hat[l])
                    ind_neg[f"x2_s_{l}"] = -float(u_hat[l])
            model.add_constraint(ind_pos, "<=", bigC, f"indpos_{n}_{s}")
            model.add_constraint(ind_neg, "<=", bigC, f"indneg_{n}_{s}")
            cap_pos: dict[str, float] = {zname: 1.0, ypos: bigC}
            cap_neg: dict[str, float] = {zname: 1.0, yneg: bigC}
            if lam != 0.0:
                cap_pos["p1"] = -lam
                cap_pos["p2"] = lam
                cap_neg["p1"] = lam
                cap_neg["p2"] = -lam
            for l in range(schema.total_levels):
                if d_n[l] != 0.0:
                    cap_pos[f"x1_s_{l}"] = -float(d_n[l])
                    cap_pos[f"x2_s_{l}"] = float(d_n[l])
                    cap_neg[f"x1_s_{l}"] = float(d_n[l])
                    cap_neg[f"x2_s_{l}"] = -float(d_n[l])
            model.add_constraint(cap_pos, "<=", bigC, f"zpos_{n}_{s}")
            model.add_constraint(cap_neg, "<=", bigC, f"zneg_{n}_{s}")
            objective[zname] = 1.0
    model.set_objective(objective, "max")
    return model


def solve_pp_ctl(
    duals: DualBundle,
    conditional_samples: list[NDArray],
    schema: AttributeSchema,
    price_bounds: tuple[float, float] = DEFAULT_PRICE_BOUNDS,
    bigC: float | None = None,
    gap: float = 1e-9,
) -> list[PricingResult]:
    """Solve choice pricing; every customer shares the returned comparison.

    ``predicted_gain`` averages a customer's per-sample contributions, so
    it estimates the expected reduced cost of the oriented row their
    actual answer will append.  Indicator consistency is asserted on the
    way out: a positive side indicator means the sample prefers the first
    priced profile up to feasibility tolerance.
    """
    samples = [np.atleast_2d(np.asarray(b, dtype=np.float64)) for b in conditional_samples]
    model = build_pp_ctl(duals, samples, schema, price_bounds, bigC)
    result = solve_milp(model, gap=gap)
    if result.status != "optimal":
        raise AssertionError(f"choice pricing MILP reported {result.status!r} on a valid schema")
    first, second = _read_question_block(result.values, schema, "s")
    pl, pu = float(price_bounds[0]), float(price_bounds[1])
    p1 = min(max(result.values["p1"], pl), pu)
    p2 = min(max(result.values["p2"], pl), pu)
    question = encode_question(first, second, "choice", prices=(p1, p2), schema=schema)
    q = question.q.astype(np.float64)
    d = p1 - p2
    diff = duals.kappa - duals.eta
    out: list[PricingResult] = []
    for n in range(duals.customer_count):
        gain_pos = float(duals.lam[n] * d + diff[n] @ q)
        signs: list[int] = []
        total = 0.0
        for s in range(samples[n].shape[0]):
            pos = result.values[f"ypos_{n}_{s}"] > 0.5
            margin = float(samples[n][s] @ q) - d
            if pos and margin < -1e-6 * max(1.0, abs(d)):
                raise AssertionError(f"sample ({n},{s}) marked first-profile but prefers the second")
            if not pos and margin > 1e-6 * max(1.0, abs(d)):
                raise AssertionError(f"sample ({n},{s}) marked second-profile but prefers the first")
            signs.append(1 if pos else -1)
            z = result.values[f"z_{n}_{s}"]
            expected = gain_pos if pos else -gain_pos
            if abs(z - expected) > 1e-6 * max(1.0, abs(expected)):
                raise AssertionError(
                    f"contribution z[{n},{s}] = {z:.9g} does not equal the oriented "
                    f"reduced cost {expected:.9g}"
                )
            total += z
        out.append(
            PricingResult(
                customer_id=n,
                question=question,
                predicted_gain=total / samples[n].shape[0],
                prices=(p1, p2),
                sample_signs=tuple(signs),
            )
        )
    return out


# ---------------------------------------------------------------------------
# the round loop


@dataclass(frozen=True)
class SurveyState:
    """Serializable snapshot of one adaptive survey.

    ``responses`` carry every answered question; ``incumbent`` and
    ``trajectory`` record the master's line and worst-case covered share
    after each solve.  ``proposals`` holds priced questions that are
    awaiting answers, so a live survey can persist between the propose and
    apply halves of a round.
    """

    schema: AttributeSchema
    box: PartworthBox
    M: int
    responses: tuple[ResponseSet, ...]
    mode: str = "metric"
    round_index: int = 0
    incumbent: ProductLine | None = None
    trajectory: tuple[float, ...] = ()
    known_equalities: tuple[NDArray, NDArray] | None = None
    sample_count: int = DEFAULT_SAMPLE_COUNT
    price_bounds: tuple[float, float] = DEFAULT_PRICE_BOUNDS
    shared_question: bool = False
    master_method: str = "milp"
    forbidden_profiles: tuple[ProductProfile, ...] = ()
    proposals: tuple[PricingResult, ...] | None = None
    seed: int = 0

    def __post_init__(self) -> None:
        if self.mode not in ("metric", "choice"):
            raise ValueError(f"unknown survey mode {self.mode!r}")
        object.__setattr__(self, "responses", tuple(self.responses))
        object.__setattr__(self, "trajectory", tuple(float(v) for v in self.trajectory))
        if self.known_equalities is not None:
            Qk = np.atleast_2d(np.asarray(self.known_equalities[0], dtype=np.float64))
            rk = np.asarray(self.known_equalities[1], dtype=np.float64).reshape(-1)
            object.__setattr__(self, "known_equalities", (Qk, rk))
        if self.proposals is not None:
            object.__setattr__(self, "proposals", tuple(self.proposals))

    @property
    def customer_count(self) -> int:
        return len(self.responses)

    def to_json(self) -> dict:
        ke = self.known_equalities
        return {
            "schema": self.schema.to_json(),
            "box": self.box.to_json(),
            "M": self.M,
            "responses": [rs.to_json() for rs in self.responses],
            "mode": self.mode,
            "round_index": self.round_index,
            "incumbent": self.incumbent.to_json() if self.incumbent is not None else None,
            "trajectory": list(self.trajectory),
            "known_equalities": (
                {"Q": ke[0].tolist(), "r": ke[1].tolist()} if ke is not None else None
            ),
            "sample_count": self.sample_count,
            "price_bounds": list(self.price_bounds),
            "shared_question": self.shared_question,
            "master_method": self.master_method,
            "forbidden_profiles": [p.to_json() for p in self.forbidden_profiles],
            "proposals": (
                [p.to_json() for p in self.proposals] if self.proposals is not None else None
            ),
            "seed": self.seed,
        }

    @classmethod
    def from_json(cls, data: dict) -> "SurveyState":
        ke = data.get("known_equalities")
        incumbent = data.get("incumbent")
        proposals = data.get("proposals")
        return cls(
            schema=AttributeSchema.from_json(data["schema"]),
            box=PartworthBox.from_json(data["box"]),
            M=int(data["M"]),
            responses=tuple(ResponseSet.from_json(r) for r in data["responses"]),
            mode=data["mode"],
            round_index=int(data["round_index"]),
            incumbent=ProductLine.from_json(incumbent) if incumbent is not None else None,
            trajectory=tuple(data["trajectory"]),
            known_equalities=(
                (np.asarray(ke["Q"], float), np.asarray(ke["r"], float))
                if ke is not None
                else None
            ),
            sample_count=int(data.get("sample_count", DEFAULT_SAMPLE_COUNT)),
            price_bounds=tuple(data.get("price_bounds", DEFAULT_PRICE_BOUNDS)),
            shared_question=bool(data.get("shared_question", False)),
            master_method=data.get("master_method", "milp"),
            forbidden_profiles=tuple(
                ProductProfile.from_json(p) for p in data.get("forbidden_profiles", [])
            ),
            proposals=(
                tuple(PricingResult.from_json(p) for p in proposals)
                if proposals is not None
                else None
            ),
            seed=int(data.get("seed", 0)),
        )


def _population_from_centers(
    centers: list[NDArray], box: PartworthBox
) -> PopulationModel:
    """Population re-fit from the per-customer analytic centers.

    Before any answers arrive (or with a single customer) the centers
    carry no spread, so the covariance degenerates; a box-scaled ridge
    then stands in as a flat prior wide enough to rank candidate rows.
    """
    L = centers[0].shape[0]
    width = float(np.mean(box.upper - box.lower))
    prior_ridge = (width / 4.0) ** 2
    if len(centers) < 2:
        return PopulationModel(centers[0], np.zeros((L, L)), ridge=prior_ridge)
    population = fit_population(centers)
    if float(np.trace(population.sigma)) <= 1e-9 * L:
        population = PopulationModel(population.mu, population.sigma, ridge=prior_ridge)
    return population


def _row_is_dependent(rows: NDArray, q: NDArray) -> bool:
    """True when q lies in the row span of ``rows`` (least-squares residual test)."""
    if rows.shape[0] == 0:
        return not q.any()
    sol, *_ = np.linalg.lstsq(rows.T, q, rcond=None)
    resid = q - rows.T @ sol
    return float(np.linalg.norm(resid)) <= _DEPENDENCE_TOL * max(1.0, float(np.linalg.norm(q)))


def _synthetic_rows(schema: AttributeSchema) -> list[NDArray]:
    """Deterministic single-attribute comparison rows that span, with any
    calibration rows, the whole partworth space."""
    rows: list[NDArray] = []
    for a in range(schema.attribute_count):
        levels = list(schema.levels_of(a))
        for l in levels[1:]:
            row = np.zeros(schema.total_levels)
            row[l] = 1.0
            row[levels[0]] = -1.0
            rows.append(row)
    return rows


def _ensure_informative(
    state: SurveyState,
    rs: ResponseSet,
    proposal: PricingResult,
    coeff_row: NDArray,
    design_questions: list[Question] | None,
) -> PricingResult:
    """Swap a span-dependent metric proposal for an independent fallback row.

    A dependent equality row cannot shrink the customer's polyhedron, so
    the round would stall.  Preference order: the proposal itself, then the
    first orthogonal-design row this customer has not answered that is
    independent of their span, then a deterministic single-attribute
    comparison.  With a full-rank span every row is dependent and the
    proposal is returned unchanged.
    """
    rows, _ = _stacked_equalities(rs, state.known_equalities, state.schema.total_levels)
    q = np.asarray(proposal.question.q, dtype=np.float64)
    if not _row_is_dependent(rows, q):
        return proposal
    answered = {tuple(int(v) for v in question.q) for question in rs.questions}
    candidates: list[Question] = []
    if design_questions:
        candidates.extend(
            t for t in design_questions if tuple(int(v) for v in t.q) not in answered
        )
    for row in _synthetic_rows(state.schema):
        try:
            candidates.append(question_from_row(state.schema, row, "metric", 0.0))
        except SchemaError:  # pragma: no cover - synthetic rows are always valid
            continue
    for template in candidates:
        cand = np.asarray(template.q, dtype=np.float64)
        if not _row_is_dependent(rows, cand):
            gain = float(coeff_row @ cand)
            return dataclasses.replace(
                proposal, question=dataclasses.replace(template, intensity=0.0), predicted_gain=gain
            )
    return proposal


def propose_questions(state: SurveyState, solution: SocSolution | None = None) -> SurveyState:
    """Solve the master on the current answers and price the next questions.

    Returns a new state carrying the incumbent line, the extended
    worst-case trajectory, and one pending proposal per customer.  The
    covered share is asserted nondecreasing: answers only intersect the
    uncertainty sets, which cannot hurt the worst case of any line.

    Callers that already solved the master on exactly the current
    responses (to keep its certificate around) pass it as ``solution``
    and the solve here is skipped.
    """
    responses = list(state.responses)
    sol = solution if solution is not None else solve_pco_rt(
        responses,
        state.schema,
        state.M,
        state.box,
        known_equalities=state.known_equalities,
        forbidden_profiles=state.forbidden_profiles,
        method=state.master_method,
    )
    share = sol.objective
    if state.trajectory and share < state.trajectory[-1] - 1e-9:
        raise AssertionError(
            f"worst-case covered share fell from {state.trajectory[-1]:.6f} to {share:.6f}; "
            "intersecting uncertainty sets cannot lower the optimum"
        )
    duals = extract_duals(
        responses,
        state.schema,
        state.M,
        sol.product_line,
        box=state.box,
        known_equalities=state.known_equalities,
    )
    polys = customer_polyhedra(responses, state.box, state.known_equalities)
    centers = [analytic_center(P) for P in polys]
    population = _population_from_centers(centers, state.box)
    if state.mode == "metric":
        results = solve_pp_emt(
            duals,
            population,
            responses,
            state.schema,
            known_equalities=state.known_equalities,
            shared_question=state.shared_question,
        )
        coeffs = pricing_coefficients(
            duals, population, responses, state.schema, state.known_equalities
        )
        design = (
            load_orthogonal_design()
            if tuple(state.schema.levels_per_attribute) == (5, 8, 9, 9)
            else None
        )
        results = [
            _ensure_informative(state, rs, res, coeffs[n], design)
            for n, (rs, res) in enumerate(zip(responses, results))
        ]
    else:
        samples = [
            sample_polytope_gaussian(
                population,
                polys[n],
                state.sample_count,
                seed=(state.seed, state.round_index, n),
                start=centers[n],
            )
            for n in range(len(polys))
        ]
        results = solve_pp_ctl(
            duals, samples, state.schema, price_bounds=state.price_bounds
        )
        results = [
            dataclasses.replace(res, customer_id=rs.customer_id)
            for res, rs in zip(results, responses)
        ]
    return dataclasses.replace(
        state,
        incumbent=sol.product_line,
        trajectory=state.trajectory + (share,),
        proposals=tuple(results),
    )


def apply_answers(state: SurveyState, answers: dict[int, float]) -> SurveyState:
    """Record one answer per pending proposal and advance the round counter.

    Metric answers are utility gaps filling the proposed row's intensity;
    choice answers are 1 or 2 for the preferred priced profile, and picking
    the second flips the appended halfspace row.
    """
    if state.proposals is None:
        raise ValueError("no pending proposals; call propose_questions first")
    by_customer = {res.customer_id: res for res in state.proposals}
    if set(answers) != set(by_customer):
        raise ValueError(
            f"answers cover customers {sorted(answers)} but proposals cover "
            f"{sorted(by_customer)}"
        )
    new_responses: list[ResponseSet] = []
    for rs in state.responses:
        proposal = by_customer[rs.customer_id]
        answer = answers[rs.customer_id]
        if proposal.question.kind == "metric":
            row = dataclasses.replace(proposal.question, intensity=float(answer))
        else:
            chosen = int(answer)
            if chosen not in (1, 2):
                raise ValueError(f"choice answer must be 1 or 2, got {answer!r}")
            row = proposal.question if chosen == 1 else flip_question(proposal.question)
        new_responses.append(rs.with_question(row))
    return dataclasses.replace(
        state,
        responses=tuple(new_responses),
        round_index=state.round_index + 1,
        proposals=None,
    )


def cg_round(state: SurveyState, respondent) -> SurveyState:
    """One full adaptive round: solve, price, ask, and record.

    ``respondent`` is any object with ``answer(customer_id, question)``
    returning a float utility gap for metric questions and 1 or 2 for
    choice questions.
    """
    staged = propose_questions(state)
    answers = {
        res.customer_id: respondent.answer(res.customer_id, res.question)
        for res in staged.proposals
    }
    return apply_answers(staged, answers)


# ---------------------------------------------------------------------------
# baselines


def fpaca_next_question(
    P: Polyhedron,
    schema: AttributeSchema,
    *,
    seed=None,
    sample_count: int = 500,
    burn_in: int = 200,
    thinning: int = 2,
) -> Question:
    """Question most parallel to the longest axis of the uncertainty set.

    The axis is approximated by the top eigenvector of the covariance of
    uniform hit-and-run samples; the best feasible question for that axis
    maximizes v . q, which separates into an argmax and argmin of v within
    each attribute.  Degenerate sets (singletons, or an eigenvector that is
    constant within every attribute) fall back to a random feasible
    question with a warning.  The chain defaults are lighter than the
    sampler's own: only the direction spread matters here, not the
    stationary density.
    """
    rng = np.random.default_rng(seed)
    samples = sample_polytope_gaussian(
        PopulationModel(np.zeros(P.dimension), np.eye(P.dimension)),
        P,
        sample_count,
        burn_in=burn_in,
        thinning=thinning,
        density="uniform",
        seed=rng,
    )
    centered = samples - samples.mean(axis=0)
    cov = centered.T @ centered / max(1, samples.shape[0] - 1)
    vals, vecs = np.linalg.eigh(cov)
    first_levels: list[int] = []
    second_levels: list[int] = []
    degenerate = vals[-1] <= 1e-10 * max(1.0, float(np.trace(cov)))
    if not degenerate:
        v = vecs[:, -1]
        for a in range(schema.attribute_count):
            seg = [v[l] for l in schema.levels_of(a)]
            first_levels.append(int(np.argmax(seg)))
            second_levels.append(int(np.argmin(seg)))
        degenerate = first_levels == second_levels
    if degenerate:
        warnings.warn(
            "uncertainty set has no usable longest axis; asking a random question",
            RuntimeWarning,
            stacklevel=2,
        )
        sizes = schema.levels_per_attribute
        first_levels = [int(rng.integers(s)) for s in sizes]
        second_levels = [int(rng.integers(s)) for s in sizes]
        if first_levels == second_levels:
            a = int(rng.integers(schema.attribute_count))
            second_levels[a] = (first_levels[a] + 1) % sizes[a]
    first = ProductProfile.from_levels(schema, first_levels)
    second = ProductProfile.from_levels(schema, second_levels)
    return encode_question(first, second, "metric", intensity=0.0, schema=schema)


def load_orthogonal_design() -> list[Question]:
    """The 27-row fixed design for the 31-level synthetic schema.

    Rows are returned as metric question templates with a zero intensity
    placeholder, to be filled by the respondent at ask time.  The CSV asset
    is checksummed on read; shape and row validity are re-checked here.
    """
    schema = AttributeSchema((5, 8, 9, 9))
    text = read_asset("orthogonal_design.csv")
    questions: list[Question] = []
    for line in text.strip().splitlines():
        row = np.array([int(v) for v in line.split(",")], dtype=np.int8)
        questions.append(question_from_row(schema, row, "metric", 0.0))
    if len(questions) != DESIGN_ROW_COUNT:
        raise SchemaError(
            f"orthogonal design has {len(questions)} rows, expected {DESIGN_ROW_COUNT}"
        )
    return questions
