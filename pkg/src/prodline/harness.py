"""Benchmark harness comparing survey policies on synthetic populations.

Four settings pair a question-design policy with a recommendation model:
the fixed orthogonal design estimated at analytic centers and solved as a
point-estimate model, the same design solved robustly over the response
polyhedra, the adaptive column-generation survey with the robust master,
and the longest-axis adaptive baseline with the point-estimate model.
Each instance draws its own population and ground truth from an instance
seed; every setting sweeps over question counts and records the true
share of choice of its recommended line, the worst-case certificate value
where one exists, and wall time.  Helpers summarize records, emit a
fixed-schema CSV plus a JSON configuration echo, and evaluate the
coverage-guarantee bound from polyhedron diameters.
"""

from __future__ import annotations

import concurrent.futures
import csv
import dataclasses
import hashlib
import json
import math
import os
import time
from dataclasses import dataclass
from pathlib import Path

import numpy as np
from numpy.typing import NDArray

from prodline.aca import (
    SurveyState,
    _row_is_dependent,
    _stacked_equalities,
    _synthetic_rows,
    apply_answers,
    fpaca_next_question,
    load_orthogonal_design,
    propose_questions,
)
from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    Question,
    ResponseSet,
    question_from_row,
)
from prodline.polyhedra import Polyhedron, analytic_center, diameter_upper_bound
from prodline.respondents import (
    GroundTruth,
    answer_metric,
    ask_metric,
    draw_ground_truth,
    generate_population_synthetic,
    outside_option_profile,
    reference_equalities,
)
from prodline.socmodels import (
    compute_guarantee_bound,
    customer_polyhedra,
    evaluate_true_soc,
    solve_pco_rt,
    solve_socd,
)

__all__ = [
    "ACA_MIN_QUESTIONS",
    "CSV_COLUMNS",
    "SETTINGS",
    "ExperimentConfig",
    "ExperimentRecord",
    "SummaryRow",
    "design_diameters",
    "estimate_theta_heuristic",
    "instance_ground_truth",
    "read_csv",
    "report_bound",
    "run_experiment",
    "run_instance",
    "run_setting",
    "summarize",
    "write_csv",
]

SETTINGS = ("ORTH+SOCD", "ORTH+PCO", "CGACA+PCO", "FPACA+SOCD")
ACA_MIN_QUESTIONS = 5
DESIGN_QUESTION_LIMIT = 27
CSV_COLUMNS = (
    "instance_id",
    "setting",
    "k",
    "true_soc",
    "worst_case_soc",
    "wall_ms",
    "seed",
    "excluded",
)

# ground truth draws from a stream disjoint from the population stream
_TRUTH_SEED_OFFSET = 1000

_BENCHMARK_LEVELS = (5, 8, 9, 9)


# ---------------------------------------------------------------------------
# Configuration and records
# ---------------------------------------------------------------------------


@dataclass(frozen=True)
class ExperimentConfig:
    """Everything one benchmark run depends on.

    ``sweep`` holds the recorded question counts; adaptive settings skip
    entries below ``ACA_MIN_QUESTIONS`` because their first rounds come
    from the fixed design.  ``seed`` is the base of the instance seed
    sequence (instance i runs on seed + i).  ``sample_count`` is the
    per-customer sample budget of choice-mode pricing; the separate
    ``fpaca_sample_count`` keeps the longest-axis baseline's hit-and-run
    budget light enough for full sweeps.
    """

    schema: AttributeSchema = AttributeSchema(_BENCHMARK_LEVELS)
    customers: int = 30
    products: int = 1
    instances: int = 10
    sweep: tuple[int, ...] = (5, 10, 15, 21, 27)
    settings: tuple[str, ...] = SETTINGS
    seed: int = 1000
    solver: str = "highs"
    box_half_width: float = 50.0
    sample_count: int = 30
    price_bounds: tuple[float, float] = (0.0, 5.0)
    output: str | None = None
    master_method: str = "enumerate"
    fpaca_sample_count: int = 150
    fpaca_burn_in: int = 200
    fpaca_thinning: int = 2
    max_workers: int | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "sweep", tuple(sorted({int(k) for k in self.sweep})))
        object.__setattr__(self, "settings", tuple(self.settings))
        object.__setattr__(
            self, "price_bounds", (float(self.price_bounds[0]), float(self.price_bounds[1]))
        )
        if tuple(self.schema.levels_per_attribute) != _BENCHMARK_LEVELS:
            raise ValueError(
                "benchmark settings seed from the fixed orthogonal design, "
                f"which exists for the {_BENCHMARK_LEVELS} schema only"
            )
        if not self.sweep:
            raise ValueError("question-count sweep is empty")
        if self.sweep[0] < 1 or self.sweep[-1] > DESIGN_QUESTION_LIMIT:
            raise ValueError(
                f"sweep must stay within [1, {DESIGN_QUESTION_LIMIT}], got {self.sweep}"
            )
        if not self.settings:
            raise ValueError("no settings selected")
        unknown = [s for s in self.settings if s not in SETTINGS]
        if unknown:
            raise ValueError(f"unknown settings {unknown}; choose from {SETTINGS}")
        if min(self.customers, self.products, self.instances) < 1:
            raise ValueError("customers, products and instances must be positive")
        if self.solver != "highs":
            raise ValueError(f"unknown solver backend {self.solver!r}")
        if self.master_method not in ("milp", "enumerate", "auto"):
            raise ValueError(f"unknown master method {self.master_method!r}")
        if self.box_half_width <= 0:
            raise ValueError("box half-width must be positive")
        if self.price_bounds[0] > self.price_bounds[1]:
            raise ValueError("price bounds are reversed")

    def box(self) -> PartworthBox:
        return PartworthBox.symmetric(self.schema.total_levels, self.box_half_width)

    def instance_seeds(self) -> tuple[int, ...]:
        return tuple(self.seed + i for i in range(self.instances))

    def adaptive_sweep(self) -> tuple[int, ...]:
        return tuple(k for k in self.sweep if k >= ACA_MIN_QUESTIONS)

    def to_json(self) -> dict:
        return {
            "schema": self.schema.to_json(),
            "customers": self.customers,
            "products": self.products,
            "instances": self.instances,
            "sweep": list(self.sweep),
            "settings": list(self.settings),
            "seed": self.seed,
            "solver": self.solver,
            "box_half_width": self.box_half_width,
            "sample_count": self.sample_count,
            "price_bounds": list(self.price_bounds),
            "output": self.output,
            "master_method": self.master_method,
            "fpaca_sample_count": self.fpaca_sample_count,
            "fpaca_burn_in": self.fpaca_burn_in,
            "fpaca_thinning": self.fpaca_thinning,
            "max_workers": self.max_workers,
        }

    @classmethod
    def from_json(cls, data: dict) -> "ExperimentConfig":
        kwargs = dict(data)
        if "schema" in kwargs:
            kwargs["schema"] = AttributeSchema.from_json(kwargs["schema"])
        for key in ("sweep", "settings", "price_bounds"):
            if key in kwargs:
                kwargs[key] = tuple(kwargs[key])
        known = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(kwargs) - known)
        if unknown:
            raise ValueError(f"unknown config keys {unknown}")
        return cls(**kwargs)

    def digest(self) -> str:
        """Twelve hex digits identifying the scientific content of the run.

        The output path and worker count cannot change any record, so they
        stay out of the hash.
        """
        blob = {k: v for k, v in self.to_json().items() if k not in ("output", "max_workers")}
        return hashlib.sha256(json.dumps(blob, sort_keys=True).encode()).hexdigest()[:12]


@dataclass(frozen=True)
class ExperimentRecord:
    """One measurement: a setting's recommendation after k questions."""

    instance_id: int
    setting: str
    k: int
    true_soc: float
    worst_case_soc: float | None
    wall_ms: float
    seed: int
    excluded: bool = False

    def __post_init__(self) -> None:
        if not 0.0 <= self.true_soc <= 1.0:
            raise ValueError(f"true share of choice {self.true_soc} outside [0, 1]")
        if self.worst_case_soc is not None and not 0.0 <= self.worst_case_soc <= 1.0:
            raise ValueError(
                f"worst-case share of choice {self.worst_case_soc} outside [0, 1]"
            )


@dataclass(frozen=True)
class SummaryRow:
    """Sample statistics of true share of choice for one (setting, k) cell."""

    setting: str
    k: int
    mean: float
    sd: float
    count: int
    excluded: int


# ---------------------------------------------------------------------------
# Instance assembly
# ---------------------------------------------------------------------------


def instance_ground_truth(config: ExperimentConfig, instance_seed: int) -> GroundTruth:
    """Population and calibrated ground truth for one instance seed.

    The truth stream is offset from the population stream so the same
    seed never feeds both generators.
    """
    population = generate_population_synthetic(config.schema, seed=instance_seed)
    return draw_ground_truth(
        population,
        config.schema,
        config.customers,
        seed=instance_seed + _TRUTH_SEED_OFFSET,
        box=config.box(),
    )


def _design_responses(
    truth: GroundTruth, templates: list[Question], k: int
) -> list[ResponseSet]:
    """First k design rows answered exactly by every customer."""
    return [
        ResponseSet(n, tuple(ask_metric(truth, n, t) for t in templates[:k]))
        for n in range(truth.customer_count)
    ]


def _solve_point_estimate(responses, config, known_equalities, forbidden):
    polys = customer_polyhedra(responses, config.box(), known_equalities)
    centers = np.stack([analytic_center(P) for P in polys])
    return solve_socd(
        centers, config.schema, config.products, forbidden_profiles=forbidden
    )


def _record(
    config: ExperimentConfig,
    setting: str,
    instance_seed: int,
    k: int,
    sol,
    worst_case: float | None,
    t0: float,
    truth: GroundTruth,
    chain_ms: float = 0.0,
) -> ExperimentRecord:
    return ExperimentRecord(
        instance_id=instance_seed - config.seed,
        setting=setting,
        k=k,
        true_soc=evaluate_true_soc(sol.product_line, truth.true_partworths),
        worst_case_soc=worst_case,
        wall_ms=chain_ms + 1e3 * (time.perf_counter() - t0),
        seed=instance_seed,
        excluded=sol.status == "limit",
    )


# ---------------------------------------------------------------------------
# Setting runners
# ---------------------------------------------------------------------------


def run_setting(
    config: ExperimentConfig, setting: str, instance_seed: int
) -> list[ExperimentRecord]:
    """All records of one setting on one instance.

    Fixed-design settings re-ask the first k design rows at every sweep
    point.  Adaptive settings run their survey chain once from the
    five-question seed and record at the sweep points they pass, so a
    record's wall time is the cumulative chain time up to that round plus
    the recording solve itself.  A solver that stops on a limit marks the
    record excluded rather than aborting the run.
    """
    if setting not in SETTINGS:
        raise ValueError(f"unknown setting {setting!r}; choose from {SETTINGS}")
    truth = instance_ground_truth(config, instance_seed)
    known = reference_equalities(config.schema)
    forbidden = (outside_option_profile(config.schema),)
    if setting == "CGACA+PCO":
        return _run_column_generation(config, instance_seed, truth, known, forbidden)
    if setting == "FPACA+SOCD":
        return _run_longest_axis(config, instance_seed, truth, known, forbidden)
    return _run_fixed_design(config, setting, instance_seed, truth, known, forbidden)


def _run_fixed_design(config, setting, instance_seed, truth, known, forbidden):
    design = load_orthogonal_design()
    records = []
    for k in config.sweep:
        t0 = time.perf_counter()
        responses = _design_responses(truth, design, k)
        if setting == "ORTH+SOCD":
            sol = _solve_point_estimate(responses, config, known, forbidden)
            worst_case = None
        else:
            sol = solve_pco_rt(
                responses,
                config.schema,
                config.products,
                config.box(),
                known_equalities=known,
                forbidden_profiles=forbidden,
                method=config.master_method,
            )
            worst_case = float(sol.objective)
        records.append(
            _record(config, setting, instance_seed, k, sol, worst_case, t0, truth)
        )
    return records


def _run_column_generation(config, instance_seed, truth, known, forbidden):
    ks = config.adaptive_sweep()
    if not ks:
        return []
    design = load_orthogonal_design()
    state = SurveyState(
        schema=config.schema,
        box=config.box(),
        M=config.products,
        responses=tuple(_design_responses(truth, design, ACA_MIN_QUESTIONS)),
        mode="metric",
        known_equalities=known,
        forbidden_profiles=forbidden,
        master_method=config.master_method,
        sample_count=config.sample_count,
        price_bounds=config.price_bounds,
        seed=instance_seed,
    )
    records = []
    chain_ms = 0.0
    for k in range(ACA_MIN_QUESTIONS, ks[-1] + 1):
        if k in ks:
            t0 = time.perf_counter()
            sol = solve_pco_rt(
                list(state.responses),
                config.schema,
                config.products,
                config.box(),
                known_equalities=known,
                forbidden_profiles=forbidden,
                method=config.master_method,
            )
            records.append(
                _record(
                    config,
                    "CGACA+PCO",
                    instance_seed,
                    k,
                    sol,
                    float(sol.objective),
                    t0,
                    truth,
                    chain_ms,
                )
            )
        if k == ks[-1]:
            break
        t0 = time.perf_counter()
        staged = propose_questions(state)
        answers = {
            res.customer_id: answer_metric(truth, res.customer_id, res.question)
            for res in staged.proposals
        }
        state = apply_answers(staged, answers)
        chain_ms += 1e3 * (time.perf_counter() - t0)
    return records


def _independent_question(schema, rs, known_equalities, template, design):
    """Swap a span-dependent proposal for an independent fallback row.

    A dependent metric row cannot shrink the customer's polyhedron, and
    the full-information sweep needs every asked row to add rank.  The
    fallback order matches the adaptive survey's: unanswered design rows
    first, then single-attribute comparisons.
    """
    rows, _ = _stacked_equalities(rs, known_equalities, schema.total_levels)
    if not _row_is_dependent(rows, np.asarray(template.q, dtype=np.float64)):
        return template
    answered = {tuple(int(v) for v in q.q) for q in rs.questions}
    candidates = [t for t in design if tuple(int(v) for v in t.q) not in answered]
    candidates += [
        question_from_row(schema, row, "metric", 0.0) for row in _synthetic_rows(schema)
    ]
    for cand in candidates:
        if not _row_is_dependent(rows, np.asarray(cand.q, dtype=np.float64)):
            return cand
    return template


def _run_longest_axis(config, instance_seed, truth, known, forbidden):
    ks = config.adaptive_sweep()
    if not ks:
        return []
    design = load_orthogonal_design()
    responses = _design_responses(truth, design, ACA_MIN_QUESTIONS)
    box = config.box()
    records = []
    chain_ms = 0.0
    for k in range(ACA_MIN_QUESTIONS, ks[-1] + 1):
        if k in ks:
            t0 = time.perf_counter()
            sol = _solve_point_estimate(responses, config, known, forbidden)
            records.append(
                _record(
                    config, "FPACA+SOCD", instance_seed, k, sol, None, t0, truth, chain_ms
                )
            )
        if k == ks[-1]:
            break
        t0 = time.perf_counter()
        grown = []
        for rs in responses:
            P = Polyhedron.from_responses(rs, box, known)
            template = fpaca_next_question(
                P,
                config.schema,
                seed=(instance_seed, rs.customer_id, k),
                sample_count=config.fpaca_sample_count,
                burn_in=config.fpaca_burn_in,
                thinning=config.fpaca_thinning,
            )
            template = _independent_question(config.schema, rs, known, template, design)
            grown.append(rs.with_question(ask_metric(truth, rs.customer_id, template)))
        responses = grown
        chain_ms += 1e3 * (time.perf_counter() - t0)
    return records


def run_instance(config: ExperimentConfig, instance_seed: int) -> list[ExperimentRecord]:
    """Every selected setting on one instance; rounds within a setting are
    sequential, instances parallelize across seeds."""
    records: list[ExperimentRecord] = []
    for setting in config.settings:
        records.extend(run_setting(config, setting, instance_seed))
    return records


def run_experiment(config: ExperimentConfig) -> list[ExperimentRecord]:
    """Run all instances and, when configured, emit CSV plus config echo.

    Records come back sorted by (instance id, setting, k) regardless of
    scheduling, so reruns with the same seed produce the same file apart
    from wall times.
    """
    seeds = config.instance_seeds()
    workers = config.max_workers or min(len(seeds), os.cpu_count() or 1)
    if workers > 1:
        with concurrent.futures.ThreadPoolExecutor(max_workers=workers) as pool:
            chunks = list(pool.map(lambda s: run_instance(config, s), seeds))
    else:
        chunks = [run_instance(config, s) for s in seeds]
    records = [rec for chunk in chunks for rec in chunk]
    records.sort(key=lambda r: (r.instance_id, r.setting, r.k))
    if config.output is not None:
        path = Path(config.output)
        write_csv(records, path)
        echo = {
            "config": config.to_json(),
            "config_digest": config.digest(),
            "seed": config.seed,
            "records": len(records),
        }
        path.with_suffix(".json").write_text(json.dumps(echo, indent=2) + "\n")
    return records


# ---------------------------------------------------------------------------
# Statistics, CSV, guarantee bound
# ---------------------------------------------------------------------------


def summarize(records) -> dict[tuple[str, int], SummaryRow]:
    """Sample mean and sd (ddof 1) of true share per (setting, k) cell.

    Excluded records are dropped from the statistics and counted
    separately; a cell with a single kept record reports sd 0.
    """
    groups: dict[tuple[str, int], list[ExperimentRecord]] = {}
    for rec in records:
        groups.setdefault((rec.setting, rec.k), []).append(rec)
    out: dict[tuple[str, int], SummaryRow] = {}
    for (setting, k), recs in sorted(groups.items()):
        kept = [r.true_soc for r in recs if not r.excluded]
        mean = float(np.mean(kept)) if kept else math.nan
        sd = float(np.std(kept, ddof=1)) if len(kept) > 1 else 0.0
        out[(setting, k)] = SummaryRow(setting, k, mean, sd, len(kept), len(recs) - len(kept))
    return out


def write_csv(records, path) -> Path:
    """Fixed-schema CSV.  Shares are written via repr so reruns compare
    byte-identically outside the wall-time column."""
    path = Path(path)
    with path.open("w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(CSV_COLUMNS)
        for rec in records:
            writer.writerow(
                [
                    rec.instance_id,
                    rec.setting,
                    rec.k,
                    repr(rec.true_soc),
                    "" if rec.worst_case_soc is None else repr(rec.worst_case_soc),
                    f"{rec.wall_ms:.3f}",
                    rec.seed,
                    str(rec.excluded).lower(),
                ]
            )
    return path


def read_csv(path) -> list[ExperimentRecord]:
    records = []
    with Path(path).open(newline="") as fh:
        reader = csv.DictReader(fh)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ValueError(f"unexpected CSV columns {reader.fieldnames}")
        for row in reader:
            records.append(
                ExperimentRecord(
                    instance_id=int(row["instance_id"]),
                    setting=row["setting"],
                    k=int(row["k"]),
                    true_soc=float(row["true_soc"]),
                    worst_case_soc=(
                        float(row["worst_case_soc"]) if row["worst_case_soc"] else None
                    ),
                    wall_ms=float(row["wall_ms"]),
                    seed=int(row["seed"]),
                    excluded=row["excluded"] == "true",
                )
            )
    return records


def estimate_theta_heuristic(best_utilities, bandwidth: float | None = None) -> float:
    """Crude stand-in for the guarantee's Lipschitz constant.

    Takes the steepest finite-difference slope of the empirical CDF of
    per-customer best utilities.  The constant is exogenous to the model;
    this estimate is a labeled heuristic for exploratory reporting only.
    """
    values = np.sort(np.asarray(best_utilities, dtype=np.float64).reshape(-1))
    n = values.size
    if n < 2:
        return 0.0
    if bandwidth is None:
        spread = float(values[-1] - values[0])
        bandwidth = spread / math.sqrt(n) if spread > 0 else 1.0
    right = np.searchsorted(values, values + bandwidth, side="right")
    left = np.searchsorted(values, values - bandwidth, side="right")
    return float(np.max(right - left) / (2.0 * bandwidth * n))


def report_bound(
    config: ExperimentConfig,
    diameters: dict[int, NDArray],
    theta: float = 0.0,
    *,
    best_utilities=None,
) -> dict[int, float]:
    """Guarantee bound per question count from per-customer diameters.

    ``diameters`` maps a question count to that round's per-customer
    diameter upper bounds; the bound uses their maximum.  ``theta``
    defaults to 0 because the Lipschitz constant is exogenous; passing
    ``best_utilities`` switches on the heuristic estimator instead.
    """
    if best_utilities is not None:
        theta = estimate_theta_heuristic(best_utilities)
    out: dict[int, float] = {}
    for k in sorted(diameters):
        d = float(np.max(np.asarray(diameters[k], dtype=np.float64)))
        out[int(k)] = compute_guarantee_bound(
            config.schema.total_levels,
            config.products,
            config.customers,
            config.schema.attribute_count,
            theta,
            d,
        )
    return out


def design_diameters(config: ExperimentConfig, instance_seed: int) -> dict[int, NDArray]:
    """Per-customer diameter bounds of the fixed-design polyhedra at every
    sweep point, the usual input to ``report_bound``."""
    truth = instance_ground_truth(config, instance_seed)
    known = reference_equalities(config.schema)
    design = load_orthogonal_design()
    out: dict[int, NDArray] = {}
    for k in config.sweep:
        responses = _design_responses(truth, design, k)
        polys = customer_polyhedra(responses, config.box(), known)
        out[k] = np.array([diameter_upper_bound(P) for P in polys])
    return out
