"""Ground-truth populations and simulated survey respondents.

The synthetic scheme draws each level's population mean uniformly from
[-5, 4] with independent coordinate variance 10^2.  Per-customer true
partworths are drawn from that population and then calibrated so the
reference level of every attribute sits at utility zero; the profile
composed of the reference levels is the outside option.  Respondents
answer metric questions exactly and choice questions by the sign of the
price-adjusted utility gap, so the ground truth always stays inside the
response polyhedron.
"""

from __future__ import annotations

import csv
import dataclasses
import io
from dataclasses import dataclass

import numpy as np
from numpy.typing import NDArray

from ._assets import read_asset
from .conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductProfile,
    Question,
    encode_question,
    flip_question,
)
from .gaussian import PopulationModel

__all__ = [
    "SYNTHETIC_SCHEMA",
    "CAMERA_SCHEMA",
    "CAMERA_TABULATED_SLOTS",
    "GroundTruth",
    "generate_population_synthetic",
    "load_camera_population",
    "embed_camera",
    "camera_level_names",
    "calibrate_partworths",
    "reference_equalities",
    "outside_option_profile",
    "draw_ground_truth",
    "answer_metric",
    "ask_metric",
    "answer_choice",
]

SYNTHETIC_SCHEMA = AttributeSchema((5, 8, 9, 9))

#: Seven camera attributes; the two binary ones (operation feedback,
#: large viewfinder) carry an explicit "absent" level pinned at zero.
CAMERA_SCHEMA = AttributeSchema((3, 2, 5, 2, 2, 2, 3))

#: Position of each tabulated camera level inside the CAMERA_SCHEMA layout.
#: Slots 10 and 14 are the absent levels of the binary attributes.
CAMERA_TABULATED_SLOTS: tuple[int, ...] = (0, 1, 2, 3, 4, 5, 6, 7, 8, 9, 11, 12, 13, 15, 16, 17, 18)


@dataclass(frozen=True)
class GroundTruth:
    """Hidden per-customer partworths behind a simulated survey.

    ``true_partworths`` is N x L and already calibrated: the reference
    level of every attribute has partworth exactly zero, so the outside
    option's utility is zero by construction.
    """

    true_partworths: NDArray[np.float64]
    population: PopulationModel
    seed: int
    schema: AttributeSchema
    references: tuple[int, ...]
    redraws: int = 0

    def __post_init__(self) -> None:
        pw = np.array(self.true_partworths, dtype=np.float64)
        pw.setflags(write=False)
        object.__setattr__(self, "true_partworths", pw)
        object.__setattr__(self, "references", tuple(int(l) for l in self.references))

    @property
    def customer_count(self) -> int:
        return self.true_partworths.shape[0]


def generate_population_synthetic(
    schema: AttributeSchema | None = None, *, seed: int
) -> PopulationModel:
    """Population for the synthetic benchmark: means ~ U[-5, 4], covariance 100 I."""
    schema = SYNTHETIC_SCHEMA if schema is None else schema
    rng = np.random.default_rng(seed)
    mu = rng.uniform(-5.0, 4.0, size=schema.total_levels)
    sigma = 100.0 * np.eye(schema.total_levels)
    return PopulationModel(mu, sigma)


def load_camera_population() -> PopulationModel:
    """Digital-camera population over the 17 tabulated levels.

    The covariance table ships as a lower triangle and is mirrored to
    full symmetry here.  If mirroring ever left the matrix indefinite,
    the minimal diagonal shift restoring positive semidefiniteness
    would be recorded as the model's ridge; the shipped table needs none.
    """
    mean_rows = list(csv.DictReader(io.StringIO(read_asset("camera_mean.csv"))))
    mu = np.array([float(row["mean"]) for row in mean_rows])
    tri = np.zeros((len(mu), len(mu)))
    for i, line in enumerate(read_asset("camera_cov.csv").strip().splitlines()):
        values = [float(v) for v in line.split(",")]
        if len(values) != i + 1:
            raise ValueError(f"covariance triangle row {i + 1} has {len(values)} entries")
        tri[i, : i + 1] = values
    sigma = tri + np.tril(tri, -1).T
    ridge = max(0.0, -float(np.linalg.eigvalsh(sigma).min()))
    return PopulationModel(mu, sigma, ridge=ridge)


def camera_level_names() -> tuple[str, ...]:
    rows = csv.DictReader(io.StringIO(read_asset("camera_mean.csv")))
    return tuple(row["name"] for row in rows)


def embed_camera(model: PopulationModel) -> PopulationModel:
    """Lift the 17-level camera model into the 19-slot CAMERA_SCHEMA layout.

    The absent levels of the binary attributes get mean zero and zero
    variance, mirroring how calibration pins reference levels.
    """
    slots = list(CAMERA_TABULATED_SLOTS)
    L = CAMERA_SCHEMA.total_levels
    mu = np.zeros(L)
    sigma = np.zeros((L, L))
    mu[slots] = model.mu
    sigma[np.ix_(slots, slots)] = model.sigma
    return PopulationModel(mu, sigma, ridge=model.ridge)


def _default_references(schema: AttributeSchema) -> tuple[int, ...]:
    return tuple(schema.offsets)


def calibrate_partworths(
    raw: NDArray, schema: AttributeSchema, references: tuple[int, ...] | None = None
) -> NDArray[np.float64]:
    """Re-express partworths relative to each attribute's reference level.

    Works on a single vector or a stacked N x L matrix.  After the shift
    the reference levels are exactly zero and every utility difference
    between profiles is unchanged.
    """
    references = _default_references(schema) if references is None else references
    u = np.array(raw, dtype=np.float64)
    single = u.ndim == 1
    if single:
        u = u[None, :]
    for a in range(schema.attribute_count):
        levels = list(schema.levels_of(a))
        u[:, levels] -= u[:, [references[a]]]
    return u[0] if single else u


def reference_equalities(
    schema: AttributeSchema, references: tuple[int, ...] | None = None
) -> tuple[NDArray[np.float64], NDArray[np.float64]]:
    """Known equality rows pinning each reference level's partworth to zero."""
    references = _default_references(schema) if references is None else references
    Q = np.zeros((schema.attribute_count, schema.total_levels))
    for i, level in enumerate(references):
        Q[i, level] = 1.0
    return Q, np.zeros(schema.attribute_count)


def outside_option_profile(
    schema: AttributeSchema, references: tuple[int, ...] | None = None
) -> ProductProfile:
    """The profile made of the reference levels; its utility is identically zero."""
    references = _default_references(schema) if references is None else references
    return ProductProfile.from_levels(
        schema, [references[a] - schema.offsets[a] for a in range(schema.attribute_count)]
    )


def draw_ground_truth(
    population: PopulationModel,
    schema: AttributeSchema,
    count: int,
    *,
    seed: int,
    references: tuple[int, ...] | None = None,
    box: PartworthBox | None = None,
    max_redraws: int = 10_000,
) -> GroundTruth:
    """Draw ``count`` customers from the population and calibrate them.

    When a box is given, any customer whose calibrated partworths land
    outside it is redrawn, so the box is a valid prior bound on every
    truth the simulation will ever use.  Redraws are counted on the
    returned GroundTruth; they are rare at the default box width.
    """
    references = _default_references(schema) if references is None else references
    rng = np.random.default_rng(seed)
    F = population.factor()

    def draw(batch: int) -> NDArray[np.float64]:
        z = rng.standard_normal((batch, population.dimension))
        return calibrate_partworths(population.mu + z @ F.T, schema, references)

    truths = draw(count)
    redraws = 0
    if box is not None:
        while True:
            bad = np.flatnonzero(
                (truths < box.lower).any(axis=1) | (truths > box.upper).any(axis=1)
            )
            if bad.size == 0:
                break
            redraws += bad.size
            if redraws > max_redraws:
                raise RuntimeError(
                    "ground-truth drawing exceeded the redraw budget; the box is "
                    "too tight for this population"
                )
            truths[bad] = draw(bad.size)
    return GroundTruth(
        true_partworths=truths,
        population=population,
        seed=seed,
        schema=schema,
        references=references,
        redraws=redraws,
    )


def answer_metric(truth: GroundTruth, n: int, question: Question) -> float:
    """Exact utility gap u_n . q; no response error."""
    return float(truth.true_partworths[n] @ np.asarray(question.q, dtype=np.float64))


def ask_metric(truth: GroundTruth, n: int, template: Question) -> Question:
    """Answer a metric question template, filling in the elicited intensity."""
    return dataclasses.replace(template, intensity=answer_metric(truth, n, template))


def answer_choice(
    truth: GroundTruth,
    n: int,
    x1: ProductProfile,
    x2: ProductProfile,
    p1: float,
    p2: float,
) -> tuple[int, Question | None]:
    """Choose between two priced profiles; ties go to the first.

    Returns the chosen index (1 or 2) and the halfspace row to append,
    oriented toward the chosen product so that it always contains the
    truth.  Identical profiles produce no informative row (None).
    """
    u = truth.true_partworths[n]
    q = x1.x.astype(np.int16) - x2.x.astype(np.int16)
    gap = float(u @ q) - (float(p1) - float(p2))
    chosen = 1 if gap >= 0.0 else 2
    if not np.any(q):
        return chosen, None
    question = encode_question(x1, x2, "choice", prices=(p1, p2), schema=truth.schema)
    if chosen == 2:
        question = flip_question(question)
    return chosen, question
