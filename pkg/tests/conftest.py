"""Shared builders: seeded survey instances, random profiles, tiny polyhedra."""

import numpy as np

from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductProfile,
    ResponseSet,
    encode_question,
)
from prodline.polyhedra import Polyhedron
from prodline.respondents import (
    ask_metric,
    draw_ground_truth,
    generate_population_synthetic,
    reference_equalities,
)


def random_profile(schema: AttributeSchema, rng) -> ProductProfile:
    return ProductProfile.from_levels(
        schema, [int(rng.integers(c)) for c in schema.levels_per_attribute]
    )


def random_profile_pair(schema: AttributeSchema, rng):
    while True:
        first = random_profile(schema, rng)
        second = random_profile(schema, rng)
        if first != second:
            return first, second


def metric_survey(
    schema: AttributeSchema,
    customers: int,
    questions: int,
    seed: int,
    half_width: float = 50.0,
    calibrated: bool = True,
):
    """Exactly answered random metric survey plus its hidden truth.

    Returns (truth, responses, box, known_equalities); the truth always lies
    inside every customer's polyhedron because answers are exact.
    """
    box = PartworthBox.symmetric(schema.total_levels, half_width)
    population = generate_population_synthetic(schema, seed=seed)
    truth = draw_ground_truth(population, schema, customers, seed=seed + 1, box=box)
    rng = np.random.default_rng(seed + 2)
    responses = []
    for n in range(customers):
        asked = []
        for _ in range(questions):
            first, second = random_profile_pair(schema, rng)
            template = encode_question(first, second, "metric", intensity=0.0, schema=schema)
            asked.append(ask_metric(truth, n, template))
        responses.append(ResponseSet(n, tuple(asked)))
    known = reference_equalities(schema) if calibrated else None
    return truth, responses, box, known


def feasible_polyhedron(L: int, K: int, seed: int, half_width: float = 10.0) -> Polyhedron:
    """Random polyhedron guaranteed nonempty: rows are answered around a
    hidden point drawn inside the box, inequalities slackened by |noise|."""
    rng = np.random.default_rng(seed)
    box = PartworthBox.symmetric(L, half_width)
    anchor = rng.uniform(-0.5 * half_width, 0.5 * half_width, size=L)
    Q = np.zeros((K, L))
    r = np.zeros(K)
    eq = np.zeros(K, dtype=bool)
    for k in range(K):
        q = rng.integers(-1, 2, size=L).astype(np.float64)
        if not q.any():
            q[int(rng.integers(L))] = 1.0
        value = float(q @ anchor)
        if rng.random() < 0.4:
            Q[k], r[k], eq[k] = q, value, True
        else:
            Q[k], r[k] = q, value - abs(rng.normal(scale=0.5))
    return Polyhedron(Q, r, eq, box)
