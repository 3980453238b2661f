"""Simulated populations, calibration, and exact respondents."""

import numpy as np
import pytest

from prodline import (
    GroundTruth,
    PopulationModel,
    Polyhedron,
    draw_ground_truth,
    generate_population_synthetic,
    load_camera_population,
    outside_option_profile,
    reference_equalities,
)
from prodline.conjoint import AttributeSchema, PartworthBox, ProductProfile, product_utility
from prodline.respondents import (
    CAMERA_SCHEMA,
    CAMERA_TABULATED_SLOTS,
    SYNTHETIC_SCHEMA,
    answer_choice,
    answer_metric,
    ask_metric,
    calibrate_partworths,
    camera_level_names,
    embed_camera,
)

from conftest import random_profile, random_profile_pair


def test_synthetic_population_shape_and_determinism():
    model = generate_population_synthetic(seed=4)
    assert model.dimension == SYNTHETIC_SCHEMA.total_levels == 31
    assert np.all(model.mu >= -5.0) and np.all(model.mu <= 4.0)
    assert np.allclose(model.sigma, 100.0 * np.eye(31))
    again = generate_population_synthetic(seed=4)
    assert np.array_equal(model.mu, again.mu)
    other = generate_population_synthetic(seed=5)
    assert not np.array_equal(model.mu, other.mu)

    small = AttributeSchema((3, 2))
    assert generate_population_synthetic(small, seed=0).dimension == 5


def test_calibration_zeroes_references_and_keeps_differences():
    schema = AttributeSchema((3, 2, 4))
    rng = np.random.default_rng(6)
    raw = rng.normal(size=(5, schema.total_levels))
    cal = calibrate_partworths(raw, schema)
    for a in range(schema.attribute_count):
        assert np.allclose(cal[:, schema.offsets[a]], 0.0)
    # utility differences between any two profiles are untouched
    for _ in range(20):
        x1, x2 = random_profile_pair(schema, rng)
        for before_u, after_u in zip(raw, cal):
            before = product_utility(before_u, x1) - product_utility(before_u, x2)
            after = product_utility(after_u, x1) - product_utility(after_u, x2)
            assert before == pytest.approx(after, abs=1e-12)

    vec = calibrate_partworths(raw[0], schema)
    assert vec.ndim == 1
    assert np.allclose(vec, cal[0])

    custom = calibrate_partworths(raw, schema, references=(1, 4, 7))
    assert np.allclose(custom[:, [1, 4, 7]], 0.0)


def test_reference_equalities_and_outside_option():
    schema = AttributeSchema((3, 2, 4))
    Q, r = reference_equalities(schema)
    assert Q.shape == (3, 9) and np.all(r == 0.0)
    assert np.array_equal(np.flatnonzero(Q.sum(axis=0)), np.array(schema.offsets))
    outside = outside_option_profile(schema)
    assert outside.selected_levels(schema) == schema.offsets
    # a calibrated vector satisfies the equalities and zeroes the outside option
    cal = calibrate_partworths(np.arange(9.0), schema)
    assert np.allclose(Q @ cal, r)
    assert product_utility(cal, outside) == pytest.approx(0.0)


def test_draw_ground_truth_calibrated_deterministic_and_boxed():
    schema = AttributeSchema((3, 2, 4))
    pop = generate_population_synthetic(schema, seed=2)
    truth = draw_ground_truth(pop, schema, 12, seed=5)
    assert isinstance(truth, GroundTruth)
    assert truth.customer_count == 12
    assert truth.true_partworths.shape == (12, 9)
    for a in range(schema.attribute_count):
        assert np.allclose(truth.true_partworths[:, schema.offsets[a]], 0.0)
    again = draw_ground_truth(pop, schema, 12, seed=5)
    assert np.array_equal(truth.true_partworths, again.true_partworths)

    box = PartworthBox.symmetric(9, 50.0)
    boxed = draw_ground_truth(pop, schema, 12, seed=5, box=box)
    assert np.all(boxed.true_partworths >= box.lower - 1e-12)
    assert np.all(boxed.true_partworths <= box.upper + 1e-12)

    tight = PartworthBox.symmetric(9, 1e-6)
    with pytest.raises(RuntimeError, match="redraw budget"):
        draw_ground_truth(pop, schema, 3, seed=5, box=tight, max_redraws=50)


def test_tight_box_forces_redraws():
    schema = AttributeSchema((3, 2, 4))
    pop = generate_population_synthetic(schema, seed=2)
    # wide enough to succeed, narrow enough that some draws land outside
    box = PartworthBox.symmetric(9, 12.0)
    truth = draw_ground_truth(pop, schema, 30, seed=7, box=box)
    assert truth.redraws > 0
    assert np.all(np.abs(truth.true_partworths) <= 12.0 + 1e-12)


def test_metric_answers_are_exact_gaps():
    schema = AttributeSchema((3, 2, 4))
    pop = generate_population_synthetic(schema, seed=3)
    truth = draw_ground_truth(pop, schema, 4, seed=9)
    rng = np.random.default_rng(0)
    from prodline.conjoint import encode_question

    for n in range(4):
        x1, x2 = random_profile_pair(schema, rng)
        template = encode_question(x1, x2, "metric", intensity=0.0, schema=schema)
        gap = answer_metric(truth, n, template)
        assert gap == pytest.approx(
            product_utility(truth.true_partworths[n], x1)
            - product_utility(truth.true_partworths[n], x2)
        )
        answered = ask_metric(truth, n, template)
        assert answered.intensity == pytest.approx(gap)
        assert np.array_equal(answered.q, template.q)


def test_choice_answers_orient_toward_truth():
    schema = AttributeSchema((3, 2, 4))
    pop = generate_population_synthetic(schema, seed=3)
    truth = draw_ground_truth(pop, schema, 5, seed=11)
    rng = np.random.default_rng(1)
    for n in range(5):
        u = truth.true_partworths[n]
        for _ in range(20):
            x1, x2 = random_profile_pair(schema, rng)
            p1, p2 = float(rng.uniform(-3, 3)), float(rng.uniform(-3, 3))
            chosen, question = answer_choice(truth, n, x1, x2, p1, p2)
            gap = (
                product_utility(u, x1) - product_utility(u, x2) - (p1 - p2)
            )
            assert chosen == (1 if gap >= 0 else 2)
            assert question is not None
            # halfspace row holds at the truth
            assert u @ question.q >= question.intensity - 1e-9
            assert question.prices is not None


def test_choice_tie_goes_first_and_identical_profiles_are_silent():
    schema = AttributeSchema((2, 2))
    pop = generate_population_synthetic(schema, seed=0)
    truth = draw_ground_truth(pop, schema, 1, seed=1)
    x = random_profile(schema, np.random.default_rng(2))
    # identical profiles, equal prices: a tie with no informative row
    chosen, question = answer_choice(truth, 0, x, x, 1.0, 1.0)
    assert chosen == 1 and question is None
    # identical profiles, cheaper second: price decides, still no row
    chosen, question = answer_choice(truth, 0, x, x, 2.0, 1.0)
    assert chosen == 2 and question is None


def test_choice_rows_keep_truth_feasible():
    schema = AttributeSchema((3, 2, 4))
    pop = generate_population_synthetic(schema, seed=8)
    box = PartworthBox.symmetric(9, 50.0)
    truth = draw_ground_truth(pop, schema, 3, seed=8, box=box)
    known = reference_equalities(schema)
    rng = np.random.default_rng(3)
    from prodline.conjoint import ResponseSet

    for n in range(3):
        responses = ResponseSet(customer_id=n, questions=())
        for _ in range(8):
            x1, x2 = random_profile_pair(schema, rng)
            _, question = answer_choice(
                truth, n, x1, x2, float(rng.uniform(-2, 2)), float(rng.uniform(-2, 2))
            )
            if question is not None:
                responses = responses.with_question(question)
        P = Polyhedron.from_responses(responses, box, known_equalities=known)
        assert P.contains(truth.true_partworths[n], 1e-9)


def test_camera_population_table():
    model = load_camera_population()
    assert model.dimension == len(CAMERA_TABULATED_SLOTS) == 17
    assert np.allclose(model.sigma, model.sigma.T)
    # the shipped table is already PSD, so no ridge was needed
    assert model.ridge == 0.0
    assert np.linalg.eigvalsh(model.covariance()).min() >= -1e-10

    names = camera_level_names()
    assert len(names) == 17
    assert len(set(names)) == 17


def test_camera_embedding_layout():
    model = load_camera_population()
    embedded = embed_camera(model)
    assert embedded.dimension == CAMERA_SCHEMA.total_levels == 19
    slots = list(CAMERA_TABULATED_SLOTS)
    assert np.allclose(embedded.mu[slots], model.mu)
    assert np.allclose(embedded.sigma[np.ix_(slots, slots)], model.sigma)
    absent = sorted(set(range(19)) - set(slots))
    assert absent == [10, 14]
    assert np.allclose(embedded.mu[absent], 0.0)
    assert np.allclose(embedded.sigma[absent, :], 0.0)
    assert np.allclose(embedded.sigma[:, absent], 0.0)
