"""Dual extraction, pricing models, the round loop, and baselines."""

import itertools
import json
import warnings

import numpy as np
import pytest
import scipy.stats

from prodline import (
    PopulationModel,
    Polyhedron,
    SurveyState,
    apply_answers,
    cg_round,
    condition_on_equalities,
    draw_ground_truth,
    fpaca_next_question,
    generate_population_synthetic,
    load_orthogonal_design,
    propose_questions,
    reference_equalities,
    solve_pco_rt,
    solve_pp_ctl,
    solve_pp_emt,
)
from prodline.aca import (
    DualBundle,
    PricingResult,
    build_pp_ctl,
    extract_duals,
    pricing_coefficients,
)
from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductProfile,
    ResponseSet,
    encode_question,
)
from prodline.polyhedra import diameter_upper_bound
from prodline.respondents import answer_metric, ask_metric
from prodline.socmodels import enumerate_profiles

from conftest import metric_survey, random_profile_pair


def _hand_bundle(rng, N, L, master=0.0):
    return DualBundle(
        lam=rng.uniform(0.0, 2.0, size=N),
        eta=rng.uniform(0.0, 1.0, size=(N, L)),
        kappa=rng.uniform(0.0, 1.0, size=(N, L)),
        master_objective=master,
    )


def _empty_responses(N):
    return [ResponseSet(customer_id=n, questions=()) for n in range(N)]


def test_dual_bundle_validation():
    with pytest.raises(ValueError, match="disagree"):
        DualBundle(lam=np.zeros(2), eta=np.zeros((3, 4)), kappa=np.zeros((3, 4)), master_objective=0.0)
    with pytest.raises(ValueError, match="negative"):
        DualBundle(lam=np.array([-0.1]), eta=np.zeros((1, 2)), kappa=np.zeros((1, 2)), master_objective=0.0)
    with pytest.raises(ValueError, match="non-finite"):
        DualBundle(lam=np.array([np.inf]), eta=np.zeros((1, 2)), kappa=np.zeros((1, 2)), master_objective=0.0)


def test_extract_duals_prices_the_master():
    schema = AttributeSchema((3, 2))
    truth, responses, box, known = metric_survey(
        schema, customers=3, questions=2, seed=33, half_width=10.0
    )
    sol = solve_pco_rt(responses, schema, 1, box, known, method="milp")
    duals = extract_duals(responses, schema, 1, sol.product_line, box=box, known_equalities=known)
    assert duals.customer_count == 3
    assert duals.dimension == schema.total_levels
    assert np.all(duals.lam >= 0.0)
    assert np.all(duals.eta >= 0.0) and np.all(duals.kappa >= 0.0)
    # relaxing the coverage indicators can only help a maximization
    assert duals.master_objective >= sol.objective - 1e-9


def test_pricing_coefficients_formula():
    schema = AttributeSchema((2, 2))
    L = schema.total_levels
    rng = np.random.default_rng(2)
    duals = _hand_bundle(rng, 2, L)
    population = PopulationModel(mu=rng.normal(size=L), sigma=np.eye(L))

    # no answers: the conditional mean is the population mean
    coeffs = pricing_coefficients(duals, population, _empty_responses(2), schema)
    for n in range(2):
        expected = duals.lam[n] * population.mu + duals.kappa[n] - duals.eta[n]
        assert np.allclose(coeffs[n], expected, atol=1e-12)

    # one answered metric row conditions the mean before pricing
    pair = random_profile_pair(schema, rng)
    question = encode_question(*pair, "metric", intensity=0.7, schema=schema)
    answered = [_empty_responses(2)[0].with_question(question), _empty_responses(2)[1]]
    coeffs = pricing_coefficients(duals, population, answered, schema)
    cond = condition_on_equalities(
        population, np.asarray(question.q, float)[None, :], np.array([0.7])
    )
    assert np.allclose(coeffs[0], duals.lam[0] * cond.mu + duals.kappa[0] - duals.eta[0])
    assert np.allclose(coeffs[1], duals.lam[1] * population.mu + duals.kappa[1] - duals.eta[1])


def _all_question_vectors(schema):
    profiles = enumerate_profiles(schema)
    for x1, x2 in itertools.permutations(profiles, 2):
        yield x1, x2, x1.x.astype(float) - x2.x.astype(float)


def test_pp_emt_matches_pair_enumeration():
    schema = AttributeSchema((2, 2))
    L = schema.total_levels
    rng = np.random.default_rng(11)
    for trial in range(10):
        N = 1 + trial % 3
        duals = _hand_bundle(rng, N, L)
        population = PopulationModel(mu=rng.normal(size=L), sigma=np.eye(L))
        responses = _empty_responses(N)
        coeffs = pricing_coefficients(duals, population, responses, schema)

        results = solve_pp_emt(duals, population, responses, schema)
        assert len(results) == N
        for n, res in enumerate(results):
            best = max(float(coeffs[n] @ q) for *_, q in _all_question_vectors(schema))
            assert res.predicted_gain == pytest.approx(best, abs=1e-9)
            assert res.predicted_gain == pytest.approx(
                float(coeffs[n] @ res.question.q), abs=1e-12
            )
            assert res.question.kind == "metric"

        shared = solve_pp_emt(duals, population, responses, schema, shared_question=True)
        total = coeffs.sum(axis=0)
        best_shared = max(float(total @ q) for *_, q in _all_question_vectors(schema))
        assert sum(r.predicted_gain for r in shared) == pytest.approx(best_shared, abs=1e-9)
        assert len({tuple(int(v) for v in r.question.q) for r in shared}) == 1


def test_pp_emt_rejects_choice_rows():
    schema = AttributeSchema((2, 2))
    rng = np.random.default_rng(0)
    pair = random_profile_pair(schema, rng)
    choice_q = encode_question(*pair, "choice", prices=(1.0, 0.0), schema=schema)
    responses = [_empty_responses(1)[0].with_question(choice_q)]
    duals = _hand_bundle(rng, 1, 4)
    population = PopulationModel(mu=np.zeros(4), sigma=np.eye(4))
    with pytest.raises(ValueError, match="choice rows"):
        solve_pp_emt(duals, population, responses, schema)


def _ctl_oracle(duals, samples, schema, price_bounds):
    """Exhaustive pairs x breakpoint-augmented price-difference grid."""
    pl, pu = price_bounds
    best = -np.inf
    base_grid = np.linspace(pl - pu, pu - pl, 21)
    for *_, q in _all_question_vectors(schema):
        breakpoints = [
            float(samples[n][s] @ q)
            for n in range(len(samples))
            for s in range(samples[n].shape[0])
        ]
        grid = np.unique(
            np.concatenate(
                [base_grid, np.clip(np.asarray(breakpoints, float), pl - pu, pu - pl)]
            )
        )
        for d in grid:
            total = 0.0
            for n in range(len(samples)):
                gain_pos = float(duals.lam[n] * d + (duals.kappa[n] - duals.eta[n]) @ q)
                for s in range(samples[n].shape[0]):
                    margin = float(samples[n][s] @ q) - d
                    if margin > 1e-12:
                        total += gain_pos
                    elif margin < -1e-12:
                        total += -gain_pos
                    else:
                        total += abs(gain_pos)
            best = max(best, total)
    return best


def test_pp_ctl_matches_price_grid_enumeration():
    schema = AttributeSchema((2, 2))
    L = schema.total_levels
    rng = np.random.default_rng(23)
    bounds = (0.0, 5.0)
    for trial in range(6):
        N = 1 + trial % 2
        duals = _hand_bundle(rng, N, L)
        samples = [rng.normal(scale=2.0, size=(3, L)) for _ in range(N)]
        results = solve_pp_ctl(duals, samples, schema, price_bounds=bounds)
        achieved = sum(r.predicted_gain * samples[n].shape[0] for n, r in enumerate(results))
        best = _ctl_oracle(duals, samples, schema, bounds)
        assert achieved == pytest.approx(best, abs=1e-6)
        p1, p2 = results[0].prices
        assert bounds[0] - 1e-9 <= p1 <= bounds[1] + 1e-9
        assert bounds[0] - 1e-9 <= p2 <= bounds[1] + 1e-9
        assert all(r.question.kind == "choice" for r in results)
        assert len({tuple(int(v) for v in r.question.q) for r in results}) == 1
        for n, r in enumerate(results):
            assert len(r.sample_signs) == samples[n].shape[0]
            assert set(r.sample_signs) <= {1, -1}


def test_build_pp_ctl_validation():
    schema = AttributeSchema((2, 2))
    rng = np.random.default_rng(4)
    duals = _hand_bundle(rng, 2, 4)
    good = [rng.normal(size=(2, 4)), rng.normal(size=(2, 4))]
    with pytest.raises(ValueError, match="one sample block"):
        build_pp_ctl(duals, good[:1], schema)
    with pytest.raises(ValueError, match="no samples"):
        build_pp_ctl(duals, [np.zeros((0, 4)), good[1]], schema)
    with pytest.raises(ValueError, match="sample length"):
        build_pp_ctl(duals, [rng.normal(size=(2, 3)), good[1]], schema)
    with pytest.raises(ValueError, match="price bounds"):
        build_pp_ctl(duals, good, schema, price_bounds=(3.0, 3.0))
    with pytest.raises(ValueError, match="does not dominate"):
        build_pp_ctl(duals, good, schema, bigC=1e-3)


def test_survey_state_json_round_trip():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    truth, responses, _, known = metric_survey(schema, customers=2, questions=2, seed=3)
    rng = np.random.default_rng(1)
    pair = random_profile_pair(schema, rng)
    proposal = PricingResult(
        customer_id=0,
        question=encode_question(*pair, "choice", prices=(1.0, 2.5), schema=schema),
        predicted_gain=0.125,
        prices=(1.0, 2.5),
        sample_signs=(1, -1, 1),
    )
    state = SurveyState(
        schema=schema,
        box=box,
        M=2,
        responses=tuple(responses),
        mode="choice",
        round_index=3,
        incumbent=None,
        trajectory=(0.0, 0.5),
        known_equalities=known,
        sample_count=12,
        price_bounds=(0.0, 4.0),
        shared_question=True,
        master_method="enumerate",
        proposals=(proposal,),
        seed=9,
    )
    blob = json.dumps(state.to_json())
    back = SurveyState.from_json(json.loads(blob))
    assert back.schema == schema
    assert back.M == 2 and back.mode == "choice" and back.round_index == 3
    assert back.trajectory == (0.0, 0.5)
    assert back.sample_count == 12 and back.price_bounds == (0.0, 4.0)
    assert back.shared_question and back.master_method == "enumerate"
    assert np.allclose(back.box.lower, box.lower)
    assert np.allclose(back.known_equalities[0], known[0])
    assert len(back.responses) == 2
    for got, want in zip(back.responses[0].questions, responses[0].questions):
        assert np.array_equal(got.q, want.q)
        assert got.kind == want.kind
        assert got.intensity == pytest.approx(want.intensity)
    assert back.proposals[0].predicted_gain == 0.125
    assert back.proposals[0].sample_signs == (1, -1, 1)
    assert back.seed == 9

    with pytest.raises(ValueError, match="mode"):
        SurveyState(schema=schema, box=box, M=1, responses=(), mode="verbal")


def _fresh_state(schema, N, box, known, mode="metric", **kw):
    return SurveyState(
        schema=schema,
        box=box,
        M=1,
        responses=tuple(_empty_responses(N)),
        mode=mode,
        known_equalities=known,
        master_method="enumerate",
        **kw,
    )


def test_propose_and_apply_round_trip():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    known = reference_equalities(schema)
    pop = generate_population_synthetic(schema, seed=1)
    truth = draw_ground_truth(pop, schema, 2, seed=2, box=box)
    state = _fresh_state(schema, 2, box, known)

    staged = propose_questions(state)
    assert staged.incumbent is not None
    assert len(staged.trajectory) == 1
    assert staged.proposals is not None and len(staged.proposals) == 2
    for res in staged.proposals:
        assert res.question.kind == "metric"

    answers = {
        res.customer_id: answer_metric(truth, res.customer_id, res.question)
        for res in staged.proposals
    }
    advanced = apply_answers(staged, answers)
    assert advanced.round_index == 1
    assert advanced.proposals is None
    assert all(len(rs.questions) == 1 for rs in advanced.responses)

    again = propose_questions(advanced)
    assert len(again.trajectory) == 2
    assert again.trajectory[1] >= again.trajectory[0] - 1e-9


def test_apply_answers_error_paths():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    known = reference_equalities(schema)
    state = _fresh_state(schema, 2, box, known)
    with pytest.raises(ValueError, match="no pending proposals"):
        apply_answers(state, {})
    staged = propose_questions(state)
    with pytest.raises(ValueError, match="cover customers"):
        apply_answers(staged, {0: 1.0})
    with pytest.raises(ValueError, match="cover customers"):
        apply_answers(staged, {0: 1.0, 1: 0.0, 5: 2.0})


def test_choice_round_and_answer_validation():
    schema = AttributeSchema((2, 2))
    box = PartworthBox.symmetric(4, 5.0)
    known = reference_equalities(schema)
    state = _fresh_state(schema, 2, box, known, mode="choice", sample_count=8)
    staged = propose_questions(state)
    assert all(res.question.kind == "choice" for res in staged.proposals)
    assert all(res.prices is not None for res in staged.proposals)
    with pytest.raises(ValueError, match="1 or 2"):
        apply_answers(staged, {0: 3, 1: 1})
    advanced = apply_answers(staged, {0: 1, 1: 2})
    assert advanced.round_index == 1
    q0 = advanced.responses[0].questions[0]
    q1 = advanced.responses[1].questions[0]
    # choosing the second profile flips the stored halfspace
    assert np.array_equal(np.asarray(q0.q), -np.asarray(q1.q))


class _ExactRespondent:
    def __init__(self, truth):
        self.truth = truth

    def answer(self, customer_id, question):
        if question.kind == "metric":
            return answer_metric(self.truth, customer_id, question)
        u = self.truth.true_partworths[customer_id]
        gap = float(u @ question.q) - question.intensity
        return 1 if gap >= 0 else 2


def test_cg_round_loop_monotone_trajectory():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    known = reference_equalities(schema)
    pop = generate_population_synthetic(schema, seed=6)
    truth = draw_ground_truth(pop, schema, 2, seed=7, box=box)
    state = _fresh_state(schema, 2, box, known)
    respondent = _ExactRespondent(truth)
    for k in range(3):
        state = cg_round(state, respondent)
        assert state.round_index == k + 1
        assert all(len(rs.questions) == k + 1 for rs in state.responses)
        # the recorded worst case never regresses
        assert all(a <= b + 1e-9 for a, b in zip(state.trajectory, state.trajectory[1:]))


def test_cg_questions_beat_random_questions():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    known = reference_equalities(schema)
    rounds = 3
    cg_scores, random_scores = [], []
    for i in range(22):
        pop = generate_population_synthetic(schema, seed=500 + i)
        truth = draw_ground_truth(pop, schema, 3, seed=900 + i, box=box)
        respondent = _ExactRespondent(truth)

        cg_state = _fresh_state(schema, 3, box, known)
        for _ in range(rounds):
            cg_state = cg_round(cg_state, respondent)
        cg_final = solve_pco_rt(
            list(cg_state.responses), schema, 1, box, known, method="milp"
        ).objective
        cg_scores.append(cg_final)

        rng = np.random.default_rng(7000 + i)
        responses = _empty_responses(3)
        for _ in range(rounds):
            for n in range(3):
                pair = random_profile_pair(schema, rng)
                template = encode_question(*pair, "metric", intensity=0.0, schema=schema)
                responses[n] = responses[n].with_question(ask_metric(truth, n, template))
        rand_final = solve_pco_rt(responses, schema, 1, box, known, method="milp").objective
        random_scores.append(rand_final)

    cg = np.asarray(cg_scores)
    rand = np.asarray(random_scores)
    assert cg.mean() >= rand.mean() - 1e-9
    wins = int(np.sum(cg > rand + 1e-9))
    losses = int(np.sum(rand > cg + 1e-9))
    assert wins >= losses
    if wins + losses:
        # a paired sign test must not find random significantly better
        p = scipy.stats.binomtest(losses, wins + losses, 0.5, alternative="greater").pvalue
        assert p > 0.05


def test_fpaca_follows_the_longest_axis():
    schema = AttributeSchema((2, 2))
    box = PartworthBox(np.array([-5.0, -1.0, -1.0, -1.0]), np.array([5.0, 1.0, 1.0, 1.0]))
    P = Polyhedron.from_box(box)
    question = fpaca_next_question(P, schema, seed=3)
    q = np.asarray(question.q, dtype=float)
    # the stretched coordinate dominates the top eigenvector
    assert q[0] != 0.0
    assert question.kind == "metric"
    repeat = fpaca_next_question(P, schema, seed=3)
    assert np.array_equal(question.q, repeat.q)


def test_fpaca_degenerate_fallback():
    schema = AttributeSchema((2, 2))
    box = PartworthBox.symmetric(4, 2.0)
    P = Polyhedron(np.eye(4), np.array([0.5, -0.25, 1.0, 0.0]), np.ones(4, dtype=bool), box)
    with pytest.warns(RuntimeWarning, match="longest axis"):
        question = fpaca_next_question(P, schema, seed=5)
    question.validate(schema)


def test_fpaca_rounds_shrink_the_diameter():
    schema = AttributeSchema((3, 2))
    box = PartworthBox.symmetric(5, 10.0)
    known = reference_equalities(schema)
    pop = generate_population_synthetic(schema, seed=13)
    truth = draw_ground_truth(pop, schema, 1, seed=14, box=box)
    responses = ResponseSet(customer_id=0, questions=())
    P = Polyhedron.from_responses(responses, box, known)
    diameters = [diameter_upper_bound(P)]
    for k in range(4):
        with warnings.catch_warnings():
            # once the set is fully pinned the fallback warning is expected
            warnings.simplefilter("ignore", RuntimeWarning)
            template = fpaca_next_question(P, schema, seed=100 + k)
        responses = responses.with_question(ask_metric(truth, 0, template))
        P = Polyhedron.from_responses(responses, box, known)
        diameters.append(diameter_upper_bound(P))
    assert all(b <= a + 1e-9 for a, b in zip(diameters, diameters[1:]))
    assert diameters[-1] < diameters[0]


def test_orthogonal_design_table():
    questions = load_orthogonal_design()
    assert len(questions) == 27
    schema = AttributeSchema((5, 8, 9, 9))
    vectors = set()
    for question in questions:
        assert question.kind == "metric"
        assert question.intensity == 0.0
        question.validate(schema)
        for a in range(schema.attribute_count):
            assert sum(question.q[l] for l in schema.levels_of(a)) == 0
        vectors.add(tuple(int(v) for v in question.q))
    assert len(vectors) == 27
    first = np.asarray(questions[0].q)
    assert list(np.flatnonzero(first > 0)) == [0, 13, 22]
    assert list(np.flatnonzero(first < 0)) == [3, 16, 25]
