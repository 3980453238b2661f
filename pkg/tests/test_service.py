"""HTTP survey service: session lifecycle, validation, persistence, parity."""

import json
import time

import numpy as np
import pytest
from fastapi.testclient import TestClient

import prodline.service as service_module
from prodline.conjoint import AttributeSchema, PartworthBox
from prodline.service import Session, create_app, seed_templates
from prodline.socmodels import extract_attribution, solve_pco_rt


@pytest.fixture()
def client(tmp_path):
    app = create_app(tmp_path / "sessions", soft_timeout=30.0)
    with TestClient(app) as c:
        yield c


def _make(client, **overrides):
    body = {
        "schema": [3, 2],
        "mode": "metric",
        "id": "live1",
        "config": {"cohort": 2, "rounds": 6, "seed": 3},
    }
    body.update(overrides)
    return client.post("/sessions", json=body)


_LIVE_TRUTH = np.array([0.0, 2.5, -1.0, 0.0, 4.0])


def _answer_exactly(client, sid, round_no, question):
    gap = float(_LIVE_TRUTH @ np.asarray(question["q"], dtype=float))
    if question["kind"] == "choice":
        answer = 1 if gap - question["intensity"] >= 0 else 2
    else:
        answer = gap
    return client.post(f"/sessions/{sid}/responses", json={"round": round_no, "answer": answer})


def _drive_to_completion(client, sid, view):
    while view["status"] == "awaiting_response":
        response = _answer_exactly(client, sid, view["round"], view["question"])
        assert response.status_code == 200, response.text
        view = response.json()
        while view.get("status") == "computing":
            time.sleep(0.05)
            view = client.get(f"/sessions/{sid}").json()
    return view


def test_health(client):
    response = client.get("/health")
    assert response.status_code == 200
    assert response.json() == {"status": "ok"}


def test_create_session_view(client):
    response = _make(client)
    assert response.status_code == 201
    view = response.json()
    assert view["id"] == "live1"
    assert view["status"] == "awaiting_response"
    assert view["mode"] == "metric"
    assert view["answered"] == 0 and view["rounds"] == 6 and view["round"] == 1
    assert view["trajectory"] == [] and view["error"] is None
    assert view["schema"] == AttributeSchema((3, 2)).to_json()
    q = view["question"]
    assert q["kind"] == "metric" and len(q["q"]) == 5
    assert client.get("/sessions/live1").json() == view


def test_create_session_defaults_to_benchmark_schema(client):
    response = client.post("/sessions", json={"id": "bench1", "config": {"cohort": 2}})
    assert response.status_code == 201
    view = response.json()
    assert len(view["question"]["q"]) == 31
    assert view["rounds"] == 12
    # the benchmark schema seeds from the fixed design's first row
    templates = seed_templates(AttributeSchema((5, 8, 9, 9)), "metric", 0)
    assert view["question"]["q"] == [int(v) for v in templates[0].q]


def test_create_session_validation(tmp_path):
    app = create_app(tmp_path / "sessions", soft_timeout=30.0)
    with TestClient(app) as client:
        cases = [
            ({"schema": [0, 2]}, "invalid schema"),
            ({"schema": []}, "invalid schema"),
            ({"schema": [1, 1]}, "no product comparisons"),
            ({"mode": "verbal"}, "unknown mode"),
            ({"config": [1, 2]}, "config must be an object"),
            ({"config": {"cohort": "many"}}, "must be an integer"),
            ({"config": {"cohort": True}}, "must be an integer"),
            ({"config": {"rounds": 0}}, "at least 1"),
            ({"config": {"box_half_width": -2}}, "positive number"),
            ({"config": {"master_method": "greedy"}}, "unknown master method"),
            ({"id": "no spaces allowed"}, "alphanumeric"),
        ]
        for body, fragment in cases:
            payload = {"schema": [3, 2], "config": {"cohort": 0}}
            payload.update(body)
            response = client.post("/sessions", json=payload)
            assert response.status_code == 400, (body, response.text)
            assert fragment in response.json()["detail"]["error"]

        ok = client.post("/sessions", json={"schema": [3, 2], "id": "dup1", "config": {"cohort": 0}})
        assert ok.status_code == 201
        dup = client.post("/sessions", json={"schema": [3, 2], "id": "dup1", "config": {"cohort": 0}})
        assert dup.status_code == 409


def test_unknown_session_is_404(client):
    assert client.get("/sessions/ghost").status_code == 404
    assert client.post("/sessions/ghost/responses", json={"round": 1, "answer": 0}).status_code == 404
    assert client.get("/sessions/ghost/recommendation").status_code == 404
    assert client.get("/sessions/ghost/attribution").status_code == 404


def test_response_validation(client):
    _make(client)
    url = "/sessions/live1/responses"
    assert client.post(url, json={"answer": 1.0}).status_code == 422
    assert client.post(url, json={"round": "1", "answer": 1.0}).status_code == 422
    assert client.post(url, json={"round": True, "answer": 1.0}).status_code == 422
    wrong = client.post(url, json={"round": 2, "answer": 1.0})
    assert wrong.status_code == 409
    assert wrong.json()["detail"]["expected"] == 1
    assert client.post(url, json={"round": 1}).status_code == 422
    assert client.post(url, json={"round": 1, "answer": "high"}).status_code == 422
    assert client.post(url, json={"round": 1, "answer": True}).status_code == 422
    infinite = client.post(
        url,
        content='{"round": 1, "answer": Infinity}',
        headers={"content-type": "application/json"},
    )
    assert infinite.status_code == 422
    assert "finite" in infinite.json()["detail"]["error"]


def test_choice_answer_validation(client):
    _make(client, mode="choice", id="pick1")
    url = "/sessions/pick1/responses"
    assert client.post(url, json={"round": 1, "answer": 3}).status_code == 422
    assert client.post(url, json={"round": 1, "answer": 0.5}).status_code == 422
    ok = client.post(url, json={"round": 1, "answer": 2})
    assert ok.status_code == 200
    assert ok.json()["answered"] == 1


def test_infeasible_answer_rejected_without_mutation(client):
    view = _make(client).json()
    # a gap no partworth vector inside the box can realize
    bad = client.post(
        "/sessions/live1/responses", json={"round": 1, "answer": 1e6}
    )
    assert bad.status_code == 422
    detail = bad.json()["detail"]
    assert "empty" in detail["error"]
    assert detail["round"] == 1
    assert "new_row" in detail and "conflicting_rows" in detail
    # nothing was committed: the same round accepts a feasible answer
    good = _answer_exactly(client, "live1", 1, view["question"])
    assert good.status_code == 200
    assert good.json()["answered"] == 1


def test_recommendation_gated_until_first_solve(client):
    # schema (3, 2) supports three independent seed questions
    view = _make(client).json()
    assert client.get("/sessions/live1/recommendation").status_code == 409
    assert client.get("/sessions/live1/attribution").status_code == 409
    for round_no in (1, 2):
        view = _answer_exactly(client, "live1", round_no, view["question"]).json()
        assert view["status"] == "awaiting_response"
        # still inside the seed phase: no solve has happened yet
        assert client.get("/sessions/live1/recommendation").status_code == 409
    _answer_exactly(client, "live1", 3, view["question"])
    recommendation = client.get("/sessions/live1/recommendation")
    assert recommendation.status_code == 200
    assert recommendation.json()["round"] == 3


def test_full_session_completes_with_library_parity(client, tmp_path):
    view = _make(client).json()
    sid = view["id"]
    seen_questions = [view["question"]]
    final = _drive_to_completion(client, sid, view)
    assert final["status"] == "complete"
    assert final["answered"] == 6 and final["round"] is None and final["question"] is None
    trajectory = final["trajectory"]
    # one solve when the three seed answers land plus one per priced round
    assert len(trajectory) == 4
    assert trajectory == sorted(trajectory)

    recommendation = client.get(f"/sessions/{sid}/recommendation").json()
    assert recommendation["status"] == "complete"
    assert recommendation["round"] == 6
    assert 0.0 <= recommendation["worst_case_soc"] <= 1.0
    assert len(recommendation["level_names"]) == 5
    assert recommendation["level_names"][0] == "attribute 1 level 1"
    assert len(recommendation["products_levels"]) == 1

    attribution = client.get(f"/sessions/{sid}/attribution").json()
    assert attribution["round"] == 6
    assert len(attribution["customers"]) == 3  # live respondent plus cohort of 2

    # the persisted file re-solves to the identical recommendation
    stored = Session.from_json(
        json.loads((tmp_path / "sessions" / f"{sid}.json").read_text())
    )
    state = stored.state
    sol = solve_pco_rt(
        list(state.responses),
        state.schema,
        state.M,
        state.box,
        known_equalities=state.known_equalities,
        forbidden_profiles=state.forbidden_profiles,
        method=state.master_method,
    )
    assert sol.product_line.to_json() == recommendation["product_line"]
    assert float(sol.objective) == recommendation["worst_case_soc"]
    assert sol.covered_count == recommendation["covered_count"]
    redone = extract_attribution(sol, list(state.responses)).to_json()
    assert redone["customers"] == attribution["customers"]

    # the live respondent's stored rows are exactly the answered questions
    live = state.responses[0]
    assert len(live.questions) == 6
    for question in live.questions:
        gap = float(_LIVE_TRUTH @ np.asarray(question.q, dtype=float))
        assert question.intensity == pytest.approx(gap)

    # a finished session accepts no further answers
    refused = client.post(f"/sessions/{sid}/responses", json={"round": 7, "answer": 0.0})
    assert refused.status_code == 409
    assert refused.json()["detail"]["status"] == "complete"


def test_restart_reloads_sessions(tmp_path):
    data_dir = tmp_path / "sessions"
    with TestClient(create_app(data_dir, soft_timeout=30.0)) as client:
        view = _make(client).json()
        view = _answer_exactly(client, "live1", 1, view["question"]).json()
        view = _answer_exactly(client, "live1", 2, view["question"]).json()
        assert view["answered"] == 2

    with TestClient(create_app(data_dir, soft_timeout=30.0)) as reborn:
        reloaded = reborn.get("/sessions/live1").json()
        assert reloaded == view
        # the reloaded session keeps answering where it stopped
        after = _answer_exactly(reborn, "live1", 3, reloaded["question"]).json()
        assert after["answered"] == 3
        final = _drive_to_completion(reborn, "live1", after)
        assert final["status"] == "complete"


def test_slow_solve_returns_202_then_completes(tmp_path, monkeypatch):
    real_solve = service_module.solve_pco_rt

    def slow_solve(*args, **kwargs):
        time.sleep(0.6)
        return real_solve(*args, **kwargs)

    monkeypatch.setattr(service_module, "solve_pco_rt", slow_solve)
    with TestClient(create_app(tmp_path / "s", soft_timeout=0.05)) as client:
        view = _make(client, config={"cohort": 2, "rounds": 3, "seed": 3}).json()
        for round_no in (1, 2):
            view = _answer_exactly(client, "live1", round_no, view["question"]).json()
        deferred = _answer_exactly(client, "live1", 3, view["question"])
        assert deferred.status_code == 202
        body = deferred.json()
        assert body["status"] == "computing" and body["answered"] == 3
        # polling stays 200 while the solve runs, then flips to complete
        polled = client.get("/sessions/live1").json()
        assert polled["status"] in ("computing", "complete")
        deadline = time.time() + 30
        while polled["status"] == "computing" and time.time() < deadline:
            time.sleep(0.05)
            polled = client.get("/sessions/live1").json()
        assert polled["status"] == "complete"
        assert client.get("/sessions/live1/recommendation").status_code == 200


def test_solver_failure_marks_session_failed(tmp_path, monkeypatch):
    def broken_solve(*args, **kwargs):
        raise RuntimeError("synthetic solver fault")

    monkeypatch.setattr(service_module, "solve_pco_rt", broken_solve)
    with TestClient(create_app(tmp_path / "s", soft_timeout=30.0)) as client:
        view = _make(client, config={"cohort": 2, "rounds": 5, "seed": 3}).json()
        for round_no in (1, 2):
            view = _answer_exactly(client, "live1", round_no, view["question"]).json()
        failed = _answer_exactly(client, "live1", 3, view["question"])
        assert failed.status_code == 500
        body = failed.json()
        assert body["status"] == "failed"
        assert "RuntimeError" in body["error"]
        # the failure is terminal and persisted
        assert client.get("/sessions/live1").json()["status"] == "failed"
        refused = client.post("/sessions/live1/responses", json={"round": 4, "answer": 0.0})
        assert refused.status_code == 409


def test_seed_templates_are_independent_rows():
    # rank of the calibrated question space for (3, 2) caps the seed count
    schema = AttributeSchema((3, 2))
    templates = seed_templates(schema, "metric", seed=11)
    assert len(templates) == 3
    from prodline.respondents import reference_equalities

    rows = [np.asarray(r, float) for r in reference_equalities(schema)[0]]
    for template in templates:
        rows.append(np.asarray(template.q, dtype=float))
    # calibration rows plus seed rows stack to full row rank
    assert np.linalg.matrix_rank(np.asarray(rows)) == len(rows)

    priced = seed_templates(schema, "choice", seed=11)
    assert all(t.kind == "choice" and t.prices == (0.0, 0.0) for t in priced)
    again = seed_templates(schema, "metric", seed=11)
    assert all(
        np.array_equal(a.q, b.q) for a, b in zip(templates, again)
    )


def test_create_app_rejects_unknown_solver(tmp_path):
    with pytest.raises(ValueError, match="solver"):
        create_app(tmp_path, solver="gurobi")


def test_soft_timeout_env_default(tmp_path, monkeypatch):
    monkeypatch.setenv("PRODLINE_SOFT_TIMEOUT", "7.5")
    app = create_app(tmp_path)
    assert app.state.soft_timeout == 7.5
