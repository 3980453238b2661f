"""HTTP session service for live adaptive surveys.

One session pairs a live respondent (customer 0) with a simulated cohort
whose hidden partworths answer every question instantly, so the master
problem the live answers steer stays realistically sized.  The respondent
first works through the seed questions; each later answer triggers a
robust master solve plus one pricing round, and the next question comes
from the pricing result.  Sessions persist as one JSON file each (fsynced
on every commit) and reload byte-identically after a restart; mutations
are serialized by a per-session lock, and solves that outlast the soft
timeout leave the session in a ``computing`` status the client polls.
"""

from __future__ import annotations

import dataclasses
import json
import math
import os
import threading
import uuid
from concurrent.futures import Future, ThreadPoolExecutor
from concurrent.futures import TimeoutError as FutureTimeout
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from fastapi import Body, FastAPI, HTTPException
from fastapi.responses import JSONResponse

from prodline.aca import (
    SurveyState,
    _row_is_dependent,
    apply_answers,
    load_orthogonal_design,
    propose_questions,
)
from prodline.conjoint import (
    AttributeSchema,
    PartworthBox,
    ProductProfile,
    Question,
    ResponseSet,
    SchemaError,
    encode_question,
    flip_question,
)
from prodline.polyhedra import Polyhedron, is_feasible
from prodline.respondents import (
    draw_ground_truth,
    generate_population_synthetic,
    outside_option_profile,
    reference_equalities,
)
from prodline.socmodels import extract_attribution, solve_pco_rt

__all__ = [
    "DEFAULT_COHORT",
    "DEFAULT_ROUNDS",
    "SEED_QUESTION_COUNT",
    "Session",
    "SessionStore",
    "create_app",
    "seed_templates",
]

DEFAULT_COHORT = 10
DEFAULT_ROUNDS = 12
SEED_QUESTION_COUNT = 5
_BENCHMARK_LEVELS = (5, 8, 9, 9)

# cohort truth draws from a stream disjoint from the population stream
_TRUTH_SEED_OFFSET = 1000


# ---------------------------------------------------------------------------
# Session state and persistence
# ---------------------------------------------------------------------------


@dataclass
class Session:
    """Everything one live survey carries between requests.

    ``state`` holds the committed responses of the live respondent and the
    cohort plus any pending pricing proposals; the service-level fields
    track the live respondent's queue position and the last solve's
    outputs.  Valid status transitions are awaiting_response -> computing
    -> awaiting_response | complete (``failed`` is a terminal state for
    solver faults).
    """

    id: str
    state: SurveyState
    cohort_truth: np.ndarray
    status: str
    rounds: int
    answered: int
    pending: Question | None
    seed_queue: list[Question]
    recommendation: dict | None = None
    attribution: dict | None = None
    error: str | None = None
    config_echo: dict = field(default_factory=dict)

    def to_json(self) -> dict:
        return {
            "id": self.id,
            "status": self.status,
            "rounds": self.rounds,
            "answered": self.answered,
            "state": self.state.to_json(),
            "cohort_truth": [[float(v) for v in row] for row in self.cohort_truth],
            "pending": self.pending.to_json() if self.pending is not None else None,
            "seed_queue": [q.to_json() for q in self.seed_queue],
            "recommendation": self.recommendation,
            "attribution": self.attribution,
            "error": self.error,
            "config": self.config_echo,
        }

    @classmethod
    def from_json(cls, data: dict) -> "Session":
        pending = data.get("pending")
        L = AttributeSchema.from_json(data["state"]["schema"]).total_levels
        return cls(
            id=data["id"],
            state=SurveyState.from_json(data["state"]),
            cohort_truth=np.asarray(data["cohort_truth"], dtype=np.float64).reshape(-1, L),
            status=data["status"],
            rounds=int(data["rounds"]),
            answered=int(data["answered"]),
            pending=Question.from_json(pending) if pending is not None else None,
            seed_queue=[Question.from_json(q) for q in data["seed_queue"]],
            recommendation=data.get("recommendation"),
            attribution=data.get("attribution"),
            error=data.get("error"),
            config_echo=data.get("config", {}),
        )


class SessionStore:
    """File-backed session registry with per-session mutation locks."""

    def __init__(self, data_dir: Path) -> None:
        self.data_dir = Path(data_dir)
        self._sessions: dict[str, Session] = {}
        self._locks: dict[str, threading.Lock] = {}
        self._registry = threading.Lock()

    def lock(self, session_id: str) -> threading.Lock:
        with self._registry:
            return self._locks.setdefault(session_id, threading.Lock())

    def path(self, session_id: str) -> Path:
        return self.data_dir / f"{session_id}.json"

    def exists(self, session_id: str) -> bool:
        return session_id in self._sessions or self.path(session_id).exists()

    def get(self, session_id: str) -> Session:
        if session_id in self._sessions:
            return self._sessions[session_id]
        path = self.path(session_id)
        if not path.exists():
            raise KeyError(session_id)
        session = Session.from_json(json.loads(path.read_text()))
        self._sessions[session_id] = session
        return session

    def persist(self, session: Session) -> None:
        self.data_dir.mkdir(parents=True, exist_ok=True)
        path = self.path(session.id)
        tmp = path.with_name(path.name + ".tmp")
        with tmp.open("w") as fh:
            fh.write(json.dumps(session.to_json(), indent=2) + "\n")
            fh.flush()
            os.fsync(fh.fileno())
        os.replace(tmp, path)
        self._sessions[session.id] = session


# ---------------------------------------------------------------------------
# Session assembly
# ---------------------------------------------------------------------------


def seed_templates(
    schema: AttributeSchema, mode: str, seed: int, count: int = SEED_QUESTION_COUNT
) -> list[Question]:
    """First survey questions, asked before any pricing can run.

    The benchmark schema takes the fixed design's first rows; any other
    schema gets deterministic random comparisons drawn from the session
    seed, kept mutually independent together with the calibration rows so
    every seed answer shrinks the live polyhedron.  Schemas whose question
    space has rank below ``count`` get correspondingly fewer questions.
    Choice mode presents the same pairs at equal prices.
    """
    kind = "metric" if mode == "metric" else "choice"
    prices = (0.0, 0.0) if kind == "choice" else None
    if tuple(schema.levels_per_attribute) == _BENCHMARK_LEVELS:
        templates = load_orthogonal_design()[:count]
        if kind == "choice":
            templates = [
                encode_question(t.profile_pair[0], t.profile_pair[1], "choice", prices=prices)
                for t in templates
            ]
        return templates
    rng = np.random.default_rng(seed)
    known_rows, _ = reference_equalities(schema)
    rows = [np.asarray(r, dtype=np.float64) for r in known_rows]
    sizes = schema.levels_per_attribute
    # the calibrated question space has rank sum(s - 1); asking for more
    # mutually independent rows than that could never terminate
    count = min(count, sum(s - 1 for s in sizes))
    out: list[Question] = []
    while len(out) < count:
        first = [int(rng.integers(s)) for s in sizes]
        second = [int(rng.integers(s)) for s in sizes]
        if first == second:
            continue
        fp = ProductProfile.from_levels(schema, first)
        sp = ProductProfile.from_levels(schema, second)
        q = fp.x.astype(np.float64) - sp.x.astype(np.float64)
        if _row_is_dependent(np.asarray(rows), q):
            continue
        rows.append(q)
        out.append(
            encode_question(fp, sp, kind, intensity=0.0, prices=prices, schema=schema)
        )
    return out


def _level_labels(schema: AttributeSchema) -> list[str]:
    labels = []
    for a in range(schema.attribute_count):
        for i, _ in enumerate(schema.levels_of(a)):
            labels.append(f"attribute {a + 1} level {i + 1}")
    return labels


def _err(status_code: int, message, **extra) -> HTTPException:
    detail = {"error": message, **extra} if extra else {"error": message}
    return HTTPException(status_code=status_code, detail=detail)


def _parse_schema(raw) -> AttributeSchema:
    try:
        if raw is None:
            return AttributeSchema(_BENCHMARK_LEVELS)
        if isinstance(raw, dict):
            return AttributeSchema.from_json(raw)
        return AttributeSchema(tuple(int(v) for v in raw))
    except (SchemaError, TypeError, ValueError) as exc:
        raise _err(400, f"invalid schema: {exc}")


def _parse_int(config: dict, key: str, default: int, minimum: int) -> int:
    value = config.get(key, default)
    if isinstance(value, bool) or not isinstance(value, int):
        raise _err(400, f"config {key!r} must be an integer")
    if value < minimum:
        raise _err(400, f"config {key!r} must be at least {minimum}")
    return value


def _new_session(body: dict, store: SessionStore) -> Session:
    schema = _parse_schema(body.get("schema"))
    if all(c == 1 for c in schema.levels_per_attribute):
        raise _err(400, "schema admits no product comparisons")
    mode = body.get("mode", "metric")
    if mode not in ("metric", "choice"):
        raise _err(400, f"unknown mode {mode!r}")
    config = body.get("config", {})
    if not isinstance(config, dict):
        raise _err(400, "config must be an object")
    cohort = _parse_int(config, "cohort", DEFAULT_COHORT, 0)
    rounds = _parse_int(config, "rounds", DEFAULT_ROUNDS, 1)
    products = _parse_int(config, "products", 1, 1)
    seed = _parse_int(config, "seed", 0, -(2**62))
    half_width = config.get("box_half_width", 50.0)
    if not isinstance(half_width, (int, float)) or half_width <= 0:
        raise _err(400, "config 'box_half_width' must be a positive number")
    master_method = config.get("master_method", "enumerate")
    if master_method not in ("milp", "enumerate", "auto"):
        raise _err(400, f"unknown master method {master_method!r}")
    session_id = body.get("id") or uuid.uuid4().hex
    if not isinstance(session_id, str) or not session_id.replace("-", "").isalnum():
        raise _err(400, "session id must be alphanumeric")
    if store.exists(session_id):
        raise _err(409, f"session {session_id!r} already exists")

    box = PartworthBox.symmetric(schema.total_levels, float(half_width))
    known = reference_equalities(schema)
    forbidden = (outside_option_profile(schema),)
    templates = seed_templates(schema, mode, seed)
    seed_phase = templates[: min(SEED_QUESTION_COUNT, rounds)]

    if cohort:
        population = generate_population_synthetic(schema, seed=seed)
        cohort_truth = draw_ground_truth(
            population, schema, cohort, seed=seed + _TRUTH_SEED_OFFSET, box=box
        ).true_partworths
    else:
        cohort_truth = np.zeros((0, schema.total_levels))

    responses = [ResponseSet(0)]
    for member in range(cohort):
        u = cohort_truth[member]
        answered = []
        for template in templates:
            gap = float(u @ np.asarray(template.q, dtype=np.float64))
            if mode == "metric":
                answered.append(dataclasses.replace(template, intensity=gap))
            else:
                answered.append(template if gap >= 0.0 else flip_question(template))
        responses.append(ResponseSet(member + 1, tuple(answered)))

    state = SurveyState(
        schema=schema,
        box=box,
        M=products,
        responses=tuple(responses),
        mode=mode,
        known_equalities=known,
        forbidden_profiles=forbidden,
        master_method=master_method,
        seed=seed,
    )
    return Session(
        id=session_id,
        state=state,
        cohort_truth=cohort_truth,
        status="awaiting_response",
        rounds=rounds,
        answered=0,
        pending=seed_phase[0],
        seed_queue=list(seed_phase[1:]),
        config_echo={
            "mode": mode,
            "cohort": cohort,
            "rounds": rounds,
            "products": products,
            "seed": seed,
            "box_half_width": float(half_width),
            "master_method": master_method,
            "schema": schema.to_json(),
        },
    )


# ---------------------------------------------------------------------------
# Round stepping
# ---------------------------------------------------------------------------


def _parse_answer(session: Session, body: dict) -> float | int:
    if "round" not in body:
        raise _err(422, "body needs a 'round' field")
    round_no = body["round"]
    if isinstance(round_no, bool) or not isinstance(round_no, int):
        raise _err(422, "'round' must be an integer")
    expected = session.answered + 1
    if round_no != expected:
        raise _err(409, f"expected round {expected}, got {round_no}", expected=expected)
    if "answer" not in body:
        raise _err(422, "body needs an 'answer' field")
    answer = body["answer"]
    if session.state.mode == "metric":
        if isinstance(answer, bool) or not isinstance(answer, (int, float)):
            raise _err(422, "metric answer must be a number")
        if not math.isfinite(float(answer)):
            raise _err(422, "metric answer must be finite")
        return float(answer)
    if isinstance(answer, bool) or answer not in (1, 2):
        raise _err(422, "choice answer must be 1 or 2")
    return int(answer)


def _live_row(session: Session, answer: float | int) -> Question:
    question = session.pending
    if session.state.mode == "metric":
        return dataclasses.replace(question, intensity=float(answer))
    return question if answer == 1 else flip_question(question)


def _check_live_feasible(session: Session, live: ResponseSet, row: Question) -> None:
    P = Polyhedron.from_responses(live, session.state.box, session.state.known_equalities)
    if not is_feasible(P):
        raise _err(
            422,
            "answer makes the respondent's uncertainty set empty",
            round=session.answered + 1,
            conflicting_rows=len(live),
            new_row=row.to_json(),
        )


def _cohort_answer(session: Session, question: Question, member: int) -> float | int:
    u = session.cohort_truth[member - 1]
    gap = float(u @ np.asarray(question.q, dtype=np.float64))
    if session.state.mode == "metric":
        return gap
    return 1 if gap - question.intensity >= 0.0 else 2


def _commit_answer(session: Session, answer: float | int) -> None:
    """Fold the live answer (and, in priced rounds, the cohort's) into the
    survey state.  Raises 422 without mutating when the answer empties the
    live respondent's polyhedron."""
    state = session.state
    row = _live_row(session, answer)
    if state.proposals is None:
        live = state.responses[0].with_question(row)
        _check_live_feasible(session, live, row)
        session.state = dataclasses.replace(
            state, responses=(live,) + state.responses[1:]
        )
    else:
        _check_live_feasible(session, state.responses[0].with_question(row), row)
        answers: dict[int, float | int] = {0: answer}
        for res in state.proposals:
            if res.customer_id != 0:
                answers[res.customer_id] = _cohort_answer(session, res.question, res.customer_id)
        session.state = apply_answers(state, answers)
    session.answered += 1
    session.pending = None


def _recommendation_payload(sol, schema: AttributeSchema, answered: int) -> dict:
    return {
        "product_line": sol.product_line.to_json(),
        "products_levels": [
            [int(l) for l in p.selected_levels(schema)] for p in sol.product_line.products
        ],
        "worst_case_soc": float(sol.objective),
        "covered_count": int(sol.covered_count),
        "level_names": _level_labels(schema),
        "round": answered,
    }


def _advance(store: SessionStore, session_id: str) -> None:
    """Solve the master on the committed answers; price the next question
    unless the round budget is spent.  Runs outside the session lock and
    commits (with fsync) at the end."""
    lock = store.lock(session_id)
    with lock:
        session = store.get(session_id)
        state = session.state
        answered = session.answered
        final = answered >= session.rounds
    try:
        responses = list(state.responses)
        sol = solve_pco_rt(
            responses,
            state.schema,
            state.M,
            state.box,
            known_equalities=state.known_equalities,
            forbidden_profiles=state.forbidden_profiles,
            method=state.master_method,
        )
        attribution = extract_attribution(sol, responses).to_json()
        if final:
            new_state = dataclasses.replace(
                state,
                incumbent=sol.product_line,
                trajectory=state.trajectory + (float(sol.objective),),
            )
            pending = None
        else:
            new_state = propose_questions(state, solution=sol)
            pending = next(
                res.question for res in new_state.proposals if res.customer_id == 0
            )
    except Exception as exc:
        with lock:
            session.status = "failed"
            session.error = f"{type(exc).__name__}: {exc}"
            store.persist(session)
        raise
    with lock:
        session.state = new_state
        session.pending = pending
        session.recommendation = _recommendation_payload(sol, state.schema, answered)
        session.attribution = attribution
        session.status = "complete" if final else "awaiting_response"
        store.persist(session)


# ---------------------------------------------------------------------------
# HTTP surface
# ---------------------------------------------------------------------------


def _session_view(session: Session) -> dict:
    return {
        "id": session.id,
        "status": session.status,
        "mode": session.state.mode,
        "schema": session.state.schema.to_json(),
        "answered": session.answered,
        "rounds": session.rounds,
        "round": session.answered + 1 if session.status == "awaiting_response" else None,
        "question": session.pending.to_json() if session.pending is not None else None,
        "trajectory": list(session.state.trajectory),
        "error": session.error,
    }


def create_app(
    data_dir: str | Path | None = None,
    *,
    solver: str | None = None,
    soft_timeout: float | None = None,
) -> FastAPI:
    """Build the service around one data directory.

    Environment variables supply defaults: PRODLINE_DATA_DIR,
    PRODLINE_SOLVER, PRODLINE_SOFT_TIMEOUT (seconds; solves running longer
    leave the session computing and the client polls).
    """
    data_dir = Path(data_dir or os.environ.get("PRODLINE_DATA_DIR", "prodline-sessions"))
    solver = solver or os.environ.get("PRODLINE_SOLVER", "highs")
    if solver != "highs":
        raise ValueError(f"unknown solver backend {solver!r}")
    if soft_timeout is None:
        soft_timeout = float(os.environ.get("PRODLINE_SOFT_TIMEOUT", "30"))

    app = FastAPI(title="prodline survey service")
    store = SessionStore(data_dir)
    executor = ThreadPoolExecutor(max_workers=4)
    app.state.store = store
    app.state.executor = executor
    app.state.soft_timeout = soft_timeout

    def fetch(session_id: str) -> Session:
        try:
            return store.get(session_id)
        except KeyError:
            raise _err(404, f"no session {session_id!r}")

    def wait_or_compute(session: Session, future: Future):
        soft = app.state.soft_timeout
        try:
            future.result(timeout=soft if soft > 0 else 1e-3)
        except FutureTimeout:
            return JSONResponse(
                status_code=202,
                content={"id": session.id, "status": "computing", "answered": session.answered},
            )
        except Exception:
            pass  # the job already recorded the failure on the session
        with store.lock(session.id):
            fresh = store.get(session.id)
            view = _session_view(fresh)
            if fresh.status == "failed":
                return JSONResponse(status_code=500, content=view)
            return view

    @app.get("/health")
    def health() -> dict:
        return {"status": "ok"}

    @app.post("/sessions", status_code=201)
    def create_session(body: dict = Body(default={})) -> dict:
        session = _new_session(body, store)
        with store.lock(session.id):
            if store.exists(session.id):
                raise _err(409, f"session {session.id!r} already exists")
            store.persist(session)
        return _session_view(session)

    @app.get("/sessions/{session_id}")
    def get_session(session_id: str) -> dict:
        return _session_view(fetch(session_id))

    @app.post("/sessions/{session_id}/responses")
    def post_response(session_id: str, body: dict = Body(...)):
        lock = store.lock(session_id)
        with lock:
            session = fetch(session_id)
            if session.status != "awaiting_response":
                raise _err(409, f"session is {session.status}", status=session.status)
            answer = _parse_answer(session, body)
            _commit_answer(session, answer)
            if session.answered < session.rounds and session.seed_queue:
                session.pending = session.seed_queue.pop(0)
                store.persist(session)
                return _session_view(session)
            session.status = "computing"
            store.persist(session)
        future = executor.submit(_advance, store, session_id)
        return wait_or_compute(session, future)

    @app.get("/sessions/{session_id}/recommendation")
    def get_recommendation(session_id: str) -> dict:
        session = fetch(session_id)
        if session.recommendation is None:
            raise _err(409, "no incumbent yet; answer the seed questions first")
        return {**session.recommendation, "status": session.status}

    @app.get("/sessions/{session_id}/attribution")
    def get_attribution(session_id: str) -> dict:
        session = fetch(session_id)
        if session.attribution is None:
            raise _err(409, "no incumbent yet; answer the seed questions first")
        return {**session.attribution, "round": session.recommendation["round"]}

    return app
