"""Solver-agnostic LP/MILP intermediate representation with two backends.

The built-in backend wraps scipy's HiGHS interface; the external backend
exports the model in the standard LP text format, invokes a configured
solver process, and parses its solution file.  Both must agree on every
model in the test corpus, and small brute-force oracles (vertex
enumeration, binary enumeration) pin down the built-in backend
independently of any solver library.

Dual convention (LP solves): duals are reported so that for a maximization
problem the dual of a ``<=`` row is >= 0, of a ``>=`` row is <= 0, and of an
equality row is free; signs mirror for minimization.  With reduced costs
rc = c - A^T y, strong duality reads

    objective = sum_i y_i * rhs_i + sum_j rc_j * (active bound of x_j)

which ``check_strong_duality`` verifies on every corpus LP.
"""

from __future__ import annotations

import itertools
import math
import os
import re
import shlex
import subprocess
import tempfile
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
from numpy.typing import NDArray
from scipy.optimize import Bounds, LinearConstraint, linprog
from scipy.optimize import milp as _scipy_milp

__all__ = [
    "Constraint",
    "ModelIR",
    "SolveResult",
    "SolverError",
    "ExternalSolverError",
    "solve_lp",
    "solve_milp",
    "export_model",
    "parse_lp_file",
    "external_solve",
    "check_strong_duality",
    "brute_force_lp",
    "brute_force_binary_milp",
]

INF = float("inf")
FEAS_TOL = 1e-6
INT_TOL = 1e-5

Relation = str  # "<=", ">=", "="


class SolverError(RuntimeError):
    """The backend failed in a way that is not a clean infeasible/unbounded verdict."""


class ExternalSolverError(SolverError):
    """External solver process failed or produced unparsable output."""


@dataclass(frozen=True)
class Variable:
    name: str
    lower: float
    upper: float
    integer: bool


@dataclass(frozen=True)
class Constraint:
    coeffs: dict[str, float]
    relation: Relation
    rhs: float
    name: str


class ModelIR:
    """A linear model: variables with bounds/integrality, rows, one objective.

    Mutable while being assembled by a builder; treated as immutable once
    handed to a solver.
    """

    def __init__(self, name: str = "model") -> None:
        self.name = name
        self.variables: list[Variable] = []
        self.constraints: list[Constraint] = []
        self.objective: dict[str, float] = {}
        self.sense: str = "max"
        self._var_index: dict[str, int] = {}
        self._row_names: set[str] = set()

    # -- assembly ---------------------------------------------------------

    def add_variable(
        self, name: str, lower: float = 0.0, upper: float = INF, integer: bool = False
    ) -> str:
        if name in self._var_index:
            raise ValueError(f"duplicate variable {name!r}")
        if not name or name[0].isdigit():
            raise ValueError(f"invalid variable name {name!r}")
        if lower > upper:
            raise ValueError(f"variable {name!r} has lower {lower} > upper {upper}")
        self._var_index[name] = len(self.variables)
        self.variables.append(Variable(name, float(lower), float(upper), bool(integer)))
        return name

    def add_constraint(
        self, coeffs: dict[str, float], relation: Relation, rhs: float, name: str | None = None
    ) -> str:
        if relation not in ("<=", ">=", "="):
            raise ValueError(f"unknown relation {relation!r}")
        for var in coeffs:
            if var not in self._var_index:
                raise ValueError(f"constraint references undeclared variable {var!r}")
        if name is None:
            name = f"c{len(self.constraints)}"
        if name in self._row_names:
            raise ValueError(f"duplicate constraint name {name!r}")
        self._row_names.add(name)
        self.constraints.append(
            Constraint({k: float(v) for k, v in coeffs.items()}, relation, float(rhs), name)
        )
        return name

    def set_objective(self, coeffs: dict[str, float], sense: str = "max") -> None:
        if sense not in ("max", "min"):
            raise ValueError(f"objective sense must be max or min, got {sense!r}")
        for var in coeffs:
            if var not in self._var_index:
                raise ValueError(f"objective references undeclared variable {var!r}")
        self.objective = {k: float(v) for k, v in coeffs.items()}
        self.sense = sense

    # -- views ------------------------------------------------------------

    @property
    def n_variables(self) -> int:
        return len(self.variables)

    def variable_index(self, name: str) -> int:
        return self._var_index[name]

    def has_integers(self) -> bool:
        return any(v.integer for v in self.variables)

    def objective_vector(self) -> NDArray[np.float64]:
        c = np.zeros(self.n_variables)
        for var, coef in self.objective.items():
            c[self._var_index[var]] = coef
        return c

    def constraint_matrix(self) -> tuple[sp.csr_matrix, NDArray, list[str]]:
        """All rows as a sparse matrix with their relations and rhs untouched."""
        rows, cols, vals = [], [], []
        for i, con in enumerate(self.constraints):
            for var, coef in con.coeffs.items():
                rows.append(i)
                cols.append(self._var_index[var])
                vals.append(coef)
        mat = sp.csr_matrix(
            (vals, (rows, cols)), shape=(len(self.constraints), self.n_variables)
        )
        rhs = np.array([c.rhs for c in self.constraints])
        rels = [c.relation for c in self.constraints]
        return mat, rhs, rels


@dataclass
class SolveResult:
    status: str  # optimal | infeasible | unbounded | limit
    objective: float
    values: dict[str, float]
    duals: dict[str, float] = field(default_factory=dict)
    stats: dict[str, float] = field(default_factory=dict)

    def value(self, name: str) -> float:
        return self.values[name]

    def vector(self, names: list[str]) -> NDArray[np.float64]:
        return np.array([self.values[n] for n in names])

    def verify_feasible(self, model: ModelIR, tol: float = FEAS_TOL) -> None:
        """Assert all constraints hold at the primal point, relative to row scale."""
        if self.status not in ("optimal", "limit") or not self.values:
            return
        x = np.array([self.values[v.name] for v in model.variables])
        xmax = max(1.0, float(np.max(np.abs(x))) if x.size else 1.0)
        for v, xi in zip(model.variables, x):
            scale = max(1.0, abs(xi))
            if xi < v.lower - tol * scale or xi > v.upper + tol * scale:
                raise AssertionError(f"bound violated at {v.name}: {xi} not in [{v.lower}, {v.upper}]")
        mat, rhs, rels = model.constraint_matrix()
        lhs = mat @ x
        for con, left, right in zip(model.constraints, lhs, rhs):
            row_inf = max(abs(c) for c in con.coeffs.values()) if con.coeffs else 0.0
            scale = max(1.0, row_inf * xmax, abs(right))
            resid = left - right
            ok = (
                resid <= tol * scale
                if con.relation == "<="
                else resid >= -tol * scale
                if con.relation == ">="
                else abs(resid) <= tol * scale
            )
            if not ok:
                raise AssertionError(
                    f"constraint {con.name} violated: lhs={left}, rhs={right}, rel={con.relation}"
                )


# ---------------------------------------------------------------------------
# built-in backend (HiGHS via scipy)
# ---------------------------------------------------------------------------

_LP_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded"}


def _scipy_arrays(model: ModelIR):
    """Split rows into <= (with >= negated, tracking flips) and equalities."""
    c = model.objective_vector()
    mat, rhs, rels = model.constraint_matrix()
    ub_rows, eq_rows = [], []
    flips = []
    for i, rel in enumerate(rels):
        if rel == "=":
            eq_rows.append(i)
        elif rel == "<=":
            ub_rows.append(i)
            flips.append(1.0)
        else:
            ub_rows.append(i)
            flips.append(-1.0)
    A_ub = b_ub = A_eq = b_eq = None
    if ub_rows:
        flip = np.array(flips)
        A_ub = sp.diags(flip) @ mat[ub_rows]
        b_ub = flip * rhs[ub_rows]
    if eq_rows:
        A_eq = mat[eq_rows]
        b_eq = rhs[eq_rows]
    lower = np.array([v.lower for v in model.variables])
    upper = np.array([v.upper for v in model.variables])
    return c, A_ub, b_ub, A_eq, b_eq, lower, upper, ub_rows, eq_rows, flips


def solve_lp(model: ModelIR) -> SolveResult:
    """Solve the LP relaxation; populate duals under the documented convention."""
    c, A_ub, b_ub, A_eq, b_eq, lower, upper, ub_rows, eq_rows, flips = _scipy_arrays(model)
    sign = -1.0 if model.sense == "max" else 1.0
    t0 = time.perf_counter()
    res = linprog(
        sign * c,
        A_ub=A_ub,
        b_ub=b_ub,
        A_eq=A_eq,
        b_eq=b_eq,
        bounds=np.column_stack([lower, upper]),
        method="highs",
    )
    wall_ms = 1e3 * (time.perf_counter() - t0)
    if res.status == 4:
        raise SolverError(f"LP numerical failure: {res.message}")
    status = _LP_STATUS[res.status]
    values: dict[str, float] = {}
    duals: dict[str, float] = {}
    objective = math.nan
    if status == "optimal":
        x = np.asarray(res.x)
        values = {v.name: float(xi) for v, xi in zip(model.variables, x)}
        objective = float(c @ x)
        # scipy marginals are for the minimization it solved; undo the sense
        # sign, and the row flip for >= rows.
        if ub_rows:
            marg = np.asarray(res.ineqlin.marginals)
            for pos, (i, flip) in enumerate(zip(ub_rows, flips)):
                duals[model.constraints[i].name] = float(sign * flip * marg[pos])
        if eq_rows:
            marg = np.asarray(res.eqlin.marginals)
            for pos, i in enumerate(eq_rows):
                duals[model.constraints[i].name] = float(sign * marg[pos])
    result = SolveResult(
        status=status,
        objective=objective,
        values=values,
        duals=duals,
        stats={"iterations": float(getattr(res, "nit", 0)), "nodes": 0.0, "wall_ms": wall_ms},
    )
    result.verify_feasible(model)
    return result


def reduced_costs(model: ModelIR, result: SolveResult) -> dict[str, float]:
    """rc = c - A^T y at the solved duals (zero vector if no duals)."""
    c = model.objective_vector()
    y = np.array([result.duals.get(con.name, 0.0) for con in model.constraints])
    mat, _, _ = model.constraint_matrix()
    rc = c - mat.T @ y
    return {v.name: float(r) for v, r in zip(model.variables, rc)}


def check_strong_duality(model: ModelIR, result: SolveResult, tol: float = FEAS_TOL) -> float:
    """Return |primal - dual| objective gap; raise if bounds make it undefined."""
    if result.status != "optimal":
        raise ValueError("strong duality check needs an optimal LP result")
    rc = reduced_costs(model, result)
    dual_obj = sum(
        result.duals.get(con.name, 0.0) * con.rhs for con in model.constraints
    )
    scale = max(1.0, abs(result.objective))
    for v in model.variables:
        r = rc[v.name]
        if abs(r) <= tol * scale:
            continue
        # nonzero reduced cost: variable must rest on a finite bound
        bound = v.upper if (r > 0) == (model.sense == "max") else v.lower
        if not math.isfinite(bound):
            raise AssertionError(f"nonzero reduced cost {r} at unbounded side of {v.name}")
        dual_obj += r * bound
    return abs(dual_obj - result.objective)


_MILP_STATUS = {0: "optimal", 1: "limit", 2: "infeasible", 3: "unbounded", 4: "limit"}


def solve_milp(
    model: ModelIR, gap: float = 1e-9, node_limit: int | None = None
) -> SolveResult:
    """Branch-and-bound solve; proven optimal within gap, or best incumbent at limit."""
    if not model.has_integers():
        return solve_lp(model)
    c, A_ub, b_ub, A_eq, b_eq, lower, upper, *_ = _scipy_arrays(model)
    sign = -1.0 if model.sense == "max" else 1.0
    constraints = []
    if A_ub is not None:
        constraints.append(LinearConstraint(A_ub, -np.inf, b_ub))
    if A_eq is not None:
        constraints.append(LinearConstraint(A_eq, b_eq, b_eq))
    integrality = np.array([1 if v.integer else 0 for v in model.variables])
    options: dict = {
        "mip_rel_gap": float(gap),
        # HiGHS defaults allow row violations up to 1e-6, the same size as
        # FEAS_TOL; tighten so verify_feasible never trips on solver noise
        "mip_feasibility_tolerance": 1e-9,
        "primal_feasibility_tolerance": 1e-9,
    }
    if node_limit is not None:
        options["node_limit"] = int(node_limit)
    t0 = time.perf_counter()
    with warnings.catch_warnings():
        # scipy flags the HiGHS tolerance options as unrecognized before
        # forwarding them verbatim; that notice is expected here
        warnings.filterwarnings("ignore", message=".*passed to HiGHS verbatim.*")
        res = _scipy_milp(
            c=sign * c,
            constraints=constraints,
            integrality=integrality,
            bounds=Bounds(lower, upper),
            options=options,
        )
    wall_ms = 1e3 * (time.perf_counter() - t0)
    status = _MILP_STATUS.get(res.status, "limit")
    if status == "limit" and res.x is None:
        raise SolverError(f"MILP stopped without incumbent: {res.message}")
    values: dict[str, float] = {}
    objective = math.nan
    if res.x is not None:
        x = np.asarray(res.x)
        # snap near-integral values so downstream indicator reads are exact
        for j, v in enumerate(model.variables):
            if v.integer and abs(x[j] - round(x[j])) <= INT_TOL:
                x[j] = round(x[j])
        values = {v.name: float(xi) for v, xi in zip(model.variables, x)}
        objective = float(c @ x)
    result = SolveResult(
        status=status,
        objective=objective,
        values=values,
        duals={},
        stats={
            "iterations": 0.0,
            "nodes": float(getattr(res, "mip_node_count", 0) or 0),
            "wall_ms": wall_ms,
        },
    )
    result.verify_feasible(model)
    return result


# ---------------------------------------------------------------------------
# LP text format
# ---------------------------------------------------------------------------


def _fmt(v: float) -> str:
    return f"{v:.17g}"


def export_model(model: ModelIR, path: str) -> str:
    """Write the model in LP text format (Maximize/Subject To/Bounds/Binaries/End)."""
    lines: list[str] = [f"\\ {model.name}"]
    lines.append("Maximize" if model.sense == "max" else "Minimize")
    lines.append(" obj: " + _terms(model.objective))
    lines.append("Subject To")
    for con in model.constraints:
        rel = con.relation if con.relation != "=" else "="
        lines.append(f" {con.name}: {_terms(con.coeffs)} {rel} {_fmt(con.rhs)}")
    bounds_lines = []
    binaries, generals = [], []
    for v in model.variables:
        if v.integer and v.lower == 0.0 and v.upper == 1.0:
            binaries.append(v.name)
            continue
        if v.integer:
            generals.append(v.name)
        if v.lower == 0.0 and v.upper == INF:
            continue
        if v.lower == -INF and v.upper == INF:
            bounds_lines.append(f" {v.name} free")
        elif v.upper == INF:
            bounds_lines.append(f" {_fmt(v.lower)} <= {v.name}")
        elif v.lower == -INF:
            bounds_lines.append(f" {v.name} <= {_fmt(v.upper)}")
        else:
            bounds_lines.append(f" {_fmt(v.lower)} <= {v.name} <= {_fmt(v.upper)}")
    if bounds_lines:
        lines.append("Bounds")
        lines.extend(bounds_lines)
    if binaries:
        lines.append("Binaries")
        lines.extend(f" {n}" for n in binaries)
    if generals:
        lines.append("Generals")
        lines.extend(f" {n}" for n in generals)
    lines.append("End")
    with open(path, "w") as fh:
        fh.write("\n".join(lines) + "\n")
    return path


def _terms(coeffs: dict[str, float]) -> str:
    if not coeffs:
        return "0 ZERO__"  # LP format requires at least one term
    parts: list[str] = []
    for name, coef in coeffs.items():
        if coef == 0.0:
            continue
        sign = "-" if coef < 0 else "+"
        mag = abs(coef)
        if parts:
            parts.append(f"{sign} {_fmt(mag)} {name}")
        else:
            parts.append(f"{'-' if coef < 0 else ''}{_fmt(mag)} {name}")
    return " ".join(parts) if parts else "0 ZERO__"


_SECTION = re.compile(
    r"^(maximize|maximise|max|minimize|minimise|min|subject to|st|s\.t\.|such that|"
    r"bounds|bound|binaries|binary|bin|generals|general|gen|end)$",
    re.IGNORECASE,
)


def parse_lp_file(path: str) -> ModelIR:
    """Parse the LP text format produced by export_model (and common variants)."""
    with open(path) as fh:
        raw = fh.read()
    # strip comments
    text_lines = []
    for line in raw.splitlines():
        line = line.split("\\", 1)[0].rstrip()
        if line.strip():
            text_lines.append(line)

    model = ModelIR(name=os.path.splitext(os.path.basename(path))[0])
    section = None
    obj_sense = "max"
    obj_tokens: list[str] = []
    row_specs: list[tuple[str | None, str]] = []
    bound_lines: list[str] = []
    binary_names: list[str] = []
    general_names: list[str] = []
    current_row: str | None = None

    for line in text_lines:
        stripped = line.strip()
        if _SECTION.match(stripped):
            key = stripped.lower()
            if key in ("maximize", "maximise", "max"):
                section, obj_sense = "objective", "max"
            elif key in ("minimize", "minimise", "min"):
                section, obj_sense = "objective", "min"
            elif key in ("subject to", "st", "s.t.", "such that"):
                section = "rows"
            elif key in ("bounds", "bound"):
                section = "bounds"
            elif key in ("binaries", "binary", "bin"):
                section = "binaries"
            elif key in ("generals", "general", "gen"):
                section = "generals"
            else:
                section = "end"
            current_row = None
            continue
        if section == "objective":
            obj_tokens.append(stripped)
        elif section == "rows":
            if ":" in stripped:
                name, rest = stripped.split(":", 1)
                row_specs.append((name.strip(), rest.strip()))
                current_row = name.strip()
            elif current_row is not None and row_specs:
                prev_name, prev = row_specs[-1]
                row_specs[-1] = (prev_name, prev + " " + stripped)
            else:
                row_specs.append((None, stripped))
        elif section == "bounds":
            bound_lines.append(stripped)
        elif section == "binaries":
            binary_names.extend(stripped.split())
        elif section == "generals":
            general_names.extend(stripped.split())

    obj_text = " ".join(obj_tokens)
    if ":" in obj_text:
        obj_text = obj_text.split(":", 1)[1]
    obj_coeffs = _parse_terms(obj_text)

    parsed_rows = []
    for name, body in row_specs:
        m = re.search(r"(<=|>=|=<|=>|=)", body)
        if not m:
            raise ExternalSolverError(f"cannot parse constraint line {body!r} in {path}")
        rel = {"=<": "<=", "=>": ">="}.get(m.group(1), m.group(1))
        lhs, rhs = body[: m.start()], body[m.end() :]
        parsed_rows.append((name, _parse_terms(lhs), rel, float(rhs.strip())))

    bounds: dict[str, list[float]] = {}
    free: set[str] = set()
    for line in bound_lines:
        tokens = line.replace("<=", " <= ").replace(">=", " >= ").split()
        if len(tokens) == 2 and tokens[1].lower() == "free":
            free.add(tokens[0])
        elif len(tokens) == 5 and tokens[1] == "<=" and tokens[3] == "<=":
            bounds[tokens[2]] = [float(tokens[0]), float(tokens[4])]
        elif len(tokens) == 3 and tokens[1] == "<=":
            if _is_number(tokens[0]):
                bounds.setdefault(tokens[2], [0.0, INF])[0] = float(tokens[0])
            else:
                bounds.setdefault(tokens[0], [0.0, INF])[1] = float(tokens[2])
        elif len(tokens) == 3 and tokens[1] == ">=":
            if _is_number(tokens[2]):
                bounds.setdefault(tokens[0], [0.0, INF])[0] = float(tokens[2])
            else:
                bounds.setdefault(tokens[2], [0.0, INF])[1] = float(tokens[0])
        else:
            raise ExternalSolverError(f"cannot parse bounds line {line!r} in {path}")

    names_in_order: list[str] = []
    seen: set[str] = set()
    for coeffs in [obj_coeffs] + [row[1] for row in parsed_rows]:
        for var in coeffs:
            if var not in seen:
                seen.add(var)
                names_in_order.append(var)
    for var in itertools.chain(bounds, free, binary_names, general_names):
        if var not in seen:
            seen.add(var)
            names_in_order.append(var)

    binset, genset = set(binary_names), set(general_names)
    for var in names_in_order:
        if var == "ZERO__":
            continue
        if var in binset:
            lo, hi = 0.0, 1.0
        elif var in free:
            lo, hi = -INF, INF
        else:
            lo, hi = bounds.get(var, [0.0, INF])
        model.add_variable(var, lo, hi, integer=var in binset or var in genset)

    for name, coeffs, rel, rhs in parsed_rows:
        coeffs.pop("ZERO__", None)
        model.add_constraint(coeffs, rel, rhs, name=name)
    obj_coeffs.pop("ZERO__", None)
    model.set_objective(obj_coeffs, obj_sense)
    return model


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def _parse_terms(text: str) -> dict[str, float]:
    tokens = text.replace("+", " + ").replace("-", " - ").split()
    coeffs: dict[str, float] = {}
    sign = 1.0
    pending: float | None = None
    for tok in tokens:
        if tok == "+":
            if pending is not None:
                raise ExternalSolverError(f"dangling coefficient before '+' in {text!r}")
            sign = 1.0
        elif tok == "-":
            if pending is not None:
                raise ExternalSolverError(f"dangling coefficient before '-' in {text!r}")
            sign = -1.0
        elif _is_number(tok):
            pending = (pending if pending is not None else 1.0) * float(tok)
        elif tok.lower().startswith("e") and pending is not None and _is_number(f"1{tok}"):
            # exponent split from its mantissa by whitespace
            pending *= float(f"1{tok}")
        else:
            coef = sign * (pending if pending is not None else 1.0)
            coeffs[tok] = coeffs.get(tok, 0.0) + coef
            sign, pending = 1.0, None
    if pending is not None:
        raise ExternalSolverError(f"dangling numeric token in {text!r}")
    return coeffs


# ---------------------------------------------------------------------------
# external backend
# ---------------------------------------------------------------------------


def _parse_solution_plain(text: str) -> tuple[str, float | None, dict[str, float]]:
    """Solution format: 'status <s>', 'objective <v>', then 'name value' lines."""
    status, objective = None, None
    values: dict[str, float] = {}
    for line in text.splitlines():
        parts = line.split()
        if not parts:
            continue
        if parts[0].lower() == "status" and len(parts) >= 2:
            status = parts[1].lower()
        elif parts[0].lower() == "objective" and len(parts) >= 2:
            objective = float(parts[1])
        elif len(parts) == 2 and _is_number(parts[1]):
            values[parts[0]] = float(parts[1])
    if status is None:
        raise ExternalSolverError("solution file has no status line")
    return status, objective, values


def _parse_solution_cbc(text: str) -> tuple[str, float | None, dict[str, float]]:
    """CBC 'solu' file: header line with verdict/objective, then idx name value rc."""
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines:
        raise ExternalSolverError("empty solution file")
    header = lines[0].lower()
    if "infeasible" in header:
        status = "infeasible"
    elif "unbounded" in header:
        status = "unbounded"
    elif "optimal" in header:
        status = "optimal"
    else:
        status = "limit"
    objective = None
    m = re.search(r"objective value\s+(-?[\d.eE+-]+)", lines[0])
    if m:
        objective = float(m.group(1))
    values: dict[str, float] = {}
    for line in lines[1:]:
        parts = line.split()
        if len(parts) >= 3 and parts[0].lstrip("*").isdigit():
            values[parts[1]] = float(parts[2])
    return status, objective, values


_SOLUTION_PARSERS = {"plain": _parse_solution_plain, "cbc": _parse_solution_cbc}


def external_solve(
    model: ModelIR,
    solver_command: str | list[str] | None,
    profile: str = "plain",
    timeout: float = 600.0,
) -> SolveResult:
    """Export, run the configured solver process, parse its solution file.

    The command may contain ``{lp}`` and ``{sol}`` placeholders; otherwise
    the LP path and solution path are appended as the last two arguments.
    """
    if not solver_command:
        raise ExternalSolverError("no external solver command configured")
    if profile not in _SOLUTION_PARSERS:
        raise ExternalSolverError(f"unknown solver profile {profile!r}")
    with tempfile.TemporaryDirectory(prefix="prodline-lp-") as tmp:
        lp_path = os.path.join(tmp, "model.lp")
        sol_path = os.path.join(tmp, "model.sol")
        export_model(model, lp_path)
        if isinstance(solver_command, str):
            argv = shlex.split(solver_command)
        else:
            argv = list(solver_command)
        if any("{lp}" in a or "{sol}" in a for a in argv):
            argv = [a.replace("{lp}", lp_path).replace("{sol}", sol_path) for a in argv]
        else:
            argv = argv + [lp_path, sol_path]
        t0 = time.perf_counter()
        try:
            proc = subprocess.run(
                argv, capture_output=True, text=True, timeout=timeout, check=False
            )
        except (OSError, subprocess.TimeoutExpired) as exc:
            raise ExternalSolverError(f"solver process failed: {exc}") from exc
        wall_ms = 1e3 * (time.perf_counter() - t0)
        if not os.path.exists(sol_path):
            raise ExternalSolverError(
                f"solver wrote no solution file (exit {proc.returncode}); "
                f"stdout: {proc.stdout[-2000:]!r} stderr: {proc.stderr[-2000:]!r}"
            )
        with open(sol_path) as fh:
            text = fh.read()
    try:
        status, objective, values = _SOLUTION_PARSERS[profile](text)
    except ExternalSolverError:
        raise
    except Exception as exc:
        raise ExternalSolverError(f"unparsable solution file: {exc}") from exc
    if status not in ("optimal", "infeasible", "unbounded", "limit"):
        raise ExternalSolverError(f"unknown status {status!r} in solution file")
    values = {v.name: values.get(v.name, 0.0) for v in model.variables} if values else {}
    if status == "optimal" and objective is None:
        c = model.objective_vector()
        x = np.array([values[v.name] for v in model.variables])
        objective = float(c @ x)
    result = SolveResult(
        status=status,
        objective=objective if objective is not None else math.nan,
        values=values if status in ("optimal", "limit") else {},
        duals={},
        stats={"iterations": 0.0, "nodes": 0.0, "wall_ms": wall_ms},
    )
    result.verify_feasible(model)
    return result


# ---------------------------------------------------------------------------
# brute-force oracles
# ---------------------------------------------------------------------------


def brute_force_lp(model: ModelIR, budget: int = 200_000) -> float:
    """Vertex-enumeration optimum of a bounded-feasible LP (testing oracle).

    Enumerates all n-subsets of {constraint rows as equalities} union
    {active bounds}, solves each square system, keeps feasible points.
    """
    n = model.n_variables
    mat, rhs, rels = model.constraint_matrix()
    mat = mat.toarray()
    rows: list[tuple[NDArray, float]] = [(mat[i], rhs[i]) for i in range(len(rels))]
    for j, v in enumerate(model.variables):
        e = np.zeros(n)
        e[j] = 1.0
        if math.isfinite(v.lower):
            rows.append((e.copy(), v.lower))
        if math.isfinite(v.upper):
            rows.append((e.copy(), v.upper))
    eq_idx = [i for i, rel in enumerate(rels) if rel == "="]
    if len(rows) < n:
        raise ValueError("not enough rows to form vertices")
    n_comb = math.comb(len(rows), n)
    if n_comb > budget:
        raise ValueError(f"vertex enumeration budget exceeded: C({len(rows)},{n})={n_comb}")
    c = model.objective_vector()
    best = None
    for subset in itertools.combinations(range(len(rows)), n):
        if any(i not in subset for i in eq_idx):
            continue
        A = np.stack([rows[i][0] for i in subset])
        b = np.array([rows[i][1] for i in subset])
        try:
            x = np.linalg.solve(A, b)
        except np.linalg.LinAlgError:
            continue
        if not np.isfinite(x).all():
            continue
        if _point_feasible(model, x):
            val = float(c @ x)
            if best is None or (val > best if model.sense == "max" else val < best):
                best = val
    if best is None:
        raise ValueError("no feasible vertex found (infeasible or degenerate instance)")
    return best


def _point_feasible(model: ModelIR, x: NDArray, tol: float = 1e-7) -> bool:
    for j, v in enumerate(model.variables):
        if x[j] < v.lower - tol or x[j] > v.upper + tol:
            return False
    mat, rhs, rels = model.constraint_matrix()
    lhs = mat @ x
    for left, right, rel in zip(lhs, rhs, rels):
        scale = max(1.0, abs(right))
        if rel == "<=" and left > right + tol * scale:
            return False
        if rel == ">=" and left < right - tol * scale:
            return False
        if rel == "=" and abs(left - right) > tol * scale:
            return False
    return True


def brute_force_binary_milp(model: ModelIR, budget: int = 1 << 20) -> float:
    """Exhaustive optimum of a model whose variables are all binary."""
    names = [v.name for v in model.variables]
    if not all(v.integer and v.lower == 0.0 and v.upper == 1.0 for v in model.variables):
        raise ValueError("oracle requires an all-binary model")
    if 2 ** len(names) > budget:
        raise ValueError("binary enumeration budget exceeded")
    c = model.objective_vector()
    best = None
    for bits in itertools.product((0.0, 1.0), repeat=len(names)):
        x = np.array(bits)
        if _point_feasible(model, x):
            val = float(c @ x)
            if best is None or (val > best if model.sense == "max" else val < best):
                best = val
    if best is None:
        raise ValueError("no feasible assignment")
    return best
