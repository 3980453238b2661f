"""Per-customer polyhedral uncertainty sets {u | Q u >= r} within a box.

Metric responses contribute equality rows, choice responses halfspaces; the
finite partworth box keeps every set bounded.  Operations: feasibility
(phase-1 LP), Chebyshev and analytic centers, per-coordinate ranges, and the
coordinate-box diameter upper bound.

The analytic center works in the null-space parameterization of the
equality rows, since metric surveys make the ambient interior empty.  Rows
whose halfspace is implied by a tighter parallel row are excluded from the
log barrier (they are not faces of the set), as are rows that reduce to
constants on the equality subspace.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass

import numpy as np
import scipy.linalg
from numpy.typing import NDArray

from prodline.conjoint import PartworthBox, ResponseSet
from prodline.milp import INF, ModelIR, solve_lp

__all__ = [
    "InfeasiblePolyhedron",
    "Polyhedron",
    "analytic_center",
    "chebyshev_center",
    "coordinate_ranges",
    "diameter_upper_bound",
    "is_feasible",
]

FEAS_EPS = 1e-8


class InfeasiblePolyhedron(ValueError):
    """The constraint system admits no point (within tolerance)."""


@dataclass(frozen=True)
class Polyhedron:
    """Rows Q u >= r (or = r where flagged) intersected with a coordinate box."""

    Q: NDArray[np.float64]
    r: NDArray[np.float64]
    equality_rows: NDArray[np.bool_]
    box: PartworthBox

    def __post_init__(self) -> None:
        Q = np.atleast_2d(np.asarray(self.Q, dtype=np.float64))
        if Q.size == 0:
            Q = np.zeros((0, self.box.dimension))
        r = np.asarray(self.r, dtype=np.float64).reshape(-1)
        eq = np.asarray(self.equality_rows, dtype=bool).reshape(-1)
        if Q.shape != (r.shape[0], self.box.dimension) or eq.shape != r.shape:
            raise ValueError(
                f"inconsistent polyhedron dimensions: Q{Q.shape}, r{r.shape}, "
                f"eq{eq.shape}, box L={self.box.dimension}"
            )
        for arr in (Q, r, eq):
            arr.setflags(write=False)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "r", r)
        object.__setattr__(self, "equality_rows", eq)

    @classmethod
    def from_box(cls, box: PartworthBox) -> "Polyhedron":
        return cls(np.zeros((0, box.dimension)), np.zeros(0), np.zeros(0, dtype=bool), box)

    @classmethod
    def from_responses(
        cls,
        responses: ResponseSet,
        box: PartworthBox,
        known_equalities: tuple[NDArray, NDArray] | None = None,
    ) -> "Polyhedron":
        """Stack a customer's response rows, then any shared known equality rows."""
        parts_Q = [responses.Q] if len(responses) else []
        parts_r = [responses.r] if len(responses) else []
        parts_eq = [responses.equality_rows] if len(responses) else []
        if known_equalities is not None:
            KQ, Kr = known_equalities
            KQ = np.atleast_2d(np.asarray(KQ, dtype=np.float64))
            if KQ.size:
                parts_Q.append(KQ)
                parts_r.append(np.asarray(Kr, dtype=np.float64).reshape(-1))
                parts_eq.append(np.ones(KQ.shape[0], dtype=bool))
        if not parts_Q:
            return cls.from_box(box)
        return cls(
            np.vstack(parts_Q),
            np.concatenate(parts_r),
            np.concatenate(parts_eq),
            box,
        )

    @property
    def dimension(self) -> int:
        return self.box.dimension

    @property
    def n_rows(self) -> int:
        return self.Q.shape[0]

    def with_row(self, q: NDArray, rhs: float, equality: bool) -> "Polyhedron":
        q = np.asarray(q, dtype=np.float64).reshape(1, -1)
        return Polyhedron(
            np.vstack([self.Q, q]) if self.n_rows else q,
            np.append(self.r, float(rhs)),
            np.append(self.equality_rows, bool(equality)),
            self.box,
        )

    def split_rows(self) -> tuple[NDArray, NDArray, NDArray, NDArray]:
        """(A_in, b_in, E, f): inequality rows A u >= b and equality rows E u = f."""
        eq = self.equality_rows
        return self.Q[~eq], self.r[~eq], self.Q[eq], self.r[eq]

    def dual_rows(self) -> tuple[NDArray, NDArray, list[tuple[str, int, int]]]:
        """All rows in the >=-form used by dualizations, with provenance tags.

        Equality rows expand into (q, r) and (-q, -r) so every dual weight is
        nonnegative; box bounds come last.  Tags are ("row", k, sign) for row
        k of Q and ("box", l, +1/-1) for the lower/upper bound of level l.
        """
        rows, rhs, tags = [], [], []
        for k in range(self.n_rows):
            rows.append(self.Q[k])
            rhs.append(self.r[k])
            tags.append(("row", k, +1))
            if self.equality_rows[k]:
                rows.append(-self.Q[k])
                rhs.append(-self.r[k])
                tags.append(("row", k, -1))
        L = self.dimension
        eye = np.eye(L)
        for l in range(L):
            rows.append(eye[l])
            rhs.append(self.box.lower[l])
            tags.append(("box", l, +1))
            rows.append(-eye[l])
            rhs.append(-self.box.upper[l])
            tags.append(("box", l, -1))
        return np.array(rows), np.array(rhs), tags

    def contains(self, u: NDArray, tol: float = 1e-9) -> bool:
        u = np.asarray(u, dtype=np.float64)
        if not self.box.contains(u, tol):
            return False
        if self.n_rows == 0:
            return True
        resid = self.Q @ u - self.r
        scale = np.maximum(1.0, np.abs(self.r))
        eq = self.equality_rows
        if np.any(resid[~eq] < -tol * scale[~eq]):
            return False
        return not np.any(np.abs(resid[eq]) > tol * scale[eq])


# ---------------------------------------------------------------------------
# LP-backed operations
# ---------------------------------------------------------------------------


def _u_names(L: int) -> list[str]:
    return [f"u{l}" for l in range(L)]


def is_feasible(P: Polyhedron, tol: float = FEAS_EPS) -> bool:
    """Phase-1 LP: minimize the single worst violation over all rows and the box."""
    L = P.dimension
    model = ModelIR("phase1")
    for name in _u_names(L):
        model.add_variable(name, -INF, INF)
    model.add_variable("s", 0.0, INF)
    names = _u_names(L)

    def row(coeffs_q: NDArray, rhs: float, idx: int, suffix: str) -> None:
        coeffs = {names[l]: float(coeffs_q[l]) for l in np.flatnonzero(coeffs_q)}
        coeffs["s"] = 1.0
        model.add_constraint(coeffs, ">=", float(rhs), f"r{idx}{suffix}")

    for k in range(P.n_rows):
        row(P.Q[k], P.r[k], k, "a")
        if P.equality_rows[k]:
            row(-P.Q[k], -P.r[k], k, "b")
    eye = np.eye(L)
    for l in range(L):
        row(eye[l], P.box.lower[l], P.n_rows + l, "lo")
        row(-eye[l], -P.box.upper[l], P.n_rows + l, "up")
    model.set_objective({"s": 1.0}, "min")
    res = solve_lp(model)
    return res.status == "optimal" and res.objective <= tol


def _relative_center(P: Polyhedron) -> tuple[NDArray, float]:
    """Max-min-slack point: equality rows exact, radius slack on inequalities only."""
    L = P.dimension
    model = ModelIR("chebyshev")
    names = _u_names(L)
    for name in names:
        model.add_variable(name, -INF, INF)
    model.add_variable("rho", 0.0, INF)
    A_in, b_in, E, f = P.split_rows()
    for k in range(A_in.shape[0]):
        coeffs = {names[l]: float(A_in[k, l]) for l in np.flatnonzero(A_in[k])}
        coeffs["rho"] = -float(np.linalg.norm(A_in[k]))
        model.add_constraint(coeffs, ">=", float(b_in[k]), f"in{k}")
    for k in range(E.shape[0]):
        coeffs = {names[l]: float(E[k, l]) for l in np.flatnonzero(E[k])}
        model.add_constraint(coeffs, "=", float(f[k]), f"eq{k}")
    for l in range(L):
        model.add_constraint({names[l]: 1.0, "rho": -1.0}, ">=", float(P.box.lower[l]), f"lo{l}")
        model.add_constraint({names[l]: -1.0, "rho": -1.0}, ">=", float(-P.box.upper[l]), f"up{l}")
    model.set_objective({"rho": 1.0}, "max")
    res = solve_lp(model)
    if res.status != "optimal":
        raise InfeasiblePolyhedron(f"chebyshev LP status {res.status}")
    u = res.vector(names)
    return u, float(res.values["rho"])


def chebyshev_center(P: Polyhedron) -> tuple[NDArray, float]:
    """Center and radius of a largest inscribed ball.

    With equality rows present the ambient inscribed ball is flat: the
    returned point is the relative-interior center and the radius is 0.
    """
    u, rho = _relative_center(P)
    if bool(P.equality_rows.any()):
        return u, 0.0
    return u, rho


def _null_space(E: NDArray, L: int) -> NDArray:
    if E.shape[0] == 0:
        return np.eye(L)
    Z = scipy.linalg.null_space(E)
    return Z if Z.size else np.zeros((L, 0))


def _particular_solution(E: NDArray, f: NDArray) -> NDArray:
    u0, *_ = np.linalg.lstsq(E, f, rcond=None)
    resid = np.linalg.norm(E @ u0 - f)
    if resid > 1e-7 * max(1.0, np.linalg.norm(f)):
        raise InfeasiblePolyhedron(f"inconsistent equality rows (residual {resid:.2e})")
    return u0


def analytic_center(
    P: Polyhedron, max_iter: int = 200, grad_tol: float = 1e-8
) -> NDArray[np.float64]:
    """Damped-Newton maximizer of the sum of log slacks over the barrier rows.

    Falls back to the Chebyshev (relative) center with a warning if Newton
    has not converged after ``max_iter`` iterations.
    """
    L = P.dimension
    A_in, b_in, E, f = P.split_rows()
    eye = np.eye(L)
    A = np.vstack([A_in, eye, -eye])
    b = np.concatenate([b_in, P.box.lower, -P.box.upper])

    if E.shape[0]:
        u0 = _particular_solution(E, f)
        Z = _null_space(E, L)
    else:
        u0 = np.zeros(L)
        Z = np.eye(L)
    if Z.shape[1] == 0:
        # fully determined point; still must satisfy the inequality rows
        if np.any(A @ u0 < b - 1e-7 * np.maximum(1.0, np.abs(b))):
            raise InfeasiblePolyhedron("equality rows pin an infeasible point")
        return u0

    G = A @ Z
    c = A @ u0 - b
    keep = _barrier_rows(A, b, G, c)
    G, c = G[keep], c[keep]

    w, rho_rel = _interior_start(G, c)
    if rho_rel <= 1e-12:
        raise InfeasiblePolyhedron("empty relative interior (all rows tight)")
    fallback = u0 + Z @ w

    for _ in range(max_iter):
        s = G @ w + c
        if np.any(s <= 0):
            break  # numerical drift; fall back
        inv_s = 1.0 / s
        grad = G.T @ inv_s
        if np.linalg.norm(grad) <= grad_tol:
            return u0 + Z @ w
        H = (G * inv_s[:, None] ** 2).T @ G
        try:
            cho = scipy.linalg.cho_factor(H)
            step = scipy.linalg.cho_solve(cho, grad)
        except scipy.linalg.LinAlgError:
            step = np.linalg.lstsq(H, grad, rcond=None)[0]
        phi = float(np.sum(np.log(s)))
        t = 1.0
        slope = float(grad @ step)
        while t > 1e-14:
            s_new = G @ (w + t * step) + c
            if np.all(s_new > 0) and float(np.sum(np.log(s_new))) >= phi + 0.25 * t * slope:
                break
            t *= 0.5
        if t <= 1e-14:
            break
        w = w + t * step
    else:
        s = G @ w + c
        if np.all(s > 0) and np.linalg.norm(G.T @ (1.0 / s)) <= grad_tol:
            return u0 + Z @ w
    warnings.warn("analytic center Newton did not converge; using interior fallback point")
    return fallback


def _interior_start(G: NDArray, c: NDArray) -> tuple[NDArray, float]:
    """Max-min-slack LP in the null-space coordinates over the barrier rows."""
    dim = G.shape[1]
    model = ModelIR("interior")
    names = [f"w{j}" for j in range(dim)]
    for name in names:
        model.add_variable(name, -INF, INF)
    model.add_variable("rho", 0.0, INF)
    norms = np.linalg.norm(G, axis=1)
    for k in range(G.shape[0]):
        coeffs = {names[j]: float(G[k, j]) for j in np.flatnonzero(G[k])}
        coeffs["rho"] = -float(norms[k])
        model.add_constraint(coeffs, ">=", float(-c[k]), f"in{k}")
    model.set_objective({"rho": 1.0}, "max")
    res = solve_lp(model)
    if res.status != "optimal":
        raise InfeasiblePolyhedron(f"interior LP status {res.status}")
    return res.vector(names), float(res.values["rho"])


def _barrier_rows(A: NDArray, b: NDArray, G: NDArray, c: NDArray) -> NDArray[np.bool_]:
    """Select barrier rows: drop constants and keep only the tightest of
    positively parallel rows (dominated copies are not faces)."""
    m = G.shape[0]
    keep = np.ones(m, dtype=bool)
    norms = np.linalg.norm(G, axis=1)
    ambient = np.maximum(1.0, np.linalg.norm(A, axis=1))
    for j in range(m):
        if norms[j] <= 1e-12 * ambient[j]:
            # constant on the equality subspace: implied row, not a barrier face
            if c[j] < -1e-8 * max(1.0, abs(b[j])):
                raise InfeasiblePolyhedron(
                    "a constraint row reduces to an unsatisfiable constant on the "
                    "equality subspace"
                )
            keep[j] = False
    idx = np.flatnonzero(keep)
    unit = G[idx] / norms[idx, None]
    offset = c[idx] / norms[idx]
    for ii in range(len(idx)):
        if not keep[idx[ii]]:
            continue
        for jj in range(ii + 1, len(idx)):
            if not keep[idx[jj]]:
                continue
            if float(unit[ii] @ unit[jj]) >= 1.0 - 1e-10:
                # same direction: larger normalized offset is the weaker row
                if offset[ii] <= offset[jj]:
                    keep[idx[jj]] = False
                else:
                    keep[idx[ii]] = False
                    break
    return keep


def coordinate_ranges(P: Polyhedron) -> NDArray[np.float64]:
    """L x 2 array of (min_l, max_l) over the polyhedron (2L LPs)."""
    L = P.dimension
    names = _u_names(L)
    model = ModelIR("ranges")
    for l, name in enumerate(names):
        model.add_variable(name, float(P.box.lower[l]), float(P.box.upper[l]))
    A_in, b_in, E, f = P.split_rows()
    for k in range(A_in.shape[0]):
        coeffs = {names[l]: float(A_in[k, l]) for l in np.flatnonzero(A_in[k])}
        model.add_constraint(coeffs, ">=", float(b_in[k]), f"in{k}")
    for k in range(E.shape[0]):
        coeffs = {names[l]: float(E[k, l]) for l in np.flatnonzero(E[k])}
        model.add_constraint(coeffs, "=", float(f[k]), f"eq{k}")
    out = np.zeros((L, 2))
    for l in range(L):
        for j, sense in enumerate(("min", "max")):
            model.set_objective({names[l]: 1.0}, sense)
            res = solve_lp(model)
            if res.status != "optimal":
                raise InfeasiblePolyhedron(f"range LP status {res.status} at level {l}")
            out[l, j] = res.objective
    # clip the tiny inversions LP tolerances can produce
    out[:, 1] = np.maximum(out[:, 1], out[:, 0])
    return out


def diameter_upper_bound(P: Polyhedron, ranges: NDArray | None = None) -> float:
    """sqrt(sum (max_l - min_l)^2): the coordinate-box bound on the diameter."""
    if ranges is None:
        ranges = coordinate_ranges(P)
    widths = ranges[:, 1] - ranges[:, 0]
    return float(np.sqrt(np.sum(widths**2)))
