"""Multivariate-normal population models over partworth vectors.

Fitting, exact conditioning on linear equalities (Schur complement), i.i.d.
sampling through the covariance factor, and hit-and-run sampling of the
Gaussian restricted to a polyhedron.  Metric conjoint responses condition in
closed form; choice responses (halfspaces) have no closed form and go
through the restricted sampler.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
import scipy.linalg
import scipy.special
from numpy.typing import NDArray

from prodline.polyhedra import InfeasiblePolyhedron, Polyhedron, chebyshev_center, is_feasible

__all__ = [
    "PopulationModel",
    "condition_on_equalities",
    "default_ridge",
    "fit_population",
    "sample_mvn",
    "sample_polytope_gaussian",
]


@dataclass(frozen=True)
class PopulationModel:
    """Gaussian over partworths: mean mu, covariance sigma plus a diagonal ridge."""

    mu: NDArray[np.float64]
    sigma: NDArray[np.float64]
    ridge: float = 0.0

    def __post_init__(self) -> None:
        mu = np.asarray(self.mu, dtype=np.float64).reshape(-1)
        sigma = np.asarray(self.sigma, dtype=np.float64)
        if sigma.shape != (mu.shape[0], mu.shape[0]):
            raise ValueError(f"sigma shape {sigma.shape} does not match mu length {mu.shape[0]}")
        if not (np.isfinite(mu).all() and np.isfinite(sigma).all()):
            raise ValueError("population model entries must be finite")
        if not np.allclose(sigma, sigma.T, atol=1e-8, rtol=1e-8):
            raise ValueError("sigma must be symmetric")
        if self.ridge < 0:
            raise ValueError("ridge must be nonnegative")
        mu.setflags(write=False)
        sigma = 0.5 * (sigma + sigma.T)
        sigma.setflags(write=False)
        object.__setattr__(self, "mu", mu)
        object.__setattr__(self, "sigma", sigma)
        object.__setattr__(self, "ridge", float(self.ridge))

    @property
    def dimension(self) -> int:
        return self.mu.shape[0]

    def covariance(self) -> NDArray[np.float64]:
        return self.sigma + self.ridge * np.eye(self.dimension)

    def factor(self) -> NDArray[np.float64]:
        """A matrix F with F F^T = covariance (Cholesky, or eigen square root
        when the covariance is only positive semidefinite)."""
        cov = self.covariance()
        try:
            return np.linalg.cholesky(cov)
        except np.linalg.LinAlgError:
            vals, vecs = np.linalg.eigh(cov)
            if vals.min() < -1e-8 * max(1.0, abs(vals.max())):
                raise ValueError(f"covariance is not PSD (min eigenvalue {vals.min():.3e})")
            return vecs * np.sqrt(np.clip(vals, 0.0, None))


def default_ridge(sigma: NDArray) -> float:
    """The default diagonal ridge: 1e-6 * trace(sigma) / L."""
    sigma = np.asarray(sigma, dtype=np.float64)
    return 1e-6 * float(np.trace(sigma)) / sigma.shape[0]


def fit_population(points: list[NDArray] | NDArray, ridge: float | None = None) -> PopulationModel:
    """Sample mean and unbiased covariance of a point cloud.

    ``ridge`` defaults to 1e-6 * trace / L of the raw covariance; it is
    stored on the model (not folded into sigma), so ``covariance()`` is
    sigma + ridge * I.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim != 2 or pts.shape[0] < 2:
        raise ValueError("fit_population needs at least 2 points")
    if not np.isfinite(pts).all():
        raise ValueError("non-finite entries in points")
    mu = pts.mean(axis=0)
    sigma = np.cov(pts, rowvar=False, ddof=1)
    sigma = np.atleast_2d(sigma)
    if ridge is None:
        ridge = default_ridge(sigma)
    return PopulationModel(mu=mu, sigma=sigma, ridge=float(ridge))


def _independent_rows(Q: NDArray, tol: float = 1e-10) -> tuple[NDArray, NDArray]:
    """Indices of a maximal independent row subset via rank-revealing QR."""
    if Q.shape[0] == 0:
        return np.zeros(0, dtype=int), np.zeros(0, dtype=int)
    R_diag_scale = np.linalg.norm(Q, axis=1).max()
    _, R, piv = scipy.linalg.qr(Q.T, pivoting=True, mode="economic")
    diag = np.abs(np.diag(R))
    rank = int(np.sum(diag > tol * max(1.0, R_diag_scale)))
    keep = np.sort(piv[:rank])
    drop = np.sort(piv[rank:])
    return keep, drop


def condition_on_equalities(
    model: PopulationModel, Q: NDArray, r: NDArray
) -> PopulationModel:
    """Condition the Gaussian on Q u = r (Schur complement, closed form).

    Linearly dependent rows are dropped (rank-revealing QR, tolerance 1e-10)
    after verifying they are consistent with the kept rows; inconsistent
    dependent rows are an error naming the offending row indices.
    """
    Q = np.atleast_2d(np.asarray(Q, dtype=np.float64))
    r = np.asarray(r, dtype=np.float64).reshape(-1)
    if Q.shape[0] == 0:
        return model
    if Q.shape != (r.shape[0], model.dimension):
        raise ValueError(f"conditioning shapes Q{Q.shape}, r{r.shape} do not match model")
    keep, drop = _independent_rows(Q)
    if drop.size:
        # dependent rows must agree with what the kept rows imply
        coeffs, *_ = np.linalg.lstsq(Q[keep].T, Q[drop].T, rcond=None)
        implied = coeffs.T @ r[keep]
        bad = np.flatnonzero(np.abs(implied - r[drop]) > 1e-8 * np.maximum(1.0, np.abs(r[drop])))
        if bad.size:
            raise ValueError(
                f"inconsistent dependent equality rows at indices {list(drop[bad])}; "
                f"redundant rows were {list(drop)}"
            )
    Qk, rk = Q[keep], r[keep]
    cov = model.covariance()
    cross = cov @ Qk.T  # L x K
    S = 0.5 * ((Qk @ cross) + (Qk @ cross).T)  # K x K, PSD
    resid = rk - Qk @ model.mu
    vals, vecs = np.linalg.eigh(S)
    cutoff = 1e-12 * max(1.0, float(vals.max(initial=0.0)))
    dead = vals <= cutoff
    if np.any(dead):
        # zero variance along these combinations: Qu is a.s. constant there,
        # so the requested value must already hold
        drift = vecs[:, dead].T @ resid
        if np.abs(drift).max(initial=0.0) > 1e-8 * max(1.0, np.abs(rk).max(initial=0.0)):
            raise ValueError(
                "conditioning value contradicts a zero-variance direction of the model"
            )
    inv_vals = np.where(dead, 0.0, 1.0 / np.where(dead, 1.0, vals))
    S_pinv = (vecs * inv_vals) @ vecs.T
    gain = S_pinv @ cross.T  # K x L
    mu_c = model.mu + gain.T @ resid
    sigma_c = cov - cross @ gain
    sigma_c = 0.5 * (sigma_c + sigma_c.T)
    return PopulationModel(mu=mu_c, sigma=sigma_c, ridge=0.0)


def sample_mvn(model: PopulationModel, count: int, seed) -> NDArray[np.float64]:
    """count i.i.d. draws (rows) via the covariance factor; deterministic per seed."""
    rng = np.random.default_rng(seed)
    F = model.factor()
    z = rng.standard_normal((int(count), model.dimension))
    return model.mu + z @ F.T


_SQRT2 = np.sqrt(2.0)


def _norm_cdf(x: float) -> float:
    return 0.5 * scipy.special.erfc(-x / _SQRT2)


def _norm_ppf(p: float) -> float:
    return -_SQRT2 * scipy.special.erfcinv(2.0 * p)


def sample_polytope_gaussian(
    model: PopulationModel,
    polyhedron: Polyhedron,
    count: int,
    burn_in: int = 1000,
    thinning: int = 10,
    seed=None,
    density: str = "gaussian",
    start: NDArray | None = None,
) -> NDArray[np.float64]:
    """Hit-and-run chain targeting the Gaussian restricted to the polyhedron.

    Equality rows restrict directions to their null space; on each step the
    1-D slice of the target along the sampled direction is a truncated
    normal, sampled by inverse CDF.  With ``density="uniform"`` the slice is
    sampled uniformly instead (the chain then targets the flat density,
    useful for geometry-only users).  Every returned sample is asserted
    feasible to 1e-9.
    """
    if count < 1:
        raise ValueError("count must be positive")
    if density not in ("gaussian", "uniform"):
        raise ValueError(f"unknown density {density!r}")
    if not is_feasible(polyhedron):
        raise InfeasiblePolyhedron("cannot sample an empty polyhedron")
    L = polyhedron.dimension
    if model.dimension != L:
        raise ValueError("model dimension does not match polyhedron")
    rng = np.random.default_rng(seed)

    A_in, b_in, E, f = polyhedron.split_rows()
    eye = np.eye(L)
    A = np.vstack([A_in, eye, -eye])
    b = np.concatenate([b_in, polyhedron.box.lower, -polyhedron.box.upper])

    if E.shape[0]:
        Z = scipy.linalg.null_space(E)
        if Z.size == 0:
            # fully determined: the single feasible point, repeated
            u0, *_ = np.linalg.lstsq(E, f, rcond=None)
            _assert_inside(polyhedron, u0)
            return np.tile(u0, (count, 1))
        u0, *_ = np.linalg.lstsq(E, f, rcond=None)
    else:
        Z = np.eye(L)
        u0 = np.zeros(L)

    if start is None:
        start, _ = chebyshev_center(polyhedron)
    w = Z.T @ (np.asarray(start, dtype=np.float64) - u0)

    G = A @ Z
    h = b - A @ u0
    norms = np.linalg.norm(G, axis=1)
    live = norms > 1e-12 * np.maximum(1.0, np.linalg.norm(A, axis=1))
    if np.any(h[~live] > 1e-8 * np.maximum(1.0, np.abs(b[~live]))):
        raise InfeasiblePolyhedron("equality rows contradict an inequality row")
    G, h = G[live], h[live]

    dim = Z.shape[1]
    if density == "gaussian":
        cov = model.covariance()
        try:
            prec_full = np.linalg.inv(cov)
        except np.linalg.LinAlgError as exc:
            raise ValueError("covariance must be invertible for restricted sampling") from exc
        P_w = Z.T @ prec_full @ Z
        rhs = Z.T @ (prec_full @ (model.mu - u0))
        mu_w = np.linalg.solve(P_w, rhs)
    else:
        P_w = np.eye(dim)
        mu_w = np.zeros(dim)

    samples = np.empty((count, L))
    kept = 0
    steps_needed = burn_in + count * max(1, thinning)
    step = 0
    while kept < count:
        d = rng.standard_normal(dim)
        d /= np.linalg.norm(d)
        gd = G @ d
        slack = G @ w - h
        slack = np.maximum(slack, 0.0)  # guard tiny negative drift
        t_hi, t_lo = np.inf, -np.inf
        pos = gd > 1e-14
        neg = gd < -1e-14
        if np.any(neg):
            t_hi = float(np.min(slack[neg] / -gd[neg]))
        if np.any(pos):
            t_lo = float(np.max(-slack[pos] / gd[pos]))
        if not np.isfinite(t_hi) or not np.isfinite(t_lo):
            raise InfeasiblePolyhedron("unbounded chord; polyhedron must be boxed")
        if t_hi < t_lo:
            t_lo = t_hi = 0.5 * (t_lo + t_hi)
        if density == "gaussian":
            pd = float(d @ (P_w @ d))
            s = 1.0 / np.sqrt(pd)
            m = float(d @ (P_w @ (mu_w - w))) / pd
            a = _norm_cdf((t_lo - m) / s)
            bb = _norm_cdf((t_hi - m) / s)
            if bb - a > 1e-14:
                v = rng.uniform(a, bb)
                t = m + s * _norm_ppf(v)
            else:
                t = float(np.clip(m, t_lo, t_hi))
        else:
            t = rng.uniform(t_lo, t_hi)
        t = float(np.clip(t, t_lo, t_hi))
        w = w + t * d
        step += 1
        if step > burn_in and (step - burn_in) % max(1, thinning) == 0:
            u = u0 + Z @ w
            _assert_inside(polyhedron, u)
            samples[kept] = u
            kept += 1
        if step > steps_needed + count:  # safety net; cannot trigger with the arithmetic above
            raise RuntimeError("hit-and-run failed to collect the requested samples")
    return samples


def _assert_inside(polyhedron: Polyhedron, u: NDArray, tol: float = 1e-9) -> None:
    if not polyhedron.contains(u, tol):
        raise AssertionError("hit-and-run produced an infeasible sample")
