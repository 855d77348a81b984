"""Smoothing the simulated quantile surface into a reusable p-value table.

For every quantile level ``p`` the values ``x(n, p)`` are joined across the
sample sizes by a cubic spline in ``ln n``.  The fit moves each simulated
mean ``mu(n, p)`` within its bootstrap uncertainty so as to minimise the
summed squared jumps of the splines' third derivatives, subject to

* strict monotonicity in ``p`` at every ``n``, and
* a chi-square budget ``sum ((x - mu) / sigma)^2 <= m + sqrt(2 m)`` over the
  ``m`` free points.

The n = 1 column is known in closed form and is held fixed.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from datetime import datetime, timezone
from pathlib import Path

import numpy as np
import scipy.sparse as sps

from rpstest.exact import ANCHORS
from rpstest.splines import KnotSpline, MonotoneCubic
from rpstest.tabulation import QuantileMoments

EPS_TIE = 1e-15
FORMAT_VERSION = "1.0"
# keeps the minimiser unique when the smoothness term has a null space
_TIE_BREAK = 1e-10


class FitError(RuntimeError):
    """The solver did not reach an acceptable solution."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


@dataclass
class QuantileSurface:
    """Simulated quantile means and errors over an ``(n, p)`` grid.

    Rows are sample sizes, columns quantile levels.  Entries flagged in
    `anchor_mask` are exact and never move.
    """

    statistic: str
    n_grid: np.ndarray
    p_grid: np.ndarray
    mu: np.ndarray
    sigma: np.ndarray
    anchor_mask: np.ndarray
    N: int = 0
    seeds: list = field(default_factory=list)

    def __post_init__(self):
        self.n_grid = np.asarray(self.n_grid, dtype=np.int64)
        self.p_grid = np.asarray(self.p_grid, dtype=np.float64)
        self.mu = np.asarray(self.mu, dtype=np.float64)
        self.sigma = np.asarray(self.sigma, dtype=np.float64)
        self.anchor_mask = np.asarray(self.anchor_mask, dtype=bool)
        shape = (self.n_grid.size, self.p_grid.size)
        for name in ("mu", "sigma", "anchor_mask"):
            if getattr(self, name).shape != shape:
                raise ValueError(f"{name} has shape {getattr(self, name).shape}, expected {shape}")
        if np.any(np.diff(self.n_grid) <= 0) or np.any(np.diff(self.p_grid) <= 0):
            raise ValueError("grids must be strictly increasing")
        free = ~self.anchor_mask
        if np.any(self.sigma[free] <= 0.0):
            bad = np.argwhere(free & (self.sigma <= 0.0))[0]
            raise ValueError(
                f"non-positive sigma at n={self.n_grid[bad[0]]}, p={self.p_grid[bad[1]]}"
            )

    @property
    def m(self) -> int:
        return int((~self.anchor_mask).sum())

    @classmethod
    def from_moments(cls, moments: list[QuantileMoments], seeds=()) -> "QuantileSurface":
        """Stack per-n moments and prepend the closed-form n = 1 column."""
        moments = sorted(moments, key=lambda q: q.n)
        first = moments[0]
        statistic = first.statistic
        for q in moments:
            if q.statistic != statistic or q.N != first.N or not np.array_equal(q.k, first.k):
                raise ValueError("moments disagree on statistic, N or quantile grid")
        if statistic not in ANCHORS:
            raise ValueError(f"no closed-form n=1 anchor for {statistic!r}")
        if moments[0].n <= 1:
            raise ValueError("n=1 is generated analytically; do not simulate it")
        _, quantile = ANCHORS[statistic]
        p = first.p_grid
        anchor = quantile(p)
        n_grid = np.array([1] + [q.n for q in moments])
        mu = np.vstack([anchor] + [q.mu for q in moments])
        sigma = np.vstack([np.zeros_like(p)] + [q.sigma for q in moments])
        mask = np.zeros(mu.shape, dtype=bool)
        mask[0] = True
        return cls(statistic, n_grid, p, mu, sigma, mask, N=first.N, seeds=list(seeds))


def _row_spline(n_grid) -> KnotSpline:
    return KnotSpline(np.log(np.asarray(n_grid, dtype=np.float64)))


def direct_jump_objective(n_grid, x: np.ndarray) -> float:
    """Sum of squared third-derivative jumps computed spline by spline."""
    sp = _row_spline(n_grid)
    D = sp.third_derivative_operator()
    total = 0.0
    for col in np.asarray(x, dtype=np.float64).T:
        d3 = D @ col
        total += float(np.sum(np.diff(d3) ** 2))
    return total


def spline_jump_objective(surface: QuantileSurface, x_trial) -> float:
    """Smoothness penalty of `x_trial` on the surface's grid."""
    x_trial = np.asarray(x_trial, dtype=np.float64)
    if x_trial.shape != surface.mu.shape:
        raise ValueError(f"x_trial has shape {x_trial.shape}, expected {surface.mu.shape}")
    if surface.n_grid.size < 4:
        warnings.warn("fewer than four sample sizes: no interior jumps, objective is 0")
        return 0.0
    return direct_jump_objective(surface.n_grid, x_trial)


def jump_operator(surface: QuantileSurface) -> sps.csr_matrix:
    """Sparse ``G`` with objective ``|G @ x.ravel()|^2`` (row-major ``x``)."""
    J = _row_spline(surface.n_grid).jump_matrix()
    P = surface.p_grid.size
    return sps.kron(sps.csr_matrix(J), sps.identity(P), format="csr")


def jump_quadratic_form(surface: QuantileSurface):
    """Objective as ``0.5 x'Qx + h'x + c`` in the free entries.

    Returns ``(Q, h, c, free_index)`` where `free_index` selects the free
    entries of ``x.ravel()``; anchors enter through `h` and `c`.
    """
    G = jump_operator(surface)
    free = np.flatnonzero(~surface.anchor_mask.ravel())
    fixed = np.flatnonzero(surface.anchor_mask.ravel())
    a = surface.mu.ravel()[fixed]
    Gf = G[:, free]
    r = G[:, fixed] @ a
    Q = 2.0 * (Gf.T @ Gf)
    h = 2.0 * (Gf.T @ r)
    c = float(r @ r)
    return Q.tocsr(), np.asarray(h).ravel(), c, free


def monotonicity_constraints(p_grid, n_grid, eps: float = EPS_TIE):
    """``(A, b)`` with ``A @ x.ravel() <= b`` iff each row increases by at least `eps`."""
    K = len(n_grid)
    P = len(p_grid)
    rows = K * max(P - 1, 0)
    if rows == 0:
        return sps.csr_matrix((0, K * P)), np.zeros(0)
    base = (np.arange(K)[:, None] * P + np.arange(P - 1)[None, :]).ravel()
    r = np.arange(rows)
    A = sps.csr_matrix(
        (np.concatenate([np.ones(rows), -np.ones(rows)]),
         (np.concatenate([r, r]), np.concatenate([base, base + 1]))),
        shape=(rows, K * P),
    )
    return A, np.full(rows, -eps)


def chi2_bound(m: int) -> float:
    """Mean plus one standard deviation of a chi-square with `m` degrees of freedom."""
    if m < 1:
        raise ValueError("m must be at least 1")
    return m + math.sqrt(2.0 * m)


def chi2_value(surface: QuantileSurface, x) -> float:
    free = ~surface.anchor_mask
    z = (np.asarray(x)[free] - surface.mu[free]) / surface.sigma[free]
    return float(np.dot(z, z))


def max_violation(x, eps: float = EPS_TIE) -> float:
    """Largest amount by which any row fails to increase by `eps`."""
    x = np.asarray(x)
    if x.shape[1] < 2:
        return 0.0
    return float(max(0.0, np.max(x[:, :-1] - x[:, 1:] + eps)))


def _repair_monotone(x: np.ndarray, anchor_mask: np.ndarray, eps: float) -> np.ndarray:
    # solver output is monotone only to its tolerance; lift free entries
    x = x.copy()
    for i in range(x.shape[0]):
        for j in range(1, x.shape[1]):
            if anchor_mask[i, j] or x[i, j - 1] - x[i, j] <= -eps:
                continue
            x[i, j] = x[i, j - 1] + 2.0 * eps
            while x[i, j - 1] - x[i, j] > -eps:
                x[i, j] = np.nextafter(x[i, j], np.inf)
    return x


@dataclass
class FittedTable:
    statistic: str
    n_grid: np.ndarray
    p_grid: np.ndarray
    x_hat: np.ndarray
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        self.n_grid = np.asarray(self.n_grid, dtype=np.int64)
        self.p_grid = np.asarray(self.p_grid, dtype=np.float64)
        self.x_hat = np.asarray(self.x_hat, dtype=np.float64).reshape(
            self.n_grid.size, self.p_grid.size
        )

    @property
    def n_max(self) -> int:
        return int(self.n_grid[-1])

    @property
    def N(self) -> int:
        return int(self.meta.get("N", 0))

    def to_dict(self) -> dict:
        return {
            "format_version": FORMAT_VERSION,
            "statistic": self.statistic,
            "n_grid": self.n_grid.tolist(),
            "p_grid": self.p_grid.tolist(),
            "x_hat": self.x_hat.ravel().tolist(),
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, doc: dict) -> "FittedTable":
        _check_version(doc.get("format_version"))
        return cls(doc["statistic"], doc["n_grid"], doc["p_grid"], doc["x_hat"], doc.get("meta", {}))

    def save(self, path) -> None:
        """Write JSON, or the binary companion when `path` ends in ``.npz``."""
        path = Path(path)
        if path.suffix == ".npz":
            np.savez(
                path,
                format_version=np.array(FORMAT_VERSION),
                statistic=np.array(self.statistic),
                n_grid=self.n_grid,
                p_grid=self.p_grid,
                x_hat=self.x_hat,
                meta=np.array(json.dumps(self.meta)),
            )
        else:
            path.write_text(json.dumps(self.to_dict()))

    @classmethod
    def load(cls, path) -> "FittedTable":
        path = Path(path)
        if path.suffix == ".npz":
            with np.load(path, allow_pickle=False) as z:
                _check_version(str(z["format_version"]))
                return cls(
                    str(z["statistic"]),
                    z["n_grid"],
                    z["p_grid"],
                    z["x_hat"],
                    json.loads(str(z["meta"])),
                )
        return cls.from_dict(json.loads(path.read_text()))


def _check_version(version) -> None:
    major = str(version).split(".")[0]
    if major != FORMAT_VERSION.split(".")[0]:
        raise ValueError(f"unsupported table format version {version!r}")


def solve_surface(surface: QuantileSurface, eps: float = EPS_TIE, solver: str = "CLARABEL") -> FittedTable:
    """Smoothest surface within the chi-square budget, monotone in ``p``.

    Free points are parametrised as ``x = mu + sigma * z`` so that the
    budget becomes the ball ``|z|^2 <= m + sqrt(2 m)``.
    """
    import cvxpy as cp

    K, P = surface.mu.shape
    mask = surface.anchor_mask
    free = np.flatnonzero(~mask.ravel())
    fixed = np.flatnonzero(mask.ravel())
    mu = surface.mu.ravel()
    sig = surface.sigma.ravel()[free]
    m = free.size
    if m == 0:
        raise ValueError("surface has no free points")
    bound = chi2_bound(m)

    A, b = monotonicity_constraints(surface.p_grid, surface.n_grid, eps)
    # keep only rows that involve a free entry
    Af = A[:, free]
    active = np.flatnonzero(np.diff(Af.indptr) > 0)
    Af = Af[active]
    rhs = b[active] - A[active] @ mu

    if K >= 4:
        G = jump_operator(surface)
        C = G[:, free] @ sps.diags(sig)
        d = G @ mu
        scale = max(float(abs(C).max()), float(np.abs(d).max()), 1e-300)
        C = C / scale
        d = d / scale
    else:
        C = None

    z = cp.Variable(m)
    smooth = cp.sum_squares(C @ z + d) if C is not None else 0
    objective = cp.Minimize(smooth + _TIE_BREAK * cp.sum_squares(z))
    constraints = [cp.sum_squares(z) <= bound]
    if Af.shape[0]:
        Az = (Af @ sps.diags(sig)).tocsr()
        # unit-scale rows; tiny sigmas otherwise look like zero coefficients
        row_scale = 1.0 / abs(Az).max(axis=1).toarray().ravel()
        Az = sps.diags(row_scale) @ Az
        rhs = row_scale * rhs
        # rows that no point of the ball can violate are dropped
        reach = np.sqrt(np.asarray(Az.multiply(Az).sum(axis=1)).ravel() * bound)
        live = rhs < reach * (1.0 + 1e-9)
        if live.any():
            constraints.append(Az[live] @ z <= rhs[live])
    problem = cp.Problem(objective, constraints)
    try:
        problem.solve(solver=solver)
    except cp.error.SolverError as exc:
        raise FitError(f"solver failure: {exc}", {"status": "error"}) from exc
    if problem.status not in (cp.OPTIMAL, cp.OPTIMAL_INACCURATE) or z.value is None:
        raise FitError(f"solver status {problem.status}", {"status": problem.status})

    x = mu.copy()
    x[free] = mu[free] + sig * z.value
    x = _repair_monotone(x.reshape(K, P), mask, eps)

    objective_mu = spline_jump_objective(surface, surface.mu) if K >= 4 else 0.0
    objective_x = spline_jump_objective(surface, x) if K >= 4 else 0.0
    chi2 = chi2_value(surface, x)
    # the means are feasible whenever they are already monotone; never do worse
    mu_feasible = max_violation(surface.mu, eps) == 0.0
    if mu_feasible and (objective_x > objective_mu or chi2 > bound):
        x = surface.mu.copy()
        objective_x, chi2 = objective_mu, 0.0
    violation = max_violation(x, eps)
    diagnostics = {
        "objective": objective_x,
        "objective_mu": objective_mu,
        "chi2": chi2,
        "chi2_bound": bound,
        "m": m,
        "max_violation": violation,
        "solver": solver,
        "status": problem.status,
    }
    if chi2 > bound + 1e-6 or violation > 1e-9:
        raise FitError("fitted surface violates its constraints", diagnostics)
    if not np.array_equal(x.ravel()[fixed], mu[fixed]):
        raise FitError("anchor points moved", diagnostics)
    meta = {
        "N": surface.N,
        "seeds": list(surface.seeds),
        "statistic": surface.statistic,
        "created": datetime.now(timezone.utc).isoformat(timespec="seconds"),
        "fit": diagnostics,
    }
    return FittedTable(surface.statistic, surface.n_grid, surface.p_grid, x, meta)


@dataclass
class CdfModel:
    """Monotone CDF of the statistic at one sample size."""

    n: int
    knots_x: np.ndarray
    knots_p: np.ndarray
    interpolant: MonotoneCubic = field(repr=False)

    @property
    def p_min(self) -> float:
        return float(self.knots_p[0])

    @property
    def p_max(self) -> float:
        return float(self.knots_p[-1])

    def __call__(self, x):
        return self.interpolant(x)

    def evaluate(self, x):
        """``(F(x), saturated)``; saturated where `x` is at or beyond the end knots."""
        x = np.asarray(x, dtype=np.float64)
        p = self.interpolant(x)
        sat = (x <= self.knots_x[0]) | (x >= self.knots_x[-1])
        if np.ndim(x) == 0:
            return float(p), bool(sat)
        return p, sat


def build_cdf(table: FittedTable, n: int) -> CdfModel:
    """Per-``n`` CDF through the fitted quantiles, interpolating off-grid ``n``."""
    n = int(n)
    if not table.n_grid[0] <= n <= table.n_max:
        raise ValueError(f"n={n} outside table range [{table.n_grid[0]}, {table.n_max}]")
    hit = np.flatnonzero(table.n_grid == n)
    if hit.size:
        x = table.x_hat[hit[0]].copy()
    else:
        x = _row_spline(table.n_grid)(table.x_hat, math.log(n))[0]
    p = table.p_grid
    # keep the points that continue a strictly increasing run
    keep = np.zeros(x.size, dtype=bool)
    last = -np.inf
    for j in range(x.size):
        if x[j] > last:
            keep[j] = True
            last = x[j]
    if keep.sum() < 3:
        raise ValueError(f"fewer than three distinct knots at n={n}")
    kx, kp = x[keep], p[keep]
    return CdfModel(n, kx, kp, MonotoneCubic(kx, kp))
