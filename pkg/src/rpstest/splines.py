"""Cubic splines used by the table fit.

:class:`KnotSpline` is an interpolating cubic spline with not-a-knot end
conditions, expressed as linear operators on the knot values so that both
evaluation and the third-derivative jumps can be written as matrices.
:class:`MonotoneCubic` is a shape-preserving piecewise cubic Hermite
interpolant with Fritsch-Butland slopes.
"""

from __future__ import annotations

import numpy as np


class KnotSpline:
    """Not-a-knot cubic spline on fixed abscissae, linear in the ordinates.

    With fewer than four knots the spline degenerates to the interpolating
    polynomial of degree ``K - 1``.
    """

    def __init__(self, g):
        g = np.asarray(g, dtype=np.float64)
        if g.ndim != 1 or g.size < 1:
            raise ValueError("need a non-empty 1-d abscissa")
        if np.any(np.diff(g) <= 0.0):
            raise ValueError("abscissae must be strictly increasing")
        self.g = g
        self.K = g.size
        self.h = np.diff(g)
        self._moments = self._moment_operator() if self.K >= 4 else None

    def _moment_operator(self) -> np.ndarray:
        # second derivatives M = S @ y
        K, h = self.K, self.h
        A = np.zeros((K, K))
        B = np.zeros((K, K))
        for i in range(1, K - 1):
            A[i, i - 1] = h[i - 1]
            A[i, i] = 2.0 * (h[i - 1] + h[i])
            A[i, i + 1] = h[i]
            B[i, i - 1] = 6.0 / h[i - 1]
            B[i, i] = -6.0 / h[i - 1] - 6.0 / h[i]
            B[i, i + 1] = 6.0 / h[i]
        # third derivative continuous at the second and second-to-last knots
        A[0, :3] = [h[1], -(h[0] + h[1]), h[0]]
        A[-1, -3:] = [h[-1], -(h[-2] + h[-1]), h[-2]]
        return np.linalg.solve(A, B)

    def third_derivative_operator(self) -> np.ndarray:
        """Rows give the (constant) third derivative on each interval."""
        if self._moments is None:
            return np.zeros((max(self.K - 1, 0), self.K))
        S = self._moments
        return (S[1:] - S[:-1]) / self.h[:, None]

    def jump_matrix(self) -> np.ndarray:
        """``J`` with ``(J @ y)[i]`` the third-derivative jump at interior knot ``i+1``."""
        if self.K < 4:
            return np.zeros((max(self.K - 2, 0), self.K))
        D = self.third_derivative_operator()
        return D[1:] - D[:-1]

    def weights(self, t) -> np.ndarray:
        """Matrix ``W`` with ``W @ y`` the spline value at each point of `t`."""
        t = np.atleast_1d(np.asarray(t, dtype=np.float64))
        K = self.K
        W = np.zeros((t.size, K))
        if K < 4:
            # Lagrange basis of the interpolating polynomial
            for j in range(K):
                others = np.delete(self.g, j)
                W[:, j] = np.prod(
                    (t[:, None] - others) / (self.g[j] - others), axis=1
                )
            return W
        S = self._moments
        j = np.clip(np.searchsorted(self.g, t, side="right") - 1, 0, K - 2)
        h = self.h[j]
        a = self.g[j + 1] - t
        b = t - self.g[j]
        rows = np.arange(t.size)
        W[rows, j] += a / h
        W[rows, j + 1] += b / h
        cm0 = (a**3 / h - a * h) / 6.0
        cm1 = (b**3 / h - b * h) / 6.0
        W += cm0[:, None] * S[j] + cm1[:, None] * S[j + 1]
        return W

    def __call__(self, y, t):
        return self.weights(t) @ np.asarray(y, dtype=np.float64)


def _edge_slope(h0, h1, d0, d1):
    # three-point end slope, limited to keep the end interval monotone
    s = ((2.0 * h0 + h1) * d0 - h0 * d1) / (h0 + h1)
    if np.sign(s) != np.sign(d0):
        return 0.0
    if np.sign(d0) != np.sign(d1) and abs(s) > 3.0 * abs(d0):
        return 3.0 * d0
    return s


def fritsch_butland_slopes(x: np.ndarray, y: np.ndarray) -> np.ndarray:
    h = np.diff(x)
    d = np.diff(y) / h
    m = np.zeros_like(y)
    if x.size == 2:
        m[:] = d[0]
        return m
    w1 = 2.0 * h[1:] + h[:-1]
    w2 = h[1:] + 2.0 * h[:-1]
    same = (np.sign(d[:-1]) == np.sign(d[1:])) & (d[:-1] != 0.0) & (d[1:] != 0.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        harm = (w1 + w2) / (w1 / d[:-1] + w2 / d[1:])
    m[1:-1] = np.where(same, harm, 0.0)
    m[0] = _edge_slope(h[0], h[1], d[0], d[1])
    m[-1] = _edge_slope(h[-1], h[-2], d[-1], d[-2])
    return m


class MonotoneCubic:
    """Piecewise cubic Hermite interpolant that preserves monotone data.

    Outside ``[x[0], x[-1]]`` the end values are returned.
    """

    def __init__(self, x, y):
        x = np.asarray(x, dtype=np.float64)
        y = np.asarray(y, dtype=np.float64)
        if x.ndim != 1 or x.shape != y.shape or x.size < 2:
            raise ValueError("need matching 1-d arrays with at least two points")
        if np.any(np.diff(x) <= 0.0):
            raise ValueError("x must be strictly increasing")
        self.x = x
        self.y = y
        self.m = fritsch_butland_slopes(x, y)

    def __call__(self, t):
        t = np.asarray(t, dtype=np.float64)
        x, y, m = self.x, self.y, self.m
        tc = np.clip(t, x[0], x[-1])
        j = np.clip(np.searchsorted(x, tc, side="right") - 1, 0, x.size - 2)
        h = x[j + 1] - x[j]
        s = (tc - x[j]) / h
        s2 = s * s
        s3 = s2 * s
        out = (
            (2 * s3 - 3 * s2 + 1) * y[j]
            + (s3 - 2 * s2 + s) * h * m[j]
            + (-2 * s3 + 3 * s2) * y[j + 1]
            + (s3 - s2) * h * m[j + 1]
        )
        # exact at the knots and at the clamped ends
        out = np.where(tc == x[j], y[j], out)
        out = np.where(tc == x[j + 1], y[j + 1], out)
        return float(out) if out.ndim == 0 else out
