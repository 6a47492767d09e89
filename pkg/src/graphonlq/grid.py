"""Discretization of the agent label space [0, 1].

Every integral over labels in this package is a weighted sum against one
shared quadrature rule.  A composite midpoint rule on a uniform grid is used
throughout: with ``n`` cells the label points are ``u_i = (i - 1/2)/n`` and
all weights equal ``1/n``.  The rule is second-order accurate for smooth
integrands and mirrors the ``u_i = i/N`` sampling used by finite populations.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class LabelGrid:
    """Quadrature grid on the label space [0, 1].

    Attributes
    ----------
    points : ndarray, shape (n,)
        Label points, strictly increasing, all inside (0, 1).
    weights : ndarray, shape (n,)
        Positive quadrature weights summing to one.
    """

    points: np.ndarray
    weights: np.ndarray

    def __post_init__(self):
        pts = np.asarray(self.points, dtype=float)
        wts = np.asarray(self.weights, dtype=float)
        if pts.ndim != 1 or wts.shape != pts.shape or pts.size == 0:
            raise ValueError("points and weights must be 1D arrays of equal positive length")
        if not (np.all(np.diff(pts) > 0) and pts[0] > 0.0 and pts[-1] < 1.0):
            raise ValueError("label points must be strictly increasing inside (0, 1)")
        if not np.all(wts > 0):
            raise ValueError("quadrature weights must be strictly positive")
        if abs(wts.sum() - 1.0) > 1e-12:
            raise ValueError(f"quadrature weights must sum to 1, got {wts.sum()!r}")
        object.__setattr__(self, "points", pts)
        object.__setattr__(self, "weights", wts)

    @property
    def n(self) -> int:
        return self.points.size

    def weighted_norm(self, field: np.ndarray) -> float:
        """Discrete L2(U) norm: sqrt(sum_i w_i |x_i|^2) over the leading axis."""
        field = np.asarray(field, dtype=float)
        sq = np.sum(field.reshape(field.shape[0], -1) ** 2, axis=1)
        return float(np.sqrt(np.sum(self.weights * sq)))


def build_grid(n: int) -> LabelGrid:
    """Midpoint-rule grid with ``n`` uniform cells on [0, 1].

    Raises
    ------
    ValueError
        If ``n`` is not a positive integer.
    """
    if int(n) != n or n < 1:
        raise ValueError(f"label count must be a positive integer, got {n!r}")
    n = int(n)
    points = (np.arange(n) + 0.5) / n
    weights = np.full(n, 1.0 / n)
    return LabelGrid(points=points, weights=weights)
