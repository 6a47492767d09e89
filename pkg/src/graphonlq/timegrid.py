"""Uniform time grids shared by every solver in the package."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class TimeGrid:
    """Uniform grid t0 = t_0 < ... < t_{n_steps} = T."""

    t0: float
    T: float
    n_steps: int

    def __post_init__(self):
        if self.n_steps < 1 or int(self.n_steps) != self.n_steps:
            raise ValueError(f"n_steps must be a positive integer, got {self.n_steps!r}")
        if not self.T > self.t0:
            raise ValueError(f"need T > t0, got [{self.t0}, {self.T}]")
        object.__setattr__(self, "n_steps", int(self.n_steps))

    @property
    def dt(self) -> float:
        return (self.T - self.t0) / self.n_steps

    @property
    def nodes(self) -> np.ndarray:
        return self.t0 + self.dt * np.arange(self.n_steps + 1)

    def refined(self, factor: int) -> "TimeGrid":
        return TimeGrid(self.t0, self.T, self.n_steps * factor)

    def node_index(self, t: float, tol: float = 1e-9) -> int:
        k = round((t - self.t0) / self.dt)
        if not (0 <= k <= self.n_steps) or abs(self.t0 + k * self.dt - t) > tol * max(1.0, abs(self.T)):
            raise ValueError(f"time {t} is not a node of {self}")
        return int(k)


def default_grid(t0: float, T: float, steps_per_unit: float = 1000.0) -> TimeGrid:
    """Grid with roughly ``steps_per_unit`` steps per unit of time."""
    return TimeGrid(t0, T, max(1, round((T - t0) * steps_per_unit)))
