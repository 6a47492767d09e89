"""Fixed-step integrators used by all solvers.

Terminal-value problems are integrated backward with classical RK4.  The
right-hand side is sampled on a grid twice as fine as the solution grid so
the half-step stage values come from genuine solves rather than
interpolation; callers pass a ``stage_data`` lookup indexed on that doubled
grid.
"""
from __future__ import annotations

from typing import Callable

import numpy as np
from scipy.integrate import cumulative_simpson


def rk4_backward(rhs: Callable, terminal: np.ndarray, nodes: np.ndarray,
                 post: Callable | None = None,
                 monitor: Callable | None = None) -> np.ndarray:
    """Integrate dX/dt = rhs(j2, X) backward from X(T) = terminal.

    ``nodes`` are the solution times; ``rhs`` receives the index ``j2`` of the
    evaluation time on the doubled grid (j2 = 2k at node k, odd between
    nodes).  ``post`` (if given) maps each freshly combined slice onto its
    manifold (e.g. symmetrization); ``monitor(k, raw)`` sees the slice before
    projection.
    """
    n_steps = len(nodes) - 1
    dt = nodes[1] - nodes[0]
    out = np.empty((n_steps + 1,) + terminal.shape)
    out[n_steps] = terminal
    x = terminal
    for k in range(n_steps - 1, -1, -1):
        h = -dt
        k1 = rhs(2 * k + 2, x)
        k2 = rhs(2 * k + 1, x + 0.5 * h * k1)
        k3 = rhs(2 * k + 1, x + 0.5 * h * k2)
        k4 = rhs(2 * k, x + h * k3)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        if monitor is not None:
            monitor(k, x)
        if post is not None:
            x = post(x)
        out[k] = x
    return out


def rk4_forward(rhs: Callable, initial: np.ndarray, nodes: np.ndarray) -> np.ndarray:
    """Integrate dX/dt = rhs(j2, X) forward from X(t0) = initial.

    Same doubled-grid indexing convention as :func:`rk4_backward`.
    """
    n_steps = len(nodes) - 1
    dt = nodes[1] - nodes[0]
    out = np.empty((n_steps + 1,) + np.shape(initial))
    out[0] = initial
    x = np.asarray(initial, dtype=float)
    for k in range(n_steps):
        k1 = rhs(2 * k, x)
        k2 = rhs(2 * k + 1, x + 0.5 * dt * k1)
        k3 = rhs(2 * k + 1, x + 0.5 * dt * k2)
        k4 = rhs(2 * k + 2, x + dt * k3)
        x = x + (dt / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        out[k + 1] = x
    return out


def tail_integrals(values: np.ndarray, dt: float) -> np.ndarray:
    """Composite-Simpson integrals from each node to the final node.

    ``values`` has time on the first axis; the result has the same shape with
    entry k equal to the integral of the sampled function over [t_k, T].
    """
    cum = cumulative_simpson(values, dx=dt, axis=0, initial=0.0)
    return cum[-1] - cum
