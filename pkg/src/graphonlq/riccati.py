"""Per-label matrix Riccati terminal-value problems.

For every label u (independently; the equations are decoupled across labels)
the solver integrates

    dK^u/dt + Phi^u(K^u) - U^u(K^u)^T O^u(K^u)^{-1} U^u(K^u) = 0,
    K^u(T) = H^u,

backward with classical fixed-step RK4, where

    Phi^u(k) = A^uT k + k A^u + C^uT k C^u + Q^u,
    U^u(k)   = B^uT k + D^uT k C^u,
    O^u(k)   = R^u + D^uT k D^u.

Each combined RK4 slice is projected back onto symmetric matrices; positive
semidefiniteness is checked, not enforced, because a PSD failure signals bad
data or too coarse a step and must surface.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# block contractions are tiny in the target regime; skip einsum path search
OPT = False

from .integrate import rk4_backward
from .model import CoefficientField, ProblemData, PSD_TOL
from .timegrid import TimeGrid


class GainNotPositiveDefiniteError(RuntimeError):
    """The control-weight block O = R + D^T k D lost positive definiteness."""


class SolverDivergenceError(RuntimeError):
    """A backward solve produced non-finite values or breached its norm ceiling."""


def _sym(M: np.ndarray) -> np.ndarray:
    return 0.5 * (M + np.swapaxes(M, -1, -2))


def phi(coeffs: CoefficientField, i: int, kappa: np.ndarray) -> np.ndarray:
    """A_i^T k + k A_i + C_i^T k C_i + Q_i for one label."""
    A, C, Q = coeffs.A[i], coeffs.C[i], coeffs.Q[i]
    kappa = np.asarray(kappa, dtype=float)
    return A.T @ kappa + kappa @ A + C.T @ kappa @ C + Q


def u_gain(coeffs: CoefficientField, i: int, kappa: np.ndarray) -> np.ndarray:
    """B_i^T k + D_i^T k C_i for one label (m-by-d)."""
    kappa = np.asarray(kappa, dtype=float)
    return coeffs.B[i].T @ kappa + coeffs.D[i].T @ kappa @ coeffs.C[i]


def o_gain(coeffs: CoefficientField, i: int, kappa: np.ndarray) -> np.ndarray:
    """R_i + D_i^T k D_i for one label; raises if not positive definite."""
    kappa = np.asarray(kappa, dtype=float)
    O = _sym(coeffs.R[i] + coeffs.D[i].T @ kappa @ coeffs.D[i])
    if np.linalg.eigvalsh(O)[0] <= 0.0:
        raise GainNotPositiveDefiniteError(
            f"control-weight block is not positive definite at label index {i}")
    return O


def phi_all(coeffs: CoefficientField, K: np.ndarray) -> np.ndarray:
    """Vectorized phi over labels (and any leading axes of K)."""
    A, C, Q = coeffs.A, coeffs.C, coeffs.Q
    return (np.einsum("iba,...ibc->...iac", A, K, optimize=OPT)
            + np.einsum("...iab,ibc->...iac", K, A, optimize=OPT)
            + np.einsum("iba,...ibc,icd->...iad", C, K, C, optimize=OPT)
            + Q)


def gain_blocks(coeffs: CoefficientField, K: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized (U, O) over labels (and any leading axes of K)."""
    B, C, D, R = coeffs.B, coeffs.C, coeffs.D, coeffs.R
    U = (np.einsum("iba,...ibc->...iac", B, K, optimize=OPT)
         + np.einsum("iba,...ibc,icd->...iad", D, K, C, optimize=OPT))
    O = _sym(R + np.einsum("iba,...ibc,icd->...iad", D, K, D, optimize=OPT))
    return U, O


def solve_gain(O: np.ndarray, rhs: np.ndarray, where: str = "") -> np.ndarray:
    """O^{-1} rhs for stacked symmetric blocks, with a PD check.

    Shapes broadcast as in ``np.linalg.solve``; a non-PD block raises with
    the offending label index.
    """
    try:
        np.linalg.cholesky(O)
    except np.linalg.LinAlgError:
        eigs = np.linalg.eigvalsh(O)[..., 0]
        bad = np.argwhere(eigs <= 0.0)
        label = bad[0][-1] if bad.size else -1
        raise GainNotPositiveDefiniteError(
            f"control-weight block not positive definite at label index {label}{where}") from None
    return np.linalg.solve(O, rhs)


@dataclass(frozen=True)
class KPath:
    """Backward Riccati solution on a time grid.

    ``values`` has shape (n_steps + 1, n, d, d); the last slice equals the
    terminal weight H bitwise.  ``max_residual`` is the sup over interior
    nodes of the equation residual measured with central differences (an
    O(dt^2) diagnostic), ``min_eigenvalue`` the smallest eigenvalue found
    anywhere along the path.
    """

    tg: TimeGrid
    values: np.ndarray
    max_residual: float
    min_eigenvalue: float

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def at(self, k: int) -> np.ndarray:
        return self.values[k]


def riccati_rhs(coeffs: CoefficientField, K: np.ndarray, where: str = "") -> np.ndarray:
    """dK/dt = -(Phi - U^T O^{-1} U), vectorized over labels/leading axes."""
    U, O = gain_blocks(coeffs, K)
    X = solve_gain(O, U, where)
    quad = np.einsum("...iab,...iac->...ibc", U, X, optimize=OPT)
    return -(phi_all(coeffs, K) - quad)


def solve_standard_riccati(p: ProblemData, tg: TimeGrid, *,
                           psd_tol: float = PSD_TOL) -> KPath:
    """Solve the per-label Riccati system backward from K(T) = H.

    Raises
    ------
    GainNotPositiveDefiniteError
        If R + D^T K D loses positive definiteness at some label.
    SolverDivergenceError
        If the iteration produces non-finite values (blow-up), naming the
        time of failure.
    RuntimeError
        If the solution violates positive semidefiniteness beyond ``psd_tol``.
    """
    coeffs = p.coeffs
    nodes = tg.nodes
    nodes2 = tg.refined(2).nodes

    def rhs(j2, K):
        return riccati_rhs(coeffs, K, where=f" at t={nodes2[j2]:.6g}")

    def monitor(k, raw):
        if not np.all(np.isfinite(raw)):
            bad = int(np.argwhere(~np.isfinite(raw).all(axis=(1, 2)))[0][0])
            raise SolverDivergenceError(
                f"Riccati solve blew up at t={nodes[k]:.6g}, label index {bad}")

    values = rk4_backward(rhs, coeffs.H.copy(), nodes, post=_sym, monitor=monitor)
    values[-1] = coeffs.H

    eigs = np.linalg.eigvalsh(values)
    min_eig = float(eigs.min())
    if min_eig < psd_tol:
        k, i = np.unravel_index(int(np.argmin(eigs[..., 0])), eigs[..., 0].shape)
        raise RuntimeError(
            f"Riccati solution lost positive semidefiniteness at t={nodes[k]:.6g}, "
            f"label index {i} (min eigenvalue {min_eig:.3e})")

    max_residual = 0.0
    if tg.n_steps >= 2:
        interior = values[1:-1]
        deriv = (values[2:] - values[:-2]) / (2.0 * tg.dt)
        res = deriv - riccati_rhs(coeffs, interior)
        max_residual = float(np.max(np.abs(res)))

    return KPath(tg=tg, values=values, max_residual=max_residual, min_eigenvalue=min_eig)
