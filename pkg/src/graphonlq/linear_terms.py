"""Linear terminal-value problems closing the backward system.

Given the per-label Riccati path K and the kernel path Kbar, the affine part
of the value function solves, backward from Y(T) = 0,

    dY^u/dt + A^uT Y^u + int G_A(v,u)^T Y^v dv
            + K^u beta^u + C^uT K^u gamma^u
            + int G_C(v,u)^T K^v gamma^v dv + int Kbar(u,v) beta^v dv
            - U^uT O_u^{-1} Gamma^u(Y) - int V(v,u)^T O_v^{-1} Gamma^v(Y) dv = 0,

with Gamma^u(y) = D^uT K^u gamma^u + B^uT y^u, and the scalar field

    dLambda^u/dt + <K^u gamma^u, gamma^u> + 2 <Y^u, beta^u>
                 - <Gamma^u, O_u^{-1} Gamma^u> = 0,    Lambda(T) = 0.

Lambda has no self-coupling, so it is computed by composite-Simpson tail
quadrature of the sampled integrand rather than by time stepping.  When
beta = gamma = 0 both solutions are identically zero and the solvers
short-circuit to exact zeros.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# block contractions are tiny in the target regime; skip einsum path search
OPT = False

from .integrate import rk4_backward, tail_integrals
from .kernel_riccati import BarKPath, _v_blocks
from .model import CoefficientField, ProblemData
from .riccati import KPath, gain_blocks, solve_gain, solve_standard_riccati
from .timegrid import TimeGrid


def gamma_term(coeffs: CoefficientField, i: int, K_slice: np.ndarray, y: np.ndarray) -> np.ndarray:
    """D_i^T K_i gamma_i + B_i^T y_i for one label (m-vector)."""
    K_i = np.asarray(K_slice, dtype=float)
    return coeffs.D[i].T @ K_i @ coeffs.gamma[i] + coeffs.B[i].T @ np.asarray(y, dtype=float)


def gamma_all(coeffs: CoefficientField, K: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """Vectorized Gamma over labels (and any leading axes)."""
    return (np.einsum("iba,...ibc,ic->...ia", coeffs.D, K, coeffs.gamma, optimize=OPT)
            + np.einsum("iba,...ib->...ia", coeffs.B, Y, optimize=OPT))


@dataclass(frozen=True)
class YPath:
    """Affine value-function term on a time grid; shape (n_steps + 1, n, d)."""

    tg: TimeGrid
    values: np.ndarray
    max_residual: float = 0.0

    def at(self, k: int) -> np.ndarray:
        return self.values[k]


@dataclass(frozen=True)
class LambdaPath:
    """Constant value-function term on a time grid; shape (n_steps + 1, n)."""

    tg: TimeGrid
    values: np.ndarray

    def at(self, k: int) -> np.ndarray:
        return self.values[k]


def _drives(p: ProblemData, K: np.ndarray, barK: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """State-independent driving field of the Y equation and D^T K gamma.

    K has shape (..., n, d, d) and barK (..., n, n, d, d); returns arrays of
    shape (..., n, d) and (..., n, m).
    """
    c = p.coeffs
    w = p.grid.weights
    drive = (np.einsum("...iab,ib->...ia", K, c.beta, optimize=OPT)
             + np.einsum("iba,...ibc,ic->...ia", c.C, K, c.gamma, optimize=OPT)
             + np.einsum("j,jiba,...jbc,jc->...ia", w, p.G_C.blocks, K, c.gamma, optimize=OPT)
             + np.einsum("j,...ijab,jb->...ia", w, barK, c.beta, optimize=OPT))
    dkg = np.einsum("iba,...ibc,ic->...ia", c.D, K, c.gamma, optimize=OPT)
    return drive, dkg


def solve_Y(K: KPath, barK: BarKPath, p: ProblemData, tg: TimeGrid, *,
            k_half: KPath | None = None, bark_half: BarKPath | None = None) -> YPath:
    """Solve the Y equation backward from Y(T) = 0 with RK4.

    Half-step stage values of K come from ``k_half`` (or a fresh solve on the
    doubled grid); stage values of Kbar come from ``bark_half`` when given,
    otherwise from averaging neighbouring nodes of ``barK`` (second-order at
    the stages, which only matters if fourth-order Y is required).
    """
    if K.tg != tg or barK.tg != tg:
        raise ValueError("K and barK must be solved on the target time grid")
    c = p.coeffs
    n, d = p.n, p.d
    if not (np.any(c.beta) or np.any(c.gamma)):
        return YPath(tg=tg, values=np.zeros((tg.n_steps + 1, n, d)), max_residual=0.0)

    if k_half is None:
        k_half = solve_standard_riccati(p, tg.refined(2))

    def k_at(j2):
        return K.values[j2 // 2] if j2 % 2 == 0 else k_half.values[j2]

    def bark_at(j2):
        if j2 % 2 == 0:
            return barK.values[j2 // 2]
        if bark_half is not None:
            return bark_half.values[j2]
        return 0.5 * (barK.values[j2 // 2] + barK.values[j2 // 2 + 1])

    w = p.grid.weights
    GA = p.G_A.blocks

    def rhs(j2, y):
        Kt = k_at(j2)
        bKt = bark_at(j2)
        U, O = gain_blocks(c, Kt)
        V = _v_blocks(p, Kt, bKt)
        drive, dkg = _drives(p, Kt, bKt)
        gam = dkg + np.einsum("iba,ib->ia", c.B, y, optimize=OPT)
        oinv_gam = solve_gain(O, gam[..., None])[..., 0]
        ftilde = (np.einsum("iba,ib->ia", c.A, y, optimize=OPT)
                  + np.einsum("j,jiba,jb->ia", w, GA, y, optimize=OPT)
                  + drive
                  - np.einsum("iab,ia->ib", U, oinv_gam, optimize=OPT)
                  - np.einsum("j,jiab,ja->ib", w, V, oinv_gam, optimize=OPT))
        return -ftilde

    values = rk4_backward(rhs, np.zeros((n, d)), tg.nodes)
    values[-1] = 0.0

    max_residual = 0.0
    if tg.n_steps >= 2:
        deriv = (values[2:] - values[:-2]) / (2.0 * tg.dt)
        for k in range(1, tg.n_steps):
            res = deriv[k - 1] - rhs(2 * k, values[k])
            max_residual = max(max_residual, float(np.max(np.abs(res))))

    return YPath(tg=tg, values=values, max_residual=max_residual)


def lambda_integrand(p: ProblemData, K: np.ndarray, Y: np.ndarray) -> np.ndarray:
    """<K gamma, gamma> + 2 <Y, beta> - <Gamma, O^{-1} Gamma> per label."""
    c = p.coeffs
    kg = np.einsum("...iab,ib->...ia", K, c.gamma, optimize=OPT)
    term1 = np.einsum("...ia,ia->...i", kg, c.gamma, optimize=OPT)
    term2 = 2.0 * np.einsum("...ia,ia->...i", Y, c.beta, optimize=OPT)
    gam = gamma_all(c, K, Y)
    _, O = gain_blocks(c, K)
    oinv_gam = solve_gain(O, gam[..., None])[..., 0]
    term3 = np.einsum("...ia,...ia->...i", gam, oinv_gam, optimize=OPT)
    return term1 + term2 - term3


def solve_Lambda(K: KPath, Y: YPath, p: ProblemData, tg: TimeGrid) -> LambdaPath:
    """Tail quadrature of the Lambda integrand; terminal value exactly zero."""
    if K.tg != tg or Y.tg != tg:
        raise ValueError("K and Y must live on the target time grid")
    n = p.n
    c = p.coeffs
    if not (np.any(c.beta) or np.any(c.gamma)):
        return LambdaPath(tg=tg, values=np.zeros((tg.n_steps + 1, n)))
    integrand = lambda_integrand(p, K.values, Y.values)
    values = tail_integrals(integrand, tg.dt)
    values[-1] = 0.0
    return LambdaPath(tg=tg, values=values)


def solve_linear_closers(K: KPath, barK: BarKPath, p: ProblemData, tg: TimeGrid, *,
                         k_half: KPath | None = None,
                         bark_half: BarKPath | None = None) -> tuple[YPath, LambdaPath]:
    """Solve Y then Lambda (Y never reads Lambda; Kbar never reads Y)."""
    Y = solve_Y(K, barK, p, tg, k_half=k_half, bark_half=bark_half)
    return Y, solve_Lambda(K, Y, p, tg)
