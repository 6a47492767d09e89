"""The kernel-valued Riccati terminal-value problem.

The quadratic part of the value function acting on mean fields is a
d-by-d-matrix-valued kernel Kbar(t; u, v) solving

    dKbar/dt + F(t, Kbar) = 0,     Kbar(T) = G_H^S,

where, with K the per-label Riccati solution and U, O its gain blocks,

    F(t, k)(u,v) = Psi(K_t, k)(u,v)
                   - U^uT O_u^{-1} V(u,v) - V(v,u)^T O_v^{-1} U^v
                   - int_w V(w,u)^T O_w^{-1} V(w,v) dw,
    V(K_t, k)(u,v) = B^uT k(u,v) + D^uT K^u_t G_C(u,v),

and Psi collects the linear coupling of K and k through G_A, G_C and the
symmetrized cost kernel G_Q^S.  Solutions satisfy the flip-transpose symmetry
Kbar(u,v) = Kbar(v,u)^T; the solver projects each RK4 slice back onto that
manifold and records the pre-projection drift, which stays at roundoff level
for consistent data.

Stage values of K at half steps come from a dedicated solve of the per-label
system on the doubled time grid, not from interpolation, so the scheme keeps
its fourth order.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

# block contractions are tiny in the target regime; skip einsum path search
OPT = False

from .grid import LabelGrid
from .integrate import rk4_backward
from .kernels import Kernel, symmetrize
from .model import ProblemData
from .riccati import KPath, SolverDivergenceError, gain_blocks, solve_gain, solve_standard_riccati
from .timegrid import TimeGrid

#: Divergence guard on sup_t of the kernel operator norm.
NORM_CEILING = 1e6


def _psi_blocks(p: ProblemData, K: np.ndarray, kbar: np.ndarray, GQS: np.ndarray) -> np.ndarray:
    c = p.coeffs
    w = p.grid.weights
    GA, GC = p.G_A.blocks, p.G_C.blocks
    CtK = np.einsum("iba,ibc->iac", c.C, K, optimize=OPT)
    KC = np.einsum("iab,ibc->iac", K, c.C, optimize=OPT)
    out = np.einsum("iab,ijbc->ijac", K, GA, optimize=OPT)
    out += np.einsum("jiba,jbc->ijac", GA, K, optimize=OPT)
    out += np.einsum("iab,ijbc->ijac", CtK, GC, optimize=OPT)
    out += np.einsum("jiba,jbc->ijac", GC, KC, optimize=OPT)
    out += np.einsum("k,kiba,kbc,kjcd->ijad", w, GC, K, GC, optimize=OPT)
    out += np.einsum("iba,ijbc->ijac", c.A, kbar, optimize=OPT)
    out += np.einsum("jiba,jbc->ijac", kbar, c.A, optimize=OPT)
    out += np.einsum("k,kiba,kjbc->ijac", w, kbar, GA, optimize=OPT)
    out += np.einsum("k,kiba,kjbc->ijac", w, GA, kbar, optimize=OPT)
    out += GQS
    return out


def _v_blocks(p: ProblemData, K: np.ndarray, kbar: np.ndarray) -> np.ndarray:
    c = p.coeffs
    return (np.einsum("iba,...ijbc->...ijac", c.B, kbar, optimize=OPT)
            + np.einsum("iba,...ibc,ijcd->...ijad", c.D, K, p.G_C.blocks, optimize=OPT))


def _f_blocks(p: ProblemData, K: np.ndarray, kbar: np.ndarray, GQS: np.ndarray,
              where: str = "") -> np.ndarray:
    w = p.grid.weights
    U, O = gain_blocks(p.coeffs, K)
    OinvU = solve_gain(O, U, where)
    V = _v_blocks(p, K, kbar)
    OinvV = np.linalg.solve(O[:, None], V)
    out = _psi_blocks(p, K, kbar, GQS)
    out -= np.einsum("iab,ijac->ijbc", U, OinvV, optimize=OPT)
    out -= np.einsum("jiab,jac->ijbc", V, OinvU, optimize=OPT)
    out -= np.einsum("k,kiab,kjac->ijbc", w, V, OinvV, optimize=OPT)
    return out


def psi(K_slice: np.ndarray, kbar: Kernel, p: ProblemData) -> Kernel:
    """The linear-in-k part of F, as a kernel."""
    GQS = symmetrize(p.G_Q).blocks
    return Kernel(p.grid, _psi_blocks(p, np.asarray(K_slice, dtype=float), kbar.blocks, GQS))


def v_gain(K_slice: np.ndarray, kbar: Kernel, p: ProblemData) -> Kernel:
    """Mean-field gain kernel V (m-by-d blocks)."""
    return Kernel(p.grid, _v_blocks(p, np.asarray(K_slice, dtype=float), kbar.blocks))


def f_rhs(t_index: int, kbar: Kernel, K: KPath, p: ProblemData) -> Kernel:
    """Right-hand side F(t_k, kbar) of the kernel Riccati equation."""
    GQS = symmetrize(p.G_Q).blocks
    return Kernel(p.grid, _f_blocks(p, K.at(t_index), kbar.blocks, GQS))


def _spectral_norms(grid: LabelGrid, values: np.ndarray) -> np.ndarray:
    """Exact operator norms of each time slice of a kernel path."""
    n, d = grid.n, values.shape[-1]
    sw = np.sqrt(grid.weights)
    scaled = values * sw[None, :, None, None, None] * sw[None, None, :, None, None]
    mats = scaled.transpose(0, 1, 3, 2, 4).reshape(values.shape[0], n * d, n * d)
    return np.linalg.norm(mats, ord=2, axis=(1, 2))


@dataclass(frozen=True)
class BarKPath:
    """Kernel Riccati solution on a time grid.

    ``values`` has shape (n_steps + 1, n, n, d, d); the terminal slice equals
    the symmetrized terminal cost kernel bitwise.  ``max_flip_deviation`` is
    the largest pre-projection departure from flip-transpose symmetry seen
    during the solve, ``op_norms`` the per-node operator norms.
    """

    tg: TimeGrid
    grid: LabelGrid
    values: np.ndarray
    max_flip_deviation: float
    op_norms: np.ndarray
    max_residual: float

    def at(self, k: int) -> Kernel:
        return Kernel(self.grid, self.values[k])

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]


@dataclass(frozen=True)
class BarKDiagnostics:
    max_flip_deviation: float
    max_operator_norm: float
    max_residual: float

    def as_dict(self) -> dict:
        return {
            "max_flip_deviation": self.max_flip_deviation,
            "max_operator_norm": self.max_operator_norm,
            "max_residual": self.max_residual,
        }


def solve_abstract_riccati(K: KPath, p: ProblemData, tg: TimeGrid, *,
                           norm_ceiling: float = NORM_CEILING,
                           k_half: KPath | None = None) -> BarKPath:
    """Solve the kernel Riccati equation backward from Kbar(T) = G_H^S.

    ``K`` must be solved on ``tg``; half-step values of K come from ``k_half``
    (a solve on the doubled grid) or a fresh internal solve.

    Raises
    ------
    SolverDivergenceError
        On non-finite values or when the operator norm breaches the ceiling
        (valid problems have uniformly bounded solutions, so a breach means
        divergence).
    """
    if K.tg != tg:
        raise ValueError("K was solved on a different time grid")
    if k_half is None:
        k_half = solve_standard_riccati(p, tg.refined(2))
    if k_half.tg.n_steps != 2 * tg.n_steps:
        raise ValueError("k_half must live on the doubled time grid")

    GQS = symmetrize(p.G_Q).blocks
    nodes = tg.nodes
    # Frobenius norm of the weighted embedding dominates the spectral norm;
    # cheap per-step divergence guard.
    sww = np.sqrt(np.outer(p.grid.weights, p.grid.weights))

    def k_at(j2: int) -> np.ndarray:
        return K.values[j2 // 2] if j2 % 2 == 0 else k_half.values[j2]

    def rhs(j2, kbar):
        return -_f_blocks(p, k_at(j2), kbar, GQS, where=f" at t={k_half.tg.nodes[j2]:.6g}")

    state = {"max_dev": 0.0}

    def monitor(k, raw):
        if not np.all(np.isfinite(raw)):
            raise SolverDivergenceError(f"kernel Riccati solve blew up at t={nodes[k]:.6g}")
        dev = float(np.max(np.abs(raw - raw.transpose(1, 0, 3, 2))))
        state["max_dev"] = max(state["max_dev"], dev)
        frob = float(np.sqrt(np.sum((raw[..., :, :] * sww[:, :, None, None]) ** 2)))
        if frob > norm_ceiling:
            raise SolverDivergenceError(
                f"kernel Riccati norm breached ceiling {norm_ceiling:.3g} at t={nodes[k]:.6g}")

    def project(kbar):
        return 0.5 * (kbar + kbar.transpose(1, 0, 3, 2))

    terminal = symmetrize(p.G_H).blocks
    values = rk4_backward(rhs, terminal.copy(), nodes, post=project, monitor=monitor)
    values[-1] = terminal

    op_norms = _spectral_norms(p.grid, values)
    if float(op_norms.max()) > norm_ceiling:
        raise SolverDivergenceError(
            f"kernel Riccati operator norm {op_norms.max():.3g} exceeds ceiling {norm_ceiling:.3g}")

    max_residual = 0.0
    if tg.n_steps >= 2:
        deriv = (values[2:] - values[:-2]) / (2.0 * tg.dt)
        for k in range(1, tg.n_steps):
            res = deriv[k - 1] + _f_blocks(p, K.values[k], values[k], GQS)
            max_residual = max(max_residual, float(np.max(np.abs(res))))

    return BarKPath(tg=tg, grid=p.grid, values=values,
                    max_flip_deviation=state["max_dev"], op_norms=op_norms,
                    max_residual=max_residual)


def diagnostics(path: BarKPath) -> BarKDiagnostics:
    """Summary of the symmetry, boundedness and residual diagnostics."""
    return BarKDiagnostics(
        max_flip_deviation=path.max_flip_deviation,
        max_operator_norm=float(path.op_norms.max()),
        max_residual=path.max_residual,
    )
