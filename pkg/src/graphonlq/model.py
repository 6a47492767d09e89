"""Problem instances: per-label coefficients, coupling kernels, validation.

A problem bundles the drift/diffusion data (A, B, C, D, beta, gamma), the
cost weights (Q, R, H), four coupling kernels (G_A, G_C for the dynamics,
G_Q, G_H for the cost), and a horizon.  Validation checks the standing
positivity assumptions: R uniformly positive definite with a declared
coercivity constant, Q and H positive semidefinite, and the combined
state-cost forms

    S_Q(i,j) = delta_ij Q_i + sqrt(w_i) G_Q^S(i,j) sqrt(w_j)

(and the H analogue) positive semidefinite, which is the discrete sufficient
condition for the running and terminal costs to be nonnegative over all
mean-consistent state fields.

Costs given in centered form,

    <Q^u (x^u - (Gtilde_Q xbar)^u), x^u - (Gtilde_Q xbar)^u>,

or in symmetric form, <(Gtilde_Q xbar)^u, Qbar^u (Gtilde_Q xbar)^u>, are
rewritten into the standard kernel form by ``from_centered`` and
``from_symmetric``.
"""
from __future__ import annotations

from dataclasses import dataclass, field, replace

import numpy as np

from .grid import LabelGrid
from .kernels import Kernel, check_flip_symmetry, compose, symmetrize, weighted_matrix, zero_kernel

#: Eigenvalue slack for positive-semidefiniteness checks (symmetric
#: eigensolver noise on double precision data).
PSD_TOL = -1e-8


@dataclass(frozen=True)
class CoefficientField:
    """Per-label model data sampled at the grid labels.

    Shapes: A, C, Q, H are (n, d, d); B, D are (n, d, m); R is (n, m, m);
    beta, gamma are (n, d).
    """

    A: np.ndarray
    B: np.ndarray
    C: np.ndarray
    D: np.ndarray
    Q: np.ndarray
    R: np.ndarray
    H: np.ndarray
    beta: np.ndarray
    gamma: np.ndarray

    def __post_init__(self):
        arrs = {name: np.asarray(getattr(self, name), dtype=float)
                for name in ("A", "B", "C", "D", "Q", "R", "H", "beta", "gamma")}
        n, d, _ = arrs["A"].shape
        m = arrs["B"].shape[2]
        expect = {"A": (n, d, d), "B": (n, d, m), "C": (n, d, d), "D": (n, d, m),
                  "Q": (n, d, d), "R": (n, m, m), "H": (n, d, d),
                  "beta": (n, d), "gamma": (n, d)}
        for name, arr in arrs.items():
            if arr.shape != expect[name]:
                raise ValueError(f"coefficient {name} has shape {arr.shape}, expected {expect[name]}")
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"coefficient {name} contains non-finite entries")
            object.__setattr__(self, name, arr)

    @property
    def n(self) -> int:
        return self.A.shape[0]

    @property
    def d(self) -> int:
        return self.A.shape[1]

    @property
    def m(self) -> int:
        return self.B.shape[2]


def coefficients_from_scalars(n, *, a=0.0, b=0.0, c=0.0, d=0.0, q=0.0, r=1.0, h=0.0,
                              beta=0.0, gamma=0.0) -> CoefficientField:
    """Scalar (d = m = 1) coefficient field, each value constant or per-label."""
    def lift(x, cols=1):
        x = np.broadcast_to(np.asarray(x, dtype=float), (n,)).astype(float)
        return x[:, None, None] if cols else x[:, None]
    return CoefficientField(A=lift(a), B=lift(b), C=lift(c), D=lift(d),
                            Q=lift(q), R=lift(r), H=lift(h),
                            beta=lift(beta, cols=0), gamma=lift(gamma, cols=0))


@dataclass(frozen=True)
class ProblemData:
    """A complete control problem instance on one label grid."""

    grid: LabelGrid
    coeffs: CoefficientField
    G_A: Kernel
    G_C: Kernel
    G_Q: Kernel
    G_H: Kernel
    t0: float
    T: float
    coercivity: float | None = None

    def __post_init__(self):
        n, d = self.coeffs.n, self.coeffs.d
        if self.grid.n != n:
            raise ValueError("coefficients and grid disagree on the number of labels")
        for name in ("G_A", "G_C", "G_Q", "G_H"):
            K = getattr(self, name)
            if K.grid.n != n or K.block_shape != (d, d):
                raise ValueError(f"kernel {name} has blocks {K.block_shape} on {K.grid.n} labels, "
                                 f"expected ({d}, {d}) on {n}")
        if not self.T > self.t0:
            raise ValueError(f"horizon must satisfy T > t0, got [{self.t0}, {self.T}]")
        if self.coercivity is None:
            eigs = np.linalg.eigvalsh(0.5 * (self.coeffs.R + self.coeffs.R.transpose(0, 2, 1)))
            object.__setattr__(self, "coercivity", float(eigs.min()))

    @property
    def n(self) -> int:
        return self.grid.n

    @property
    def d(self) -> int:
        return self.coeffs.d

    @property
    def m(self) -> int:
        return self.coeffs.m


def _min_eigs(mats: np.ndarray) -> np.ndarray:
    sym = 0.5 * (mats + mats.transpose(0, 2, 1))
    return np.linalg.eigvalsh(sym)[:, 0]


def _combined_matrix(diag: np.ndarray, G: Kernel) -> np.ndarray:
    n, d = diag.shape[0], diag.shape[1]
    S = weighted_matrix(symmetrize(G))
    S = 0.5 * (S + S.T)
    idx = np.arange(n)
    blocks = S.reshape(n, d, n, d)
    blocks[idx, :, idx, :] += diag
    return blocks.reshape(n * d, n * d)


@dataclass(frozen=True)
class ValidationReport:
    """Eigenvalue diagnostics for the positivity assumptions."""

    q_min_eigs: np.ndarray
    h_min_eigs: np.ndarray
    r_min_eigs: np.ndarray
    state_cost_min_eig: float
    terminal_cost_min_eig: float
    coercivity: float
    q_ok: bool
    h_ok: bool
    r_ok: bool
    state_cost_ok: bool
    terminal_cost_ok: bool
    worst_r_label: int
    passed: bool = field(init=False)

    def __post_init__(self):
        object.__setattr__(self, "passed",
                           self.q_ok and self.h_ok and self.r_ok
                           and self.state_cost_ok and self.terminal_cost_ok)

    def summary(self) -> dict:
        return {
            "passed": self.passed,
            "min_eig_Q": float(self.q_min_eigs.min()),
            "min_eig_H": float(self.h_min_eigs.min()),
            "min_eig_R": float(self.r_min_eigs.min()),
            "min_eig_state_cost": self.state_cost_min_eig,
            "min_eig_terminal_cost": self.terminal_cost_min_eig,
            "coercivity": self.coercivity,
            "worst_R_label": self.worst_r_label,
        }


def validate(p: ProblemData, tol: float = PSD_TOL) -> ValidationReport:
    """Report-only check of the positivity assumptions; never raises."""
    c = p.coeffs
    q_eigs = _min_eigs(c.Q)
    h_eigs = _min_eigs(c.H)
    r_eigs = _min_eigs(c.R)
    sq_min = float(np.linalg.eigvalsh(_combined_matrix(c.Q, p.G_Q))[0])
    sh_min = float(np.linalg.eigvalsh(_combined_matrix(c.H, p.G_H))[0])
    coerc = float(p.coercivity)
    return ValidationReport(
        q_min_eigs=q_eigs,
        h_min_eigs=h_eigs,
        r_min_eigs=r_eigs,
        state_cost_min_eig=sq_min,
        terminal_cost_min_eig=sh_min,
        coercivity=coerc,
        q_ok=bool(q_eigs.min() >= tol),
        h_ok=bool(h_eigs.min() >= tol),
        r_ok=bool(coerc > 0 and r_eigs.min() >= coerc + tol),
        state_cost_ok=bool(sq_min >= tol),
        terminal_cost_ok=bool(sh_min >= tol),
        worst_r_label=int(np.argmin(r_eigs)),
    )


def _centered_kernel(tilde_G: Kernel, weight: np.ndarray) -> Kernel:
    """Standard-form kernel for a centered penalty with per-label weight matrix.

    Returns  int tilde_G(u,w) W^w tilde_G(w,v) dw
             - W^u tilde_G(u,v) - tilde_G(u,v) W^v,
    the matrix-ordered expansion of <W (x - tilde_G xbar), x - tilde_G xbar>;
    for scalar data this is the familiar
    int W tilde_G tilde_G dw - (W^u + W^v) tilde_G(u,v).
    """
    grid = tilde_G.grid
    weighted = Kernel(grid, np.einsum("ijab,jbc->ijac", tilde_G.blocks, weight, optimize=True))
    quad = compose(weighted, tilde_G)
    cross = (np.einsum("iab,ijbc->ijac", weight, tilde_G.blocks, optimize=True)
             + np.einsum("ijab,jbc->ijac", tilde_G.blocks, weight, optimize=True))
    return Kernel(grid, quad.blocks - cross)


def from_centered(tilde_GQ: Kernel, tilde_GH: Kernel, coeffs: CoefficientField,
                  grid: LabelGrid, *, G_A: Kernel | None = None, G_C: Kernel | None = None,
                  t0: float = 0.0, T: float = 1.0, coercivity: float | None = None,
                  sym_tol: float = 1e-10) -> ProblemData:
    """Rewrite a centered cost into standard kernel form.

    The centering kernels must be flip-transpose symmetric (the rewrite is an
    identity only on that class); asymmetric inputs are rejected.  Dynamics
    kernels default to zero.
    """
    for name, K in (("tilde_GQ", tilde_GQ), ("tilde_GH", tilde_GH)):
        dev = check_flip_symmetry(K)
        if dev > sym_tol:
            raise ValueError(f"{name} is not flip-transpose symmetric (max deviation {dev:.3e})")
    d = coeffs.d
    G_Q = _centered_kernel(tilde_GQ, coeffs.Q)
    G_H = _centered_kernel(tilde_GH, coeffs.H)
    return ProblemData(grid=grid, coeffs=coeffs,
                       G_A=G_A if G_A is not None else zero_kernel(grid, d),
                       G_C=G_C if G_C is not None else zero_kernel(grid, d),
                       G_Q=G_Q, G_H=G_H, t0=t0, T=T, coercivity=coercivity)


def from_symmetric(tilde_GQ: Kernel, barQ: np.ndarray, tilde_GH: Kernel, barH: np.ndarray,
                   coeffs: CoefficientField, grid: LabelGrid, *,
                   G_A: Kernel | None = None, G_C: Kernel | None = None,
                   t0: float = 0.0, T: float = 1.0, coercivity: float | None = None) -> ProblemData:
    """Rewrite a cost quadratic in the smoothed mean field into standard form.

    Produces G_Q(u,v) = int tilde_GQ(u,w) barQ^w tilde_GQ(w,v) dw (and the H
    analogue).  The rewrite is exact when tilde_GQ(u,v) = tilde_GQ(v,u)^T.
    """
    barQ = np.asarray(barQ, dtype=float)
    barH = np.asarray(barH, dtype=float)
    n, d = coeffs.n, coeffs.d
    for name, arr in (("barQ", barQ), ("barH", barH)):
        if arr.shape != (n, d, d):
            raise ValueError(f"{name} has shape {arr.shape}, expected {(n, d, d)}")
    GQ = compose(Kernel(grid, np.einsum("ijab,jbc->ijac", tilde_GQ.blocks, barQ, optimize=True)), tilde_GQ)
    GH = compose(Kernel(grid, np.einsum("ijab,jbc->ijac", tilde_GH.blocks, barH, optimize=True)), tilde_GH)
    return ProblemData(grid=grid, coeffs=coeffs,
                       G_A=G_A if G_A is not None else zero_kernel(grid, d),
                       G_C=G_C if G_C is not None else zero_kernel(grid, d),
                       G_Q=GQ, G_H=GH, t0=t0, T=T, coercivity=coercivity)


def with_coefficients(p: ProblemData, **updates) -> ProblemData:
    """Copy of ``p`` with some coefficient arrays replaced."""
    return replace(p, coeffs=replace(p.coeffs, **updates))
