"""Matrix-valued kernels on [0,1]^2 and their discrete operator algebra.

A kernel G holds one d-by-e block per pair of label points, block (i, j)
approximating G(u_i, u_j).  It acts on label-indexed vector fields as a
Hilbert-Schmidt integral operator discretized with the grid quadrature,

    (G x)_i = sum_j w_j G(i, j) x_j,

and the algebra needed by the kernel-valued Riccati equation is kernel
composition with the same quadrature, the flip-transpose G(u,v) -> G(v,u)^T,
and the symmetrization G^S = (G + G-flip-transposed)/2.  The operator norm is
taken of the weighted embedding sqrt(w_i) G(i,j) sqrt(w_j), which represents
the operator isometrically on plain ell^2.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np

from .grid import LabelGrid

# Deterministic start vector for the power iteration; fixed odd constant so
# repeated calls are reproducible.
_POWER_SEED = 0x9E3779B97F4A7C15


@dataclass(frozen=True)
class Kernel:
    """Dense sampled kernel: ``blocks[i, j]`` is the d-by-e block at (u_i, u_j)."""

    grid: LabelGrid
    blocks: np.ndarray

    def __post_init__(self):
        blocks = np.asarray(self.blocks, dtype=float)
        n = self.grid.n
        if blocks.ndim != 4 or blocks.shape[0] != n or blocks.shape[1] != n:
            raise ValueError(f"blocks must have shape (n, n, d, e) with n={n}, got {blocks.shape}")
        if not np.all(np.isfinite(blocks)):
            raise ValueError("kernel blocks contain non-finite entries")
        object.__setattr__(self, "blocks", blocks)

    @property
    def block_shape(self) -> tuple[int, int]:
        return self.blocks.shape[2], self.blocks.shape[3]

    def is_square(self) -> bool:
        d, e = self.block_shape
        return d == e


def zero_kernel(grid: LabelGrid, d: int, e: int | None = None) -> Kernel:
    e = d if e is None else e
    return Kernel(grid, np.zeros((grid.n, grid.n, d, e)))


def constant_kernel(grid: LabelGrid, block: np.ndarray) -> Kernel:
    block = np.atleast_2d(np.asarray(block, dtype=float))
    return Kernel(grid, np.broadcast_to(block, (grid.n, grid.n) + block.shape).copy())


def sample_kernel(f: Callable[[float, float], np.ndarray], grid: LabelGrid) -> Kernel:
    """Sample ``f(u, v)`` at all grid point pairs.

    ``f`` may return a scalar (treated as a 1x1 block) or a matrix; every
    value must be finite.
    """
    n = grid.n
    first = np.atleast_2d(np.asarray(f(grid.points[0], grid.points[0]), dtype=float))
    blocks = np.empty((n, n) + first.shape)
    for i, u in enumerate(grid.points):
        for j, v in enumerate(grid.points):
            val = np.atleast_2d(np.asarray(f(u, v), dtype=float))
            if val.shape != first.shape:
                raise ValueError(f"kernel function returned inconsistent shapes {first.shape} vs {val.shape}")
            blocks[i, j] = val
    if not np.all(np.isfinite(blocks)):
        bad = np.argwhere(~np.isfinite(blocks).all(axis=(2, 3)))[0]
        raise ValueError(f"kernel function returned a non-finite value at label pair {tuple(bad)}")
    return Kernel(grid, blocks)


def apply_kernel(G: Kernel, x: np.ndarray, grid: LabelGrid | None = None) -> np.ndarray:
    """Quadrature action ``out_i = sum_j w_j G(i,j) x_j`` on a field of vectors.

    ``x`` has shape (n, e) (or (n,) for scalar blocks); the result has shape
    (n, d) matching the kernel's block rows.
    """
    grid = G.grid if grid is None else grid
    x = np.asarray(x, dtype=float)
    squeeze = x.ndim == 1
    if squeeze:
        x = x[:, None]
    d, e = G.block_shape
    if x.shape != (grid.n, e):
        raise ValueError(f"field shape {x.shape} does not match kernel blocks {(grid.n, e)}")
    out = np.einsum("j,ijab,jb->ia", grid.weights, G.blocks, x, optimize=True)
    return out[:, 0] if squeeze else out


def flip_transpose(G: Kernel) -> Kernel:
    """The kernel (u, v) -> G(v, u)^T; an involution."""
    return Kernel(G.grid, np.ascontiguousarray(G.blocks.transpose(1, 0, 3, 2)))


def symmetrize(G: Kernel) -> Kernel:
    """Projection onto flip-transpose-symmetric kernels: (G + G-flipped)/2."""
    if not G.is_square():
        raise ValueError("symmetrize requires square blocks")
    return Kernel(G.grid, 0.5 * (G.blocks + G.blocks.transpose(1, 0, 3, 2)))


def compose(G1: Kernel, G2: Kernel) -> Kernel:
    """Quadrature composition ``(G1 G2)(i,j) = sum_k w_k G1(i,k) G2(k,j)``."""
    if G1.grid.n != G2.grid.n:
        raise ValueError("kernels live on different grids")
    if G1.block_shape[1] != G2.block_shape[0]:
        raise ValueError(f"block shapes {G1.block_shape} and {G2.block_shape} do not compose")
    blocks = np.einsum("k,ikab,kjbc->ijac", G1.grid.weights, G1.blocks, G2.blocks, optimize=True)
    return Kernel(G1.grid, blocks)


def check_flip_symmetry(G: Kernel, tol: float = 0.0) -> float:
    """Max entrywise deviation of G from its flip-transpose; compare to ``tol``."""
    dev = float(np.max(np.abs(G.blocks - G.blocks.transpose(1, 0, 3, 2)))) if G.is_square() else np.inf
    return dev


def weighted_matrix(G: Kernel) -> np.ndarray:
    """The (n*d, n*e) matrix with blocks sqrt(w_i) G(i,j) sqrt(w_j)."""
    n = G.grid.n
    d, e = G.block_shape
    sw = np.sqrt(G.grid.weights)
    scaled = G.blocks * sw[:, None, None, None] * sw[None, :, None, None]
    return scaled.transpose(0, 2, 1, 3).reshape(n * d, n * e)


def operator_norm(G: Kernel, grid: LabelGrid | None = None,
                  tol: float = 1e-10, max_iter: int = 10_000) -> float:
    """Operator norm of the quadrature action, via power iteration on M^T M.

    M is the weighted embedding of the kernel; the iteration stops when the
    squared-norm estimate is relatively stable to ``tol``.  Non-convergence
    emits a RuntimeWarning and returns the best estimate.
    """
    M = weighted_matrix(G)
    scale = np.max(np.abs(M))
    if scale == 0.0:
        return 0.0
    A = M / scale
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(_POWER_SEED)))
    v = rng.standard_normal(A.shape[1])
    v /= np.linalg.norm(v)
    lam = 0.0
    for _ in range(max_iter):
        w = A.T @ (A @ v)
        nrm = np.linalg.norm(w)
        if nrm == 0.0:
            # v landed in the null space; restart from a fresh direction.
            v = rng.standard_normal(A.shape[1])
            v /= np.linalg.norm(v)
            continue
        v_new = w / nrm
        lam_new = float(v_new @ (A.T @ (A @ v_new)))
        if abs(lam_new - lam) <= tol * max(abs(lam_new), 1e-300):
            return float(np.sqrt(lam_new)) * scale
        lam, v = lam_new, v_new
    warnings.warn("operator_norm power iteration did not converge; returning best estimate",
                  RuntimeWarning, stacklevel=2)
    return float(np.sqrt(lam)) * scale
