from __future__ import annotations

import numpy as np

from graphonlq.grid import build_grid
from graphonlq.kernels import Kernel, symmetrize
from graphonlq.model import CoefficientField, ProblemData, validate


def make_random_problem(seed: int, n: int = 2, d: int = 1, m: int = 1, *,
                        with_offsets: bool = False, kernel_scale: float = 0.4,
                        T: float = 1.0) -> ProblemData:
    """Random validated instance: PSD costs, coercive R, small smooth kernels.

    Cost kernels start from flip-symmetric random blocks and are halved until
    the positivity check passes, so every returned problem is valid.
    """
    rng = np.random.default_rng(seed)
    grid = build_grid(n)

    def psd(scale=1.0, ridge=0.05):
        X = rng.standard_normal((n, d, d))
        return scale * np.einsum("iab,icb->iac", X, X) + ridge * np.eye(d)

    A = 0.8 * rng.standard_normal((n, d, d))
    B = rng.standard_normal((n, d, m))
    C = 0.4 * rng.standard_normal((n, d, d))
    D = 0.3 * rng.standard_normal((n, d, m))
    Rx = rng.standard_normal((n, m, m))
    R = np.einsum("iab,icb->iac", Rx, Rx) + np.eye(m) * (0.6 + 0.4 * rng.random())
    beta = rng.standard_normal((n, d)) if with_offsets else np.zeros((n, d))
    gamma = 0.5 * rng.standard_normal((n, d)) if with_offsets else np.zeros((n, d))
    coeffs = CoefficientField(A=A, B=B, C=C, D=D, Q=psd(), R=R, H=psd(0.5),
                              beta=beta, gamma=gamma)

    def rand_kernel(scale):
        return Kernel(grid, scale * rng.standard_normal((n, n, d, d)))

    G_A = rand_kernel(kernel_scale)
    G_C = rand_kernel(0.5 * kernel_scale)
    G_Q = symmetrize(rand_kernel(kernel_scale))
    G_H = symmetrize(rand_kernel(0.5 * kernel_scale))
    for _ in range(12):
        p = ProblemData(grid=grid, coeffs=coeffs, G_A=G_A, G_C=G_C,
                        G_Q=G_Q, G_H=G_H, t0=0.0, T=T)
        if validate(p).passed:
            return p
        G_Q = Kernel(grid, 0.5 * G_Q.blocks)
        G_H = Kernel(grid, 0.5 * G_H.blocks)
    raise RuntimeError(f"could not build a validated random problem for seed {seed}")
