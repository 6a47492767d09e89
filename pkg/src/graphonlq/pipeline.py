"""One-call solve of the full backward system plus feedback synthesis.

The four backward objects form a triangle: K feeds Kbar, both feed Y, all
three feed Lambda.  RK4 stage values always come from genuine solves on finer
grids, so the pipeline solves K once on the 4x grid and Kbar once on the 2x
grid and restricts; the feedback law is assembled on the 2x grid so that the
forward mean-flow RK4 also has exact half-step gains.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .control import AffinePolicy, build_feedback
from .kernel_riccati import BarKPath, solve_abstract_riccati
from .linear_terms import LambdaPath, YPath, solve_Lambda, solve_Y
from .model import ProblemData, ValidationReport, validate
from .riccati import KPath, gain_blocks, riccati_rhs, solve_standard_riccati
from .timegrid import TimeGrid


def _restrict_kpath(K_fine: KPath, stride: int, tg: TimeGrid, coeffs) -> KPath:
    values = np.ascontiguousarray(K_fine.values[::stride])
    max_residual = 0.0
    if tg.n_steps >= 2:
        deriv = (values[2:] - values[:-2]) / (2.0 * tg.dt)
        res = deriv - riccati_rhs(coeffs, values[1:-1])
        max_residual = float(np.max(np.abs(res)))
    return KPath(tg=tg, values=values, max_residual=max_residual,
                 min_eigenvalue=K_fine.min_eigenvalue)


@dataclass(frozen=True)
class SolutionBundle:
    """Solved backward system, optimal law, and certification auxiliaries."""

    problem: ProblemData
    tg: TimeGrid
    K: KPath
    barK: BarKPath
    Y: YPath
    Lam: LambdaPath
    law: AffinePolicy
    O_path: np.ndarray
    k_half: KPath
    bark_half: BarKPath
    validation: ValidationReport


def solve_system(p: ProblemData, tg: TimeGrid, *, norm_ceiling: float = 1e6) -> SolutionBundle:
    """Solve K, Kbar, Y, Lambda on ``tg`` and build the optimal feedback law.

    The returned paths live on ``tg``; K and Kbar are restrictions of solves
    on the 4x and 2x grids (more accurate than direct coarse solves and
    exactly what the stage lookups of the dependent equations consume).
    """
    rep = validate(p)
    tg2 = tg.refined(2)
    K4 = solve_standard_riccati(p, tg.refined(4))
    K2 = _restrict_kpath(K4, 2, tg2, p.coeffs)
    K1 = _restrict_kpath(K4, 4, tg, p.coeffs)

    barK2 = solve_abstract_riccati(K2, p, tg2, norm_ceiling=norm_ceiling, k_half=K4)
    barK1 = BarKPath(tg=tg, grid=p.grid, values=np.ascontiguousarray(barK2.values[::2]),
                     max_flip_deviation=barK2.max_flip_deviation,
                     op_norms=np.ascontiguousarray(barK2.op_norms[::2]),
                     max_residual=barK2.max_residual)

    Y1 = solve_Y(K1, barK1, p, tg, k_half=K2, bark_half=barK2)
    Lam1 = solve_Lambda(K1, Y1, p, tg)

    # law on the doubled grid: Y there only feeds mean-flow stage offsets, so
    # averaged Kbar stages (second order) are accurate enough
    Y2 = solve_Y(K2, barK2, p, tg2, k_half=K4, bark_half=None)
    law = build_feedback(K2, barK2, Y2, p, tg2)

    _, O_path = gain_blocks(p.coeffs, K1.values)
    return SolutionBundle(problem=p, tg=tg, K=K1, barK=barK1, Y=Y1, Lam=Lam1,
                          law=law, O_path=O_path, k_half=K2, bark_half=barK2,
                          validation=rep)
