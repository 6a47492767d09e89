"""Feedback synthesis, mean flow, and the candidate value function.

The optimal policy is affine in the own state and the label-indexed mean
field,

    alpha^u(t, x, xbar) = -O_u^{-1} ( U^u x + int V(u,v) xbar^v dv + Gamma^u ),

so policies are represented by per-node gain arrays (state gain, mean-field
gain kernel, offset).  For any affine policy the expected states follow a
deterministic label-coupled linear ODE, the mean flow, which is integrated
with RK4; it is exact for the policy class, so Monte Carlo noise never enters
the mean-field terms of cost evaluations unless explicitly requested.
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

# block contractions are tiny in the target regime; skip einsum path search
OPT = False

from .kernel_riccati import BarKPath, _v_blocks
from .linear_terms import LambdaPath, YPath, gamma_all
from .model import ProblemData
from .riccati import KPath, gain_blocks, solve_gain
from .timegrid import TimeGrid


@dataclass(frozen=True)
class InitialCondition:
    """Per-label initial law with exact first and second moments.

    ``mean`` has shape (n, d) and ``cov`` (n, d, d); ``sampler``, when set,
    draws (M, d) samples for one label and must be consistent with the
    declared moments.
    """

    mean: np.ndarray
    cov: np.ndarray
    sampler: object | None = None
    tag: str = "gaussian"

    def __post_init__(self):
        mean = np.asarray(self.mean, dtype=float)
        cov = np.asarray(self.cov, dtype=float)
        if mean.ndim != 2 or cov.shape != mean.shape + (mean.shape[1],):
            raise ValueError(f"inconsistent moment shapes {mean.shape}, {cov.shape}")
        if np.max(np.abs(cov - cov.transpose(0, 2, 1))) > 0:
            raise ValueError("covariance blocks must be symmetric")
        if float(np.linalg.eigvalsh(cov)[..., 0].min()) < -1e-12:
            raise ValueError("covariance blocks must be positive semidefinite")
        object.__setattr__(self, "mean", mean)
        object.__setattr__(self, "cov", cov)

    @classmethod
    def deterministic(cls, values: np.ndarray) -> "InitialCondition":
        values = np.atleast_2d(np.asarray(values, dtype=float))
        d = values.shape[1]
        return cls(mean=values, cov=np.zeros((values.shape[0], d, d)), tag="deterministic")

    @classmethod
    def gaussian(cls, mean: np.ndarray, cov: np.ndarray) -> "InitialCondition":
        return cls(mean=np.atleast_2d(np.asarray(mean, dtype=float)),
                   cov=np.asarray(cov, dtype=float), tag="gaussian")

    @classmethod
    def custom(cls, sampler, mean: np.ndarray, cov: np.ndarray, tag: str = "custom") -> "InitialCondition":
        return cls(mean=np.atleast_2d(np.asarray(mean, dtype=float)),
                   cov=np.asarray(cov, dtype=float), sampler=sampler, tag=tag)

    def sample(self, rng: np.random.Generator, i: int, M: int) -> np.ndarray:
        if self.sampler is not None:
            draws = np.asarray(self.sampler(rng, i, M), dtype=float)
            if draws.shape != (M, self.mean.shape[1]):
                raise ValueError(f"sampler returned shape {draws.shape}")
            return draws
        if self.tag == "deterministic":
            return np.tile(self.mean[i], (M, 1))
        evals, evecs = np.linalg.eigh(self.cov[i])
        root = evecs @ np.diag(np.sqrt(np.clip(evals, 0.0, None))) @ evecs.T
        return self.mean[i] + rng.standard_normal((M, self.mean.shape[1])) @ root.T


@dataclass(frozen=True)
class AffinePolicy:
    """Affine control law alpha = gain_x x + sum_j w_j gain_mean(i,j) xbar_j + offset.

    Gain arrays are indexed by the nodes of ``tg``: gain_x (N+1, n, m, d),
    gain_mean (N+1, n, n, m, d), offset (N+1, n, m).
    """

    tg: TimeGrid
    gain_x: np.ndarray
    gain_mean: np.ndarray
    offset: np.ndarray

    @classmethod
    def zero(cls, p: ProblemData, tg: TimeGrid) -> "AffinePolicy":
        N = tg.n_steps + 1
        n, d, m = p.n, p.d, p.m
        return cls(tg=tg, gain_x=np.zeros((N, n, m, d)),
                   gain_mean=np.zeros((N, n, n, m, d)), offset=np.zeros((N, n, m)))

    def shifted(self, delta) -> "AffinePolicy":
        """Add a constant control shift (scalar or m-vector)."""
        delta = np.broadcast_to(np.asarray(delta, dtype=float), self.offset.shape[-1:])
        return replace(self, offset=self.offset + delta)

    def scaled_gains(self, factor: float) -> "AffinePolicy":
        return replace(self, gain_x=factor * self.gain_x, gain_mean=factor * self.gain_mean)

    def without_mean_coupling(self) -> "AffinePolicy":
        return replace(self, gain_mean=np.zeros_like(self.gain_mean))

    def stage(self, j2: int, base: TimeGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """Gain arrays at doubled-grid index ``j2`` of ``base``.

        Exact when the policy lives on the doubled grid; averaged between
        neighbouring nodes when it lives on ``base`` itself.
        """
        if self.tg.n_steps == 2 * base.n_steps:
            return self.gain_x[j2], self.gain_mean[j2], self.offset[j2]
        if self.tg == base:
            k, odd = divmod(j2, 2)
            if not odd:
                return self.gain_x[k], self.gain_mean[k], self.offset[k]
            return (0.5 * (self.gain_x[k] + self.gain_x[k + 1]),
                    0.5 * (self.gain_mean[k] + self.gain_mean[k + 1]),
                    0.5 * (self.offset[k] + self.offset[k + 1]))
        raise ValueError("policy grid is neither the simulation grid nor its doubling")

    def at_node(self, k: int, base: TimeGrid) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        return self.stage(2 * k, base)


#: The optimal law is an affine policy; synonym for discoverability.
FeedbackLaw = AffinePolicy


def build_feedback(K: KPath, barK: BarKPath, Y: YPath, p: ProblemData,
                   tg: TimeGrid) -> AffinePolicy:
    """Optimal feedback gains -O^{-1}U, -O^{-1}V, -O^{-1}Gamma on ``tg``."""
    if not (K.tg == barK.tg == Y.tg == tg):
        raise ValueError("K, barK, Y must share the target time grid")
    c = p.coeffs
    U, O = gain_blocks(c, K.values)
    V = _v_blocks(p, K.values, barK.values)
    gam = gamma_all(c, K.values, Y.values)
    gain_x = -solve_gain(O, U)
    gain_mean = -np.linalg.solve(O[:, :, None], V)
    offset = -solve_gain(O, gam[..., None])[..., 0]
    return AffinePolicy(tg=tg, gain_x=gain_x, gain_mean=gain_mean, offset=offset)


@dataclass(frozen=True)
class MeanFlow:
    """Expected states (and expected controls) of an affine policy.

    ``states`` has shape (N+1, n, d), ``control_means`` (N+1, n, m), on the
    nodes of ``tg``.
    """

    tg: TimeGrid
    states: np.ndarray
    control_means: np.ndarray

    def at(self, k: int) -> np.ndarray:
        return self.states[k]


def solve_mean_flow(p: ProblemData, policy: AffinePolicy, init: InitialCondition,
                    tg: TimeGrid) -> MeanFlow:
    """Forward RK4 for the expectation of the closed-loop states.

    Exact (up to integration error) for affine policies: the martingale part
    drops and the mean field closes on itself.
    """
    c = p.coeffs
    w = p.grid.weights
    GA = p.G_A.blocks

    def control_mean(xbar, arrays):
        gx, gm, off = arrays
        return (np.einsum("iab,ib->ia", gx, xbar, optimize=OPT)
                + np.einsum("j,ijab,jb->ia", w, gm, xbar, optimize=OPT) + off)

    def rhs(j2, xbar):
        arrays = policy.stage(j2, tg)
        am = control_mean(xbar, arrays)
        return (np.einsum("iab,ib->ia", c.A, xbar, optimize=OPT)
                + np.einsum("j,ijab,jb->ia", w, GA, xbar, optimize=OPT)
                + c.beta
                + np.einsum("iab,ib->ia", c.B, am, optimize=OPT))

    states = rk4_forward_states(rhs, init.mean, tg)
    controls = np.empty((tg.n_steps + 1, p.n, p.m))
    for k in range(tg.n_steps + 1):
        controls[k] = control_mean(states[k], policy.at_node(k, tg))
    if not np.all(np.isfinite(states)):
        raise RuntimeError("mean flow diverged (non-finite values)")
    return MeanFlow(tg=tg, states=states, control_means=controls)


def rk4_forward_states(rhs, initial, tg: TimeGrid) -> np.ndarray:
    from .integrate import rk4_forward
    return rk4_forward(rhs, np.asarray(initial, dtype=float), tg.nodes)


def value_function(t0: float, init: InitialCondition, K: KPath, barK: BarKPath,
                   Y: YPath, Lam: LambdaPath, grid) -> float:
    """Candidate optimal value at time ``t0`` for initial law ``init``.

    Uses the exact moment identity E<xi, K xi> = xibar^T K xibar + tr(K Cov).
    """
    k0 = K.tg.node_index(t0)
    w = grid.weights
    Kv, bKv, Yv, Lv = K.values[k0], barK.values[k0], Y.values[k0], Lam.values[k0]
    xb, cov = init.mean, init.cov
    own = np.einsum("ia,iab,ib->i", xb, Kv, xb, optimize=OPT) \
        + np.einsum("iab,iba->i", Kv, cov, optimize=OPT)
    term1 = float(np.sum(w * own))
    term2 = float(np.einsum("i,j,ia,ijab,jb->", w, w, xb, bKv, xb, optimize=OPT))
    term3 = 2.0 * float(np.sum(w * np.einsum("ia,ia->i", Yv, xb, optimize=OPT)))
    term4 = float(np.sum(w * Lv))
    return term1 + term2 + term3 + term4
