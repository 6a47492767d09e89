"""Monte Carlo simulation, cost evaluation, and optimality certification.

Paths are advanced by Euler-Maruyama (weak order one, which is what matters
for the expectation-level checks here).  Labels decouple once the mean field
is supplied by the deterministic mean flow, so each label simulates
independently on its own counter-based random stream: label i draws from
``Philox(SeedSequence(master_seed, spawn_key=(i,)))``, first the initial
states, then one increment block per step, and path p always reads row p.
Results are therefore bitwise reproducible for any number of worker threads
(threads partition labels; per-label arithmetic is unchanged).

The certification report compares three numbers that the decomposition of the
cost ties together: the simulated cost J(alpha), the candidate value V, and
the simulated quadratic penalty

    int_t^T int_U E < O (alpha - alpha_hat_form), alpha - alpha_hat_form >,

where alpha_hat_form is the optimal feedback form evaluated along the test
policy's own trajectories.  J - V should equal the penalty for every affine
policy, and vanish at the optimum.
"""
from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass

import numpy as np

# block contractions are tiny in the target regime; skip einsum path search
OPT = False

from .control import AffinePolicy, InitialCondition, MeanFlow, solve_mean_flow, value_function
from .model import ProblemData
from .timegrid import TimeGrid


def _label_rng(master_seed: int, i: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(master_seed, spawn_key=(i,))))


@dataclass(frozen=True)
class Ensemble:
    """Per-label Monte Carlo paths plus streaming cost accumulators.

    ``run_cost[i, p]`` is the time-trapezoid of <X,QX> + <alpha,R alpha>
    along path p of label i, ``terminal_cost[i, p]`` the terminal quadratic,
    ``penalty[i, p]`` (when a reference law was supplied) the trapezoid of
    the weighted squared control deviation.  ``mean_path``/``second_moment``
    hold per-node empirical moments; full paths are kept only when requested.
    """

    tg: TimeGrid
    M: int
    master_seed: int
    run_cost: np.ndarray
    terminal_cost: np.ndarray
    terminal_states: np.ndarray
    mean_path: np.ndarray
    second_moment: np.ndarray
    penalty: np.ndarray | None = None
    states: np.ndarray | None = None
    controls: np.ndarray | None = None

    def std_path(self) -> np.ndarray:
        """Per-node, per-label, per-coordinate sample standard deviation."""
        var = self.second_moment - self.mean_path**2
        if self.M > 1:
            var = var * (self.M / (self.M - 1))
        return np.sqrt(np.clip(var, 0.0, None))


def _policy_base_arrays(policy: AffinePolicy, tg: TimeGrid):
    N = tg.n_steps + 1
    gx = np.stack([policy.at_node(k, tg)[0] for k in range(N)])
    gm = np.stack([policy.at_node(k, tg)[1] for k in range(N)])
    off = np.stack([policy.at_node(k, tg)[2] for k in range(N)])
    return gx, gm, off


def _mean_drives(policy: AffinePolicy, means: MeanFlow, weights: np.ndarray, tg: TimeGrid):
    """Deterministic per-node control drive s[t, i] = sum_j w_j gm(i,j) xbar_j + off."""
    gx, gm, off = _policy_base_arrays(policy, tg)
    s = np.einsum("j,tijab,tjb->tia", weights, gm, means.states, optimize=OPT) + off
    return gx, s


def simulate(p: ProblemData, policy: AffinePolicy, means: MeanFlow,
             init: InitialCondition, M: int, seed: int, *,
             reference: tuple[AffinePolicy, np.ndarray] | None = None,
             store_paths: bool = False, threads: int = 1) -> Ensemble:
    """Euler-Maruyama ensemble of the closed-loop system under ``policy``.

    ``means`` must be the mean flow of the same policy (the mean-field terms
    of drift, diffusion and control are read from it).  ``reference`` is an
    optional pair (law, O_path) against which the squared control deviation
    is accumulated for the fundamental-relation check; ``O_path`` has shape
    (N+1, n, m, m) on the nodes of the simulation grid.
    """
    if means.tg != policy.tg and means.tg.n_steps * 2 != policy.tg.n_steps:
        raise ValueError("mean flow and policy grids are inconsistent")
    tg = means.tg
    if M < 1:
        raise ValueError("path count must be positive")
    c = p.coeffs
    n, d, m = p.n, p.d, p.m
    N = tg.n_steps
    dt = tg.dt
    sq_dt = np.sqrt(dt)
    w = p.grid.weights

    gx, s_pol = _mean_drives(policy, means, w, tg)
    # mean-field contributions to drift and diffusion, per node and label
    ga = np.einsum("j,ijab,tjb->tia", w, p.G_A.blocks, means.states, optimize=OPT)
    gc = np.einsum("j,ijab,tjb->tia", w, p.G_C.blocks, means.states, optimize=OPT)
    if reference is not None:
        ref_law, O_path = reference
        gx_ref, s_ref = _mean_drives(ref_law, means, w, tg)
        if O_path.shape != (N + 1, n, m, m):
            raise ValueError(f"O_path has shape {O_path.shape}, expected {(N + 1, n, m, m)}")

    run_cost = np.zeros((n, M))
    terminal_cost = np.zeros((n, M))
    pen = np.zeros((n, M)) if reference is not None else None
    mean_path = np.zeros((N + 1, n, d))
    second_moment = np.zeros((N + 1, n, d))
    terminal_states = np.zeros((n, M, d))
    states = np.zeros((n, M, N + 1, d)) if store_paths else None
    controls = np.zeros((n, M, N + 1, m)) if store_paths else None

    # trapezoid weights over time
    tw = np.full(N + 1, dt)
    tw[0] = tw[-1] = 0.5 * dt
    if N == 0:
        tw[:] = 0.0

    def run_label(i: int) -> None:
        rng = _label_rng(seed, i)
        X = init.sample(rng, i, M)
        A_t, B_t, C_t, D_t = c.A[i].T, c.B[i].T, c.C[i].T, c.D[i].T
        Q_i, R_i, H_i = c.Q[i], c.R[i], c.H[i]
        beta_i, gamma_i = c.beta[i], c.gamma[i]
        rc = np.zeros(M)
        pc = np.zeros(M) if pen is not None else None
        for k in range(N + 1):
            alpha = X @ gx[k, i].T + s_pol[k, i]
            node_cost = ((X @ Q_i) * X).sum(axis=1) + ((alpha @ R_i) * alpha).sum(axis=1)
            rc += tw[k] * node_cost
            if pc is not None:
                delta = alpha - (X @ gx_ref[k, i].T + s_ref[k, i])
                pc += tw[k] * ((delta @ O_path[k, i]) * delta).sum(axis=1)
            mean_path[k, i] = X.mean(axis=0)
            second_moment[k, i] = (X * X).mean(axis=0)
            if store_paths:
                states[i, :, k] = X
                controls[i, :, k] = alpha
            if k < N:
                Z = rng.standard_normal(M)
                drift = beta_i + X @ A_t + ga[k, i] + alpha @ B_t
                diff = gamma_i + X @ C_t + gc[k, i] + alpha @ D_t
                X = X + dt * drift + (sq_dt * Z)[:, None] * diff
        if not np.all(np.isfinite(X)):
            raise RuntimeError(f"simulation overflowed at label index {i}")
        run_cost[i] = rc
        terminal_cost[i] = ((X @ H_i) * X).sum(axis=1)
        terminal_states[i] = X
        if pc is not None:
            pen[i] = pc

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            list(pool.map(run_label, range(n)))
    else:
        for i in range(n):
            run_label(i)

    return Ensemble(tg=tg, M=M, master_seed=seed, run_cost=run_cost,
                    terminal_cost=terminal_cost, terminal_states=terminal_states,
                    mean_path=mean_path, second_moment=second_moment,
                    penalty=pen, states=states, controls=controls)


@dataclass(frozen=True)
class ParticleStats:
    """Empirical moments of the finite-population (particle) system."""

    tg: TimeGrid
    M: int
    mean_path: np.ndarray
    second_moment: np.ndarray

    def std_path(self) -> np.ndarray:
        var = self.second_moment - self.mean_path**2
        if self.M > 1:
            var = var * (self.M / (self.M - 1))
        return np.sqrt(np.clip(var, 0.0, None))


def simulate_particles(p: ProblemData, policy: AffinePolicy, init: InitialCondition,
                       M: int, seed: int, tg: TimeGrid) -> ParticleStats:
    """Particle cross-check: mean-field terms read the running empirical means.

    Mirrors the finite-population dynamics, where each label's drift,
    diffusion and control couple to the empirical average over the M replicas
    of every label, instead of the deterministic mean flow.
    """
    c = p.coeffs
    n, d = p.n, p.d
    N = tg.n_steps
    dt, sq_dt = tg.dt, np.sqrt(tg.dt)
    w = p.grid.weights
    gx, gm, off = _policy_base_arrays(policy, tg)

    rngs = [_label_rng(seed, i) for i in range(n)]
    X = np.stack([init.sample(rngs[i], i, M) for i in range(n)])  # (n, M, d)
    mean_path = np.zeros((N + 1, n, d))
    second_moment = np.zeros((N + 1, n, d))
    for k in range(N + 1):
        xbar = X.mean(axis=1)
        mean_path[k] = xbar
        second_moment[k] = (X * X).mean(axis=1)
        if k == N:
            break
        drive = np.einsum("j,ijab,jb->ia", w, gm[k], xbar, optimize=OPT) + off[k]
        alpha = np.einsum("iab,ipb->ipa", gx[k], X, optimize=OPT) + drive[:, None, :]
        ga = np.einsum("j,ijab,jb->ia", w, p.G_A.blocks, xbar, optimize=OPT)
        gc = np.einsum("j,ijab,jb->ia", w, p.G_C.blocks, xbar, optimize=OPT)
        drift = (c.beta[:, None, :] + np.einsum("iab,ipb->ipa", c.A, X, optimize=OPT)
                 + ga[:, None, :] + np.einsum("iab,ipb->ipa", c.B, alpha, optimize=OPT))
        diff = (c.gamma[:, None, :] + np.einsum("iab,ipb->ipa", c.C, X, optimize=OPT)
                + gc[:, None, :] + np.einsum("iab,ipb->ipa", c.D, alpha, optimize=OPT))
        Z = np.stack([rngs[i].standard_normal(M) for i in range(n)])
        X = X + dt * drift + sq_dt * Z[:, :, None] * diff
    if not np.all(np.isfinite(X)):
        raise RuntimeError("particle simulation overflowed")
    return ParticleStats(tg=tg, M=M, mean_path=mean_path, second_moment=second_moment)


@dataclass(frozen=True)
class CostEstimate:
    value: float
    stderr: float


def _mean_field(ens: Ensemble, means: MeanFlow, mean_source: str) -> np.ndarray:
    if mean_source == "flow":
        return means.states
    if mean_source == "empirical":
        return ens.mean_path
    raise ValueError(f"unknown mean_source {mean_source!r}")


def _trapezoid_weights(tg: TimeGrid) -> np.ndarray:
    tw = np.full(tg.n_steps + 1, tg.dt)
    tw[0] = tw[-1] = 0.5 * tg.dt
    return tw


def evaluate_cost(p: ProblemData, ens: Ensemble, means: MeanFlow, tg: TimeGrid, *,
                  mean_source: str = "flow") -> CostEstimate:
    """Monte Carlo cost with standard error.

    Quadratic state/control terms are path averages; the mean-mean kernel
    terms are evaluated on the deterministic mean flow by default (exact for
    affine policies, so they add no Monte Carlo variance).
    """
    if ens.tg != tg or means.tg != tg:
        raise ValueError("ensemble, mean flow and time grid are inconsistent")
    w = p.grid.weights
    per_path = w @ (ens.run_cost + ens.terminal_cost)  # (M,)
    base = float(per_path.mean())
    stderr = float(per_path.std(ddof=1) / np.sqrt(ens.M)) if ens.M > 1 else 0.0

    xb = _mean_field(ens, means, mean_source)
    tw = _trapezoid_weights(tg)
    run_kernel = np.einsum("i,j,tia,ijab,tjb->t", w, w, xb, p.G_Q.blocks, xb, optimize=OPT)
    term_kernel = float(np.einsum("i,j,ia,ijab,jb->", w, w, xb[-1], p.G_H.blocks, xb[-1], optimize=OPT))
    return CostEstimate(value=base + float(tw @ run_kernel) + term_kernel, stderr=stderr)


def pathwise_standard_costs(p: ProblemData, ens: Ensemble) -> np.ndarray:
    """Per-path standard-form cost, each path serving as its own mean field.

    Requires paths stored via ``store_paths=True``.
    """
    if ens.states is None:
        raise ValueError("ensemble was simulated without store_paths=True")
    w = p.grid.weights
    S = ens.states
    tw = _trapezoid_weights(ens.tg)
    run_kernel = np.einsum("i,j,ipta,ijab,jptb->tp", w, w, S, p.G_Q.blocks, S, optimize=OPT)
    term_kernel = np.einsum("i,j,ipa,ijab,jpb->p", w, w, S[:, :, -1], p.G_H.blocks, S[:, :, -1],
                            optimize=True)
    return w @ (ens.run_cost + ens.terminal_cost) + tw @ run_kernel + term_kernel


def pathwise_centered_costs(ens: Ensemble, tilde_GQ, tilde_GH, coeffs, grid) -> np.ndarray:
    """Per-path centered-form cost (each path as its own mean field)."""
    if ens.states is None or ens.controls is None:
        raise ValueError("ensemble was simulated without store_paths=True")
    w = grid.weights
    S, A = ens.states, ens.controls
    tw = _trapezoid_weights(ens.tg)
    sQ = np.einsum("j,ijab,jptb->ipta", w, tilde_GQ.blocks, S, optimize=OPT)
    devQ = S - sQ
    runw = np.einsum("i,ipta,iab,iptb->tp", w, devQ, coeffs.Q, devQ, optimize=OPT) \
        + np.einsum("i,ipta,iab,iptb->tp", w, A, coeffs.R, A, optimize=OPT)
    sH = np.einsum("j,ijab,jpb->ipa", w, tilde_GH.blocks, S[:, :, -1], optimize=OPT)
    devH = S[:, :, -1] - sH
    term = np.einsum("i,ipa,iab,ipb->p", w, devH, coeffs.H, devH, optimize=OPT)
    return tw @ runw + term


@dataclass(frozen=True)
class GapReport:
    """Certification numbers for one policy."""

    label: str
    J: float
    stderr: float
    V: float
    gap: float
    penalty: float
    gap_minus_penalty: float
    stderr_resid: float

    def as_dict(self) -> dict:
        return {"label": self.label, "J": self.J, "stderr": self.stderr, "V": self.V,
                "gap": self.gap, "penalty": self.penalty,
                "gap_minus_penalty": self.gap_minus_penalty,
                "stderr_resid": self.stderr_resid}


def check_fundamental_relation(p: ProblemData, sol, policy: AffinePolicy,
                               init: InitialCondition, M: int, seed: int, *,
                               label: str = "", threads: int = 1,
                               mean_source: str = "flow") -> GapReport:
    """Simulate ``policy``, compare its cost to V plus the quadratic penalty.

    ``sol`` is a solved backward system (as returned by
    :func:`graphonlq.pipeline.solve_system`): it provides the value-function
    paths, the optimal law and the O-path entering the penalty.
    """
    tg = sol.tg
    means = solve_mean_flow(p, policy, init, tg)
    ens = simulate(p, policy, means, init, M, seed,
                   reference=(sol.law, sol.O_path), threads=threads)
    est = evaluate_cost(p, ens, means, tg, mean_source=mean_source)
    V = value_function(tg.t0, init, sol.K, sol.barK, sol.Y, sol.Lam, p.grid)
    w = p.grid.weights
    pen_per_path = w @ ens.penalty
    cost_per_path = w @ (ens.run_cost + ens.terminal_cost)
    penalty = float(pen_per_path.mean())
    resid = cost_per_path - pen_per_path
    stderr_resid = float(resid.std(ddof=1) / np.sqrt(M)) if M > 1 else 0.0
    gap = est.value - V
    return GapReport(label=label, J=est.value, stderr=est.stderr, V=V, gap=gap,
                     penalty=penalty, gap_minus_penalty=gap - penalty,
                     stderr_resid=stderr_resid)
