"""Interbank systemic-risk model: heterogeneous banks on a graphon network.

Each bank's log-monetary reserve mean-reverts at rate k <= 0 toward a
graphon-weighted population average and is steered by central-bank
lending/borrowing at quadratic cost; deviation penalties (running eta^u,
terminal r^u) are centered at graphon-weighted averages as well.  In standard
form: d = m = 1, A = k, G_A = -k Gk, B = 1, C = D = 0, beta = 0, the
volatility sigma^u rides in the additive-noise slot gamma, Q = eta, R = 1,
H = r, and the cost kernels come from the centered rewrite.

The per-label Riccati equation dK/dt + 2kK + eta - K^2 = 0, K(T) = r, has the
closed form implemented by :func:`explicit_K` (with delta^{+,-} the roots of
the stationary equation), which serves as the analytic oracle for the generic
solvers.  With label-constant parameters and unit graphons the kernel
solution collapses to Kbar = -K, Y = 0, Lambda = sigma^2 * tail-integral of
K, and the optimal law is -K (X - population mean).
"""
from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from .control import AffinePolicy
from .grid import LabelGrid
from .integrate import tail_integrals
from .kernels import Kernel, check_flip_symmetry, sample_kernel, zero_kernel
from .model import CoefficientField, ProblemData, from_centered
from .timegrid import TimeGrid


def _field_values(spec, points: np.ndarray) -> np.ndarray:
    if callable(spec):
        return np.asarray([float(spec(u)) for u in points])
    return np.broadcast_to(np.asarray(spec, dtype=float), points.shape).astype(float)


def _graphon_kernel(spec, grid: LabelGrid) -> Kernel:
    if isinstance(spec, Kernel):
        return spec
    if callable(spec):
        return sample_kernel(lambda u, v: float(spec(u, v)), grid)
    value = float(spec)
    return Kernel(grid, np.full((grid.n, grid.n, 1, 1), value))


@dataclass(frozen=True)
class SystemicRiskParams:
    """Model parameters; per-label fields may be constants or callables of u.

    ``k`` is the mean-reversion rate (nonpositive); ``sigma``, ``eta``, ``r``
    are the per-bank volatility and the running/terminal deviation penalties
    (strictly positive); the three graphons weight the averages the dynamics
    and the two penalties center on.
    """

    k: float = -0.5
    sigma: object = 0.4
    eta: object = 1.0
    r: object = 0.3
    tilde_G_k: object = 1.0
    tilde_G_eta: object = 1.0
    tilde_G_r: object = 1.0
    T: float = 1.0

    def sampled(self, grid: LabelGrid) -> dict:
        return {
            "sigma": _field_values(self.sigma, grid.points),
            "eta": _field_values(self.eta, grid.points),
            "r": _field_values(self.r, grid.points),
            "Gk": _graphon_kernel(self.tilde_G_k, grid),
            "Geta": _graphon_kernel(self.tilde_G_eta, grid),
            "Gr": _graphon_kernel(self.tilde_G_r, grid),
        }


def heterogeneous_preset() -> SystemicRiskParams:
    """Default preset: smooth per-bank heterogeneity, uniform coupling."""
    return SystemicRiskParams(k=-0.5,
                              sigma=lambda u: 0.35 + 0.15 * u,
                              eta=lambda u: 1.0 + 0.5 * u,
                              r=lambda u: 0.3 + 0.2 * u,
                              T=1.0)


def homogeneous_preset() -> SystemicRiskParams:
    """Label-constant parameters with unit graphons (closed-form reduction)."""
    return SystemicRiskParams(k=-0.5, sigma=0.4, eta=1.0, r=0.3, T=1.0)


PRESETS = {
    "systemic-risk": heterogeneous_preset,
    "systemic-risk-homogeneous": homogeneous_preset,
}


def build_model(params: SystemicRiskParams, grid: LabelGrid, t0: float = 0.0) -> ProblemData:
    """Assemble the standard-form problem for the bank model.

    Raises on invariant violations: k must be nonpositive, sigma/eta/r
    strictly positive, and the graphons flip-symmetric.
    """
    if params.k > 0:
        raise ValueError(f"mean-reversion rate must be nonpositive, got k={params.k}")
    s = params.sampled(grid)
    for name in ("sigma", "eta", "r"):
        if np.any(s[name] <= 0):
            raise ValueError(f"{name} must be strictly positive at every label")
    for name in ("Gk", "Geta", "Gr"):
        if check_flip_symmetry(s[name]) > 1e-12:
            raise ValueError(f"graphon {name} is not symmetric")
    if not params.T > t0:
        raise ValueError("horizon must satisfy T > t0")

    n = grid.n
    one = np.ones((n, 1, 1))
    coeffs = CoefficientField(
        A=params.k * one, B=one.copy(), C=np.zeros((n, 1, 1)), D=np.zeros((n, 1, 1)),
        Q=s["eta"][:, None, None], R=one.copy(), H=s["r"][:, None, None],
        beta=np.zeros((n, 1)), gamma=s["sigma"][:, None])
    G_A = Kernel(grid, -params.k * s["Gk"].blocks)
    return from_centered(s["Geta"], s["Gr"], coeffs, grid,
                         G_A=G_A, G_C=zero_kernel(grid, 1), t0=t0, T=params.T,
                         coercivity=1.0)


def explicit_K(params: SystemicRiskParams, grid: LabelGrid, t) -> np.ndarray:
    """Closed-form per-label Riccati solution K^u at time(s) ``t``.

    With delta^{+,-} = k +- sqrt(k^2 + eta) the roots of K^2 - 2kK - eta,

        K = [-eta (E - 1) - r (delta+ E - delta-)]
            / [(delta- E - delta+) - r (E - 1)],      E = exp((delta+ - delta-)(T - t)),

    which is the exact logistic-form solution of
    dK/dt + 2kK + eta - K^2 = 0, K(T) = r.
    """
    s = params.sampled(grid)
    eta, r = s["eta"], s["r"]
    k = params.k
    t_arr = np.atleast_1d(np.asarray(t, dtype=float))
    tau = (params.T - t_arr)[:, None]
    root = np.sqrt(k * k + eta)[None, :]
    delta_p, delta_m = k + root, k - root
    E = np.exp((delta_p - delta_m) * tau)
    num = -eta[None, :] * (E - 1.0) - r[None, :] * (delta_p * E - delta_m)
    den = (delta_m * E - delta_p) - r[None, :] * (E - 1.0)
    if np.any(np.abs(den) < 1e-300):
        raise ZeroDivisionError("closed-form Riccati denominator vanished")
    K = num / den
    return K[0] if np.isscalar(t) or np.ndim(t) == 0 else K


@dataclass(frozen=True)
class HomogeneousReference:
    """Closed-form bundle for the label-constant, unit-graphon model."""

    tg: TimeGrid
    K: np.ndarray
    barK: np.ndarray
    Y: np.ndarray
    Lam: np.ndarray
    law: AffinePolicy


def homogeneous_reference(params: SystemicRiskParams, grid: LabelGrid,
                          tg: TimeGrid) -> HomogeneousReference:
    """Analytic reference (K, Kbar = -K, Y = 0, Lambda, law) for comparison.

    Rejects parameter sets that are not label-constant with unit graphons.
    """
    s = params.sampled(grid)
    for name in ("sigma", "eta", "r"):
        if np.ptp(s[name]) > 1e-12:
            raise ValueError(f"{name} is not label-constant")
    for name in ("Gk", "Geta", "Gr"):
        if np.max(np.abs(s[name].blocks - 1.0)) > 1e-12:
            raise ValueError(f"graphon {name} is not identically one")

    n = grid.n
    K = explicit_K(params, grid, tg.nodes)  # (N+1, n)
    barK = -K[:, :, None].repeat(n, axis=2)
    Lam = s["sigma"][None, :] ** 2 * tail_integrals(K, tg.dt)
    N = tg.n_steps + 1
    gain_x = -K[:, :, None, None]
    gain_mean = np.broadcast_to(K[:, None, :, None, None], (N, n, n, 1, 1)).copy()
    law = AffinePolicy(tg=tg, gain_x=gain_x, gain_mean=gain_mean,
                       offset=np.zeros((N, n, 1)))
    return HomogeneousReference(tg=tg, K=K, barK=barK, Y=np.zeros((N, n)), Lam=Lam, law=law)


def preset_params(name: str, **overrides) -> SystemicRiskParams:
    """Look up a named preset, optionally overriding scalar fields."""
    try:
        factory = PRESETS[name]
    except KeyError:
        raise KeyError(f"unknown preset {name!r}; available: {sorted(PRESETS)}") from None
    params = factory()
    return replace(params, **overrides) if overrides else params
