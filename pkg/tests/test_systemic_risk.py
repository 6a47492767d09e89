from __future__ import annotations

import numpy as np
import pytest

from graphonlq.grid import build_grid
from graphonlq.model import validate
from graphonlq.riccati import solve_standard_riccati
from graphonlq.systemic_risk import (
    SystemicRiskParams,
    build_model,
    explicit_K,
    heterogeneous_preset,
    homogeneous_preset,
    homogeneous_reference,
    preset_params,
)
from graphonlq.timegrid import TimeGrid


def test_build_model_homogeneous_kernels():
    grid = build_grid(6)
    params = SystemicRiskParams(k=-0.4, sigma=0.5, eta=1.2, r=0.6, T=1.0)
    p = build_model(params, grid)
    # unit graphons: G_eta = eta - 2 eta = -eta, G_r = -r
    assert np.allclose(p.G_Q.blocks, -1.2)
    assert np.allclose(p.G_H.blocks, -0.6)
    assert np.allclose(p.G_A.blocks, 0.4)
    assert np.all(p.coeffs.beta == 0.0)
    assert np.allclose(p.coeffs.gamma[:, 0], 0.5)


def test_build_model_zero_graphon_decouples():
    grid = build_grid(3)
    params = SystemicRiskParams(k=-0.3, sigma=0.4, eta=1.0, r=0.5,
                                tilde_G_k=0.0, tilde_G_eta=0.0, tilde_G_r=0.0)
    p = build_model(params, grid)
    for K in (p.G_A, p.G_C, p.G_Q, p.G_H):
        assert np.all(K.blocks == 0.0)


def test_build_model_validates():
    grid = build_grid(8)
    rep = validate(build_model(heterogeneous_preset(), grid))
    assert rep.passed


def test_build_model_rejects_bad_params():
    grid = build_grid(2)
    with pytest.raises(ValueError):
        build_model(SystemicRiskParams(k=0.1), grid)
    with pytest.raises(ValueError):
        build_model(SystemicRiskParams(eta=0.0), grid)
    with pytest.raises(ValueError):
        build_model(SystemicRiskParams(tilde_G_k=lambda u, v: u - v), grid)


# ---------------------------------------------------------------- closed form

def test_explicit_terminal_value():
    grid = build_grid(4)
    params = SystemicRiskParams(k=-0.5, eta=lambda u: 1 + u, r=lambda u: 0.2 + 0.1 * u)
    K_T = explicit_K(params, grid, params.T)
    assert np.allclose(K_T, 0.2 + 0.1 * grid.points, atol=1e-14)


def test_explicit_tanh_spot_value():
    grid = build_grid(1)
    params = SystemicRiskParams(k=0.0, eta=1.0, r=0.0)
    val = explicit_K(params, grid, 0.0)
    assert val[0] == pytest.approx(np.tanh(1.0), abs=1e-9)
    assert val[0] == pytest.approx(0.761594, abs=1e-6)


def test_explicit_zero_cost_limit():
    grid = build_grid(1)
    params = SystemicRiskParams(k=-0.5, eta=0.0, r=0.0)
    assert abs(explicit_K(params, grid, 0.0)[0]) == 0.0


def test_explicit_satisfies_riccati_ode():
    # finite differences of the closed form against dK/dt = K^2 - 2kK - eta
    grid = build_grid(5)
    params = heterogeneous_preset()
    eta = params.sampled(grid)["eta"]
    t, h = 0.37, 1e-5
    Km, K0, Kp = (explicit_K(params, grid, s) for s in (t - h, t, t + h))
    lhs = (Kp - Km) / (2 * h)
    rhs = K0**2 - 2 * params.k * K0 - eta
    assert np.allclose(lhs, rhs, atol=1e-6)


def test_solver_matches_explicit_heterogeneous():
    grid = build_grid(16)
    params = heterogeneous_preset()
    p = build_model(params, grid)
    tg = TimeGrid(0.0, params.T, 1000)
    K = solve_standard_riccati(p, tg)
    ref = explicit_K(params, grid, tg.nodes)
    assert np.max(np.abs(K.values[:, :, 0, 0] - ref)) < 1e-6


def test_monotonicity_in_eta():
    grid = build_grid(1)
    base = dict(k=-0.5, sigma=0.4, r=0.3)
    taus = np.linspace(0.0, 1.0, 7)
    prev = None
    for eta in (0.5, 1.0, 2.0, 4.0):
        vals = explicit_K(SystemicRiskParams(eta=eta, **base), grid, taus)
        if prev is not None:
            assert np.all(vals >= prev - 1e-12)
        prev = vals


# ---------------------------------------------------------------- reference

def test_homogeneous_reference_rejects_heterogeneous():
    grid = build_grid(4)
    with pytest.raises(ValueError):
        homogeneous_reference(heterogeneous_preset(), grid, TimeGrid(0.0, 1.0, 10))


def test_homogeneous_reference_fields():
    grid = build_grid(3)
    params = homogeneous_preset()
    tg = TimeGrid(0.0, params.T, 100)
    ref = homogeneous_reference(params, grid, tg)
    assert np.all(ref.Y == 0.0)
    assert np.allclose(ref.barK, -ref.K[:, :, None], atol=1e-14)
    # Lambda = sigma^2 tail integral of K; spot check by trapezoid
    manual = 0.4**2 * np.trapezoid(ref.K[:, 0], dx=tg.dt)
    assert ref.Lam[0, 0] == pytest.approx(manual, rel=1e-4)
    assert ref.Lam[-1, 0] == 0.0


def test_preset_lookup():
    params = preset_params("systemic-risk")
    assert callable(params.eta)
    hom = preset_params("systemic-risk-homogeneous", k=-0.25)
    assert hom.k == -0.25
    with pytest.raises(KeyError):
        preset_params("nope")
