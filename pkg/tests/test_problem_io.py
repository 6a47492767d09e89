from __future__ import annotations

import numpy as np
import pytest

from conftest import make_random_problem
from graphonlq.grid import build_grid
from graphonlq.kernels import sample_kernel
from graphonlq.problem_io import ProblemFormatError, compile_expression, load_problem, save_problem

MINIMAL = """
[grid]
n = 4

[horizon]
t0 = 0.0
T = 1.0

[coefficients]
d = 1
m = 1
A = -0.5
B = 1.0
C = 0.0
D = 0.0
Q = "1 + 0.5*u"
R = 1.0
H = 0.3
gamma = "0.35 + 0.15*u"

[kernels.G_A]
type = "expr"
expr = "0.5"

[kernels.G_C]
type = "expr"
expr = "0.0"

[kernels.G_Q]
type = "expr"
expr = "u*v"

[kernels.G_H]
type = "table"
blocks = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]
"""


def write(tmp_path, text, name="problem.toml"):
    f = tmp_path / name
    f.write_text(text)
    return f


def test_load_minimal(tmp_path):
    p = load_problem(write(tmp_path, MINIMAL))
    assert p.n == 4 and p.d == 1 and p.m == 1
    assert np.allclose(p.coeffs.A[:, 0, 0], -0.5)
    assert np.allclose(p.coeffs.Q[:, 0, 0], 1 + 0.5 * p.grid.points)
    assert np.allclose(p.coeffs.gamma[:, 0], 0.35 + 0.15 * p.grid.points)
    assert np.all(p.coeffs.beta == 0.0)
    assert np.allclose(p.G_A.blocks, 0.5)


def test_expression_kernel_matches_direct_sampling(tmp_path):
    p = load_problem(write(tmp_path, MINIMAL))
    direct = sample_kernel(lambda u, v: u * v, build_grid(4))
    assert np.array_equal(p.G_Q.blocks, direct.blocks)


def test_round_trip_is_exact(tmp_path):
    p = make_random_problem(3, n=3, d=2, m=2, with_offsets=True)
    f = tmp_path / "rt.toml"
    save_problem(p, f)
    q = load_problem(f)
    for name in ("A", "B", "C", "D", "Q", "R", "H", "beta", "gamma"):
        assert np.array_equal(getattr(p.coeffs, name), getattr(q.coeffs, name)), name
    for name in ("G_A", "G_C", "G_Q", "G_H"):
        assert np.array_equal(getattr(p, name).blocks, getattr(q, name).blocks), name
    assert (p.t0, p.T, p.coercivity) == (q.t0, q.T, q.coercivity)


def test_missing_field_named(tmp_path):
    broken = MINIMAL.replace('R = 1.0\n', '')
    with pytest.raises(ProblemFormatError, match=r"\[coefficients\].R"):
        load_problem(write(tmp_path, broken))


def test_missing_section_named(tmp_path):
    broken = MINIMAL.replace("[horizon]\nt0 = 0.0\nT = 1.0\n", "")
    with pytest.raises(ProblemFormatError, match=r"\[horizon\]"):
        load_problem(write(tmp_path, broken))


def test_parse_error_carries_location(tmp_path):
    with pytest.raises(ProblemFormatError, match="line"):
        load_problem(write(tmp_path, "[grid\nn = 4\n"))


def test_bad_kernel_shape_rejected(tmp_path):
    broken = MINIMAL.replace(
        "blocks = [[0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0], [0.0, 0.0, 0.0, 0.0]]",
        "blocks = [[0.0, 0.0], [0.0, 0.0]]")
    with pytest.raises(ProblemFormatError, match="G_H"):
        load_problem(write(tmp_path, broken))


def test_expressions_reject_unsafe_code():
    with pytest.raises(ProblemFormatError):
        compile_expression("__import__('os')", ("u",))
    with pytest.raises(ProblemFormatError):
        compile_expression("u.real", ("u",))
    with pytest.raises(ProblemFormatError):
        compile_expression("lambda: 1", ("u",))


def test_expression_functions_and_constants():
    fn = compile_expression("exp(-(u - v)**2) + sin(pi*u)", ("u", "v"))
    assert fn(0.5, 0.5) == pytest.approx(1.0 + 1.0)


def test_scalar_shorthand_for_rectangular_block_rejected(tmp_path):
    text = MINIMAL.replace("d = 1\nm = 1", "d = 2\nm = 1")
    with pytest.raises(ProblemFormatError):
        load_problem(write(tmp_path, text))
