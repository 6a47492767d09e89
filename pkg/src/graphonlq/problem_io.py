"""Problem files: TOML documents describing a complete problem instance.

Layout (all numeric values are plain TOML numbers; floats survive a
round-trip exactly because they are written with ``repr``):

    [grid]
    n = 16                      # labels; the grid is always midpoint-uniform

    [horizon]
    t0 = 0.0
    T = 1.0

    [coefficients]
    d = 1
    m = 1
    coercivity = 1.0            # optional; inferred from R when absent
    A = -0.5                    # scalar -> value * identity (square targets)
    B = 1.0
    Q = "1 + 0.5*u"             # expression of u, sampled at the labels (d=1)
    beta = 0.0
    # matrix constants: A = [[0.0, 1.0], [0.0, 0.0]]
    # per-label tables:  A = [[[...]], [[...]], ...]   (length n)

    [kernels.G_A]
    type = "expr"               # sampled at label pairs (d=1 only)
    expr = "0.5*(1 - abs(u - v))"

    [kernels.G_Q]
    type = "table"
    blocks = [[...], ...]       # n x n (d=1) or n x n x d x d nested

Expressions admit the names u, v, pi, e, the arithmetic operators, and the
functions sin, cos, tan, exp, log, sqrt, tanh, sinh, cosh, abs.
"""
from __future__ import annotations

import ast
import math
from typing import Callable

import numpy as np

try:
    import tomllib
except ModuleNotFoundError:  # Python 3.10
    import tomli as tomllib

from .grid import LabelGrid, build_grid
from .kernels import Kernel, sample_kernel
from .model import CoefficientField, ProblemData


class ProblemFormatError(ValueError):
    """A problem file failed to parse or is missing required content."""


_FUNCS = {
    "sin": np.sin, "cos": np.cos, "tan": np.tan, "exp": np.exp, "log": np.log,
    "sqrt": np.sqrt, "tanh": np.tanh, "sinh": np.sinh, "cosh": np.cosh, "abs": np.abs,
}
_CONSTS = {"pi": math.pi, "e": math.e}
_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div, ast.Pow)


def compile_expression(text: str, variables: tuple[str, ...]) -> Callable:
    """Compile a small arithmetic expression into a numpy-vectorized callable."""
    try:
        tree = ast.parse(text, mode="eval")
    except SyntaxError as exc:
        raise ProblemFormatError(f"bad expression {text!r}: {exc.msg}") from None
    allowed_names = set(variables) | set(_CONSTS) | set(_FUNCS)
    for node in ast.walk(tree):
        if isinstance(node, (ast.Expression, ast.Constant, ast.UnaryOp, ast.UAdd, ast.USub)):
            continue
        if isinstance(node, ast.BinOp) and isinstance(node.op, _BINOPS):
            continue
        if isinstance(node, _BINOPS):
            continue
        if isinstance(node, ast.Name) and node.id in allowed_names:
            continue
        if isinstance(node, ast.Call) and isinstance(node.func, ast.Name) \
                and node.func.id in _FUNCS and not node.keywords:
            continue
        if isinstance(node, ast.Load):
            continue
        raise ProblemFormatError(
            f"expression {text!r} uses disallowed syntax ({ast.dump(node)[:40]}...)")
    code = compile(tree, "<problem-expression>", "eval")
    env = {"__builtins__": {}} | _FUNCS | _CONSTS

    def fn(*args):
        local = dict(zip(variables, args))
        return eval(code, env, local)

    return fn


def _as_float_array(value, where: str) -> np.ndarray:
    try:
        arr = np.asarray(value, dtype=float)
    except (TypeError, ValueError):
        raise ProblemFormatError(f"{where}: expected numeric data") from None
    if not np.all(np.isfinite(arr)):
        raise ProblemFormatError(f"{where}: non-finite entries")
    return arr


def _matrix_field(value, name: str, n: int, rows: int, cols: int, points) -> np.ndarray:
    where = f"[coefficients].{name}"
    if isinstance(value, str):
        if (rows, cols) != (1, 1):
            raise ProblemFormatError(f"{where}: expressions only supported for scalar blocks")
        fn = compile_expression(value, ("u",))
        vals = _as_float_array([fn(u) for u in points], where)
        return vals[:, None, None]
    if isinstance(value, (int, float)):
        if rows != cols:
            raise ProblemFormatError(f"{where}: scalar shorthand needs a square block "
                                     f"({rows}x{cols} expected); give an explicit matrix")
        return np.tile(float(value) * np.eye(rows), (n, 1, 1))
    arr = _as_float_array(value, where)
    if arr.shape == (n,) and (rows, cols) == (1, 1):
        return arr[:, None, None]
    if arr.shape == (rows, cols):
        return np.tile(arr, (n, 1, 1))
    if arr.shape == (n, rows, cols):
        return arr
    raise ProblemFormatError(f"{where}: shape {arr.shape} fits neither ({rows},{cols}) "
                             f"nor ({n},{rows},{cols})")


def _vector_field(value, name: str, n: int, d: int, points) -> np.ndarray:
    where = f"[coefficients].{name}"
    if isinstance(value, str):
        if d != 1:
            raise ProblemFormatError(f"{where}: expressions only supported for d = 1")
        fn = compile_expression(value, ("u",))
        return _as_float_array([fn(u) for u in points], where)[:, None]
    if isinstance(value, (int, float)):
        return np.full((n, d), float(value))
    arr = _as_float_array(value, where)
    if arr.shape == (n,) and d == 1:
        return arr[:, None]
    if arr.shape == (d,):
        return np.tile(arr, (n, 1))
    if arr.shape == (n, d):
        return arr
    raise ProblemFormatError(f"{where}: shape {arr.shape} fits neither ({d},) nor ({n},{d})")


def _kernel_field(spec, name: str, grid: LabelGrid, d: int) -> Kernel:
    where = f"[kernels].{name}"
    if not isinstance(spec, dict) or "type" not in spec:
        raise ProblemFormatError(f"{where}: expected a table with a 'type' key")
    kind = spec["type"]
    if kind == "expr":
        if d != 1:
            raise ProblemFormatError(f"{where}: expression kernels only supported for d = 1")
        if "expr" not in spec:
            raise ProblemFormatError(f"{where}: missing 'expr'")
        fn = compile_expression(spec["expr"], ("u", "v"))
        return sample_kernel(lambda u, v: float(fn(u, v)), grid)
    if kind == "table":
        if "blocks" not in spec:
            raise ProblemFormatError(f"{where}: missing 'blocks'")
        arr = _as_float_array(spec["blocks"], where)
        n = grid.n
        if arr.shape == (n, n) and d == 1:
            arr = arr[:, :, None, None]
        if arr.shape != (n, n, d, d):
            raise ProblemFormatError(f"{where}: blocks shape {arr.shape}, expected {(n, n, d, d)}")
        return Kernel(grid, arr)
    raise ProblemFormatError(f"{where}: unknown kernel type {kind!r}")


def _require(table: dict, section: str, key: str):
    if key not in table:
        raise ProblemFormatError(f"missing required field [{section}].{key}")
    return table[key]


def load_problem(path) -> ProblemData:
    """Parse a problem file; raises :class:`ProblemFormatError` with context."""
    with open(path, "rb") as fh:
        try:
            doc = tomllib.load(fh)
        except tomllib.TOMLDecodeError as exc:
            raise ProblemFormatError(f"{path}: {exc}") from None

    for section in ("grid", "horizon", "coefficients", "kernels"):
        if section not in doc:
            raise ProblemFormatError(f"missing required section [{section}]")
    n = _require(doc["grid"], "grid", "n")
    if not isinstance(n, int) or n < 1:
        raise ProblemFormatError(f"[grid].n must be a positive integer, got {n!r}")
    grid = build_grid(n)

    hz = doc["horizon"]
    t0 = float(_require(hz, "horizon", "t0"))
    T = float(_require(hz, "horizon", "T"))

    co = doc["coefficients"]
    d = _require(co, "coefficients", "d")
    m = _require(co, "coefficients", "m")
    pts = grid.points
    mats = {}
    for name, rows, cols in (("A", d, d), ("B", d, m), ("C", d, d), ("D", d, m),
                             ("Q", d, d), ("R", m, m), ("H", d, d)):
        mats[name] = _matrix_field(_require(co, "coefficients", name), name, n, rows, cols, pts)
    beta = _vector_field(co.get("beta", 0.0), "beta", n, d, pts)
    gamma = _vector_field(co.get("gamma", 0.0), "gamma", n, d, pts)
    coeffs = CoefficientField(A=mats["A"], B=mats["B"], C=mats["C"], D=mats["D"],
                              Q=mats["Q"], R=mats["R"], H=mats["H"], beta=beta, gamma=gamma)

    kr = doc["kernels"]
    kernels = {}
    for name in ("G_A", "G_C", "G_Q", "G_H"):
        kernels[name] = _kernel_field(_require(kr, "kernels", name), name, grid, d)

    coercivity = co.get("coercivity")
    return ProblemData(grid=grid, coeffs=coeffs, t0=t0, T=T,
                       coercivity=None if coercivity is None else float(coercivity),
                       **kernels)


def _fmt(value) -> str:
    if isinstance(value, (bool, int)):
        return str(value)
    if isinstance(value, float):
        return repr(value)
    raise TypeError(f"cannot format {value!r}")


def _fmt_nested(arr: np.ndarray) -> str:
    if arr.ndim == 1:
        return "[" + ", ".join(repr(float(x)) for x in arr) + "]"
    inner = ", ".join(_fmt_nested(sub) for sub in arr)
    return "[" + inner + "]"


def _fmt_rows(arr: np.ndarray, indent: str = "    ") -> str:
    # one leading-axis entry per line, for readable per-label tables
    lines = ",\n".join(indent + _fmt_nested(sub) for sub in arr)
    return "[\n" + lines + ",\n]"


def save_problem(p: ProblemData, path) -> None:
    """Write the canonical (fully tabulated) form; round-trips all fields."""
    c = p.coeffs
    out = []
    out.append("[grid]")
    out.append(f"n = {p.n}")
    out.append("")
    out.append("[horizon]")
    out.append(f"t0 = {_fmt(float(p.t0))}")
    out.append(f"T = {_fmt(float(p.T))}")
    out.append("")
    out.append("[coefficients]")
    out.append(f"d = {p.d}")
    out.append(f"m = {p.m}")
    out.append(f"coercivity = {_fmt(float(p.coercivity))}")
    for name in ("A", "B", "C", "D", "Q", "R", "H"):
        out.append(f"{name} = {_fmt_rows(getattr(c, name))}")
    out.append(f"beta = {_fmt_rows(c.beta)}")
    out.append(f"gamma = {_fmt_rows(c.gamma)}")
    for name in ("G_A", "G_C", "G_Q", "G_H"):
        out.append("")
        out.append(f"[kernels.{name}]")
        out.append('type = "table"')
        out.append(f"blocks = {_fmt_rows(getattr(p, name).blocks)}")
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("\n".join(out) + "\n")
