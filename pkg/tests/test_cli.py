from __future__ import annotations

import json
import os
from pathlib import Path

import pytest

from graphonlq.cli import main

GOOD = """
[grid]
n = 4

[horizon]
t0 = 0.0
T = 0.5

[coefficients]
d = 1
m = 1
A = -0.4
B = 1.0
C = 0.0
D = 0.0
Q = 1.0
R = 1.0
H = 0.5
beta = 0.2
gamma = 0.3

[kernels.G_A]
type = "expr"
expr = "0.2"

[kernels.G_C]
type = "expr"
expr = "0.0"

[kernels.G_Q]
type = "expr"
expr = "0.0"

[kernels.G_H]
type = "expr"
expr = "0.0"
"""


def run(args):
    return main(args)


def test_solve_writes_artifacts(tmp_path):
    f = tmp_path / "p.toml"
    f.write_text(GOOD)
    out = tmp_path / "run"
    rc = run(["solve", "--problem", str(f), "--steps-per-unit", "100", "--out", str(out)])
    assert rc == 0
    for name in ("K.csv", "barK.csv", "Y.csv", "Lambda.csv", "feedback.csv",
                 "feedback_kernel.csv", "report.json"):
        assert (out / name).exists(), name
    report = json.loads((out / "report.json").read_text())
    assert report["passed"] is True
    assert report["kernel_riccati"]["max_flip_deviation"] <= 1e-10


def test_solve_zero_kernel_toy_outputs_zero_barK(tmp_path):
    text = GOOD.replace('expr = "0.2"', 'expr = "0.0"')
    f = tmp_path / "toy.toml"
    f.write_text(text)
    out = tmp_path / "run"
    rc = run(["solve", "--problem", str(f), "--steps-per-unit", "50", "--out", str(out)])
    assert rc == 0
    rows = (out / "barK.csv").read_text().strip().splitlines()[1:]
    assert all(row.rsplit(",", 1)[1] == "0.0" for row in rows)


def test_malformed_file_exit_2(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text("[grid\nn = 3")
    assert run(["solve", "--problem", str(f), "--out", str(tmp_path / "o")]) == 2


def test_missing_field_exit_2(tmp_path):
    f = tmp_path / "bad.toml"
    f.write_text(GOOD.replace("Q = 1.0\n", ""))
    assert run(["solve", "--problem", str(f), "--out", str(tmp_path / "o")]) == 2


def test_preset_report_contains_oracle_deviation(tmp_path):
    out = tmp_path / "run"
    rc = run(["solve", "--preset", "systemic-risk", "--n", "6",
              "--steps-per-unit", "200", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["explicit_K_max_deviation"] < 1e-8


def test_systemic_risk_subcommand_with_overrides(tmp_path):
    out = tmp_path / "run"
    rc = run(["systemic-risk", "--n", "4", "--steps-per-unit", "100",
              "--k", "-0.25", "--eta", "0.8 + 0.4*u", "--out", str(out)])
    assert rc == 0
    report = json.loads((out / "report.json").read_text())
    assert report["explicit_K_max_deviation"] < 1e-8
    assert report["problem"] == "systemic-risk-custom"


def test_simulate_subcommand(tmp_path):
    out = tmp_path / "run"
    rc = run(["simulate", "--preset", "systemic-risk-homogeneous", "--n", "4",
              "--steps-per-unit", "100", "--paths", "200", "--seed", "1",
              "--init-mean", "0.4 - 0.2*u", "--init-std", "0.1", "--out", str(out)])
    assert rc == 0
    assert (out / "mean_flow.csv").exists()
    assert (out / "empirical.csv").exists()
    report = json.loads((out / "report.json").read_text())
    assert "J" in report["simulation"]


def test_certify_small_run_passes_and_is_thread_deterministic(tmp_path):
    def one(outname, threads):
        out = tmp_path / outname
        env_before = os.environ.get("GRAPHONLQ_THREADS")
        os.environ["GRAPHONLQ_THREADS"] = str(threads)
        try:
            rc = run(["certify", "--preset", "systemic-risk", "--n", "6",
                      "--steps-per-unit", "100", "--paths", "400", "--seed", "33",
                      "--init-mean", "0.3 - 0.1*u", "--init-std", "0.1",
                      "--out", str(out)])
        finally:
            if env_before is None:
                os.environ.pop("GRAPHONLQ_THREADS", None)
            else:
                os.environ["GRAPHONLQ_THREADS"] = env_before
        assert rc == 0
        return {name: (out / name).read_bytes()
                for name in ("gap_report.csv", "report.json", "K.csv", "barK.csv")}

    a = one("t1", 1)
    b = one("t2", 2)
    c = one("t8", 8)
    assert a == b == c
    rows = a["gap_report.csv"].decode().strip().splitlines()
    assert len(rows) == 7  # header + optimal + 5 perturbations


def test_certify_flags_problem_and_preset_conflict(tmp_path):
    assert run(["certify", "--out", str(tmp_path)]) == 2
