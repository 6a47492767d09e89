"""CSV artifact writers.

RFC-4180 framing (CRLF records), '.' decimal separator, and floats formatted
with ``repr`` (shortest exact round-trip, at most 17 significant digits).
Identical inputs produce byte-identical files.
"""
from __future__ import annotations

import csv

import numpy as np


def _cell(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def write_csv(path, header, rows) -> None:
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.writer(fh)
        writer.writerow(header)
        for row in rows:
            writer.writerow([_cell(x) for x in row])


def _flat_header(prefix: str, shape) -> list[str]:
    return [prefix + "_" + "_".join(map(str, idx)) for idx in np.ndindex(*shape)]


def dump_kpath(path, K) -> None:
    d = K.values.shape[-1]
    header = ["t", "label"] + _flat_header("K", (d, d))
    rows = ((t, i, *K.values[k, i].ravel())
            for k, t in enumerate(K.tg.nodes) for i in range(K.values.shape[1]))
    write_csv(path, header, rows)


def dump_barkpath(path, bar) -> None:
    n = bar.values.shape[1]
    d = bar.values.shape[-1]
    header = ["t", "i", "j"] + _flat_header("barK", (d, d))
    rows = ((t, i, j, *bar.values[k, i, j].ravel())
            for k, t in enumerate(bar.tg.nodes) for i in range(n) for j in range(n))
    write_csv(path, header, rows)


def dump_ypath(path, Y) -> None:
    d = Y.values.shape[-1]
    header = ["t", "label"] + _flat_header("Y", (d,))
    rows = ((t, i, *Y.values[k, i])
            for k, t in enumerate(Y.tg.nodes) for i in range(Y.values.shape[1]))
    write_csv(path, header, rows)


def dump_lambdapath(path, Lam) -> None:
    rows = ((t, i, Lam.values[k, i])
            for k, t in enumerate(Lam.tg.nodes) for i in range(Lam.values.shape[1]))
    write_csv(path, ["t", "label", "Lambda"], rows)


def dump_feedback(state_path, kernel_path, law) -> None:
    """State gain + offset in one file, the mean-field gain kernel in another."""
    N1, n, m, d = law.gain_x.shape
    header = ["t", "label"] + _flat_header("gain_x", (m, d)) + _flat_header("offset", (m,))
    rows = ((t, i, *law.gain_x[k, i].ravel(), *law.offset[k, i])
            for k, t in enumerate(law.tg.nodes) for i in range(n))
    write_csv(state_path, header, rows)
    header_k = ["t", "i", "j"] + _flat_header("gain_mean", (m, d))
    rows_k = ((t, i, j, *law.gain_mean[k, i, j].ravel())
              for k, t in enumerate(law.tg.nodes) for i in range(n) for j in range(n))
    write_csv(kernel_path, header_k, rows_k)


def dump_mean_flow(path, flow) -> None:
    _, n, d = flow.states.shape
    m = flow.control_means.shape[-1]
    header = ["t", "label"] + _flat_header("mean", (d,)) + _flat_header("control_mean", (m,))
    rows = ((t, i, *flow.states[k, i], *flow.control_means[k, i])
            for k, t in enumerate(flow.tg.nodes) for i in range(n))
    write_csv(path, header, rows)


def dump_empirical(path, ens) -> None:
    _, n, d = ens.mean_path.shape
    std = ens.std_path()
    header = ["t", "label"] + _flat_header("emp_mean", (d,)) + _flat_header("emp_std", (d,))
    rows = ((t, i, *ens.mean_path[k, i], *std[k, i])
            for k, t in enumerate(ens.tg.nodes) for i in range(n))
    write_csv(path, header, rows)


def dump_gap_reports(path, reports) -> None:
    header = ["label", "J", "stderr", "V", "gap", "penalty", "gap_minus_penalty", "stderr_resid"]
    rows = ((r.label, r.J, r.stderr, r.V, r.gap, r.penalty, r.gap_minus_penalty, r.stderr_resid)
            for r in reports)
    write_csv(path, header, rows)
