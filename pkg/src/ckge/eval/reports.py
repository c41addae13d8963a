"""CSV, JSON and Markdown exports of evaluation results, and their re-checking."""
from __future__ import annotations

import csv
import json
import math
from pathlib import Path

import numpy as np

from .forgetting import ForgettingReport
from .metrics import METRICS, MetricDomainError, MetricMatrix, ThetaResult, aggregate_final, bwt, cf, omega_new

CSV_COLUMNS = ("snapshot_j", "testset_i", "policy", "metric", "value", "n_queries")
POLICY_FILES = {"legacy": ("snapshot-local", "theta_legacy.csv"), "corrected": ("current", "theta_corrected.csv")}
RECHECK_TOL = 1e-12


class ReportError(RuntimeError):
    pass


def write_theta_csv(theta: ThetaResult, policy: str, path) -> None:
    kind = POLICY_FILES[policy][0]
    with open(path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(CSV_COLUMNS)
        for m in METRICS:
            mat = theta.matrices[(kind, m)]
            for j in range(mat.N + 1):
                for i in range(j + 1):
                    w.writerow([j, i, policy, m, repr(float(mat.values[j, i])), 2 * int(mat.sizes[i])])


def read_theta_csv(path) -> dict:
    """``metric -> MetricMatrix`` from a file written by :func:`write_theta_csv`."""
    path = Path(path)
    if not path.is_file():
        raise ReportError(f"missing artifact {path}")
    cells: dict = {}
    sizes: dict = {}
    policy = None
    with open(path, newline="") as f:
        reader = csv.DictReader(f)
        if tuple(reader.fieldnames or ()) != CSV_COLUMNS:
            raise ReportError(f"{path}: unexpected columns {reader.fieldnames}")
        for lineno, row in enumerate(reader, start=2):
            try:
                j, i = int(row["snapshot_j"]), int(row["testset_i"])
                v, nq = float(row["value"]), int(row["n_queries"])
            except (TypeError, ValueError) as e:
                raise ReportError(f"{path}:{lineno}: {e}") from None
            policy = row["policy"]
            cells.setdefault(row["metric"], {})[(j, i)] = v
            sizes[i] = nq // 2
    if not cells:
        raise ReportError(f"{path}: no theta rows")
    out = {}
    for m, c in cells.items():
        n = max(j for j, _ in c) + 1
        vals = np.full((n, n), np.nan)
        for (j, i), v in c.items():
            vals[j, i] = v
        out[m] = MetricMatrix(vals, m, POLICY_FILES.get(policy, (policy,))[0], [sizes[i] for i in range(n)])
    return out


def write_report_json(report: ForgettingReport, path) -> None:
    with open(path, "w") as f:
        json.dump(report.to_dict(), f, indent=2, sort_keys=True)
        f.write("\n")


def summary_rows(legacy: MetricMatrix, corrected: MetricMatrix) -> list:
    """(label, MRR w/o, MRR, % change) per test set at the last checkpoint, then the weighted total."""
    N = corrected.N
    rows = []
    for i in range(N + 1):
        rows.append((f"test set {i}", float(legacy.values[N, i]), float(corrected.values[N, i])))
    rows.append(("weighted", aggregate_final(legacy), aggregate_final(corrected)))
    return [(lab, a, b, _pct(a, b)) for lab, a, b in rows]


def _pct(wo, w):
    return 0.0 if wo == 0 else 100.0 * (w - wo) / wo


def markdown_summary(legacy: MetricMatrix, corrected: MetricMatrix, report: ForgettingReport | None = None,
                     title: str = "") -> str:
    lines = []
    if title:
        lines += [f"## {title}", ""]
    lines += ["| | MRR^{w/o} | MRR | %change |", "|---|---:|---:|---:|"]
    for lab, a, b, p in summary_rows(legacy, corrected):
        lines.append(f"| {lab} | {a:.3f} | {b:.3f} | {p:.1f}% |")
    if report is not None:
        lines += ["", "| BWT | CF | Omega_new |", "|---:|---:|---:|",
                  f"| {_fmt(report.BWT)} | {_fmt(report.CF)} | {_fmt(report.Omega_new)} |"]
        c = report.classification
        lines += ["", "| still-correct | drift-forgotten | interference-forgotten | both |", "|---:|---:|---:|---:|",
                  f"| {c['still-correct']} | {c['drift-forgotten']} | {c['interference-forgotten']} | {c['both']} |"]
    return "\n".join(lines) + "\n"


def _fmt(x):
    return "n/a" if x is None else f"{x:.4f}"


def _recompute(fn, mat):
    try:
        return fn(mat)
    except MetricDomainError:
        return None


def recheck_run_dir(run_dir) -> tuple[list, dict]:
    """Recompute BWT, CF and Omega_new from the corrected theta CSV and compare with report.json.

    Returns ``(mismatches, context)``; ``context`` carries the loaded matrices
    and report for printing.
    """
    run_dir = Path(run_dir)
    needed = [run_dir / "theta_legacy.csv", run_dir / "theta_corrected.csv", run_dir / "report.json"]
    missing = [p.name for p in needed if not p.is_file()]
    if missing:
        raise ReportError(f"{run_dir}: missing artifact(s): {', '.join(missing)}")
    legacy = read_theta_csv(needed[0])["MRR"]
    corrected = read_theta_csv(needed[1])["MRR"]
    with open(needed[2]) as f:
        stored = json.load(f)
    mismatches = []
    for key, fn in (("BWT", bwt), ("CF", cf), ("Omega_new", omega_new)):
        got, want = _recompute(fn, corrected), stored.get(key)
        if (got is None) != (want is None) or (
            got is not None and not (math.isfinite(got) and abs(got - want) <= RECHECK_TOL)
        ):
            mismatches.append((key, want, got))
    return mismatches, {"legacy": legacy, "corrected": corrected, "report": stored}
