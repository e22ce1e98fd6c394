"""Experiment driver: run a configured scene, emit metrics/trace/snapshot files.

Output conventions: comma-separated, LF line endings, header row, floats with
17 significant digits. Every row carries the schema id in its last column so
consumers can check compatibility. With timings disabled in the configuration,
wall-clock columns are written as zero and outputs are byte-identical across
runs of the same (config, seed).
"""

from __future__ import annotations

import csv
import os
from dataclasses import dataclass

import numpy as np

from .engine import Simulator, StepReport
from .scenes import SceneConfig, generate_scene, solver_config_from_scene

METRICS_SCHEMA = "metrics.v1"
TRACE_SCHEMA = "trace.v1"

METRICS_COLUMNS = [
    "step", "n_contacts", "newton_iterations", "solver_iterations",
    "krylov_iterations", "precompute_time", "solve_time",
    "persistence_fraction", "max_penetration", "objective", "schema_version",
]
TRACE_COLUMNS = [
    "step", "newton_iteration", "t", "eta", "r_gamma_norm", "alpha",
    "inner_iterations", "inner_residual", "precompute_time", "solve_time",
    "wall_time", "schema_version",
]


def fmt(value) -> str:
    if isinstance(value, (bool, np.bool_)):
        return "1" if value else "0"
    if isinstance(value, (int, np.integer)):
        return str(int(value))
    return f"{float(value):.17g}"


@dataclass
class StepMetrics:
    step: int
    n_contacts: int
    newton_iterations: int
    solver_iterations: int
    krylov_iterations: int
    precompute_time: float
    solve_time: float
    persistence_fraction: float
    max_penetration: float
    objective: float

    @classmethod
    def from_report(cls, report: StepReport, timings: bool) -> "StepMetrics":
        return cls(
            step=report.step_index,
            n_contacts=report.n_contacts,
            newton_iterations=report.newton_iterations,
            solver_iterations=report.solver_iterations,
            krylov_iterations=report.inner_iterations,
            precompute_time=report.precompute_time if timings else 0.0,
            solve_time=report.solve_time if timings else 0.0,
            persistence_fraction=report.persistence_fraction,
            max_penetration=report.max_penetration,
            objective=report.objective,
        )

    def row(self) -> list[str]:
        return [fmt(self.step), fmt(self.n_contacts), fmt(self.newton_iterations),
                fmt(self.solver_iterations), fmt(self.krylov_iterations),
                fmt(self.precompute_time), fmt(self.solve_time),
                fmt(self.persistence_fraction), fmt(self.max_penetration),
                fmt(self.objective), METRICS_SCHEMA]


def _write_rows(path, header, rows) -> None:
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(header)
        writer.writerows(rows)


def write_snapshot(path, world) -> None:
    rows = []
    for i, b in enumerate(world.bodies):
        q = b.orientation
        rows.append([fmt(i), fmt(b.position[0]), fmt(b.position[1]),
                     fmt(b.position[2]), fmt(q[0]), fmt(q[1]), fmt(q[2]), fmt(q[3])])
    _write_rows(path, ["body", "x", "y", "z", "qw", "qx", "qy", "qz"], rows)


def run_experiment(config: SceneConfig, out_dir) -> int:
    """Run the configured scene; writes metrics.csv, trace.csv, snapshots.

    Returns a process exit status: 0 on success, 1 when the contact solver
    hard-failed (partial outputs are still written).
    """
    os.makedirs(out_dir, exist_ok=True)
    world = generate_scene(config)
    sim = Simulator(world, solver_config_from_scene(config))
    metric_rows: list[list[str]] = []
    trace_rows: list[list[str]] = []
    status = 0
    try:
        for step in range(config.steps):
            report = sim.step()
            metric_rows.append(StepMetrics.from_report(report, config.timings).row())
            for tr in report.trace:
                trace_rows.append([
                    fmt(report.step_index), fmt(tr.iteration), fmt(tr.t), fmt(tr.eta),
                    fmt(tr.r_gamma_norm), fmt(tr.alpha), fmt(tr.inner_iterations),
                    fmt(tr.inner_residual),
                    fmt(tr.precompute_time if config.timings else 0.0),
                    fmt(tr.solve_time if config.timings else 0.0),
                    fmt(tr.wall_time if config.timings else 0.0), TRACE_SCHEMA])
            if config.snapshot_every and (step + 1) % config.snapshot_every == 0:
                write_snapshot(os.path.join(out_dir, f"snapshot_{step + 1:06d}.csv"),
                               sim.world)
    except Exception as exc:  # solver hard failure: keep partial outputs
        status = 1
        with open(os.path.join(out_dir, "failure.txt"), "w", newline="\n") as fh:
            fh.write(f"{type(exc).__name__}: {exc}\n")
    _write_rows(os.path.join(out_dir, "metrics.csv"), METRICS_COLUMNS, metric_rows)
    _write_rows(os.path.join(out_dir, "trace.csv"), TRACE_COLUMNS, trace_rows)
    return status


def read_metrics(path) -> dict[str, np.ndarray]:
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        header = next(reader)
        if header != METRICS_COLUMNS:
            raise ValueError(f"{path}: unexpected metrics schema {header}")
        rows = list(reader)
    out: dict[str, np.ndarray] = {}
    for j, name in enumerate(METRICS_COLUMNS[:-1]):
        out[name] = np.array([float(r[j]) for r in rows])
    return out


def compare_report(paths, labels=None, bin_width: float = 0.25) -> list[dict]:
    """Bin metrics by log10(n_contacts) and summarize per file.

    For every file beyond the first, speedup columns report
    first_file_time / this_file_time per bin (total = precompute + solve).
    Empty bins are omitted.
    """
    if not paths:
        raise ValueError("need at least one metrics file")
    labels = labels or [os.path.basename(os.path.dirname(p) or p) or f"file{i}"
                        for i, p in enumerate(paths)]
    data = [read_metrics(p) for p in paths]
    rows = []
    base = data[0]
    for i, (d, label) in enumerate(zip(data, labels)):
        mask = d["n_contacts"] > 0
        if not np.any(mask):
            continue
        logs = np.log10(d["n_contacts"][mask])
        bins = np.floor(logs / bin_width).astype(int)
        for b in sorted(set(bins.tolist())):
            sel = bins == b
            pick = lambda name: d[name][mask][sel]
            total = pick("precompute_time") + pick("solve_time")
            row = {
                "file": label,
                "bin_low": b * bin_width,
                "bin_high": (b + 1) * bin_width,
                "n_steps": int(sel.sum()),
                "mean_contacts": float(pick("n_contacts").mean()),
                "mean_newton": float(pick("newton_iterations").mean()),
                "median_newton": float(np.median(pick("newton_iterations"))),
                "mean_krylov": float(pick("krylov_iterations").mean()),
                "median_krylov": float(np.median(pick("krylov_iterations"))),
                "mean_precompute": float(pick("precompute_time").mean()),
                "median_precompute": float(np.median(pick("precompute_time"))),
                "mean_solve": float(pick("solve_time").mean()),
                "median_solve": float(np.median(pick("solve_time"))),
                "mean_total": float(total.mean()),
            }
            if i > 0:
                bmask = base["n_contacts"] > 0
                blogs = np.log10(base["n_contacts"][bmask])
                bsel = np.floor(blogs / bin_width).astype(int) == b
                if np.any(bsel):
                    btotal = (base["precompute_time"][bmask][bsel]
                              + base["solve_time"][bmask][bsel])
                    row["speedup_vs_first"] = float(btotal.mean() / max(total.mean(),
                                                                        1e-300))
            rows.append(row)
    return rows


def write_compare_csv(rows: list[dict], path) -> None:
    columns = ["file", "bin_low", "bin_high", "n_steps", "mean_contacts",
               "mean_newton", "median_newton", "mean_krylov", "median_krylov",
               "mean_precompute", "median_precompute", "mean_solve",
               "median_solve", "mean_total", "speedup_vs_first"]
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([fmt(row[c]) if isinstance(row.get(c), (int, float))
                             else str(row.get(c, "")) for c in columns])
