"""Run artifacts: machine-readable reports, residual histories, figures.

Every run directory contains ``report.json`` (the summary), ``history.csv``
(one row per interface-load update), ``solution.npz`` (the converged fields)
and ``residual.png``; asynchronous runs add the executor event log as
``trace.csv``.  CSV files are the machine boundary; the figures are rendered
next to them for quick inspection.
"""

from __future__ import annotations

import json
from pathlib import Path

import matplotlib
matplotlib.use("Agg")
import matplotlib.pyplot as plt
import numpy as np

from .coupling import RunReport


def _fmt(x: float) -> str:
    return repr(float(x))


def summary_dict(rep: RunReport, sc_name: str, sc_hash: str,
                 executor: str | None) -> dict:
    final = rep.final_residual
    return {
        "scenario": sc_name,
        "scenario_hash": sc_hash,
        "mode": rep.mode,
        "omega": rep.omega0,
        "tol": rep.tol,
        "norm": rep.norm,
        "converged": rep.converged,
        "iterations": rep.iterations,
        "patch_iterations": list(rep.patch_iterations),
        "patch_iter_min": rep.patch_iter_min,
        "patch_iter_max": rep.patch_iter_max,
        "final_residual": final if np.isfinite(final) else None,
        "r_ref": rep.r_ref,
        "wall_time_s": rep.wall_time_s,
        "virtual_time_ms": rep.virtual_time_ms,
        "executor": executor,
        "diagnostic": rep.diagnostic,
    }


def write_history_csv(path: Path, rep: RunReport) -> None:
    with open(path, "w") as fh:
        fh.write("iter_or_time,residual,omega\n")
        for when, rel, omega in rep.history:
            fh.write(f"{_fmt(when)},{_fmt(rel)},{_fmt(omega)}\n")


def write_residual_figure(path: Path, rep: RunReport) -> None:
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    if rep.history:
        when = [row[0] for row in rep.history]
        res = [max(row[1], 1e-300) for row in rep.history]
        ax.semilogy(when, res, "o-", ms=3, lw=1)
    ax.set_xlabel("iteration" if rep.mode != "async" else "time (ms)")
    ax.set_ylabel("relative residual")
    ax.set_title(f"{rep.mode}, converged={rep.converged}")
    ax.grid(True, which="both", alpha=0.3)
    fig.tight_layout()
    fig.savefig(path, dpi=130)
    plt.close(fig)


def write_run_outputs(outdir, rep: RunReport, sc_name: str, sc_hash: str,
                      executor: str | None = None) -> dict:
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    summary = summary_dict(rep, sc_name, sc_hash, executor)
    (outdir / "report.json").write_text(json.dumps(summary, indent=2) + "\n")
    write_history_csv(outdir / "history.csv", rep)
    arrays = {"p_final": rep.p_final if rep.p_final is not None else np.zeros(0)}
    if rep.u_global is not None:
        arrays["u_global"] = rep.u_global
    for s, u in enumerate(rep.u_patches):
        if u is not None:
            arrays[f"u_patch_{s}"] = u
    np.savez(outdir / "solution.npz", **arrays)
    write_residual_figure(outdir / "residual.png", rep)
    if rep.trace is not None:
        rep.trace.to_csv(outdir / "trace.csv")
    return summary


def load_run(outdir) -> tuple[dict, dict]:
    outdir = Path(outdir)
    summary = json.loads((outdir / "report.json").read_text())
    with np.load(outdir / "solution.npz") as z:
        arrays = {k: z[k] for k in z.files}
    return summary, arrays


def write_sweep_outputs(outdir, axis: str, rows: list[dict]) -> None:
    """Aggregate CSV + iteration figure over one sweep axis."""
    outdir = Path(outdir)
    outdir.mkdir(parents=True, exist_ok=True)
    cols = [axis, "converged", "iterations", "patch_iter_min",
            "patch_iter_max", "final_residual", "time", "best", "error"]
    with open(outdir / "sweep.csv", "w") as fh:
        fh.write(",".join(cols) + "\n")
        for row in rows:
            fh.write(",".join(str(row.get(c, "")) for c in cols) + "\n")

    ok = [r for r in rows if r.get("converged")]
    fig, ax = plt.subplots(figsize=(5.0, 3.2))
    if ok:
        ax.plot([r[axis] for r in ok], [r["iterations"] for r in ok], "o-")
    ax.set_xlabel(axis)
    ax.set_ylabel("iterations")
    ax.grid(True, alpha=0.3)
    fig.tight_layout()
    fig.savefig(outdir / "sweep.png", dpi=130)
    plt.close(fig)
