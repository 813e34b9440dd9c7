"""Command-line front end: run scenarios, compare against the reference,
sweep parameters.

Exit codes for ``run``: 0 on convergence, 2 on non-convergence, 1 on input
errors.  ``compare`` exits 1 on input/hash mismatch and 2 when a subdomain
error exceeds ten times the run tolerance.  ``sweep`` records failing points
in the aggregate CSV and keeps going.
"""

from __future__ import annotations

import argparse
import copy
import json
import sys
from pathlib import Path

import numpy as np

from .async_rt import ThreadedExecutor, VirtualExecutor
from .coupling import RunConfig, run_asynchronous, run_synchronous, worker_specs
from .models import build_models, reference_errors
from .report import load_run, write_run_outputs, write_sweep_outputs
from .scenarios import (BUNDLED, Scenario, ScenarioError, bundled_scenario,
                        load_scenario, parse_scenario, scenario_hash)


def _resolve_scenario(spec: str) -> Scenario:
    path = Path(spec)
    if path.exists():
        return load_scenario(path)
    if spec in BUNDLED:
        return bundled_scenario(spec)
    raise ScenarioError(f"{spec}: no such file or bundled scenario "
                        f"(bundled: {', '.join(BUNDLED)})")


def _config(sc: Scenario, args) -> RunConfig:
    return RunConfig(
        mode=args.mode or sc.solver.mode,
        omega0=sc.solver.omega if args.omega is None else args.omega,
        tol=sc.solver.tol if args.tol is None else args.tol,
        max_iter=sc.solver.max_iter if args.max_iter is None else args.max_iter,
        norm=sc.solver.norm)


def _execute(sc: Scenario, cfg: RunConfig, models, executor: str, seed):
    if cfg.mode in ("richardson", "aitken"):
        return run_synchronous(models, cfg), None
    specs = worker_specs(models, sc.async_opts)
    used_seed = sc.async_opts.seed if seed is None else seed
    if executor == "virtual":
        ex = VirtualExecutor(specs, seed=used_seed,
                             max_virtual_ms=sc.async_opts.max_virtual_ms)
    else:
        ex = ThreadedExecutor(specs,
                              wall_timeout_s=sc.async_opts.wall_timeout_s)
    return run_asynchronous(models, cfg, ex), executor


def cmd_run(args) -> int:
    try:
        sc = _resolve_scenario(args.scenario)
        cfg = _config(sc, args)
        models = build_models(sc)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    rep, executor = _execute(sc, cfg, models, args.executor, args.seed)
    outdir = Path(args.out)
    summary = write_run_outputs(outdir, rep, sc.name, scenario_hash(sc),
                                executor)
    bracket = f"[{rep.patch_iter_min} - {rep.patch_iter_max}]" \
        if rep.patch_iterations else ""
    print(f"{sc.name}: mode={rep.mode} converged={rep.converged} "
          f"iterations={rep.iterations}{bracket} "
          f"residual={rep.final_residual:.3e} -> {outdir}")
    if rep.diagnostic:
        print(f"note: {rep.diagnostic}", file=sys.stderr)
    return 0 if rep.converged else 2


def cmd_compare(args) -> int:
    try:
        sc = _resolve_scenario(args.scenario)
        summary, arrays = load_run(args.rundir)
    except (ScenarioError, OSError, json.JSONDecodeError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    if summary["scenario_hash"] != scenario_hash(sc):
        print("error: run report was produced from a different scenario "
              f"(hash {summary['scenario_hash']} != {scenario_hash(sc)})",
              file=sys.stderr)
        return 1
    gm, pms, rm = build_models(sc)
    u_patches = [arrays.get(f"u_patch_{s}") for s in range(len(pms))]
    if "u_global" not in arrays:
        print("error: run directory has no solution fields", file=sys.stderr)
        return 1
    errors = reference_errors(gm, pms, rm, arrays["u_global"], u_patches)
    threshold = 10.0 * summary["tol"]
    print(f"{'subdomain':<12} {'rel_error':>12}")
    for name, err in errors.items():
        print(f"{name:<12} {err:>12.3e}")
    worst = max(errors.values())
    print(f"threshold (10*tol): {threshold:.3e}  worst: {worst:.3e}")
    if args.out:
        with open(args.out, "w") as fh:
            fh.write("subdomain,rel_error\n")
            for name, err in errors.items():
                fh.write(f"{name},{err!r}\n")
    ok = all(np.isfinite(v) for v in errors.values()) and worst <= threshold
    return 0 if ok else 2


def _sweep_axis(args) -> tuple[str, list]:
    axes = [(name, getattr(args, name.replace("-", "_")))
            for name in ("grid", "omega-list", "hetero-list")]
    chosen = [(n, v) for n, v in axes if v is not None]
    if len(chosen) != 1:
        raise ScenarioError("sweep: give exactly one of --grid, --omega-list, "
                            "--hetero-list")
    name, raw = chosen[0]
    kind = float if name == "omega-list" else (int if name == "grid" else float)
    return name, [kind(v) for v in raw.split(",")]


def _sweep_point(sc: Scenario, axis: str, value) -> Scenario:
    if axis == "grid":
        gen = dict(sc.generator or {"kind": "grid"})
        gen["n"] = int(value)
        doc = {"generator": gen,
               "solver": {"mode": sc.solver.mode, "omega": sc.solver.omega,
                          "tol": sc.solver.tol, "max_iter": sc.solver.max_iter,
                          "norm": sc.solver.norm}}
        return parse_scenario(doc)
    out = copy.deepcopy(sc)
    if axis == "omega-list":
        out.solver.omega = float(value)
    else:                                  # hetero-list: override ratios
        for p in out.patches:
            for inc in p.inclusions:
                inc.ratio = float(value)
                inc.coefficient = None
    return out


def cmd_sweep(args) -> int:
    try:
        sc = _resolve_scenario(args.scenario)
        axis, values = _sweep_axis(args)
    except (ScenarioError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    outdir = Path(args.out)
    rows = []
    for value in values:
        row = {axis: value, "converged": False, "best": ""}
        try:
            point = _sweep_point(sc, axis, value)
            cfg = _config(point, args)
            models = build_models(point)
            rep, executor = _execute(point, cfg, models, args.executor,
                                     args.seed)
            write_run_outputs(outdir / f"{axis}_{value}", rep, point.name,
                              scenario_hash(point), executor)
            row.update(converged=rep.converged, iterations=rep.iterations,
                       patch_iter_min=rep.patch_iter_min,
                       patch_iter_max=rep.patch_iter_max,
                       final_residual=rep.final_residual,
                       time=(rep.virtual_time_ms if rep.virtual_time_ms
                             is not None else rep.wall_time_s))
        except (ScenarioError, ValueError, RuntimeError) as exc:
            row["error"] = str(exc).replace(",", ";")
        rows.append(row)
        print(f"{axis}={value}: " + (f"iterations={row.get('iterations')} "
              f"converged={row['converged']}" if "error" not in row
              else f"failed ({row['error']})"))
    if axis == "omega-list":
        ok = [r for r in rows if r.get("converged")]
        if ok:
            best = min(ok, key=lambda r: r["iterations"])
            best["best"] = "yes"
            print(f"best omega: {best[axis]} ({best['iterations']} iterations)")
    write_sweep_outputs(outdir, axis, rows)
    return 0 if any(r.get("converged") for r in rows) else 2


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="glocal",
        description="Non-invasive global-local coupling: synchronous and "
                    "asynchronous drivers over 2D thermal/elastic scenarios.")
    sub = ap.add_subparsers(dest="command", required=True)

    run = sub.add_parser("run", help="run one scenario and write a report")
    run.add_argument("scenario", help="scenario JSON path or bundled name")
    run.add_argument("--mode", choices=["richardson", "aitken", "async"])
    run.add_argument("--omega", type=float)
    run.add_argument("--tol", type=float)
    run.add_argument("--max-iter", type=int)
    run.add_argument("--executor", choices=["virtual", "threads"],
                     default="virtual", help="async execution backend")
    run.add_argument("--seed", type=int, help="virtual executor seed")
    run.add_argument("--out", default="out/run")
    run.set_defaults(fn=cmd_run)

    cmp_ = sub.add_parser("compare",
                          help="compare a run against the reference solve")
    cmp_.add_argument("scenario")
    cmp_.add_argument("rundir")
    cmp_.add_argument("--out", help="optional CSV output path")
    cmp_.set_defaults(fn=cmd_compare)

    sw = sub.add_parser("sweep", help="run a one-axis parameter sweep")
    sw.add_argument("scenario")
    sw.add_argument("--grid", help="comma list of grid sizes n (n x n patches)")
    sw.add_argument("--omega-list", help="comma list of relaxation values")
    sw.add_argument("--hetero-list", help="comma list of inclusion ratios")
    sw.add_argument("--mode", choices=["richardson", "aitken", "async"])
    sw.add_argument("--omega", type=float)
    sw.add_argument("--tol", type=float)
    sw.add_argument("--max-iter", type=int)
    sw.add_argument("--executor", choices=["virtual", "threads"],
                    default="virtual")
    sw.add_argument("--seed", type=int)
    sw.add_argument("--out", default="out/sweep")
    sw.set_defaults(fn=cmd_sweep)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    return args.fn(args)


if __name__ == "__main__":
    sys.exit(main())
