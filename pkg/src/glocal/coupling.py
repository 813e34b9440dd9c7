"""The coupling iteration: residual assembly, relaxation, and both drivers.

One iteration: solve the coarse model under the current interface load p,
post-process the complement-zone reaction, solve every patch under Dirichlet
data interpolated from the coarse interface, and measure the lack of balance

    r = -(A0 lam0 + sum_s A_s J_s^T lam_s)

on the coarse interface.  The load is then relaxed, p <- p + omega r, with
omega fixed or adapted by Aitken's secant rule.  The synchronous driver runs
this as a loop; the asynchronous driver runs the same pieces as reactive
worker programs exchanging data through single-writer windows, with the
global worker (rank 0) updating from the latest available patch reactions
and detecting convergence.
"""

from __future__ import annotations

import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .async_rt import Compute, Get, Mark, Now, Put, Wait, Window, WorkerSpec
from .models import GlobalModel, PatchModel
from .sparse import matvec, solve
from .transfer import (assemble_to_global, interp_apply,
                       interp_transpose_apply, trace)

OMEGA_MIN, OMEGA_MAX = 1e-4, 10.0

# absolute floor below which a first residual counts as an exact fixed point
_ZERO_RTOL = 1e-12


@dataclass
class CouplingState:
    """Mutable interface state owned by the driver (rank 0 in async runs)."""

    p: np.ndarray
    omega: float
    r: np.ndarray | None = None
    iter: int = 0
    history: list = field(default_factory=list)   # (when, ||r||, omega)


@dataclass
class RunConfig:
    mode: str = "aitken"            # richardson | aitken | async
    omega0: float = 1.0
    tol: float = 1e-8
    max_iter: int = 200
    norm: str = "inf"

    def __post_init__(self) -> None:
        if self.tol <= 0.0:
            raise ValueError("tol must be positive")
        if self.max_iter < 1:
            raise ValueError("max_iter must be >= 1")


@dataclass
class RunReport:
    converged: bool
    iterations: int                         # interface load updates
    patch_iterations: list                  # solves per patch
    final_residual: float                   # relative to the first residual
    r_ref: float
    p_final: np.ndarray | None
    u_global: np.ndarray | None
    u_patches: list
    history: list                           # (iter or time, relative ||r||, omega)
    mode: str
    omega0: float
    tol: float
    norm: str
    wall_time_s: float = 0.0
    virtual_time_ms: float | None = None
    diagnostic: str | None = None
    trace: object | None = None             # async_rt.Trace for async runs

    @property
    def patch_iter_min(self) -> int:
        return min(self.patch_iterations) if self.patch_iterations else 0

    @property
    def patch_iter_max(self) -> int:
        return max(self.patch_iterations) if self.patch_iterations else 0


def _norm(v: np.ndarray, kind: str) -> float:
    if v.size == 0:
        return 0.0
    return float(np.abs(v).max() if kind == "inf" else np.linalg.norm(v))


def _clamp_omega(w: float) -> float:
    return float(min(max(w, OMEGA_MIN), OMEGA_MAX))


def global_solve(gm: GlobalModel, p: np.ndarray) -> np.ndarray:
    """Coarse solve under the extra interface load p (zero Dirichlet data)."""
    extra = np.zeros(gm.dofmap.n_dofs)
    extra[gm.gamma_trace.domain_dofs] = p
    rhs = (gm.load + extra)[gm.dofmap.free_dofs]
    u = np.zeros(gm.dofmap.n_dofs)
    u[gm.dofmap.free_dofs] = solve(gm.factor, rhs)
    return u


def complement_reaction(gm: GlobalModel, u: np.ndarray) -> np.ndarray:
    """Reaction of the complement zone on the interface dofs."""
    if not gm.complement_present:
        raise ValueError("complement reaction requested with empty complement")
    res = matvec(gm.complement_stiffness, u) - gm.complement_load
    return res[gm.gamma_trace.domain_dofs]


def patch_solve(pm: PatchModel, g_coarse: np.ndarray
                ) -> tuple[np.ndarray, np.ndarray]:
    """Fine solve under interpolated Dirichlet data; returns (u, reaction).

    The reaction is K u - f on the fine interface dofs, i.e. the multiplier of
    the equivalent saddle formulation, signed as the force exerted by the
    patch surroundings.
    """
    g_fine = interp_apply(pm.interp, g_coarse)
    g_fixed = np.zeros(len(pm.dofmap.fixed_dofs))
    g_fixed[pm.fixed_if_pos] = g_fine
    rhs = pm.load[pm.dofmap.free_dofs] - pm.kfc @ g_fixed
    u = np.empty(pm.dofmap.n_dofs)
    u[pm.dofmap.free_dofs] = solve(pm.factor, rhs)
    u[pm.dofmap.fixed_dofs] = g_fixed
    lam = (matvec(pm.stiffness, u) - pm.load)[pm.fine_trace.domain_dofs]
    return u, lam


def assemble_residual(gm: GlobalModel, patches: list[PatchModel],
                      lam0: np.ndarray | None, qs: list) -> np.ndarray:
    """Interface lack of balance from the latest known reactions."""
    acc = np.zeros(gm.gamma_trace.size)
    if lam0 is not None:
        acc += lam0
    for pm, q in zip(patches, qs):
        assemble_to_global(q[pm.gamma_mask], pm.assembly, acc)
    return -acc


def richardson_update(state: CouplingState, r: np.ndarray,
                      when: float | None = None,
                      norm_kind: str = "inf",
                      recorded_norm: float | None = None) -> CouplingState:
    """Relaxed update p <- p + omega r; appends to the state history.

    ``recorded_norm`` overrides the logged residual norm (the async driver
    logs the plain balance residual while updating with the repaired one).
    """
    state.p = state.p + state.omega * r
    state.r = r
    state.history.append((state.iter if when is None else when,
                          _norm(r, norm_kind) if recorded_norm is None
                          else recorded_norm,
                          state.omega))
    state.iter += 1
    return state


def aitken_omega(r_prev: np.ndarray, r_curr: np.ndarray,
                 omega_prev: float) -> float:
    """Secant-type relaxation from two consecutive residuals.

    Keeps the previous value when the residual stagnates (zero difference).
    """
    d = r_curr - r_prev
    den = float(d @ d)
    if den == 0.0:
        return omega_prev
    return float(-omega_prev * (r_prev @ d) / den)


def _zero_scale(lam0: np.ndarray | None, qs: list) -> float:
    parts = [np.abs(q).max() if q.size else 0.0 for q in qs]
    if lam0 is not None and lam0.size:
        parts.append(np.abs(lam0).max())
    return max(1.0, *parts) if parts else 1.0


def _report_history(state: CouplingState, r_ref: float) -> list:
    scale = r_ref if r_ref > 0 else 1.0
    return [(when, nr / scale, om) for when, nr, om in state.history]


def _patch_workers(n_patches: int) -> int:
    cap = os.environ.get("GLOCAL_THREADS")
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_patches, limit))


def run_synchronous(models, cfg: RunConfig) -> RunReport:
    """Alternating global/local iteration with fixed or Aitken relaxation.

    ``models`` is the tuple returned by :func:`glocal.models.build_models`.
    Patch solves within one iteration run concurrently (they are independent
    and each writes its own slot, so results do not depend on scheduling);
    the residual is assembled only after all of them return.
    """
    if cfg.mode not in ("richardson", "aitken"):
        raise ValueError("synchronous driver expects mode richardson or aitken")
    gm, patches = models[0], models[1]
    t0 = time.perf_counter()
    state = CouplingState(p=np.zeros(gm.gamma_trace.size), omega=cfg.omega0)
    patch_solves = [0] * len(patches)
    u_patches: list = [None] * len(patches)
    r_prev = None
    r_ref = None
    rel = 0.0
    converged = False
    u = None
    pool = ThreadPoolExecutor(max_workers=_patch_workers(len(patches))) \
        if len(patches) > 1 else None

    def local_solve(pm, u_g):
        u_s, lam = patch_solve(pm, trace(u_g, pm.coarse_trace))
        return u_s, interp_transpose_apply(pm.interp, lam)

    while True:
        u = global_solve(gm, state.p)
        lam0 = complement_reaction(gm, u) if gm.complement_present else None
        if pool is not None:
            results = list(pool.map(local_solve, patches, [u] * len(patches)))
        else:
            results = [local_solve(pm, u) for pm in patches]
        qs = []
        for s, (u_s, q) in enumerate(results):
            qs.append(q)
            u_patches[s] = u_s
            patch_solves[s] += 1
        r = assemble_residual(gm, patches, lam0, qs)
        nr = _norm(r, cfg.norm)

        if r_ref is None:
            if nr <= _ZERO_RTOL * _zero_scale(lam0, qs):
                converged = True            # already at the fixed point
                rel = 0.0
                break
            r_ref = nr
        rel = nr / r_ref
        if rel <= cfg.tol:
            converged = True
            break
        if state.iter >= cfg.max_iter:
            break
        if cfg.mode == "aitken" and r_prev is not None:
            state.omega = _clamp_omega(aitken_omega(r_prev, r, state.omega))
        richardson_update(state, r, norm_kind=cfg.norm)
        r_prev = r

    if pool is not None:
        pool.shutdown()
    return RunReport(
        converged=converged, iterations=state.iter,
        patch_iterations=patch_solves, final_residual=rel,
        r_ref=r_ref if r_ref is not None else 0.0,
        p_final=state.p, u_global=u, u_patches=u_patches,
        history=_report_history(state, r_ref if r_ref is not None else 0.0),
        mode=cfg.mode, omega0=cfg.omega0, tol=cfg.tol, norm=cfg.norm,
        wall_time_s=time.perf_counter() - t0)


def _stale_correction(gm, u_by_vintage, latest: int, vintages: list) -> np.ndarray:
    """Re-pair stale patch reactions with their own solve's coarse-zone reaction.

    The residual identity r = -p + sum_s (lam_sG - J^T lam_sF) only contracts
    when each patch's coarse and fine reactions come from the same iterate;
    assembling a fresh complement reaction against stale q's breaks that
    pairing and destabilizes the asynchronous iteration.  The repair term is
    sum_s K^(s),G (u^(v_s) - u^(latest)) on the interface dofs (the load terms
    cancel); it vanishes identically when every patch is current, so lockstep
    schedules reproduce the synchronous assembly bit for bit.
    """
    corr = np.zeros(gm.gamma_trace.size)
    for s, v in enumerate(vintages):
        if v == latest or v not in u_by_vintage:
            continue
        du = u_by_vintage[v] - u_by_vintage[latest]
        corr += matvec(gm.patch_zone_stiffness[s], du)[gm.gamma_trace.domain_dofs]
    return corr


def _rank0_program(gm, patches, cfg, wins_q, wins_g, win_stop, out,
                   barrier: bool):
    """Reactive loop of the global worker (rank 0)."""
    state = CouplingState(p=np.zeros(gm.gamma_trace.size), omega=cfg.omega0)
    ns = len(patches)
    known = [0] * ns
    qs = [np.zeros(pm.coarse_trace.size) for pm in patches]
    vintages = [0] * ns
    out["state"] = state

    def solve_and_react(p):
        u = global_solve(gm, p)
        lam0 = complement_reaction(gm, u) if gm.complement_present else None
        return u, lam0

    u, lam0 = yield Compute("solve", lambda: solve_and_react(state.p))
    out["u_global"] = u
    latest = 1                       # trace version the next puts will carry
    u_by_vintage = {latest: u}
    for s, pm in enumerate(patches):
        yield Put(wins_g[s], trace(u, pm.coarse_trace))

    r_ref = None
    while True:
        yield Wait([(wins_q[s], known[s]) for s in range(ns)])
        fresh = False
        for s in range(ns):
            payload, ver = yield Get(wins_q[s])
            if ver > known[s]:
                known[s] = ver
                qs[s] = payload[:-1]
                vintages[s] = int(payload[-1])
                fresh = True
        if not fresh:
            continue
        if (r_ref is None or barrier) and not all(v >= state.iter + 1 for v in known):
            continue        # first residual (and, in barrier mode, all others)
                            # uses one fresh reaction from every patch
        # The plain assembly measures the actual lack of balance of the mixed
        # iterate and anchors convergence detection; the update direction gets
        # the vintage-pairing repair (at equal vintages both coincide).
        r = assemble_residual(gm, patches, lam0, qs)
        nr = _norm(r, cfg.norm)
        if r_ref is None:
            if nr <= _ZERO_RTOL * _zero_scale(lam0, qs):
                out.update(converged=True, rel=0.0, r_ref=0.0)
                yield Put(win_stop, np.ones(1))
                yield Mark("converged", "r0=0")
                return
            r_ref = nr
            out["r_ref"] = r_ref
        rel = nr / r_ref
        if rel <= cfg.tol:
            out.update(converged=True, rel=rel)
            yield Put(win_stop, np.ones(1))
            yield Mark("converged", f"rel={rel:.3e}")
            return
        if state.iter >= cfg.max_iter:
            out.update(converged=False, rel=rel,
                       diagnostic="update budget exhausted")
            yield Put(win_stop, np.ones(1))
            return
        r_upd = r + _stale_correction(gm, u_by_vintage, latest, vintages)
        for v in [v for v in u_by_vintage if v < min(vintages) and v != latest]:
            del u_by_vintage[v]
        when = yield Now()
        richardson_update(state, r_upd, when=when, norm_kind=cfg.norm,
                          recorded_norm=nr)
        u, lam0 = yield Compute("solve", lambda: solve_and_react(state.p))
        out["u_global"] = u
        latest += 1
        u_by_vintage[latest] = u
        for s, pm in enumerate(patches):
            yield Put(wins_g[s], trace(u, pm.coarse_trace))


def _patch_program(s, pm, wins_q, wins_g, win_stop, out):
    """Reactive loop of one patch worker.

    The posted reaction carries the trace version it responded to in its last
    slot, so rank 0 can pair it with the matching global solve.
    """
    known = 0
    while True:
        yield Wait([(wins_g[s], known), (win_stop, 0)])
        _, stop_ver = yield Get(win_stop)
        if stop_ver > 0:
            return
        g, ver = yield Get(wins_g[s])
        if ver == known:
            continue
        known = ver
        u_s, lam = yield Compute("solve", lambda g=g: patch_solve(pm, g))
        q = interp_transpose_apply(pm.interp, lam)
        yield Put(wins_q[s], np.concatenate([q, [float(known)]]))
        out["u_patch"][s] = u_s
        out["solves"][s] += 1


def make_async_programs(models, cfg: RunConfig, barrier: bool = False):
    """Build windows, shared results dict and per-worker programs."""
    gm, patches = models[0], models[1]
    # q windows carry one extra slot: the trace version the reaction answers
    wins_q = [Window(f"q{pm.sid}", pm.coarse_trace.size + 1, writer=pm.sid)
              for pm in patches]
    wins_g = [Window(f"g{pm.sid}", pm.coarse_trace.size, writer=0)
              for pm in patches]
    win_stop = Window("stop", 1, writer=0)
    out = {"converged": False, "rel": float("inf"), "r_ref": 0.0,
           "u_global": None, "u_patch": [None] * len(patches),
           "solves": [0] * len(patches), "state": None, "diagnostic": None}
    programs = {0: _rank0_program(gm, patches, cfg, wins_q, wins_g, win_stop,
                                  out, barrier)}
    for s, pm in enumerate(patches):
        programs[pm.sid] = _patch_program(s, pm, wins_q, wins_g, win_stop, out)
    return programs, out


def worker_specs(models, async_opts) -> list[WorkerSpec]:
    gm, patches = models[0], models[1]
    specs = [WorkerSpec(wid=0, solve_ms=async_opts.global_ms,
                        jitter=async_opts.jitter, put_ms=async_opts.put_ms,
                        get_ms=async_opts.get_ms,
                        pauses=async_opts.pauses.get(0, []))]
    for pm in patches:
        specs.append(WorkerSpec(
            wid=pm.sid, solve_ms=async_opts.solve_ms(pm.sid),
            jitter=async_opts.jitter, put_ms=async_opts.put_ms,
            get_ms=async_opts.get_ms,
            pauses=async_opts.pauses.get(pm.sid, [])))
    return specs


def run_asynchronous(models, cfg: RunConfig, executor,
                     barrier: bool = False) -> RunReport:
    """Asynchronous iteration over windows, on a virtual or threaded executor.

    ``barrier`` makes rank 0 wait for one fresh reaction from every patch per
    update, which reduces the iteration to the synchronous sequence; it exists
    for equivalence testing.
    """
    t0 = time.perf_counter()
    programs, out = make_async_programs(models, cfg, barrier=barrier)
    trace_log = executor.run(programs)
    state: CouplingState | None = out["state"]
    r_ref = out["r_ref"]
    history = _report_history(state, r_ref) if state is not None else []
    final_t = trace_log.events[-1][0] if trace_log.events else 0.0
    return RunReport(
        converged=bool(out["converged"]) and trace_log.diagnostic is None,
        iterations=state.iter if state else 0,
        patch_iterations=list(out["solves"]),
        final_residual=out["rel"], r_ref=r_ref,
        p_final=state.p if state is not None else None,
        u_global=out["u_global"], u_patches=list(out["u_patch"]),
        history=history, mode="async", omega0=cfg.omega0, tol=cfg.tol,
        norm=cfg.norm, wall_time_s=time.perf_counter() - t0,
        virtual_time_ms=final_t if trace_log.clock == "virtual" else None,
        diagnostic=trace_log.diagnostic or out["diagnostic"],
        trace=trace_log)
