"""One-sided-communication emulation and the two executors running over it.

Workers interact only through Windows: single-writer versioned buffers with
atomic PUT/GET, modeled on RDMA-exposed memory with flush-on-completion
semantics.  Worker logic is written once as a generator yielding commands
(Get, Put, Compute, Wait, Now, Mark); the same program runs under

* VirtualExecutor -- a single-threaded discrete-event simulator advancing a
  virtual clock from per-worker cost models, bit-reproducible for a given
  seed, and
* ThreadedExecutor -- real threads with wall-clock timestamps and a wall
  timeout.
"""

from __future__ import annotations

import heapq
import os
import threading
import time
from dataclasses import dataclass, field

import numpy as np


class ContractViolation(RuntimeError):
    """A window was used against its single-writer contract."""


class Window:
    """Versioned single-writer buffer.

    Readers always observe a (payload, version) pair produced by one complete
    put; the version starts at 0 (zero payload) and increases by one per put.
    """

    def __init__(self, name: str, size: int, writer: int):
        self.name = name
        self.size = size
        self.writer = writer
        self._payload = np.zeros(size)
        self._version = 0
        self.cond = threading.Condition()

    @property
    def version(self) -> int:
        return self._version

    def put(self, payload: np.ndarray, writer: int) -> int:
        if writer != self.writer:
            raise ContractViolation(
                f"worker {writer} is not the writer of window {self.name!r}")
        payload = np.asarray(payload, dtype=float)
        if payload.shape != (self.size,):
            raise ValueError(f"window {self.name!r} expects length {self.size}")
        with self.cond:
            self._payload = payload.copy()
            self._version += 1
            v = self._version
            self.cond.notify_all()
        return v

    def get(self) -> tuple[np.ndarray, int]:
        with self.cond:
            return self._payload.copy(), self._version


# ---------------------------------------------------------------------------
# worker program commands

@dataclass
class Get:
    window: Window


@dataclass
class Put:
    window: Window
    payload: np.ndarray


@dataclass
class Compute:
    kind: str
    fn: object                     # nullary callable, result sent back


@dataclass
class Wait:
    """Park until any watched window's version exceeds the given one."""
    pairs: list                    # [(Window, known_version), ...]


@dataclass
class Now:
    """Ask the executor for the current time (virtual ms or wall ms)."""


@dataclass
class Mark:
    """Record an event (e.g. convergence) in the trace."""
    event: str
    detail: str = ""


@dataclass
class WorkerSpec:
    wid: int
    solve_ms: float = 1.0
    jitter: float = 0.0            # uniform multiplicative, in [0, 1)
    put_ms: float = 0.0
    get_ms: float = 0.0
    pauses: list = field(default_factory=list)    # [(virtual time, duration)]


@dataclass
class Trace:
    """Ordered event log: (time_ms, worker, event, detail)."""

    events: list = field(default_factory=list)
    clock: str = "virtual"                        # or "wall"
    diagnostic: str | None = None

    def counts(self, worker: int, event: str) -> int:
        return sum(1 for t, w, e, d in self.events
                   if w == worker and e == event)

    def to_csv(self, path) -> None:
        with open(path, "w") as fh:
            fh.write("time,worker,event,detail\n")
            for t, w, e, d in self.events:
                fh.write(f"{t:.6f},{w},{e},{d}\n")


class VirtualExecutor:
    """Deterministic discrete-event executor over a virtual clock (ms)."""

    def __init__(self, specs: list[WorkerSpec], seed: int = 0,
                 max_virtual_ms: float = 1e7):
        self.specs = {s.wid: s for s in specs}
        self.seed = seed
        self.max_virtual_ms = max_virtual_ms

    def run(self, programs: dict) -> Trace:
        """Event loop invariant: a worker executes a command only when its
        local clock equals the scheduler time, so every window read observes
        exactly the puts that completed up to that moment.  Any command that
        advances the clock ends the step and schedules a continuation."""
        trace = Trace(clock="virtual")
        rngs = {wid: np.random.default_rng((self.seed, wid))
                for wid in self.specs}
        clock = {wid: 0.0 for wid in programs}
        pauses = {wid: sorted(self.specs[wid].pauses) for wid in programs}
        started: set[int] = set()
        done: set[int] = set()
        parked: dict[int, Wait] = {}
        heap: list = []
        seq = 0
        for wid in sorted(programs):
            heapq.heappush(heap, (0.0, seq, "resume", wid, None))
            seq += 1

        def jittered(wid: int) -> float:
            spec = self.specs[wid]
            base = spec.solve_ms
            if spec.jitter > 0.0:
                base *= rngs[wid].uniform(1.0 - spec.jitter, 1.0 + spec.jitter)
            return base

        def schedule(t: float, kind: str, wid: int, data) -> None:
            nonlocal seq
            heapq.heappush(heap, (t, seq, kind, wid, data))
            seq += 1

        def wake_watchers(t: float) -> None:
            for wid, wait in list(parked.items()):
                if any(w.version > known for w, known in wait.pairs):
                    del parked[wid]
                    schedule(max(t, clock[wid]), "resume", wid, None)

        while heap:
            t, _, kind, wid, data = heapq.heappop(heap)
            if t > self.max_virtual_ms:
                trace.diagnostic = (f"virtual time limit "
                                    f"{self.max_virtual_ms} ms exceeded")
                break
            if kind == "apply_put":
                win, payload = data
                win.put(payload, wid)
                trace.events.append((t, wid, "put", win.name))
                wake_watchers(t)
                continue

            gen = programs[wid]
            clock[wid] = max(clock[wid], t)
            spec = self.specs[wid]
            value = data
            try:
                while True:
                    cmd = gen.send(value) if wid in started else next(gen)
                    started.add(wid)
                    value = None
                    if isinstance(cmd, Get):
                        value = cmd.window.get()
                        trace.events.append((clock[wid], wid, "get",
                                             cmd.window.name))
                        if spec.get_ms > 0.0:
                            clock[wid] += spec.get_ms
                            schedule(clock[wid], "resume", wid, value)
                            break
                    elif isinstance(cmd, Put):
                        clock[wid] += spec.put_ms        # flush completes the put
                        payload = np.asarray(cmd.payload, dtype=float).copy()
                        schedule(clock[wid], "apply_put", wid,
                                 (cmd.window, payload))
                        schedule(clock[wid], "resume", wid, None)
                        break
                    elif isinstance(cmd, Compute):
                        while pauses[wid] and pauses[wid][0][0] <= clock[wid]:
                            clock[wid] += pauses[wid].pop(0)[1]
                        trace.events.append((clock[wid], wid, "solve_start",
                                             cmd.kind))
                        result = cmd.fn()
                        clock[wid] += jittered(wid)
                        trace.events.append((clock[wid], wid, "solve_end",
                                             cmd.kind))
                        schedule(clock[wid], "resume", wid, result)
                        break
                    elif isinstance(cmd, Wait):
                        if any(w.version > known for w, known in cmd.pairs):
                            continue
                        parked[wid] = cmd
                        break
                    elif isinstance(cmd, Now):
                        value = clock[wid]
                    elif isinstance(cmd, Mark):
                        trace.events.append((clock[wid], wid, cmd.event,
                                             cmd.detail))
                    else:
                        raise TypeError(f"unknown command {cmd!r}")
            except StopIteration:
                done.add(wid)

        if len(done) < len(programs) and trace.diagnostic is None:
            waiting = sorted(set(programs) - done)
            trace.diagnostic = f"deadlock: workers {waiting} parked with no new data"
        trace.events.sort(key=lambda ev: ev[0])      # stable: ties keep order
        return trace


class ThreadedExecutor:
    """Real-thread executor; same window contract, wall-clock timestamps."""

    def __init__(self, specs: list[WorkerSpec], wall_timeout_s: float = 60.0):
        self.specs = {s.wid: s for s in specs}
        self.wall_timeout_s = wall_timeout_s
        cap = os.environ.get("GLOCAL_THREADS")
        self._sem = threading.BoundedSemaphore(max(1, int(cap))) if cap else None

    def run(self, programs: dict) -> Trace:
        trace = Trace(clock="wall")
        lock = threading.Lock()
        wake = threading.Condition()
        abort = threading.Event()
        t0 = time.perf_counter()

        def now_ms() -> float:
            return (time.perf_counter() - t0) * 1e3

        def log(wid: int, event: str, detail: str) -> None:
            with lock:
                trace.events.append((now_ms(), wid, event, detail))

        def drive(wid: int, gen) -> None:
            value = None
            first = True
            try:
                while not abort.is_set():
                    cmd = next(gen) if first else gen.send(value)
                    first = False
                    value = None
                    if isinstance(cmd, Get):
                        value = cmd.window.get()
                        log(wid, "get", cmd.window.name)
                    elif isinstance(cmd, Put):
                        cmd.window.put(cmd.payload, wid)
                        log(wid, "put", cmd.window.name)
                        with wake:
                            wake.notify_all()
                    elif isinstance(cmd, Compute):
                        log(wid, "solve_start", cmd.kind)
                        if self._sem:
                            with self._sem:
                                value = cmd.fn()
                        else:
                            value = cmd.fn()
                        log(wid, "solve_end", cmd.kind)
                    elif isinstance(cmd, Wait):
                        with wake:
                            while (not abort.is_set()
                                   and not any(w.version > known
                                               for w, known in cmd.pairs)):
                                wake.wait(0.02)
                        if abort.is_set():
                            gen.close()
                            return
                    elif isinstance(cmd, Now):
                        value = now_ms()
                    elif isinstance(cmd, Mark):
                        log(wid, cmd.event, cmd.detail)
                    else:
                        raise TypeError(f"unknown command {cmd!r}")
            except StopIteration:
                return

        threads = [threading.Thread(target=drive, args=(wid, gen), daemon=True)
                   for wid, gen in sorted(programs.items())]
        for th in threads:
            th.start()
        deadline = t0 + self.wall_timeout_s
        for th in threads:
            th.join(max(0.0, deadline - time.perf_counter()))
        if any(th.is_alive() for th in threads):
            abort.set()
            with wake:
                wake.notify_all()
            for th in threads:
                th.join(5.0)
            trace.diagnostic = f"wall timeout {self.wall_timeout_s} s exceeded"
        trace.events.sort(key=lambda ev: ev[0])
        return trace


def run_virtual(workers: list[WorkerSpec], programs: dict, seed: int = 0,
                max_virtual_ms: float = 1e7) -> Trace:
    if len(workers) < 2:
        raise ValueError("need at least two workers")
    return VirtualExecutor(workers, seed=seed,
                           max_virtual_ms=max_virtual_ms).run(programs)


def run_threaded(workers: list[WorkerSpec], programs: dict,
                 wall_timeout: float = 60.0) -> Trace:
    return ThreadedExecutor(workers, wall_timeout_s=wall_timeout).run(programs)
