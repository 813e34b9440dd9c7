"""Scenario description: the JSON-facing problem definition.

A scenario fixes the coarse domain, the physics, the patch rectangles with
their refinement levels and heterogeneous inclusions, and solver/runtime
options.  Scenarios either list patches explicitly or carry a ``generator``
block (currently: ``grid``, an n x n tiling with one inclusion per patch)
that is expanded at load time.  The content hash is taken over the expanded,
canonicalized document so that runs and comparisons can be paired safely.
"""

from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, field
from importlib import resources

from .fem import ELASTICITY, THERMAL

SIDES = ("left", "right", "bottom", "top")
MODES = ("richardson", "aitken", "async")
NORMS = ("inf", "two")

BUNDLED = ("twopatch_thermal", "twopatch_elastic", "grid2_inclusions",
           "nocomplement")


class ScenarioError(ValueError):
    """Scenario document invalid; message starts with the offending field path."""


def _require(cond: bool, path: str, msg: str) -> None:
    if not cond:
        raise ScenarioError(f"{path}: {msg}")


@dataclass
class Inclusion:
    cx: float
    cy: float
    r: float
    ratio: float | None = None            # coefficient = default / ratio
    coefficient: object = None            # explicit override instead of ratio


@dataclass
class PatchSpec:
    rect: tuple[float, float, float, float]
    refine: int = 0
    inclusions: list[Inclusion] = field(default_factory=list)


@dataclass
class SolverOptions:
    mode: str = "aitken"
    omega: float = 1.0
    tol: float = 1e-8
    max_iter: int = 200
    norm: str = "inf"


@dataclass
class AsyncOptions:
    seed: int = 0
    global_ms: float = 4.0
    patch_ms: list[float] = field(default_factory=lambda: [4.0])
    jitter: float = 0.05
    put_ms: float = 0.1
    get_ms: float = 0.05
    max_virtual_ms: float = 1e7
    wall_timeout_s: float = 60.0
    pauses: dict[int, list[tuple[float, float]]] = field(default_factory=dict)

    def solve_ms(self, worker: int) -> float:
        if worker == 0:
            return self.global_ms
        return self.patch_ms[(worker - 1) % len(self.patch_ms)]


@dataclass
class Scenario:
    name: str
    domain: tuple[float, float, float, float]
    nx: int
    ny: int
    kind: str
    coefficient: object                   # k, or (E, nu)
    source: object                        # scalar, or (fx, fy)
    dirichlet: list[str]
    patches: list[PatchSpec]
    solver: SolverOptions = field(default_factory=SolverOptions)
    async_opts: AsyncOptions = field(default_factory=AsyncOptions)
    generator: dict | None = None         # original generator block, if any

    def to_dict(self) -> dict:
        return {
            "name": self.name,
            "domain": {"x0": self.domain[0], "y0": self.domain[1],
                       "x1": self.domain[2], "y1": self.domain[3],
                       "nx": self.nx, "ny": self.ny},
            "physics": {"kind": self.kind,
                        "coefficient": (self.coefficient if self.kind == THERMAL
                                        else {"E": self.coefficient[0],
                                              "nu": self.coefficient[1]}),
                        "source": (self.source if self.kind == THERMAL
                                   else list(self.source))},
            "dirichlet": list(self.dirichlet),
            "patches": [
                {"rect": list(p.rect), "refine": p.refine,
                 "inclusions": [
                     {"cx": i.cx, "cy": i.cy, "r": i.r,
                      **({"ratio": i.ratio} if i.ratio is not None else {}),
                      **({"coefficient": i.coefficient}
                         if i.coefficient is not None else {})}
                     for i in p.inclusions]}
                for p in self.patches],
            "solver": {"mode": self.solver.mode, "omega": self.solver.omega,
                       "tol": self.solver.tol, "max_iter": self.solver.max_iter,
                       "norm": self.solver.norm},
            "async": {"seed": self.async_opts.seed,
                      "global_ms": self.async_opts.global_ms,
                      "patch_ms": list(self.async_opts.patch_ms),
                      "jitter": self.async_opts.jitter,
                      "put_ms": self.async_opts.put_ms,
                      "get_ms": self.async_opts.get_ms,
                      "max_virtual_ms": self.async_opts.max_virtual_ms,
                      "wall_timeout_s": self.async_opts.wall_timeout_s},
        }


def scenario_hash(sc: Scenario) -> str:
    canon = json.dumps(sc.to_dict(), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def make_grid_scenario(n: int, cells_per_patch: int = 4, refine: int = 1,
                       ratio: float = 10.0, kind: str = THERMAL,
                       inclusion_rel_radius: float = 0.3,
                       name: str | None = None) -> dict:
    """n x n patches tiling the unit square, one centered inclusion each."""
    if n < 1:
        raise ScenarioError("generator.n: must be >= 1")
    w = 1.0 / n
    patches = []
    for j in range(n):
        for i in range(n):
            rect = [i * w, j * w, (i + 1) * w, (j + 1) * w]
            patches.append({
                "rect": rect, "refine": refine,
                "inclusions": [{"cx": (i + 0.5) * w, "cy": (j + 0.5) * w,
                                "r": inclusion_rel_radius * w, "ratio": ratio}],
            })
    coeff = 1.0 if kind == THERMAL else {"E": 1.0, "nu": 0.3}
    source = 1.0 if kind == THERMAL else [0.0, -1.0]
    return {
        "name": name or f"grid{n}_inclusions",
        "domain": {"x0": 0.0, "y0": 0.0, "x1": 1.0, "y1": 1.0,
                   "nx": n * cells_per_patch, "ny": n * cells_per_patch},
        "physics": {"kind": kind, "coefficient": coeff, "source": source},
        "dirichlet": ["bottom"],
        "patches": patches,
        "solver": {"mode": "aitken", "omega": 0.7, "tol": 1e-8,
                   "max_iter": 400, "norm": "inf"},
        "async": {"seed": 1, "global_ms": 4.0,
                  "patch_ms": [4.0] * (n * n), "jitter": 0.05,
                  "put_ms": 0.1, "get_ms": 0.05},
    }


def expand_generator(doc: dict) -> dict:
    gen = doc.get("generator")
    if gen is None:
        return doc
    _require(isinstance(gen, dict), "generator", "must be an object")
    kind = gen.get("kind")
    _require(kind == "grid", "generator.kind", f"unknown generator {kind!r}")
    out = make_grid_scenario(
        n=int(gen.get("n", 2)),
        cells_per_patch=int(gen.get("cells_per_patch", 4)),
        refine=int(gen.get("refine", 1)),
        ratio=float(gen.get("ratio", 10.0)),
        kind=gen.get("physics", doc.get("physics", {}).get("kind", THERMAL)),
        inclusion_rel_radius=float(gen.get("inclusion_rel_radius", 0.3)),
        name=doc.get("name"),
    )
    # top-level solver/async blocks override the generated defaults
    for key in ("solver", "async"):
        if key in doc:
            out[key] = {**out[key], **doc[key]}
    return out


def _parse_coefficient(kind: str, c, path: str):
    if kind == THERMAL:
        _require(isinstance(c, (int, float)) and c > 0, path,
                 "must be a positive conductivity")
        return float(c)
    _require(isinstance(c, dict) and "E" in c and "nu" in c, path,
             "must be an object with E and nu")
    e, nu = float(c["E"]), float(c["nu"])
    _require(e > 0, f"{path}.E", "must be > 0")
    _require(0.0 <= nu < 0.5, f"{path}.nu", "must satisfy 0 <= nu < 0.5")
    return (e, nu)


def parse_scenario(doc: dict) -> Scenario:
    """Validate and expand a scenario document into a Scenario."""
    _require(isinstance(doc, dict), "", "scenario must be a JSON object")
    generator = doc.get("generator")
    doc = expand_generator(doc)

    dom = doc.get("domain")
    _require(isinstance(dom, dict), "domain", "missing or not an object")
    for key in ("x0", "y0", "x1", "y1", "nx", "ny"):
        _require(key in dom, f"domain.{key}", "missing")
    x0, y0, x1, y1 = (float(dom[k]) for k in ("x0", "y0", "x1", "y1"))
    nx, ny = int(dom["nx"]), int(dom["ny"])
    _require(x1 > x0 and y1 > y0, "domain", "degenerate extents")
    _require(nx >= 1 and ny >= 1, "domain", "cell counts must be >= 1")

    phys = doc.get("physics")
    _require(isinstance(phys, dict), "physics", "missing or not an object")
    kind = phys.get("kind")
    _require(kind in (THERMAL, ELASTICITY), "physics.kind",
             f"must be one of {THERMAL!r}, {ELASTICITY!r}")
    coeff = _parse_coefficient(kind, phys.get("coefficient"),
                               "physics.coefficient")
    source = phys.get("source", 0.0)
    if kind == THERMAL:
        _require(isinstance(source, (int, float)), "physics.source",
                 "must be a scalar")
        source = float(source)
    else:
        _require(isinstance(source, (list, tuple)) and len(source) == 2,
                 "physics.source", "must be a 2-vector")
        source = (float(source[0]), float(source[1]))

    dirichlet = doc.get("dirichlet", [])
    _require(isinstance(dirichlet, list) and len(dirichlet) >= 1,
             "dirichlet", "need at least one fixed side")
    for s in dirichlet:
        _require(s in SIDES, "dirichlet", f"unknown side {s!r}")

    patches = []
    for k, p in enumerate(doc.get("patches", [])):
        path = f"patches[{k}]"
        _require(isinstance(p, dict), path, "must be an object")
        rect = p.get("rect")
        _require(isinstance(rect, (list, tuple)) and len(rect) == 4,
                 f"{path}.rect", "must be [x0, y0, x1, y1]")
        rect = tuple(float(v) for v in rect)
        _require(rect[2] > rect[0] and rect[3] > rect[1], f"{path}.rect",
                 "degenerate rectangle")
        _require(rect[0] >= x0 - 1e-12 and rect[1] >= y0 - 1e-12
                 and rect[2] <= x1 + 1e-12 and rect[3] <= y1 + 1e-12,
                 f"{path}.rect", "outside the domain")
        refine = int(p.get("refine", 0))
        _require(refine >= 0, f"{path}.refine", "must be >= 0")
        incs = []
        for m, inc in enumerate(p.get("inclusions", [])):
            ipath = f"{path}.inclusions[{m}]"
            _require(isinstance(inc, dict), ipath, "must be an object")
            r = float(inc.get("r", 0.0))
            _require(r > 0, f"{ipath}.r", "must be > 0")
            ratio = inc.get("ratio")
            coefficient = inc.get("coefficient")
            _require((ratio is None) != (coefficient is None), ipath,
                     "give exactly one of ratio or coefficient")
            if ratio is not None:
                _require(float(ratio) > 0, f"{ipath}.ratio", "must be > 0")
                ratio = float(ratio)
            else:
                coefficient = _parse_coefficient(kind, coefficient,
                                                 f"{ipath}.coefficient")
            incs.append(Inclusion(cx=float(inc["cx"]), cy=float(inc["cy"]),
                                  r=r, ratio=ratio, coefficient=coefficient))
        patches.append(PatchSpec(rect=rect, refine=refine, inclusions=incs))

    sol = doc.get("solver", {})
    solver = SolverOptions(
        mode=sol.get("mode", "aitken"), omega=float(sol.get("omega", 1.0)),
        tol=float(sol.get("tol", 1e-8)), max_iter=int(sol.get("max_iter", 200)),
        norm=sol.get("norm", "inf"))
    _require(solver.mode in MODES, "solver.mode", f"must be one of {MODES}")
    _require(solver.norm in NORMS, "solver.norm", f"must be one of {NORMS}")
    _require(solver.tol > 0, "solver.tol", "must be > 0")
    _require(solver.max_iter >= 1, "solver.max_iter", "must be >= 1")

    asy = doc.get("async", {})
    patch_ms = asy.get("patch_ms", [4.0])
    _require(isinstance(patch_ms, list) and len(patch_ms) >= 1
             and all(v >= 0 for v in patch_ms), "async.patch_ms",
             "must be a non-empty list of non-negative durations")
    jitter = float(asy.get("jitter", 0.05))
    _require(0.0 <= jitter < 1.0, "async.jitter", "must be in [0, 1)")
    pauses = {int(k): [(float(t), float(d)) for t, d in v]
              for k, v in asy.get("pauses", {}).items()}
    async_opts = AsyncOptions(
        seed=int(asy.get("seed", 0)), global_ms=float(asy.get("global_ms", 4.0)),
        patch_ms=[float(v) for v in patch_ms], jitter=jitter,
        put_ms=float(asy.get("put_ms", 0.1)), get_ms=float(asy.get("get_ms", 0.05)),
        max_virtual_ms=float(asy.get("max_virtual_ms", 1e7)),
        wall_timeout_s=float(asy.get("wall_timeout_s", 60.0)), pauses=pauses)

    return Scenario(name=str(doc.get("name", "scenario")),
                    domain=(x0, y0, x1, y1), nx=nx, ny=ny, kind=kind,
                    coefficient=coeff, source=source,
                    dirichlet=[str(s) for s in dirichlet], patches=patches,
                    solver=solver, async_opts=async_opts, generator=generator)


def load_scenario(path) -> Scenario:
    try:
        with open(path) as fh:
            doc = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError(f"{path}: not valid JSON ({exc})") from exc
    return parse_scenario(doc)


def bundled_scenario(name: str) -> Scenario:
    if name not in BUNDLED:
        raise ScenarioError(f"unknown bundled scenario {name!r}; "
                            f"available: {', '.join(BUNDLED)}")
    text = resources.files("glocal.data").joinpath(f"{name}.json").read_text()
    return parse_scenario(json.loads(text))
