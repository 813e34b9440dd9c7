"""Non-invasive global-local coupling for 2D linear elliptic problems.

A coarse model of the whole structure is iteratively re-balanced against
refined, possibly heterogeneous local patches through an interface load,
either synchronously (plain or Aitken-accelerated Richardson) or
asynchronously over single-writer PUT/GET windows, using a deterministic
virtual-time executor or real threads.
"""

from .coupling import (RunConfig, RunReport, run_asynchronous,
                       run_synchronous)
from .models import build_models, reference_errors, reference_solve
from .scenarios import (Scenario, bundled_scenario, load_scenario,
                        parse_scenario, scenario_hash)

__all__ = [
    "RunConfig",
    "RunReport",
    "Scenario",
    "build_models",
    "bundled_scenario",
    "load_scenario",
    "parse_scenario",
    "reference_errors",
    "reference_solve",
    "run_asynchronous",
    "run_synchronous",
    "scenario_hash",
]

__version__ = "0.1.0"
