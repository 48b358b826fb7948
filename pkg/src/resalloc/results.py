"""Solver outcome types shared by the interior point and breakpoint solvers."""

from __future__ import annotations

import dataclasses
import enum
import json
import time
from typing import Any

import numpy as np

from .model import Solution


class Status(str, enum.Enum):
    CONVERGED = "converged"
    ITERATION_LIMIT = "iteration-limit"
    SINGULAR = "singular"
    DOMAIN_ERROR = "domain-error"
    TIMEOUT = "timeout"
    ERROR = "error"


@dataclasses.dataclass
class SolveReport:
    """What a solver returns: the solution plus bookkeeping.

    ``residual_norms`` holds the scaled KKT residual norms at the returned
    point (keys ``rd``, ``rl``, ``ru``, ``rg``). ``counts`` is solver-specific.
    """

    solver: str
    status: Status
    solution: Solution | None
    iterations: int
    wall_time_s: float
    residual_norms: dict[str, float] = dataclasses.field(default_factory=dict)
    counts: dict[str, int] = dataclasses.field(default_factory=dict)
    message: str = ""

    @property
    def converged(self) -> bool:
        return self.status is Status.CONVERGED

    @property
    def objective(self) -> float:
        return self.solution.objective if self.solution is not None else float("nan")

    def to_dict(self, include_x: bool = False) -> dict[str, Any]:
        sol = self.solution
        doc: dict[str, Any] = {
            "solver": self.solver,
            "status": self.status.value,
            "iterations": self.iterations,
            "wall_time_s": self.wall_time_s,
            "objective": None if sol is None else sol.objective,
            "rho": None if sol is None else sol.rho,
            "residual_norms": dict(self.residual_norms),
        }
        if self.counts:
            doc["counts"] = dict(self.counts)
        if self.message:
            doc["message"] = self.message
        if include_x and sol is not None:
            doc["x"] = [float(v) for v in sol.x]
        return doc

    def to_json(self, include_x: bool = False) -> str:
        return json.dumps(self.to_dict(include_x), indent=2)


class Deadline:
    """Cooperative wall-clock deadline checked inside solver loops."""

    def __init__(self, seconds: float | None):
        self.start = time.perf_counter()
        self.end = None if seconds is None else self.start + float(seconds)

    def expired(self) -> bool:
        return self.end is not None and time.perf_counter() >= self.end

    def elapsed(self) -> float:
        return time.perf_counter() - self.start


def pairwise_sum(v: np.ndarray) -> float:
    # numpy's add.reduce is pairwise for contiguous float arrays
    return float(np.add.reduce(np.ascontiguousarray(v, dtype=float)))
