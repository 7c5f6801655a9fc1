"""Diagnostics records, Strichartz accumulators and trajectory output shared by
both evolution pipelines."""

from __future__ import annotations

import json
import math
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .radial import RadialGrid

HALT_REASONS = ("completed", "s_floor", "instability", "chart_exit", "user_abort")


@dataclass
class DiagnosticsRecord:
    t: float
    s: float
    alpha: float
    s_star: float
    alpha_star: float
    energy: float
    q_l2: float
    q_h1: float
    str_linf_l2: float
    str_l4_l4: float
    str_l83_l8: float
    s_inf: float
    extra: dict = field(default_factory=dict)

    def to_json(self) -> str:
        d = asdict(self)
        d.update(d.pop("extra"))
        return dumps_exact(d)


def _num(v) -> str:
    """JSON literal; floats carry 17 significant digits."""
    if isinstance(v, (bool, np.bool_)):
        return "true" if v else "false"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, (float, np.floating)):
        v = float(v)
        return format(v, ".17g") if math.isfinite(v) else json.dumps(str(v))
    if isinstance(v, dict):
        return dumps_exact(v)
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_num(x) for x in v) + "]"
    if v is None:
        return "null"
    return json.dumps(str(v))


def dumps_exact(d: dict) -> str:
    return "{" + ",".join(f"{json.dumps(str(k))}:{_num(v)}" for k, v in d.items()) + "}"


class StrichartzAccumulator:
    """Running space-time norms of the 2-D field exp(i(m+1)theta) q.

    L^inf_t L^2_x, L^4_t L^4_x and L^{8/3}_t L^8_x, time integrals by the
    trapezoid rule over the recorded steps.
    """

    def __init__(self, grid: RadialGrid):
        self.grid = grid
        self.t_last = None
        self.prev = None
        self.linf_l2 = 0.0
        self.i44 = 0.0
        self.i838 = 0.0

    def _norms(self, q):
        a = np.abs(q)
        l2 = math.sqrt(2.0 * math.pi * self.grid.integrate(a**2))
        l4_4 = 2.0 * math.pi * self.grid.integrate(a**4)
        l8 = (2.0 * math.pi * self.grid.integrate(a**8)) ** 0.125
        return l2, l4_4, l8 ** (8.0 / 3.0)

    def add(self, t: float, q: np.ndarray):
        l2, f44, f838 = self._norms(q)
        self.linf_l2 = max(self.linf_l2, l2)
        if self.prev is not None:
            dt = t - self.t_last
            self.i44 += 0.5 * dt * (self.prev[0] + f44)
            self.i838 += 0.5 * dt * (self.prev[1] + f838)
        self.prev = (f44, f838)
        self.t_last = t

    @property
    def values(self):
        return self.linf_l2, self.i44**0.25, self.i838 ** (3.0 / 8.0)


@dataclass
class Trajectory:
    times: list = field(default_factory=list)
    states: list = field(default_factory=list)
    records: list = field(default_factory=list)
    maps: list = field(default_factory=list)
    halt_reason: str = "completed"
    message: str = ""

    def append(self, t, state, record, u=None):
        if self.times and not t > self.times[-1]:
            raise ValueError("trajectory times must increase")
        self.times.append(t)
        self.states.append(state)
        self.records.append(record)
        self.maps.append(u)

    @property
    def final(self) -> DiagnosticsRecord:
        return self.records[-1]

    def max_proximity(self) -> float:
        """max_t |s/s* - 1| + |alpha - alpha*| over records carrying both pairs."""
        vals = [
            abs(r.s / r.s_star - 1.0) + abs(math.remainder(r.alpha - r.alpha_star, 2.0 * math.pi))
            for r in self.records
            if math.isfinite(r.s) and math.isfinite(r.s_star)
        ]
        return max(vals) if vals else float("nan")

    def summary(self) -> dict:
        out = {"halt_reason": self.halt_reason, "steps": len(self.times) - 1}
        if self.message:
            out["message"] = self.message
        if self.records:
            rec = self.records[-1]
            out["final"] = {**{k: v for k, v in asdict(rec).items() if k != "extra"}, **rec.extra}
            e0 = self.records[0].energy
            out["max_energy_drift"] = max(abs(r.energy - e0) for r in self.records) / e0
            out["max_proximity"] = self.max_proximity()
        return out


def write_jsonl(path, records) -> None:
    with Path(path).open("w") as fh:
        for rec in records:
            fh.write(rec.to_json() + "\n")
