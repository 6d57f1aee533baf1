"""Test-set metrics: feasibility rate, mean violation, optimality gap and timing."""

from __future__ import annotations

import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Protocol, Sequence

import numpy as np

from .cmdp_env import RtOpfEnv
from .grid_model import Network
from .opf_expert import ExpertTrajectory, solve_acopf
from .powerflow import solve_nr


class Actor(Protocol):
    def act(self, normalized_state: np.ndarray) -> np.ndarray: ...


class ExpertReplay:
    """Actor that returns the expert move for whatever step ``env`` is pinned to."""

    def __init__(self, env: RtOpfEnv):
        self.env = env

    def act(self, normalized_state: np.ndarray) -> np.ndarray:
        return self.env.expert_raw_action()


@dataclass(frozen=True)
class ScenarioRow:
    index: int
    objective_agent: float
    objective_expert: float
    cost: np.ndarray
    feasible: bool

    @property
    def kappa(self) -> float:
        return (self.objective_agent - self.objective_expert) / self.objective_expert * 100.0


@dataclass(frozen=True)
class TimingBlock:
    t_expert: float  # seconds, medians
    t_powerflow: float
    t_actor: float

    @property
    def speedup(self) -> float:
        return self.t_expert / (self.t_powerflow + self.t_actor)


@dataclass
class EvalReport:
    feas_percent: float
    c_bar: float
    kappa_max: float
    kappa_min: float
    kappa_aver: float
    rows: list[ScenarioRow] = field(default_factory=list)
    timing: TimingBlock | None = None
    method: str = ""

    def summary(self) -> str:
        lines = [f"method      {self.method or '-'}",
                 f"Feas%       {self.feas_percent:.2f}",
                 f"C_bar       {self.c_bar:.6g}",
                 f"kappa_max%  {self.kappa_max:.4f}",
                 f"kappa_min%  {self.kappa_min:.4f}",
                 f"kappa_aver% {self.kappa_aver:.4f}"]
        if self.timing is not None:
            t = self.timing
            lines += [f"T_IPS_ms    {t.t_expert * 1e3:.4f}",
                      f"T_PF_ms     {t.t_powerflow * 1e3:.4f}",
                      f"T_Actor_ms  {t.t_actor * 1e3:.4f}",
                      f"speedup     {t.speedup:.2f}"]
        return "\n".join(lines)

    def rows_table(self) -> str:
        if not self.rows:
            return ""
        m = len(self.rows[0].cost)
        out = ["step\tobjective_agent\tobjective_expert\tkappa\tfeasible\t" + "\t".join(f"c{j}" for j in range(m))]
        for r in self.rows:
            out.append(f"{r.index}\t{r.objective_agent!r}\t{r.objective_expert!r}\t{r.kappa!r}\t{int(r.feasible)}\t"
                       + "\t".join(repr(float(c)) for c in r.cost))
        return "\n".join(out)

    def to_dict(self) -> dict:
        d = {"method": self.method, "feas_percent": self.feas_percent, "c_bar": self.c_bar,
             "kappa_max": self.kappa_max, "kappa_min": self.kappa_min, "kappa_aver": self.kappa_aver}
        if self.timing is not None:
            d["timing"] = {"t_expert": self.timing.t_expert, "t_powerflow": self.timing.t_powerflow,
                           "t_actor": self.timing.t_actor, "speedup": self.timing.speedup}
        return d


def feasibility(costs: np.ndarray, limits: float | np.ndarray = 0.0) -> tuple[float, float]:
    """(Feas%, C_bar) over a scenarios-by-components table of violation costs."""
    costs = np.atleast_2d(np.asarray(costs, dtype=float))
    excess = np.maximum(0.0, costs - limits).sum(axis=1)
    return float(np.mean(excess == 0) * 100.0), float(np.mean(excess))


def optimality_gap(agent_obj: Sequence[float], expert_obj: Sequence[float]) -> tuple[float, float, float, np.ndarray]:
    """(kappa_max, kappa_min, kappa_aver, per-scenario kappa) in percent."""
    a, e = np.asarray(agent_obj, float), np.asarray(expert_obj, float)
    if np.any(e <= 0):
        raise ValueError("expert objectives must be positive")
    k = (a - e) / e * 100.0
    return float(k.max()), float(k.min()), float(k.mean()), k


def evaluate(actor: Actor, env: RtOpfEnv, *, limits: float = 0.0, method: str = "") -> EvalReport:
    """Score the first decision of the actor at every step of ``env``'s trajectory.

    Each scenario is reset to its expert-initialized state and the deterministic
    action is applied once; the cost is compared with the expert's objective.
    """
    rows = []
    for i in range(len(env.trajectory)):
        s = env.reset(i)
        res = env.step(actor.act(s.normalized))
        obj = res.info.get("operating_cost", np.inf)
        cost = res.cost_vector
        excess = np.maximum(0.0, cost - limits).sum()
        rows.append(ScenarioRow(i, float(obj), float(env.trajectory[i].solution.objective), cost, bool(excess == 0)))
    return report_from_rows(rows, limits, method)


def report_from_rows(rows: list[ScenarioRow], limits: float = 0.0, method: str = "") -> EvalReport:
    feas, c_bar = feasibility(np.array([r.cost for r in rows]), limits)
    kmax, kmin, kaver, _ = optimality_gap([r.objective_agent for r in rows], [r.objective_expert for r in rows])
    return EvalReport(feas, c_bar, kmax, kmin, kaver, rows, method=method)


def median_time(fn: Callable[[], object], repetitions: int = 30, min_duration: float = 2e-4) -> float:
    """Median per-call wall time; calls are batched until one batch lasts ``min_duration``."""
    if repetitions < 1:
        raise ValueError("repetitions must be positive")
    fn()
    inner = 1
    while True:
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        if time.perf_counter() - t0 >= min_duration or inner >= 1 << 20:
            break
        inner *= 2
    samples = []
    for _ in range(repetitions):
        t0 = time.perf_counter()
        for _ in range(inner):
            fn()
        samples.append((time.perf_counter() - t0) / inner)
    return float(np.median(samples))


def timing_benchmark(net: Network, actor: Actor, env: RtOpfEnv, trajectory: ExpertTrajectory | None = None,
                     repetitions: int = 30, scenarios: int = 10) -> TimingBlock:
    """Median times of one expert OPF solve, one power flow and one actor pass.

    Each is measured on the first ``scenarios`` trajectory steps and the median over
    those is reported. The OPF starts from its default point, as a fresh real-time
    solve would.
    """
    if repetitions < 30:
        raise ValueError("at least 30 repetitions are required")
    trajectory = trajectory or env.trajectory
    t_ips, t_pf, t_act = [], [], []
    for i in range(min(scenarios, len(trajectory))):
        step = trajectory[i]
        s = env.reset(i)
        state = s.normalized
        raw = actor.act(state)
        res = env.step(raw)
        sp = res.info["setpoints"]
        t_ips.append(median_time(lambda: solve_acopf(net, step.loads, step.prev_pg), repetitions))
        t_pf.append(median_time(lambda: solve_nr(net, sp, step.loads), repetitions))
        t_act.append(median_time(lambda: actor.act(state), repetitions))
    return TimingBlock(float(np.median(t_ips)), float(np.median(t_pf)), float(np.median(t_act)))


def compare_baselines(actors: Mapping[str, Actor], env: RtOpfEnv, limits: float = 0.0) -> list[EvalReport]:
    """Evaluate each method and rank by Feas% (descending) then C_bar (ascending)."""
    reports = [evaluate(a, env, limits=limits, method=name) for name, a in actors.items()]
    return sorted(reports, key=lambda r: (-r.feas_percent, r.c_bar))
