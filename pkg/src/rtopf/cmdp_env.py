"""Constrained MDP environment for real-time OPF.

Each episode pins the demand of one expert-trajectory step. The agent adjusts
generator active-power and voltage set-points; the environment runs a Newton power
flow and returns a generation-cost reward and a vector of limit violations.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path
from typing import Sequence

import numpy as np

from .grid_model import Network, is_connected
from .opf_expert import ExpertTrajectory
from .powerflow import (
    DispatchSetpoints,
    NonConvergence,
    PowerFlowSolution,
    ViolationVector,
    solve_nr,
    violations,
)

N_COST = 4
REWARD_MODES = ("pdppo", "penalty", "cliff")


class ContingencySplitsNetwork(ValueError):
    pass


# --- synthetic demand --------------------------------------------------------------


@dataclass(frozen=True)
class DatasetConfig:
    horizon: int = 24
    load_scale_low: float = 0.7
    load_scale_high: float = 1.3
    pf_scale_low: float = 0.9
    pf_scale_high: float = 1.1
    seed: int = 0

    def __post_init__(self) -> None:
        if self.horizon < 2:
            raise ValueError("horizon must be at least 2")
        if not 0 < self.load_scale_low <= self.load_scale_high:
            raise ValueError("require 0 < load_scale_low <= load_scale_high")
        if not 0 < self.pf_scale_low <= self.pf_scale_high:
            raise ValueError("require 0 < pf_scale_low <= pf_scale_high")


def load_buses(net: Network) -> np.ndarray:
    """0-based indices of buses with nonzero base net load."""
    pd, qd = net.bus_array("pd"), net.bus_array("qd")
    return np.flatnonzero((pd != 0) | (qd != 0))


def base_power_factor(net: Network) -> np.ndarray:
    idx = load_buses(net)
    pd, qd = net.bus_array("pd")[idx], net.bus_array("qd")[idx]
    return np.abs(pd) / np.hypot(pd, qd)


@dataclass
class LoadScenario:
    """Per-step net loads on the loaded-bus subset, expandable to full bus vectors."""

    buses: np.ndarray  # 0-based bus indices
    p: np.ndarray  # (T, n_load) MW
    q: np.ndarray  # (T, n_load) MVAr
    base_pd: np.ndarray  # full bus vectors used off the subset
    base_qd: np.ndarray

    def __len__(self) -> int:
        return self.p.shape[0]

    @property
    def next_total(self) -> np.ndarray:
        totals = self.p.sum(axis=1)
        return np.r_[totals[1:], totals[-1]]

    def bus_loads(self, t: int) -> tuple[np.ndarray, np.ndarray]:
        pd, qd = self.base_pd.copy(), self.base_qd.copy()
        pd[self.buses] = self.p[t]
        qd[self.buses] = self.q[t]
        return pd, qd

    def __iter__(self):
        for t in range(len(self)):
            yield self.bus_loads(t)


def generate_dataset(net: Network, cfg: DatasetConfig) -> LoadScenario:
    """Uniformly perturb base active demand and power factor on every loaded bus."""
    rng = np.random.default_rng(cfg.seed)
    idx = load_buses(net)
    pd0, qd0 = net.bus_array("pd"), net.bus_array("qd")
    beta0 = base_power_factor(net)
    shape = (cfg.horizon, len(idx))
    p = rng.uniform(cfg.load_scale_low, cfg.load_scale_high, size=shape) * pd0[idx]
    beta_lo = cfg.pf_scale_low * beta0
    beta_hi = np.minimum(cfg.pf_scale_high * beta0, 1.0)
    beta = np.minimum(rng.uniform(beta_lo, np.maximum(beta_lo, beta_hi), size=shape), 1.0)
    q = np.sign(qd0[idx]) * p * np.tan(np.arccos(beta))
    return LoadScenario(idx, p, q, pd0, qd0)


def write_dataset(scenario: LoadScenario, net: Network, path: str | Path, meta: dict | None = None) -> None:
    ids = [net.buses[i].id for i in scenario.buses]
    buf = io.StringIO()
    for k, v in (meta or {}).items():
        buf.write(f"# {k}={v}\n")
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["step"] + [f"P_{i}" for i in ids] + [f"Q_{i}" for i in ids] + ["P_next_total"])
    nxt = scenario.next_total
    for t in range(len(scenario)):
        w.writerow([t] + [repr(float(x)) for x in scenario.p[t]] + [repr(float(x)) for x in scenario.q[t]]
                   + [repr(float(nxt[t]))])
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(buf.getvalue())
    tmp.replace(path)


def read_dataset(path: str | Path, net: Network) -> tuple[LoadScenario, dict]:
    meta: dict[str, str] = {}
    rows = []
    for line in Path(path).read_text().splitlines():
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key] = value
        elif line.strip():
            rows.append(line)
    reader = csv.reader(rows)
    header = next(reader)
    n = (len(header) - 2) // 2
    ids = [int(h[2:]) for h in header[1:1 + n]]
    idx = np.array([net.bus_index[i] for i in ids], dtype=int)
    data = np.array([[float(x) for x in r] for r in reader])
    scen = LoadScenario(idx, data[:, 1:1 + n], data[:, 1 + n:1 + 2 * n], net.bus_array("pd"), net.bus_array("qd"))
    return scen, meta


# --- state and action ----------------------------------------------------------------


def dims(net: Network, scenario=None) -> tuple[int, int]:
    """(state_dim, action_dim) of the CMDP for ``net``."""
    return 2 * len(load_buses(net)) + 2 * net.n_gen + 1, 2 * net.n_gen


@dataclass(frozen=True)
class StateNormalizer:
    """Max-min map of each state component onto [0, 1]."""

    lo: np.ndarray
    hi: np.ndarray

    @classmethod
    def for_network(cls, net: Network, cfg: DatasetConfig = DatasetConfig()) -> StateNormalizer:
        idx = load_buses(net)
        pd, qd = net.bus_array("pd")[idx], net.bus_array("qd")[idx]
        beta0 = base_power_factor(net)
        tan_lo = np.tan(np.arccos(np.minimum(cfg.pf_scale_high * beta0, 1.0)))
        tan_hi = np.tan(np.arccos(np.minimum(cfg.pf_scale_low * beta0, 1.0)))
        p_a, p_b = cfg.load_scale_low * pd, cfg.load_scale_high * pd
        q_a = np.sign(qd) * np.abs(cfg.load_scale_low * pd) * tan_lo
        q_b = np.sign(qd) * np.abs(cfg.load_scale_high * pd) * tan_hi
        gen_v = net.gen_bus
        total = pd.sum()
        lo = np.concatenate([np.minimum(p_a, p_b), np.minimum(q_a, q_b), net.gen_array("pmin"),
                             net.bus_array("vmin")[gen_v], [cfg.load_scale_low * total]])
        hi = np.concatenate([np.maximum(p_a, p_b), np.maximum(q_a, q_b), net.gen_array("pmax"),
                             net.bus_array("vmax")[gen_v], [cfg.load_scale_high * total]])
        hi = np.where(hi - lo > 1e-12, hi, lo + 1.0)
        return cls(lo, hi)

    def normalize(self, raw: np.ndarray) -> np.ndarray:
        return np.clip((raw - self.lo) / (self.hi - self.lo), 0.0, 1.0)

    def denormalize(self, x: np.ndarray) -> np.ndarray:
        return self.lo + x * (self.hi - self.lo)

    def to_dict(self) -> dict:
        return {"lo": self.lo.tolist(), "hi": self.hi.tolist()}

    @classmethod
    def from_dict(cls, d: dict) -> StateNormalizer:
        return cls(np.asarray(d["lo"], float), np.asarray(d["hi"], float))


@dataclass(frozen=True)
class CmdpState:
    raw: np.ndarray
    normalized: np.ndarray


@dataclass(frozen=True)
class ActionVector:
    dp: np.ndarray  # MW
    dv: np.ndarray  # pu

    def as_array(self) -> np.ndarray:
        return np.r_[self.dp, self.dv]


def _box_clip(x: np.ndarray, lo: np.ndarray, hi: np.ndarray) -> np.ndarray:
    # an empty box (prev outside capability by more than a ramp) resolves to the capability side
    return np.where(lo <= hi, np.clip(x, lo, np.maximum(lo, hi)), hi)


def clip_action(net: Network, raw: np.ndarray, prev: DispatchSetpoints, dv_max: float = 0.05) -> ActionVector:
    """Map a policy sample in (0, 1)^(2G) to set-point adjustments inside all limits.

    The sample is centred (u = 2*raw - 1) and scaled by half the capability range,
    then clipped to the ramp-feasible box and the generator/voltage bounds.
    """
    raw = np.asarray(raw, dtype=float)
    ng = net.n_gen
    u = 2.0 * raw - 1.0
    pmin, pmax = net.gen_array("pmin"), net.gen_array("pmax")
    vmin, vmax = net.bus_array("vmin")[net.gen_bus], net.bus_array("vmax")[net.gen_bus]
    dp = u[:ng] * (pmax - pmin) / 2.0
    dp = _box_clip(dp, np.maximum(-net.gen_array("r_down"), pmin - prev.pg),
                   np.minimum(net.gen_array("r_up"), pmax - prev.pg))
    dv = u[ng:] * (vmax - vmin) / 2.0
    dv = _box_clip(dv, np.maximum(-dv_max, vmin - prev.vg), np.minimum(dv_max, vmax - prev.vg))
    return ActionVector(dp, dv)


def raw_from_setpoints(net: Network, target: DispatchSetpoints, prev: DispatchSetpoints) -> np.ndarray:
    """Inverse of :func:`clip_action` for an unclipped move; clipped into [0, 1]."""
    pmin, pmax = net.gen_array("pmin"), net.gen_array("pmax")
    vmin, vmax = net.bus_array("vmin")[net.gen_bus], net.bus_array("vmax")[net.gen_bus]
    up = (target.pg - prev.pg) / ((pmax - pmin) / 2.0)
    uv = (target.vg - prev.vg) / ((vmax - vmin) / 2.0)
    return np.clip((np.r_[up, uv] + 1.0) / 2.0, 0.0, 1.0)


def apply_action(net: Network, prev: DispatchSetpoints, action: ActionVector) -> DispatchSetpoints:
    """New set-points; the final clip only removes rounding (prev + (bound - prev) may exceed bound)."""
    vmin, vmax = net.bus_array("vmin")[net.gen_bus], net.bus_array("vmax")[net.gen_bus]
    pg = np.clip(prev.pg + action.dp, net.gen_array("pmin"), net.gen_array("pmax"))
    # the slack's previous output is its solved value, which may sit outside its limits
    pg[net.slack_gen] = prev.pg[net.slack_gen] + action.dp[net.slack_gen]
    return DispatchSetpoints(pg, np.clip(prev.vg + action.dv, vmin, vmax))


# --- reward variants --------------------------------------------------------------------


def reward_penalty(operating_cost: float, cost: ViolationVector | np.ndarray, penalty_coeffs) -> float:
    c = cost.as_array() if isinstance(cost, ViolationVector) else np.asarray(cost, float)
    coeffs = np.broadcast_to(np.asarray(penalty_coeffs, float), c.shape)
    return float(-operating_cost - np.sum(coeffs * c))


def reward_cliff(operating_cost: float, cost: ViolationVector | np.ndarray, k: float, b: float) -> float:
    c = cost.as_array() if isinstance(cost, ViolationVector) else np.asarray(cost, float)
    if np.all(c == 0):
        return float(-k * operating_cost + b)
    return float(-np.sum(c))


# --- contingencies ----------------------------------------------------------------------


@dataclass(frozen=True)
class ContingencySet:
    outages: tuple[tuple[int, ...], ...] = ()  # 1-based branch numbers

    @property
    def count(self) -> int:
        return len(self.outages)


def branch_number(net: Network, from_bus: int, to_bus: int) -> int:
    """1-based position of the branch joining two buses (either orientation)."""
    for k, br in enumerate(net.branches):
        if {br.from_bus, br.to_bus} == {from_bus, to_bus}:
            return k + 1
    raise KeyError(f"no branch between buses {from_bus} and {to_bus}")


def apply_contingency(net: Network, outage: Sequence[int]) -> Network:
    """Return ``net`` with the listed branches (1-based numbers) out of service."""
    out = net
    for number in outage:
        if not 1 <= number <= net.n_branch:
            raise IndexError(f"branch number {number} out of range")
        out = out.with_branch_status(number - 1, False)
    if not is_connected(out):
        raise ContingencySplitsNetwork(f"outage of branches {list(outage)} islands part of the network")
    return out


def evaluate_cost_vector(
    nets: Sequence[Network],
    sp: DispatchSetpoints,
    loads: tuple[np.ndarray, np.ndarray],
    cost_ceiling: float = 1.0,
) -> tuple[np.ndarray, list[PowerFlowSolution | None]]:
    """Concatenate the four-component violation vector over base case and contingencies."""
    blocks, sols = [], []
    for k, net in enumerate(nets):
        try:
            sol = solve_nr(net, sp, loads)
            blocks.append(violations(net, sol).as_array())
            sols.append(sol)
        except NonConvergence:
            blocks.append(np.full(N_COST, cost_ceiling))
            sols.append(None)
    return np.concatenate(blocks), sols


# --- environment --------------------------------------------------------------------------


@dataclass
class EnvConfig:
    episode_len: int = 8
    reward_scale: float | None = None  # None: expert objective at the base case
    dv_max: float = 0.05
    reward_floor: float = -10.0
    cost_ceiling: float = 1.0
    reward_mode: str = "pdppo"
    penalty_coeffs: tuple[float, ...] = (10.0, 10.0, 10.0, 10.0)
    cliff_k: float = 1.0
    cliff_b: float = 3.0

    def __post_init__(self) -> None:
        if self.reward_mode not in REWARD_MODES:
            raise ValueError(f"reward_mode must be one of {REWARD_MODES}")
        if self.episode_len < 1:
            raise ValueError("episode_len must be positive")


@dataclass
class StepResult:
    next_state: CmdpState
    reward: float
    cost: ViolationVector
    terminal: bool
    info: dict = field(default_factory=dict)
    cost_vector: np.ndarray | None = None


class RtOpfEnv:
    """Episodic environment over the steps of an expert trajectory.

    ``reset`` pins demand to one trajectory step and initializes the previous
    set-points from the expert dispatch that preceded it; ``step`` applies a policy
    sample, solves the power flow and scores the result.
    """

    def __init__(
        self,
        net: Network,
        trajectory: ExpertTrajectory,
        config: EnvConfig | None = None,
        *,
        normalizer: StateNormalizer | None = None,
        contingencies: ContingencySet | None = None,
        seed: int = 0,
    ):
        self.net = net
        self.trajectory = trajectory
        self.config = config or EnvConfig()
        self.normalizer = normalizer or StateNormalizer.for_network(net)
        self.contingencies = contingencies or ContingencySet()
        self.nets = [net] + [apply_contingency(net, o) for o in self.contingencies.outages]
        self.rng = np.random.default_rng(seed)
        self.state_dim, self.action_dim = dims(net)
        self.cost_dim = N_COST * len(self.nets)
        self.load_idx = load_buses(net)
        if self.config.reward_scale is None:
            from .opf_expert import solve_acopf

            self.reward_scale = solve_acopf(net).objective
        else:
            self.reward_scale = float(self.config.reward_scale)
        totals = [s.pd[self.load_idx].sum() for s in trajectory.steps]
        self._next_total = np.r_[totals[1:], totals[-1]]
        self.index: int | None = None
        self.t = 0
        self.prev: DispatchSetpoints | None = None
        self._v_warm = None

    def _state(self) -> CmdpState:
        step = self.trajectory[self.index]
        raw = np.concatenate([step.pd[self.load_idx], step.qd[self.load_idx], self.prev.pg, self.prev.vg,
                              [self._next_total[self.index]]])
        return CmdpState(raw, self.normalizer.normalize(raw))

    def reset(self, index: int | None = None) -> CmdpState:
        n = len(self.trajectory)
        if index is None:
            index = int(self.rng.integers(n))
        if not 0 <= index < n:
            raise IndexError(f"trajectory step {index} out of range (0..{n - 1})")
        step = self.trajectory[index]
        self.index = index
        self.t = 0
        self.prev = DispatchSetpoints(step.prev_pg.copy(), step.prev_vg.copy())
        self._v_warm = None
        return self._state()

    def expert_raw_action(self) -> np.ndarray:
        """Policy sample that moves the current set-points onto the expert's."""
        return raw_from_setpoints(self.net, self.trajectory[self.index].solution.setpoints, self.prev)

    def operating_reward(self, operating_cost: float, cost_vec: np.ndarray) -> float:
        scaled = operating_cost / self.reward_scale
        cfg = self.config
        if cfg.reward_mode == "pdppo":
            return -scaled
        if cfg.reward_mode == "penalty":
            coeffs = np.resize(np.asarray(cfg.penalty_coeffs, float), cost_vec.shape)
            return reward_penalty(scaled, cost_vec, coeffs)
        return reward_cliff(scaled, cost_vec, cfg.cliff_k, cfg.cliff_b)

    def step(self, raw_action: np.ndarray) -> StepResult:
        if self.index is None:
            raise RuntimeError("reset() must be called before step()")
        raw_action = np.asarray(raw_action, dtype=float)
        if raw_action.shape != (self.action_dim,) or not np.all(np.isfinite(raw_action)):
            raise ValueError("action must be a finite vector of length action_dim")
        cfg = self.config
        action = clip_action(self.net, raw_action, self.prev, cfg.dv_max)
        sp = apply_action(self.net, self.prev, action)
        step = self.trajectory[self.index]
        self.t += 1
        try:
            sol = solve_nr(self.net, sp, step.loads, v0=self._v_warm)
        except NonConvergence as exc:
            ceiling = ViolationVector.ceiling(cfg.cost_ceiling)
            return StepResult(self._state(), cfg.reward_floor, ceiling, True,
                              {"diverged": str(exc), "action": action, "setpoints": sp},
                              np.full(self.cost_dim, cfg.cost_ceiling))
        base_cost = violations(self.net, sol)
        if len(self.nets) > 1:
            extra, _ = evaluate_cost_vector(self.nets[1:], sp, step.loads, cfg.cost_ceiling)
            cost_vec = np.r_[base_cost.as_array(), extra]
        else:
            cost_vec = base_cost.as_array()
        operating_cost = self.net.generation_cost(sol.pg_solved)
        reward = self.operating_reward(operating_cost, cost_vec)
        self.prev = DispatchSetpoints(sol.pg_solved.copy(), sp.vg.copy())
        self._v_warm = sol.voltage
        terminal = self.t >= cfg.episode_len
        info = {"solution": sol, "action": action, "setpoints": sp, "operating_cost": operating_cost}
        return StepResult(self._state(), float(reward), base_cost, terminal, info, cost_vec)
