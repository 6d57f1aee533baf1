"""Primal-dual PPO: rollouts, GAE for reward and costs, Lagrangian advantage, clipped
policy updates with a KL stop, projected dual ascent, critic regression and behavior
cloning pre-training.
"""

from __future__ import annotations

import hashlib
import json
import math
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path
from typing import Callable, Sequence

import numpy as np

from .cmdp_env import RtOpfEnv, StateNormalizer, raw_from_setpoints
from .neural import Adam, GaussianPolicy, Mlp, Tensor, gaussian_kl, load_json, save_json
from .powerflow import DispatchSetpoints

CHECKPOINT_FORMAT = "rtopf-checkpoint-1"


class TrainingDiverged(RuntimeError):
    pass


@dataclass
class TrainConfig:
    gamma: float = 0.95
    lam_gae: float = 0.95
    clip_eps: float = 0.2
    kl_target: float = 0.01
    batch_size: int = 32
    buffer_size: int = 400
    actor_lr: float = 5e-5
    critic_lr: float = 1e-4
    lambda_lr: float = 1e-3
    episodes: int = 400
    n_pi: int = 10
    n_v: int = 10
    seed: int = 0
    hidden: tuple[int, ...] = (64, 64)
    init_log_std: float = math.log(0.02)
    cost_limit: float = 0.0
    cost_scale: float = 100.0
    normalize_advantage: bool = True
    reward_mode: str = "pdppo"
    bc_epochs: int = 300
    bc_lr: float = 1e-3
    divergence_limit: float = 1e6

    def __post_init__(self) -> None:
        self.hidden = tuple(int(h) for h in self.hidden)
        if not 0 <= self.gamma <= 1 or not 0 <= self.lam_gae <= 1:
            raise ValueError("gamma and lam_gae must lie in [0, 1]")
        if not 0 < self.clip_eps < 1:
            raise ValueError("clip_eps must lie in (0, 1)")
        for name in ("actor_lr", "critic_lr", "lambda_lr", "bc_lr", "cost_scale"):
            if getattr(self, name) <= 0:
                raise ValueError(f"{name} must be positive")
        if self.batch_size < 1 or self.buffer_size < 1 or self.episodes < 0:
            raise ValueError("batch_size, buffer_size must be positive and episodes nonnegative")

    @classmethod
    def from_dict(cls, d: dict) -> TrainConfig:
        known = {f.name for f in fields(cls)}
        unknown = set(d) - known
        if unknown:
            raise ValueError(f"unknown train config keys: {sorted(unknown)}")
        return cls(**d)


# --- rollout storage --------------------------------------------------------------


@dataclass
class Transition:
    state: np.ndarray
    action: np.ndarray  # pre-clip sample
    reward: float
    cost: np.ndarray
    next_state: np.ndarray
    log_prob: float
    terminal: bool
    mean: np.ndarray  # behavior mean at ``state``

    def __post_init__(self) -> None:
        if not (np.isfinite(self.reward) and np.all(np.isfinite(self.cost)) and np.isfinite(self.log_prob)):
            raise ValueError("transition values must be finite")
        if np.any(self.cost < 0):
            raise ValueError("cost components must be nonnegative")


class RolloutBuffer:
    """Transitions of one collection round plus the columns computed from them."""

    def __init__(self, capacity: int = 400):
        self.capacity = capacity
        self.transitions: list[Transition] = []
        self.columns: dict[str, np.ndarray] | None = None

    def __len__(self) -> int:
        return len(self.transitions)

    def add(self, tr: Transition) -> None:
        self.transitions.append(tr)
        self.columns = None

    def extend(self, trs: Sequence[Transition]) -> None:
        for tr in trs:
            self.add(tr)

    @property
    def full(self) -> bool:
        return len(self.transitions) >= self.capacity

    def clear(self) -> None:
        self.transitions = []
        self.columns = None

    def arrays(self) -> dict[str, np.ndarray]:
        trs = self.transitions
        ends = np.array([t.terminal for t in trs])
        # a segment also ends where the next transition does not continue from this one
        for i in range(len(trs) - 1):
            if not ends[i] and not np.array_equal(trs[i].next_state, trs[i + 1].state):
                ends[i] = True
        if len(trs):
            ends[-1] = True
        return {
            "states": np.array([t.state for t in trs]),
            "actions": np.array([t.action for t in trs]),
            "rewards": np.array([t.reward for t in trs]),
            "costs": np.array([t.cost for t in trs]),
            "next_states": np.array([t.next_state for t in trs]),
            "log_probs": np.array([t.log_prob for t in trs]),
            "terminals": np.array([t.terminal for t in trs]),
            "ends": ends,
            "means": np.array([t.mean for t in trs]),
        }

    def finalize(self, reward_critic: Mlp, cost_critic: Mlp, duals: DualMultipliers, gamma: float,
                 lam_gae: float) -> dict[str, np.ndarray]:
        cols = self.arrays()
        v_r = reward_critic.predict(cols["states"])[:, 0]
        nv_r = reward_critic.predict(cols["next_states"])[:, 0]
        v_c = cost_critic.predict(cols["states"])
        nv_c = cost_critic.predict(cols["next_states"])
        dn, en = cols["terminals"], cols["ends"]
        cols["values_r"], cols["values_c"] = v_r, v_c
        cols["returns_r"] = discounted_returns(cols["rewards"], dn, gamma, en, nv_r)
        cols["returns_c"] = discounted_returns(cols["costs"], dn, gamma, en, nv_c)
        cols["adv_r"] = gae(cols["rewards"], v_r, nv_r, dn, gamma, lam_gae, en)
        cols["adv_c"] = gae(cols["costs"], v_c, nv_c, dn, gamma, lam_gae, en)
        cols["adv_l"] = lagrange_advantage(cols["adv_r"], cols["adv_c"], duals.lam)
        self.columns = cols
        return cols


# --- returns and advantages ---------------------------------------------------------


def discounted_returns(signal: np.ndarray, terminals: np.ndarray, gamma: float, ends: np.ndarray | None = None,
                       next_values: np.ndarray | None = None) -> np.ndarray:
    """Backward discounted sums within episode segments.

    A segment that ends without a terminal flag is bootstrapped with ``next_values``
    at its last transition; terminal transitions bootstrap with zero.
    """
    signal = np.asarray(signal, dtype=float)
    terminals = np.asarray(terminals, dtype=bool)
    ends = terminals.copy() if ends is None else np.asarray(ends, dtype=bool).copy()
    ends[-1] = True
    out = np.zeros_like(signal)
    acc = np.zeros_like(signal[0])
    for t in range(len(signal) - 1, -1, -1):
        if ends[t]:
            acc = 0.0 * acc
            if not terminals[t] and next_values is not None:
                acc = np.asarray(next_values[t], dtype=float)
        acc = signal[t] + gamma * acc
        out[t] = acc
    return out


def gae(signal: np.ndarray, values: np.ndarray, next_values: np.ndarray, terminals: np.ndarray, gamma: float,
        lam: float, ends: np.ndarray | None = None) -> np.ndarray:
    """Generalized advantage: A_t = sum_l (gamma*lam)^l delta_{t+l} within a segment."""
    signal = np.asarray(signal, dtype=float)
    terminals = np.asarray(terminals, dtype=bool)
    ends = terminals.copy() if ends is None else np.asarray(ends, dtype=bool).copy()
    ends[-1] = True
    nonterm = (~terminals).astype(float)
    if signal.ndim > 1:
        nonterm = nonterm[:, None]
    delta = signal + gamma * nonterm * next_values - values
    out = np.zeros_like(delta)
    acc = np.zeros_like(delta[0])
    for t in range(len(delta) - 1, -1, -1):
        if ends[t]:
            acc = 0.0 * acc
        acc = delta[t] + gamma * lam * acc
        out[t] = acc
    return out


def lagrange_advantage(adv_r: np.ndarray, adv_c: np.ndarray, lam: np.ndarray) -> np.ndarray:
    return np.asarray(adv_r, float) - np.asarray(adv_c, float) @ np.asarray(lam, float)


def surrogate_terms(ratio: np.ndarray, adv: np.ndarray, eps: float) -> np.ndarray:
    return np.minimum(ratio * adv, np.clip(ratio, 1.0 - eps, 1.0 + eps) * adv)


def clipped_surrogate(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray,
                      adv: np.ndarray, eps: float) -> Tensor:
    """Negated clipped importance-sampling objective (a loss to minimize)."""
    ratio = (policy.log_prob(states, actions) - old_log_probs).exp()
    adv = np.asarray(adv, float)
    term = (ratio * adv).minimum(ratio.clip(1.0 - eps, 1.0 + eps) * adv)
    return -term.mean()


def ratios(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray, old_log_probs: np.ndarray) -> np.ndarray:
    return np.exp(policy.log_prob(states, actions).data - old_log_probs)


def kl_divergence(policy: GaussianPolicy, states: np.ndarray, old_means: np.ndarray, old_log_std: np.ndarray) -> float:
    """Batch mean of KL(behavior || current) in closed form."""
    mu = policy.mean(states)
    return float(np.mean(gaussian_kl(old_means, old_log_std, mu, policy.log_std.data)))


@dataclass
class DualMultipliers:
    lam: np.ndarray
    limits: np.ndarray
    lr: float = 1e-3

    def __post_init__(self) -> None:
        self.lam = np.asarray(self.lam, dtype=float)
        self.limits = np.broadcast_to(np.asarray(self.limits, dtype=float), self.lam.shape).copy()
        if np.any(self.lam < 0):
            raise ValueError("dual multipliers must be nonnegative")

    @classmethod
    def zeros(cls, n: int, limit: float = 0.0, lr: float = 1e-3) -> DualMultipliers:
        return cls(np.zeros(n), np.full(n, limit), lr)


def dual_gradient(ratio: np.ndarray, cost_values: np.ndarray, limits: np.ndarray) -> np.ndarray:
    return np.mean(np.maximum(0.0, ratio[:, None] * cost_values - limits), axis=0)


def update_duals(duals: DualMultipliers, ratio: np.ndarray, cost_values: np.ndarray) -> DualMultipliers:
    """Projected ascent: lam <- [lam + lr * mean([rho * V_C - d]^+)]^+."""
    grad = dual_gradient(np.asarray(ratio, float), np.asarray(cost_values, float), duals.limits)
    return DualMultipliers(np.maximum(0.0, duals.lam + duals.lr * grad), duals.limits, duals.lr)


def critic_loss(critic: Mlp, states: np.ndarray, targets: np.ndarray) -> Tensor:
    targets = np.asarray(targets, float)
    if targets.ndim == 1:
        targets = targets[:, None]
    diff = critic(states) - targets
    return (diff * diff).mean()


def critic_losses(reward_critic: Mlp, cost_critic: Mlp, states: np.ndarray, returns_r: np.ndarray,
                  returns_c: np.ndarray) -> tuple[Tensor, Tensor]:
    return critic_loss(reward_critic, states, returns_r), critic_loss(cost_critic, states, returns_c)


# --- behavior cloning ----------------------------------------------------------------


def expert_dataset(env: RtOpfEnv, fixed_points: bool = True, perturbed: int = 0,
                   rng: np.random.Generator | None = None, pg_noise: float = 0.05,
                   vg_noise: float = 0.1) -> tuple[np.ndarray, np.ndarray]:
    """Normalized states and raw expert actions for every trajectory step.

    With ``fixed_points`` each step also contributes the state whose previous dispatch
    is already the expert's, paired with the hold action. ``perturbed`` adds that many
    states per step whose previous dispatch is the expert's jittered by Gaussian noise
    (``pg_noise``/``vg_noise`` as fractions of each capability range), labelled with the
    move back onto the expert set-points. These cover the later steps of an episode,
    where the previous dispatch is the agent's own.
    """
    rng = rng or np.random.default_rng(0)
    net = env.net
    pmin, pmax = net.gen_array("pmin"), net.gen_array("pmax")
    vmin, vmax = net.bus_array("vmin")[net.gen_bus], net.bus_array("vmax")[net.gen_bus]
    states, actions = [], []
    for i in range(len(env.trajectory)):
        s = env.reset(i)
        states.append(s.normalized)
        actions.append(env.expert_raw_action())
        sol = env.trajectory[i].solution
        prevs = []
        if fixed_points:
            prevs.append(DispatchSetpoints(sol.pg.copy(), sol.vg.copy()))
        for _ in range(perturbed):
            pg = np.clip(sol.pg + rng.normal(0.0, pg_noise, sol.pg.shape) * (pmax - pmin), pmin, pmax)
            vg = np.clip(sol.vg + rng.normal(0.0, vg_noise, sol.vg.shape) * (vmax - vmin), vmin, vmax)
            prevs.append(DispatchSetpoints(pg, vg))
        for prev in prevs:
            env.prev = prev
            states.append(env._state().normalized)
            actions.append(raw_from_setpoints(net, sol.setpoints, prev))
    return np.array(states), np.array(actions)


def pretrain_bc(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray, epochs: int = 300,
                lr: float = 1e-3, batch_size: int = 32, rng: np.random.Generator | None = None) -> float:
    """Regress the policy mean onto expert raw actions; returns the final full-data MSE."""
    rng = rng or np.random.default_rng(0)
    opt = Adam(policy.mean_net.params, lr=lr)
    n = len(states)
    for _ in range(epochs):
        perm = rng.permutation(n)
        for k in range(0, n, batch_size):
            idx = perm[k:k + batch_size]
            diff = policy.mean_net(states[idx]) - actions[idx]
            loss = (diff * diff).mean()
            opt.zero_grad()
            loss.backward()
            opt.step()
    return bc_loss(policy, states, actions)


def bc_loss(policy: GaussianPolicy, states: np.ndarray, actions: np.ndarray) -> float:
    return float(np.mean((policy.mean(states) - actions) ** 2))


# --- agent and checkpoints ---------------------------------------------------------------


@dataclass
class Agent:
    policy: GaussianPolicy
    reward_critic: Mlp
    cost_critic: Mlp
    duals: DualMultipliers
    normalizer: StateNormalizer
    config: TrainConfig
    episodes_done: int = 0
    config_hash: str = ""
    rng_state: dict | None = None
    actor_opt: Adam | None = None
    critic_opt: Adam | None = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self) -> None:
        if self.actor_opt is None:
            self.actor_opt = Adam(self.policy.params, lr=self.config.actor_lr)
        if self.critic_opt is None:
            self.critic_opt = Adam(self.reward_critic.params + self.cost_critic.params, lr=self.config.critic_lr)

    @classmethod
    def create(cls, state_dim: int, action_dim: int, cost_dim: int, normalizer: StateNormalizer,
               config: TrainConfig, config_hash: str = "") -> Agent:
        rng = np.random.default_rng([config.seed, 1])
        policy = GaussianPolicy.build(state_dim, action_dim, config.hidden, rng, config.init_log_std)
        reward_critic = Mlp([state_dim, *config.hidden, 1], rng=rng)
        # zero output layer: a task that never incurs cost keeps V_C = 0 and therefore lambda = 0
        cost_critic = Mlp([state_dim, *config.hidden, cost_dim], rng=rng, out_scale=0.0)
        duals = DualMultipliers.zeros(cost_dim, config.cost_limit, config.lambda_lr)
        return cls(policy, reward_critic, cost_critic, duals, normalizer, config, config_hash=config_hash)

    def act(self, normalized_state: np.ndarray) -> np.ndarray:
        """Deterministic deployment action (the policy mean)."""
        return self.policy.mean(normalized_state)

    def to_dict(self) -> dict:
        return {
            "format": CHECKPOINT_FORMAT,
            "config_hash": self.config_hash,
            "config": _config_dict(self.config),
            "episodes_done": self.episodes_done,
            "policy": self.policy.to_dict(),
            "reward_critic": self.reward_critic.to_dict(),
            "cost_critic": self.cost_critic.to_dict(),
            "duals": {"lam": self.duals.lam.tolist(), "limits": self.duals.limits.tolist(), "lr": self.duals.lr},
            "normalizer": self.normalizer.to_dict(),
            "actor_opt": self.actor_opt.state_dict(),
            "critic_opt": self.critic_opt.state_dict(),
            "rng_state": self.rng_state,
            "meta": self.meta,
        }

    @classmethod
    def from_dict(cls, d: dict) -> Agent:
        if d.get("format") != CHECKPOINT_FORMAT:
            raise ValueError("not an rtopf checkpoint")
        cfg = TrainConfig.from_dict(d["config"])
        du = d["duals"]
        agent = cls(GaussianPolicy.from_dict(d["policy"]), Mlp.from_dict(d["reward_critic"]),
                    Mlp.from_dict(d["cost_critic"]), DualMultipliers(du["lam"], du["limits"], du["lr"]),
                    StateNormalizer.from_dict(d["normalizer"]), cfg, d["episodes_done"], d["config_hash"],
                    d.get("rng_state"), meta=d.get("meta", {}))
        agent.actor_opt.load_state_dict(d["actor_opt"])
        agent.critic_opt.load_state_dict(d["critic_opt"])
        return agent


def _config_dict(cfg: TrainConfig) -> dict:
    d = asdict(cfg)
    d["hidden"] = list(cfg.hidden)
    return d


def save_checkpoint(agent: Agent, path: str | Path) -> None:
    save_json(agent.to_dict(), path)


def load_checkpoint(path: str | Path) -> Agent:
    return Agent.from_dict(load_json(path))


def config_hash(doc) -> str:
    return hashlib.sha256(json.dumps(doc, sort_keys=True).encode()).hexdigest()[:16]


# --- training loop -----------------------------------------------------------------------


def run_episode(env: RtOpfEnv, policy: GaussianPolicy, rng: np.random.Generator, cost_scale: float,
                index: int | None = None) -> tuple[list[Transition], dict]:
    """One episode with stochastic actions; returns transitions and raw episode statistics."""
    if index is None:
        index = int(rng.integers(len(env.trajectory)))
    s = env.reset(index)
    trs: list[Transition] = []
    raw_costs = []
    while True:
        smp = policy.sample(s.normalized, rng)
        res = env.step(smp.action)
        if env.config.reward_mode == "pdppo" and "operating_cost" in res.info:
            # the learning signal for the reward critic carries no violation terms
            assert res.reward == -res.info["operating_cost"] / env.reward_scale
        trs.append(Transition(s.normalized, smp.pre_clip, res.reward, res.cost_vector * cost_scale,
                              res.next_state.normalized, smp.log_prob, res.terminal,
                              policy.mean(s.normalized)))
        raw_costs.append(res.cost_vector)
        s = res.next_state
        if res.terminal:
            break
    return trs, {"index": index, "costs": np.array(raw_costs)}


_WORKER_ENV: RtOpfEnv | None = None


def _worker_init(env: RtOpfEnv) -> None:
    global _WORKER_ENV
    _WORKER_ENV = env


def _worker_episode(args):
    policy_doc, seed_words, cost_scale = args
    policy = GaussianPolicy.from_dict(policy_doc)
    return run_episode(_WORKER_ENV, policy, np.random.default_rng(seed_words), cost_scale)


def episode_rng(seed: int, episode: int) -> np.random.Generator:
    return np.random.default_rng([seed, 7, episode])


def collect(env: RtOpfEnv, policy: GaussianPolicy, seed: int, first_episode: int, count: int, cost_scale: float,
            pool: ProcessPoolExecutor | None = None) -> list[tuple[list[Transition], dict]]:
    """Run ``count`` episodes; each draws its randomness from (seed, episode number) only."""
    if pool is None:
        return [run_episode(env, policy, episode_rng(seed, first_episode + k), cost_scale) for k in range(count)]
    doc = policy.to_dict()
    jobs = [(doc, [seed, 7, first_episode + k], cost_scale) for k in range(count)]
    return list(pool.map(_worker_episode, jobs))


@dataclass
class LogRow:
    episode: int
    mean_reward: float
    mean_cost: np.ndarray
    lam: np.ndarray
    kl: float
    actor_loss: float
    critic_r_loss: float
    critic_c_loss: float
    wall_ms: float
    policy_steps: int = 0

    def as_list(self) -> list:
        return ([self.episode, self.mean_reward] + self.mean_cost.tolist() + self.lam.tolist()
                + [self.kl, self.actor_loss, self.critic_r_loss, self.critic_c_loss, self.wall_ms])

    @staticmethod
    def header(cost_dim: int) -> list[str]:
        names = ["c_pg", "c_qg", "c_vg", "c_flow"]
        costs = [f"{names[j % 4]}_{j // 4}" if cost_dim > 4 else names[j] for j in range(cost_dim)]
        lams = [f"lambda_{j}" for j in range(cost_dim)]
        return (["episode", "mean_reward"] + costs + lams
                + ["kl", "actor_loss", "criticR_loss", "criticC_loss", "wall_ms"])


def update(agent: Agent, buffer: RolloutBuffer, rng: np.random.Generator) -> dict:
    """One round of policy, dual and critic updates on a full buffer; empties the buffer."""
    cfg = agent.config
    cols = buffer.finalize(agent.reward_critic, agent.cost_critic, agent.duals, cfg.gamma, cfg.lam_gae)
    adv = cols["adv_l"]
    scale = float(np.mean(np.abs(adv)))
    if not np.isfinite(scale) or scale > cfg.divergence_limit:
        raise TrainingDiverged(f"mean |A_L| = {scale:.3e} exceeds {cfg.divergence_limit:g}")
    if cfg.normalize_advantage and len(adv) > 1:
        adv = (adv - adv.mean()) / (adv.std() + 1e-8)
    states, actions, old_lp = cols["states"], cols["actions"], cols["log_probs"]
    old_means, old_log_std = cols["means"], agent.policy.log_std.data.copy()
    n = len(states)
    learn_duals = cfg.reward_mode == "pdppo"
    kl = 0.0
    actor_loss = 0.0
    policy_steps = 0
    for _ in range(cfg.n_pi):
        stop = False
        perm = rng.permutation(n)
        for k in range(0, n, cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            kl = kl_divergence(agent.policy, states[idx], old_means[idx], old_log_std)
            if kl > cfg.kl_target:
                stop = True
                break
            loss = clipped_surrogate(agent.policy, states[idx], actions[idx], old_lp[idx], adv[idx], cfg.clip_eps)
            agent.actor_opt.zero_grad()
            loss.backward()
            agent.actor_opt.step()
            actor_loss = float(loss.data)
            policy_steps += 1
        if not np.all(np.isfinite(agent.policy.log_std.data)):
            raise TrainingDiverged("policy log-std became non-finite")
        if learn_duals:
            rho = ratios(agent.policy, states, actions, old_lp)
            agent.duals = update_duals(agent.duals, rho, cols["values_c"])
        if stop:
            break
    critic_r = critic_c = 0.0
    params = agent.reward_critic.params + agent.cost_critic.params
    for _ in range(cfg.n_v):
        perm = rng.permutation(n)
        for k in range(0, n, cfg.batch_size):
            idx = perm[k:k + cfg.batch_size]
            lr_, lc_ = critic_losses(agent.reward_critic, agent.cost_critic, states[idx], cols["returns_r"][idx],
                                     cols["returns_c"][idx])
            agent.critic_opt.zero_grad()
            (lr_ + lc_).backward()
            agent.critic_opt.step()
            critic_r, critic_c = float(lr_.data), float(lc_.data)
    for value in (actor_loss, critic_r, critic_c):
        if not np.isfinite(value) or abs(value) > cfg.divergence_limit:
            raise TrainingDiverged(f"loss {value:.3e} exceeds {cfg.divergence_limit:g}")
    assert all(np.all(np.isfinite(p.data)) for p in params)
    buffer.clear()
    return {"kl": kl, "actor_loss": actor_loss, "critic_r_loss": critic_r, "critic_c_loss": critic_c,
            "policy_steps": policy_steps}


def train(
    env: RtOpfEnv,
    agent: Agent,
    *,
    episodes: int | None = None,
    workers: int = 1,
    on_round: Callable[[Agent, LogRow], None] | None = None,
) -> list[LogRow]:
    """Collect episodes into the buffer and update whenever it fills.

    Episode k's randomness depends only on (seed, k), and updates draw from an RNG
    stored in the agent, so a run resumed from a checkpoint continues identically.
    """
    cfg = agent.config
    total = cfg.episodes if episodes is None else episodes
    per_round = max(1, math.ceil(cfg.buffer_size / env.config.episode_len))
    rng = np.random.default_rng([cfg.seed, 3])
    if agent.rng_state is not None:
        rng.bit_generator.state = agent.rng_state
    log: list[LogRow] = []
    buffer = RolloutBuffer(cfg.buffer_size)
    pool = ProcessPoolExecutor(workers, initializer=_worker_init, initargs=(env,)) if workers > 1 else None
    try:
        while agent.episodes_done < total:
            t0 = time.perf_counter()
            count = min(per_round, total - agent.episodes_done)
            results = collect(env, agent.policy, cfg.seed, agent.episodes_done, count, cfg.cost_scale, pool)
            for trs, _ in results:
                buffer.extend(trs)
            rewards = np.array([t.reward for trs, _ in results for t in trs])
            raw_costs = np.concatenate([info["costs"] for _, info in results])
            stats = update(agent, buffer, rng)
            agent.episodes_done += count
            agent.rng_state = rng.bit_generator.state
            row = LogRow(agent.episodes_done, float(rewards.mean()), raw_costs.mean(axis=0), agent.duals.lam.copy(),
                         stats["kl"], stats["actor_loss"], stats["critic_r_loss"], stats["critic_c_loss"],
                         (time.perf_counter() - t0) * 1e3, stats["policy_steps"])
            log.append(row)
            if on_round is not None:
                on_round(agent, row)
    finally:
        if pool is not None:
            pool.shutdown()
    return log
