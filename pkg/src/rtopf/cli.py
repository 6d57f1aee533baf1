"""Command-line entry point: ``rtopf gen-data|expert|pretrain|train|eval|bench``.

Every command reads one JSON run configuration; flags override it. Outputs land in
the run directory and carry a hash of the configuration that produced them.
"""

from __future__ import annotations

import argparse
import copy
import json
import logging
import sys
from dataclasses import asdict, fields
from pathlib import Path

import numpy as np

from .cmdp_env import (
    ContingencySet,
    DatasetConfig,
    EnvConfig,
    RtOpfEnv,
    StateNormalizer,
    generate_dataset,
    read_dataset,
    write_dataset,
)
from .eval import ExpertReplay, evaluate, timing_benchmark
from .grid_model import CaseError, Network, parse_case
from .opf_expert import OpfError, TrajectoryError, export_trajectory, generate_expert_trajectory, import_trajectory
from .pdppo import (
    Agent,
    LogRow,
    TrainConfig,
    TrainingDiverged,
    config_hash,
    expert_dataset,
    load_checkpoint,
    pretrain_bc,
    save_checkpoint,
    train,
)

log = logging.getLogger("rtopf")

EXIT_OK, EXIT_CONFIG, EXIT_SOLVER, EXIT_GATE = 0, 2, 3, 4
REWARD_MODES = ("pdppo", "penalty", "cliff")

DEFAULT_CONFIG: dict = {
    "case": "ieee9",
    "seed": 0,
    "out": "runs/ieee9",
    "dataset": {"train_horizon": 400, "test_horizon": 200, "load_scale_low": 0.7, "load_scale_high": 1.3,
                "pf_scale_low": 0.9, "pf_scale_high": 1.1},
    "env": {},
    "train": {"lambda_lr": 0.5, "episodes": 2500},
    "bc": {"epochs": 300, "lr": 1e-3, "perturbed": 4, "pg_noise": 0.05, "vg_noise": 0.1},
    "eval": {"repetitions": 30, "timing_scenarios": 10, "gate": {"feas_percent": 100.0, "c_bar": 0.0,
                                                                 "kappa_aver": 0.5}},
    "contingencies": [],
}


class ConfigError(ValueError):
    pass


def _merge(base: dict, override: dict) -> dict:
    out = copy.deepcopy(base)
    for k, v in override.items():
        if isinstance(v, dict) and isinstance(out.get(k), dict):
            out[k] = _merge(out[k], v)
        else:
            out[k] = v
    return out


def _check_keys(block: dict, allowed: set[str], where: str) -> None:
    unknown = set(block) - allowed
    if unknown:
        raise ConfigError(f"{where}: unknown keys {sorted(unknown)}")


class RunConfig:
    """Resolved run configuration with derived per-subsystem seeds and hashes."""

    def __init__(self, doc: dict, base_dir: Path | None = None):
        self.doc = _merge(DEFAULT_CONFIG, doc)
        d = self.doc
        _check_keys(d, set(DEFAULT_CONFIG), "config")
        _check_keys(d["dataset"], set(DEFAULT_CONFIG["dataset"]), "dataset")
        _check_keys(d["env"], {f.name for f in fields(EnvConfig)}, "env")
        _check_keys(d["train"], {f.name for f in fields(TrainConfig)} - {"seed"}, "train")
        _check_keys(d["bc"], set(DEFAULT_CONFIG["bc"]), "bc")
        _check_keys(d["eval"], set(DEFAULT_CONFIG["eval"]), "eval")
        self.base_dir = base_dir or Path.cwd()
        case = str(d["case"])
        case_path = self.base_dir / case
        self.case = str(case_path) if case_path.exists() else case
        self.out = Path(d["out"]) if Path(d["out"]).is_absolute() else self.base_dir / d["out"]
        if not isinstance(d["seed"], int) or d["seed"] < 0:
            raise ConfigError("seed must be a nonnegative integer")
        self.train_data_seed, self.test_data_seed, self.agent_seed = (
            int(s) for s in np.random.SeedSequence(d["seed"]).generate_state(3))
        try:
            self.env_config = EnvConfig(**d["env"])
            self.train_config = TrainConfig(**{**d["train"], "seed": self.agent_seed,
                                               "reward_mode": self.env_config.reward_mode})
            ds = d["dataset"]
            self.dataset_train = self._dataset(ds, ds["train_horizon"], self.train_data_seed)
            self.dataset_test = self._dataset(ds, ds["test_horizon"], self.test_data_seed)
        except (TypeError, ValueError) as exc:
            raise ConfigError(str(exc)) from exc
        self.contingencies = ContingencySet(tuple(tuple(int(b) for b in o) for o in d["contingencies"]))

    @staticmethod
    def _dataset(ds: dict, horizon: int, seed: int) -> DatasetConfig:
        return DatasetConfig(horizon=horizon, load_scale_low=ds["load_scale_low"],
                             load_scale_high=ds["load_scale_high"], pf_scale_low=ds["pf_scale_low"],
                             pf_scale_high=ds["pf_scale_high"], seed=seed)

    @classmethod
    def load(cls, path: str | Path | None, overrides: dict | None = None) -> RunConfig:
        doc: dict = {}
        base = Path.cwd()
        if path is not None:
            p = Path(path)
            if not p.exists():
                raise ConfigError(f"config file not found: {p}")
            try:
                doc = json.loads(p.read_text())
            except json.JSONDecodeError as exc:
                raise ConfigError(f"{p}: invalid JSON ({exc})") from exc
            base = p.resolve().parent
        return cls(_merge(doc, overrides or {}), base)

    def network(self) -> Network:
        try:
            return parse_case(self.case)
        except (OSError, CaseError) as exc:
            raise ConfigError(f"case {self.case!r}: {exc}") from exc

    @property
    def data_hash(self) -> str:
        d = self.doc
        return config_hash({"case": d["case"], "seed": d["seed"], "dataset": d["dataset"]})

    def train_hash(self, mode: str) -> str:
        d = self.doc
        train_block = {k: v for k, v in d["train"].items() if k != "episodes"}
        return config_hash({"data": self.data_hash, "env": d["env"], "train": train_block, "bc": d["bc"],
                            "contingencies": d["contingencies"], "mode": mode})

    def path(self, name: str) -> Path:
        return self.out / name


# --- commands -------------------------------------------------------------------


def cmd_gen_data(cfg: RunConfig) -> list[Path]:
    net = cfg.network()
    cfg.out.mkdir(parents=True, exist_ok=True)
    paths = []
    for split, dcfg in (("train", cfg.dataset_train), ("test", cfg.dataset_test)):
        scen = generate_dataset(net, dcfg)
        p = cfg.path(f"data_{split}.csv")
        write_dataset(scen, net, p, {"config_hash": cfg.data_hash, "split": split, "seed": dcfg.seed})
        paths.append(p)
    return paths


def _read_split(cfg: RunConfig, net: Network, split: str):
    p = cfg.path(f"data_{split}.csv")
    if not p.exists():
        raise ConfigError(f"missing dataset {p}; run gen-data first")
    scen, meta = read_dataset(p, net)
    if meta.get("config_hash") != cfg.data_hash:
        raise ConfigError(f"{p} was generated under a different configuration")
    return scen


def cmd_expert(cfg: RunConfig) -> list[Path]:
    net = cfg.network()
    paths = []
    for split in ("train", "test"):
        p = cfg.path(f"expert_{split}.json")
        if p.exists():
            try:
                if json.loads(p.read_text()).get("config_hash") == cfg.data_hash:
                    log.info("reusing cached %s", p)
                    paths.append(p)
                    continue
            except json.JSONDecodeError:
                pass
        scen = _read_split(cfg, net, split)
        traj = generate_expert_trajectory(net, scen, strict=True)
        export_trajectory(traj, p, {"config_hash": cfg.data_hash, "split": split})
        paths.append(p)
    return paths


def _load_expert(cfg: RunConfig, net: Network, split: str):
    p = cfg.path(f"expert_{split}.json")
    if not p.exists():
        raise ConfigError(f"missing expert trajectory {p}; run expert first")
    if json.loads(p.read_text()).get("config_hash") != cfg.data_hash:
        raise ConfigError(f"{p} was produced under a different configuration")
    return import_trajectory(p, net)


def _envs(cfg: RunConfig, net: Network, mode: str | None = None) -> tuple[RtOpfEnv, RtOpfEnv]:
    env_cfg = cfg.env_config if mode is None else EnvConfig(**{**asdict(cfg.env_config), "reward_mode": mode})
    normalizer = StateNormalizer.for_network(net, cfg.dataset_train)
    train_traj, test_traj = _load_expert(cfg, net, "train"), _load_expert(cfg, net, "test")
    env = RtOpfEnv(net, train_traj, env_cfg, normalizer=normalizer, contingencies=cfg.contingencies)
    test_env = RtOpfEnv(net, test_traj, env_cfg, normalizer=normalizer, contingencies=cfg.contingencies)
    return env, test_env


def cmd_pretrain(cfg: RunConfig) -> Path:
    net = cfg.network()
    env, _ = _envs(cfg, net)
    tc, bc = cfg.train_config, cfg.doc["bc"]
    p = cfg.path("bc.ckpt.json")
    bc_hash = config_hash({"train": cfg.train_hash("bc"), "bc": bc})
    if p.exists() and load_checkpoint(p).config_hash == bc_hash:
        log.info("reusing cached %s", p)
        return p
    agent = Agent.create(env.state_dim, env.action_dim, env.cost_dim, env.normalizer, tc, bc_hash)
    states, actions = expert_dataset(env, perturbed=bc["perturbed"], rng=np.random.default_rng([tc.seed, 5]),
                                     pg_noise=bc["pg_noise"], vg_noise=bc["vg_noise"])
    loss = pretrain_bc(agent.policy, states, actions, bc["epochs"], bc["lr"], tc.batch_size,
                       np.random.default_rng([tc.seed, 2]))
    agent.meta = {"bc_loss": loss, "data_hash": cfg.data_hash}
    save_checkpoint(agent, p)
    log.info("behavior cloning loss %.3e", loss)
    return p


def cmd_train(cfg: RunConfig, mode: str | None = None, workers: int = 1, resume: bool = True) -> Path:
    mode = mode or cfg.env_config.reward_mode
    net = cfg.network()
    env, _ = _envs(cfg, net, mode)
    ckpt = cfg.path(f"agent_{mode}.ckpt.json")
    log_path = cfg.path(f"train_{mode}.log.tsv")
    want = cfg.train_hash(mode)
    tc = TrainConfig(**{**asdict(cfg.train_config), "reward_mode": mode})
    if resume and ckpt.exists():
        agent = load_checkpoint(ckpt)
        if agent.config_hash != want:
            raise ConfigError(f"{ckpt} was trained under a different configuration; refusing to resume")
        agent.config = tc
    else:
        bc_path = cfg.path("bc.ckpt.json")
        if not bc_path.exists():
            raise ConfigError(f"missing {bc_path}; run pretrain first")
        bc = load_checkpoint(bc_path)
        if bc.meta.get("data_hash") != cfg.data_hash:
            raise ConfigError(f"{bc_path} does not match this configuration")
        agent = Agent(bc.policy, bc.reward_critic, bc.cost_critic, bc.duals, bc.normalizer, tc,
                      config_hash=want, meta={"data_hash": cfg.data_hash, "reward_mode": mode})
        agent.duals.lr = tc.lambda_lr
        log_path.write_text("\t".join(LogRow.header(env.cost_dim)) + "\n")

    def on_round(a: Agent, row: LogRow) -> None:
        with log_path.open("a") as fh:
            fh.write("\t".join(repr(float(x)) if not isinstance(x, int) else str(x) for x in row.as_list()) + "\n")
        save_checkpoint(a, ckpt)
        log.info("episode %d reward %.4f lambda %s", row.episode, row.mean_reward, np.round(row.lam, 3))

    if agent.episodes_done >= tc.episodes:
        save_checkpoint(agent, ckpt)
    train(env, agent, workers=workers, on_round=on_round)
    return ckpt


def _actor_for(cfg: RunConfig, checkpoint: str, test_env: RtOpfEnv):
    if checkpoint == "expert":
        return ExpertReplay(test_env), "expert"
    p = Path(checkpoint)
    if not p.exists():
        p = cfg.path(f"agent_{checkpoint}.ckpt.json")
    if not p.exists():
        raise ConfigError(f"checkpoint {checkpoint!r} not found")
    agent = load_checkpoint(p)
    if agent.meta.get("data_hash") != cfg.data_hash:
        raise ConfigError(f"{p} was trained on a different dataset; refusing to evaluate")
    return agent, agent.meta.get("reward_mode", p.stem)


def cmd_eval(cfg: RunConfig, checkpoint: str, gate: bool = False) -> tuple[Path, bool]:
    net = cfg.network()
    _, test_env = _envs(cfg, net)
    actor, name = _actor_for(cfg, checkpoint, test_env)
    report = evaluate(actor, test_env, method=name)
    p = cfg.path(f"eval_{name}.txt")
    text = f"# config_hash={cfg.data_hash}\n{report.summary()}\n\n{report.rows_table()}\n"
    tmp = p.with_suffix(".tmp")
    tmp.write_text(text)
    tmp.replace(p)
    print(report.summary())
    g = cfg.doc["eval"]["gate"]
    ok = (report.feas_percent >= g["feas_percent"] and report.c_bar <= g["c_bar"]
          and report.kappa_aver <= g["kappa_aver"])
    return p, ok or not gate


def cmd_bench(cfg: RunConfig, checkpoint: str) -> Path:
    net = cfg.network()
    _, test_env = _envs(cfg, net)
    actor, name = _actor_for(cfg, checkpoint, test_env)
    ev = cfg.doc["eval"]
    timing = timing_benchmark(net, actor, test_env, repetitions=ev["repetitions"], scenarios=ev["timing_scenarios"])
    text = (f"# config_hash={cfg.data_hash}\nT_IPS_ms\t{timing.t_expert * 1e3!r}\nT_PF_ms\t{timing.t_powerflow * 1e3!r}\n"
            f"T_Actor_ms\t{timing.t_actor * 1e3!r}\nspeedup\t{timing.speedup!r}\n")
    p = cfg.path(f"bench_{name}.tsv")
    p.write_text(text)
    print(text, end="")
    return p


# --- argument handling -------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="rtopf", description="Safe RL for real-time AC optimal power flow.")
    ap.add_argument("command", choices=["gen-data", "expert", "pretrain", "train", "eval", "bench"])
    ap.add_argument("--config", help="JSON run configuration")
    ap.add_argument("--seed", type=int, help="root seed (overrides config)")
    ap.add_argument("--workers", type=int, default=1, help="parallel rollout workers for train")
    ap.add_argument("--reward-mode", choices=REWARD_MODES, help="learning signal for train")
    ap.add_argument("--episodes", type=int, help="training episodes (overrides config)")
    ap.add_argument("--out", help="run directory (overrides config)")
    ap.add_argument("--checkpoint", default=None,
                    help="eval/bench: checkpoint path, reward mode name, or 'expert' for expert replay")
    ap.add_argument("--gate", action="store_true", help="eval: exit 4 if the acceptance thresholds are missed")
    ap.add_argument("--fresh", action="store_true", help="train: ignore an existing checkpoint")
    ap.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    overrides: dict = {}
    if args.seed is not None:
        overrides["seed"] = args.seed
    if args.out is not None:
        overrides["out"] = str(Path(args.out).resolve())
    if args.episodes is not None:
        overrides.setdefault("train", {})["episodes"] = args.episodes
    if args.reward_mode is not None:
        overrides.setdefault("env", {})["reward_mode"] = args.reward_mode
    try:
        cfg = RunConfig.load(args.config, overrides)
        cfg.out.mkdir(parents=True, exist_ok=True)
        if args.workers < 1:
            raise ConfigError("--workers must be at least 1")
        cmd = args.command
        if cmd == "gen-data":
            cmd_gen_data(cfg)
        elif cmd == "expert":
            cmd_expert(cfg)
        elif cmd == "pretrain":
            cmd_pretrain(cfg)
        elif cmd == "train":
            cmd_train(cfg, workers=args.workers, resume=not args.fresh)
        elif cmd == "eval":
            _, ok = cmd_eval(cfg, args.checkpoint or cfg.env_config.reward_mode, gate=args.gate)
            if not ok:
                print("acceptance thresholds not met", file=sys.stderr)
                return EXIT_GATE
        elif cmd == "bench":
            cmd_bench(cfg, args.checkpoint or cfg.env_config.reward_mode)
    except (ConfigError, TrajectoryError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (OpfError, TrainingDiverged) as exc:
        print(f"solver failure: {exc}", file=sys.stderr)
        return EXIT_SOLVER
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
