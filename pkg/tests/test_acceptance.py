"""Acceptance criteria, each checked at its stated tolerance.

Every test appends one PASS/FAIL line to the acceptance summary printed at the end
of the pytest run. Criteria 4-6 and 8 train real agents on case9 and take a few
minutes in total.
"""

import json
import math
import shutil
import time
from pathlib import Path

import numpy as np
import pytest

from conftest import ACCEPTANCE, GOLDEN
from rtopf.cli import RunConfig, _envs, cmd_eval, cmd_expert, cmd_gen_data, cmd_pretrain, cmd_train
from rtopf.cmdp_env import apply_contingency, branch_number, evaluate_cost_vector
from rtopf.eval import evaluate, timing_benchmark
from rtopf.grid_model import load_bundled
from rtopf.neural import GaussianPolicy, Mlp, gaussian_kl, gaussian_log_prob, numeric_gradient
from rtopf.opf_expert import solve_acopf
from rtopf.pdppo import (
    DualMultipliers,
    clipped_surrogate,
    critic_loss,
    gae,
    load_checkpoint,
    surrogate_terms,
    update_duals,
)
from rtopf.powerflow import DispatchSetpoints, solve_nr, violations
from test_pdppo import gae_bruteforce, random_rollout

SEEDS = (0, 1, 2)
MODES = ("pdppo", "cliff", "penalty")
TRAIN_BUDGET_S = 30 * 60


def record(number: int, name: str, ok: bool, detail: str) -> None:
    line = f"[{'PASS' if ok else 'FAIL'}] criterion {number}: {name} ({detail})"
    ACCEPTANCE.append(line)
    print(line)


@pytest.fixture(scope="module")
def golden():
    return json.loads((GOLDEN / "reference.json").read_text())


# --- 1 -------------------------------------------------------------------------------


def test_criterion_1_powerflow_fidelity(golden):
    t0 = time.perf_counter()
    vm_err = slack_err = 0.0
    for name in ("ieee9", "ieee30"):
        net = load_bundled(name)
        ref = golden[name]["pf"]
        sol = solve_nr(net, DispatchSetpoints(ref["pg"], ref["vg"]))
        vm_err = max(vm_err, float(np.max(np.abs(sol.vm - ref["vm"]))))
        slack_err = max(slack_err, abs(sol.pg_solved[net.slack_gen] - ref["pg_solved"][net.slack_gen]))
    elapsed = time.perf_counter() - t0
    ok = vm_err <= 1e-6 and slack_err <= 1e-4 and elapsed < 1.0
    record(1, "power-flow fidelity", ok,
           f"max |dVm| {vm_err:.2e} pu, max |dP_slack| {slack_err:.2e} MW, {elapsed:.3f} s")
    assert ok


# --- 2 -------------------------------------------------------------------------------


def test_criterion_2_expert_optimality(golden):
    rel = {}
    for name in ("ieee9", "ieee30"):
        sol = solve_acopf(load_bundled(name))
        ref = golden[name]["opf"]["objective"]
        rel[name] = abs(sol.objective - ref) / ref
    ok = rel["ieee9"] <= 5e-4 and rel["ieee30"] <= 1e-3
    record(2, "expert optimality", ok, f"case9 rel err {rel['ieee9']:.2e}, case30 rel err {rel['ieee30']:.2e}")
    assert ok


# --- 3 -------------------------------------------------------------------------------


def _relative_gradient_error(loss_fn, params) -> float:
    for p in params:
        p.grad = None
    loss_fn().backward()
    worst = 0.0
    for p in params:
        num = numeric_gradient(lambda: float(loss_fn().data), p, h=1e-6)
        scale = max(np.linalg.norm(num), np.linalg.norm(p.grad), 1e-8)
        worst = max(worst, float(np.linalg.norm(p.grad - num) / scale))
    return worst


def test_criterion_3_math_kernels():
    rng = np.random.default_rng(2024)

    gae_err = 0.0
    for _ in range(1000):
        n = int(rng.integers(1, 40))
        r, v, nv, term, ends = random_rollout(rng, n)
        gamma, lam = rng.random(), rng.random()
        gae_err = max(gae_err, float(np.max(np.abs(
            gae(r, v, nv, term, gamma, lam, ends) - gae_bruteforce(r, v, nv, term, ends, gamma, lam)))))

    ratio = rng.lognormal(0.0, 1.0, 10_000)
    adv = rng.standard_normal(10_000)
    terms = surrogate_terms(ratio, adv, 0.2)
    pessimistic = bool(np.all(terms <= ratio * adv + 1e-12)
                       and np.all(terms <= np.clip(ratio, 0.8, 1.2) * adv + 1e-12))

    mu_p, ls_p = np.array([0.4, 0.7, 0.2]), np.log([0.05, 0.1, 0.2])
    mu_q, ls_q = np.array([0.45, 0.6, 0.25]), np.log([0.08, 0.07, 0.2])
    x = mu_p + np.exp(ls_p) * rng.standard_normal((200_000, 3))
    d = (gaussian_log_prob(x, mu_p, ls_p) - gaussian_log_prob(x, mu_q, ls_q)).sum(axis=1)
    kl_z = abs(d.mean() - float(gaussian_kl(mu_p, ls_p, mu_q, ls_q))) / (d.std() / math.sqrt(len(d)))

    duals = DualMultipliers.zeros(8, 0.0, 0.3)
    lam_min = 0.0
    for _ in range(10_000):
        duals = DualMultipliers(duals.lam, rng.normal(0, 1, 8), duals.lr)
        duals = update_duals(duals, rng.lognormal(0, 1, 16), rng.normal(0, 1, (16, 8)))
        lam_min = min(lam_min, float(duals.lam.min()))

    net = Mlp([6, 10, 10, 4], rng=np.random.default_rng(1))
    s = rng.random((12, 6))
    pol = GaussianPolicy.build(6, 3, (10,), np.random.default_rng(2), log_std=math.log(0.1))
    a = pol.mean(s) + 0.1 * rng.standard_normal((12, 3))
    old = pol.log_prob(s, a).data + 0.01 * rng.standard_normal(12)
    adv12 = rng.standard_normal(12)
    targets = rng.random((12, 4))
    grad_err = _relative_gradient_error(lambda: critic_loss(net, s, targets), net.params)
    grad_err = max(grad_err, _relative_gradient_error(lambda: pol.log_prob(s, a).mean(), pol.params))
    grad_err = max(grad_err, _relative_gradient_error(lambda: clipped_surrogate(pol, s, a, old, adv12, 0.2),
                                                      pol.params))

    ok = gae_err <= 1e-12 and pessimistic and kl_z < 3.0 and lam_min >= 0.0 and grad_err < 1e-4
    record(3, "math kernels", ok, f"GAE max err {gae_err:.1e}, clip bounds {'hold' if pessimistic else 'broken'}, "
                                  f"KL |z| {kl_z:.2f}, min lambda {lam_min:g}, max grad rel err {grad_err:.1e}")
    assert ok


# --- 4, 5, 6, 8: trained agents on case9 ---------------------------------------------


@pytest.fixture(scope="module")
def trained(tmp_path_factory):
    """Default-configuration runs for every seed and reward mode."""
    root = tmp_path_factory.mktemp("acceptance")
    runs = {}
    for seed in SEEDS:
        cfg = RunConfig({"seed": seed, "out": str(root / f"seed{seed}")}, root)
        cmd_gen_data(cfg)
        cmd_expert(cfg)
        t0 = time.perf_counter()
        cmd_pretrain(cfg)
        bc_time = time.perf_counter() - t0
        for mode in MODES:
            t0 = time.perf_counter()
            cmd_train(cfg, mode, workers=1, resume=False)
            elapsed = time.perf_counter() - t0 + bc_time
            _, ok = cmd_eval(cfg, mode, gate=True)
            _, test_env = _envs(cfg, cfg.network())
            report = evaluate(load_checkpoint(cfg.path(f"agent_{mode}.ckpt.json")), test_env, method=mode)
            runs[seed, mode] = {"report": report, "gate": ok, "seconds": elapsed, "cfg": cfg}
    return runs


def test_criterion_4_case9_training(trained):
    parts, passed = [], 0
    for seed in SEEDS:
        run = trained[seed, "pdppo"]
        r = run["report"]
        ok = (r.feas_percent == 100.0 and r.c_bar == 0.0 and r.kappa_aver <= 0.5
              and run["seconds"] <= TRAIN_BUDGET_S)
        passed += ok
        parts.append(f"seed {seed}: Feas {r.feas_percent:.1f}% C {r.c_bar:.3g} kappa {r.kappa_aver:.3f}% "
                     f"{run['seconds']:.0f}s {'ok' if ok else 'miss'}")
    ok = passed >= 2
    record(4, "case9 PD-PPO training", ok, f"{passed}/3 seeds pass; " + "; ".join(parts))
    assert ok


def test_criterion_5_baseline_ordering(trained):
    med = {m: (float(np.median([trained[s, m]["report"].feas_percent for s in SEEDS])),
               float(np.median([trained[s, m]["report"].kappa_aver for s in SEEDS]))) for m in MODES}
    ok = (med["pdppo"][0] >= med["cliff"][0] >= med["penalty"][0]
          and med["penalty"][1] <= med["cliff"][1])
    detail = ", ".join(f"{m} Feas {f:.1f}% kappa {k:.3f}%" for m, (f, k) in med.items())
    record(5, "baseline ordering (median over seeds)", ok, detail)
    assert ok


def test_criterion_6_speedup(trained):
    run = trained[SEEDS[0], "pdppo"]
    cfg = run["cfg"]
    net = cfg.network()
    _, test_env = _envs(cfg, net)
    agent = load_checkpoint(cfg.path("agent_pdppo.ckpt.json"))
    t = timing_benchmark(net, agent, test_env, repetitions=30, scenarios=10)
    ok = t.speedup >= 10.0 and t.t_actor < 1e-3
    record(6, "speedup", ok, f"T_IPS {t.t_expert * 1e3:.3f} ms, T_PF {t.t_powerflow * 1e3:.3f} ms, "
                             f"T_Actor {t.t_actor * 1e3:.4f} ms, speedup x{t.speedup:.1f}")
    assert ok


def test_criterion_8_determinism(trained, tmp_path):
    src = trained[SEEDS[0], "pdppo"]["cfg"]
    digests = []
    for k in range(2):
        out = tmp_path / f"run{k}"
        out.mkdir()
        for name in ("data_train.csv", "data_test.csv", "expert_train.json", "expert_test.json", "bc.ckpt.json"):
            shutil.copy(src.path(name), out / name)
        cfg = RunConfig({"seed": SEEDS[0], "out": str(out), "train": {"episodes": 200}}, tmp_path)
        digests.append(Path(cmd_train(cfg, "pdppo", workers=1, resume=False)).read_bytes())
    ok = digests[0] == digests[1]
    record(8, "determinism", ok, f"checkpoints {'identical' if ok else 'differ'} ({len(digests[0])} bytes)")
    assert ok


# --- 7 -------------------------------------------------------------------------------


def test_criterion_7_contingency_hook():
    net = load_bundled("ieee30")
    outage = apply_contingency(net, [branch_number(net, 4, 12)])
    sp = solve_acopf(net).setpoints
    loads = (net.bus_array("pd"), net.bus_array("qd"))
    vec, _ = evaluate_cost_vector([net, outage], sp, loads)
    base = violations(net, solve_nr(net, sp, loads)).as_array()
    heavy = (loads[0] * 1.2, loads[1] * 1.2)
    over, _ = evaluate_cost_vector([net, outage], sp, heavy)
    ok = vec.shape == (8,) and np.array_equal(vec[:4], base) and bool(np.any(over[4:] > 0))
    record(7, "contingency hook", ok, f"{vec.size} components, block 0 {'equals' if np.array_equal(vec[:4], base) else 'differs from'} "
                                      f"base, overloaded block 1 = {np.round(over[4:], 4).tolist()}")
    assert ok
