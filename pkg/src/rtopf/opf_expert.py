"""AC optimal power flow by a primal-dual interior-point method, and expert trajectories.

The formulation is polar: variables are bus angles (slack excluded), bus voltage
magnitudes, generator active and reactive outputs, all in per-unit. Equalities are
the nodal power balances; inequalities are squared apparent-power branch limits plus
box bounds on magnitudes and outputs. Ramp limits against a previous dispatch are
folded into the active-power box.
"""

from __future__ import annotations

import json
import logging
from dataclasses import dataclass, field
from pathlib import Path
from typing import Iterable, Sequence

import numpy as np

from .grid_model import Network
from .powerflow import DispatchSetpoints, NonConvergence, dsbus_dv, solve_nr, violations

log = logging.getLogger(__name__)

COST_MULT = 1e-4  # objective scaling inside the barrier iteration
STEP_FRACTION = 0.99995
CENTERING = 0.1


@dataclass
class OpfSolution:
    pg: np.ndarray  # MW
    vg: np.ndarray  # pu at generator buses
    objective: float  # $/h
    feasible: bool
    iterations: int
    kkt_residual: float
    vm: np.ndarray | None = None
    va: np.ndarray | None = None
    qg: np.ndarray | None = None
    duality_history: list[float] = field(default_factory=list)

    @property
    def setpoints(self) -> DispatchSetpoints:
        return DispatchSetpoints(self.pg, self.vg)


class OpfError(RuntimeError):
    def __init__(self, message: str, last: OpfSolution | None = None):
        super().__init__(message)
        self.last = last


class MaxIterations(OpfError):
    pass


class SingularKkt(OpfError):
    pass


class InfeasibleProblem(OpfError):
    pass


# --- second derivatives of complex power w.r.t. polar voltage ------------------------


def d2sbus_dv2(ybus: np.ndarray, v: np.ndarray, lam: np.ndarray):
    """Hessian blocks (aa, av, va, vv) of lam^T S_bus(V); lam real."""
    ibus = ybus @ v
    a = np.diag(lam * v)
    b = ybus * v[None, :]
    c = a @ np.conj(b)
    d = ybus.conj().T * v[None, :]
    e = np.conj(v)[:, None] * (d * lam[None, :] - np.diag(d @ lam))
    f = c - a * np.conj(ibus)[None, :]
    g = 1.0 / np.abs(v)
    gaa = e + f
    gva = 1j * g[:, None] * (e - f)
    gav = gva.T
    gvv = g[:, None] * (c + c.T) * g[None, :]
    return gaa, gav, gva, gvv


def dsbr_dv(ybr: np.ndarray, cbr: np.ndarray, v: np.ndarray):
    """Branch-end complex power and its derivatives w.r.t. angle and magnitude."""
    ibr = ybr @ v
    vbr = cbr @ v
    vnorm = v / np.abs(v)
    sbr = vbr * np.conj(ibr)
    ds_dva = 1j * (np.conj(ibr)[:, None] * cbr * v[None, :] - vbr[:, None] * np.conj(ybr * v[None, :]))
    ds_dvm = vbr[:, None] * np.conj(ybr * vnorm[None, :]) + np.conj(ibr)[:, None] * cbr * vnorm[None, :]
    return sbr, ds_dva, ds_dvm


def d2sbr_dv2(cbr: np.ndarray, ybr: np.ndarray, v: np.ndarray, lam: np.ndarray):
    a = ybr.conj().T @ (lam[:, None] * cbr)
    b = np.conj(v)[:, None] * a * v[None, :]
    d = np.diag((a @ v) * np.conj(v))
    e = np.diag((a.T @ np.conj(v)) * v)
    f = b + b.T
    g = 1.0 / np.abs(v)
    haa = f - d - e
    hva = 1j * g[:, None] * (b - b.T - d + e)
    hav = hva.T
    hvv = g[:, None] * f * g[None, :]
    return haa, hav, hva, hvv


def d2asbr_dv2(ds_dva, ds_dvm, sbr, cbr, ybr, v, mu):
    """Hessian blocks of mu^T |S_br|^2."""
    saa, sav, sva, svv = d2sbr_dv2(cbr, ybr, v, np.conj(sbr) * mu)
    haa = 2 * (saa + ds_dva.T @ (mu[:, None] * np.conj(ds_dva))).real
    hva = 2 * (sva + ds_dvm.T @ (mu[:, None] * np.conj(ds_dva))).real
    hav = 2 * (sav + ds_dva.T @ (mu[:, None] * np.conj(ds_dvm))).real
    hvv = 2 * (svv + ds_dvm.T @ (mu[:, None] * np.conj(ds_dvm))).real
    return haa, hav, hva, hvv


# --- problem assembly ---------------------------------------------------------------


class _AcOpfProblem:
    """Callbacks (objective, constraints and derivatives) for one OPF instance."""

    def __init__(self, net: Network, pd: np.ndarray, qd: np.ndarray, pg_lo: np.ndarray, pg_hi: np.ndarray):
        self.net = net
        nb, ng = net.n_bus, net.n_gen
        base = net.base_mva
        self.nb, self.ng = nb, ng
        self.ybus = np.asarray(net.ybus)
        self.sd = (np.asarray(pd, float) + 1j * np.asarray(qd, float)) / base
        self.cg = np.zeros((nb, ng))
        self.cg[net.gen_bus, np.arange(ng)] = 1.0
        self.nonslack = np.array([i for i in range(nb) if i != net.slack], dtype=int)
        self.na = len(self.nonslack)
        self.nx = self.na + nb + 2 * ng
        self.iva = slice(0, self.na)
        self.ivm = slice(self.na, self.na + nb)
        self.ipg = slice(self.na + nb, self.na + nb + ng)
        self.iqg = slice(self.na + nb + ng, self.nx)

        rated = np.flatnonzero((net.smax > 0) & net.in_service)
        yf, yt = net.branch_matrices
        f, t = net.branch_ends
        self.yf, self.yt = np.asarray(yf)[rated], np.asarray(yt)[rated]
        self.cf = np.zeros((len(rated), nb))
        self.ct = np.zeros((len(rated), nb))
        self.cf[np.arange(len(rated)), f[rated]] = 1.0
        self.ct[np.arange(len(rated)), t[rated]] = 1.0
        self.flow_max2 = (net.smax[rated] / base) ** 2
        self.nflow = len(rated)

        c2, c1 = net.cost_array("c2"), net.cost_array("c1")
        self.c0sum = float(np.sum(net.cost_array("c0")))
        self.qa = COST_MULT * 2 * c2 * base**2
        self.la = COST_MULT * c1 * base

        lo = np.full(self.nx, -np.inf)
        hi = np.full(self.nx, np.inf)
        lo[self.ivm], hi[self.ivm] = net.bus_array("vmin"), net.bus_array("vmax")
        lo[self.ipg], hi[self.ipg] = pg_lo / base, pg_hi / base
        lo[self.iqg], hi[self.iqg] = net.gen_array("qmin") / base, net.gen_array("qmax") / base
        self.lo, self.hi = lo, hi
        fixed = np.isfinite(lo) & np.isfinite(hi) & (hi - lo < 1e-10)
        self.ifixed = np.flatnonzero(fixed)
        self.ilo = np.flatnonzero(np.isfinite(lo) & ~fixed)
        self.ihi = np.flatnonzero(np.isfinite(hi) & ~fixed)
        self.neq = 2 * nb + len(self.ifixed)
        self.niq = 2 * self.nflow + len(self.ilo) + len(self.ihi)

    def voltage(self, x: np.ndarray) -> np.ndarray:
        va = np.zeros(self.nb)
        va[self.nonslack] = x[self.iva]
        return x[self.ivm] * np.exp(1j * va)

    def objective(self, x: np.ndarray) -> tuple[float, np.ndarray]:
        pg = x[self.ipg]
        fval = float(np.sum(0.5 * self.qa * pg**2 + self.la * pg)) + COST_MULT * self.c0sum
        grad = np.zeros(self.nx)
        grad[self.ipg] = self.qa * pg + self.la
        return fval, grad

    def cost_dollars(self, x: np.ndarray) -> float:
        return self.net.generation_cost(x[self.ipg] * self.net.base_mva)

    def constraints(self, x: np.ndarray):
        """Equalities g, inequalities h (both as vectors) and their Jacobians (rows = constraints)."""
        v = self.voltage(x)
        mis = v * np.conj(self.ybus @ v) + self.sd - self.cg @ (x[self.ipg] + 1j * x[self.iqg])
        ds_dva, ds_dvm = dsbus_dv(self.ybus, v)
        dg = np.zeros((self.neq, self.nx))
        nb = self.nb
        dg[:nb, self.iva] = ds_dva[:, self.nonslack].real
        dg[nb:2 * nb, self.iva] = ds_dva[:, self.nonslack].imag
        dg[:nb, self.ivm] = ds_dvm.real
        dg[nb:2 * nb, self.ivm] = ds_dvm.imag
        dg[:nb, self.ipg] = -self.cg
        dg[nb:2 * nb, self.iqg] = -self.cg
        gfix = x[self.ifixed] - self.lo[self.ifixed]
        dg[2 * nb + np.arange(len(self.ifixed)), self.ifixed] = 1.0
        g = np.r_[mis.real, mis.imag, gfix]

        dh = np.zeros((self.niq, self.nx))
        hparts = []
        flow_data = []
        if self.nflow:
            for k, (ybr, cbr) in enumerate(((self.yf, self.cf), (self.yt, self.ct))):
                sbr, dsa, dsm = dsbr_dv(ybr, cbr, v)
                flow_data.append((sbr, dsa, dsm, cbr, ybr))
                hparts.append(np.abs(sbr) ** 2 - self.flow_max2)
                rows = slice(k * self.nflow, (k + 1) * self.nflow)
                dh[rows, self.iva] = 2 * (sbr.real[:, None] * dsa.real + sbr.imag[:, None] * dsa.imag)[:, self.nonslack]
                dh[rows, self.ivm] = 2 * (sbr.real[:, None] * dsm.real + sbr.imag[:, None] * dsm.imag)
        r0 = 2 * self.nflow
        nlo = len(self.ilo)
        hparts.append(self.lo[self.ilo] - x[self.ilo])
        dh[r0 + np.arange(nlo), self.ilo] = -1.0
        hparts.append(x[self.ihi] - self.hi[self.ihi])
        dh[r0 + nlo + np.arange(len(self.ihi)), self.ihi] = 1.0
        h = np.concatenate(hparts) if hparts else np.zeros(0)
        return g, h, dg, dh, (v, flow_data)

    def hessian(self, lam: np.ndarray, mu: np.ndarray, cache) -> np.ndarray:
        v, flow_data = cache
        nb = self.nb
        hx = np.zeros((self.nx, self.nx))
        hx[self.ipg, self.ipg] = np.diag(self.qa)
        paa, pav, pva, pvv = d2sbus_dv2(self.ybus, v, lam[:nb])
        qaa, qav, qva, qvv = d2sbus_dv2(self.ybus, v, lam[nb:2 * nb])
        haa = paa.real + qaa.imag
        hav = pav.real + qav.imag
        hva = pva.real + qva.imag
        hvv = pvv.real + qvv.imag
        for k, (sbr, dsa, dsm, cbr, ybr) in enumerate(flow_data):
            m = mu[k * self.nflow:(k + 1) * self.nflow]
            faa, fav, fva, fvv = d2asbr_dv2(dsa, dsm, sbr, cbr, ybr, v, m)
            haa, hav, hva, hvv = haa + faa, hav + fav, hva + fva, hvv + fvv
        ns = self.nonslack
        hx[self.iva, self.iva] = haa[np.ix_(ns, ns)]
        hx[self.iva, self.ivm] = hav[ns, :]
        hx[self.ivm, self.iva] = hva[:, ns]
        hx[self.ivm, self.ivm] = hvv
        return hx

    def initial_point(self, warm: OpfSolution | None) -> np.ndarray:
        x = np.zeros(self.nx)
        lo = np.where(np.isfinite(self.lo), self.lo, -1e10)
        hi = np.where(np.isfinite(self.hi), self.hi, 1e10)
        x[:] = 0.5 * (lo + hi)
        x[self.iva] = 0.0
        if warm is not None and warm.vm is not None:
            base = self.net.base_mva
            x[self.iva] = warm.va[self.nonslack]
            x[self.ivm] = warm.vm
            x[self.ipg] = warm.pg / base
            x[self.iqg] = warm.qg / base
            # keep the warm point strictly inside the box
            span = np.where(np.isfinite(self.hi - self.lo), self.hi - self.lo, np.inf)
            margin = np.minimum(1e-3, 0.05 * span)
            bounded = np.isfinite(self.lo) & np.isfinite(self.hi)
            x[bounded] = np.clip(x[bounded], self.lo[bounded] + margin[bounded], self.hi[bounded] - margin[bounded])
        return x

    def unpack(self, x: np.ndarray, feasible: bool, iterations: int, residual: float, history) -> OpfSolution:
        base = self.net.base_mva
        v = self.voltage(x)
        return OpfSolution(
            pg=x[self.ipg] * base, vg=np.abs(v)[self.net.gen_bus], objective=self.cost_dollars(x),
            feasible=feasible, iterations=iterations, kkt_residual=residual,
            vm=np.abs(v), va=np.angle(v), qg=x[self.iqg] * base, duality_history=list(history),
        )


def ramp_box(net: Network, prev_pg: np.ndarray | None) -> tuple[np.ndarray, np.ndarray]:
    """Active-power bounds (MW) combining capability and ramp limits."""
    lo, hi = net.gen_array("pmin"), net.gen_array("pmax")
    if prev_pg is None:
        return lo, hi
    prev = np.asarray(prev_pg, float)
    return np.maximum(lo, prev - net.gen_array("r_down")), np.minimum(hi, prev + net.gen_array("r_up"))


def solve_acopf(
    net: Network,
    loads: tuple[np.ndarray, np.ndarray] | None = None,
    prev_pg: np.ndarray | None = None,
    *,
    warm_start: OpfSolution | None = None,
    tol: float = 1e-8,
    max_iter: int = 150,
    strict: bool = False,
) -> OpfSolution:
    """Minimize quadratic generation cost subject to AC power flow and operating limits.

    With ``prev_pg`` the ramp limits of each generator bound the change from that
    dispatch. On an iteration stall the best iterate is returned with
    ``feasible=False``; pass ``strict=True`` to raise :class:`MaxIterations` instead.
    """
    pd, qd = (net.bus_array("pd"), net.bus_array("qd")) if loads is None else loads
    lo, hi = ramp_box(net, prev_pg)
    if np.any(lo > hi + 1e-9):
        bad = int(np.flatnonzero(lo > hi + 1e-9)[0])
        raise InfeasibleProblem(f"empty ramp box for generator {bad}")
    hi = np.maximum(hi, lo)
    prob = _AcOpfProblem(net, pd, qd, lo, hi)

    x = prob.initial_point(warm_start)
    fval, df = prob.objective(x)
    g, h, dg, dh, cache = prob.constraints(x)
    niq = prob.niq
    z0 = 1.0
    gamma = 1.0
    lam = np.zeros(prob.neq)
    z = np.full(niq, z0)
    mu = np.full(niq, z0)
    k = h < -z0
    z[k] = -h[k]
    k = gamma / z > z0
    mu[k] = gamma / z[k]
    e = np.ones(niq)
    history: list[float] = []

    def conditions(x, z, lam, mu, g, h, lx, fval, f0):
        maxh = float(np.max(h)) if h.size else 0.0
        feas = max(float(np.max(np.abs(g))) if g.size else 0.0, maxh) / (
            1 + max(np.max(np.abs(x)), np.max(np.abs(z)) if z.size else 0.0))
        grad = float(np.max(np.abs(lx))) / (1 + max(np.max(np.abs(lam)) if lam.size else 0.0,
                                                  np.max(np.abs(mu)) if mu.size else 0.0))
        comp = float(z @ mu) / (1 + np.max(np.abs(x)))
        cost = abs(fval - f0) / (1 + abs(f0))
        return feas, grad, comp, cost

    lx = df + dg.T @ lam + dh.T @ mu
    feas, grad, comp, _ = conditions(x, z, lam, mu, g, h, lx, fval, fval)
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        f0 = fval
        hx = prob.hessian(lam, mu, cache)
        zinv = 1.0 / z
        dh_zinv = dh.T * zinv[None, :]
        m = hx + dh_zinv @ (mu[:, None] * dh)
        n = lx + dh_zinv @ (mu * h + gamma * e)
        kkt = np.block([[m, dg.T], [dg, np.zeros((prob.neq, prob.neq))]])
        rhs = -np.r_[n, g]
        try:
            step = np.linalg.solve(kkt, rhs)
        except np.linalg.LinAlgError:
            raise SingularKkt("singular KKT system", prob.unpack(x, False, it, max(feas, grad, comp), history)) from None
        if not np.all(np.isfinite(step)):
            raise SingularKkt("non-finite Newton step", prob.unpack(x, False, it, max(feas, grad, comp), history))
        dx, dlam = step[:prob.nx], step[prob.nx:]
        dz = -h - z - dh @ dx
        dmu = -mu + zinv * (gamma * e - mu * dz)

        neg = dz < 0
        alphap = min(STEP_FRACTION * np.min(-z[neg] / dz[neg]), 1.0) if np.any(neg) else 1.0
        neg = dmu < 0
        alphad = min(STEP_FRACTION * np.min(-mu[neg] / dmu[neg]), 1.0) if np.any(neg) else 1.0
        x = x + alphap * dx
        z = z + alphap * dz
        lam = lam + alphad * dlam
        mu = mu + alphad * dmu
        gamma = CENTERING * float(z @ mu) / niq if niq else 0.0
        history.append(float(z @ mu) / niq if niq else 0.0)

        fval, df = prob.objective(x)
        g, h, dg, dh, cache = prob.constraints(x)
        lx = df + dg.T @ lam + dh.T @ mu
        feas, grad, comp, cost = conditions(x, z, lam, mu, g, h, lx, fval, f0)
        if not np.isfinite(feas + grad + comp):
            raise InfeasibleProblem("iteration diverged", prob.unpack(x, False, it, np.inf, history))
        if feas < tol and grad < tol and comp < tol and cost < tol:
            converged = True
            break

    residual = max(feas, grad, comp)
    sol = prob.unpack(x, converged, it, residual, history)
    if not converged:
        log.warning("interior point stalled after %d iterations (residual %.2e)", it, residual)
        if strict:
            raise MaxIterations(f"no convergence in {max_iter} iterations", sol)
    return sol


# --- expert trajectories ------------------------------------------------------------


@dataclass
class TrajectoryStep:
    pd: np.ndarray  # MW per bus
    qd: np.ndarray
    prev_pg: np.ndarray
    prev_vg: np.ndarray
    solution: OpfSolution

    @property
    def loads(self) -> tuple[np.ndarray, np.ndarray]:
        return self.pd, self.qd


@dataclass
class ExpertTrajectory:
    network_id: str
    steps: list[TrajectoryStep]

    @property
    def horizon(self) -> int:
        return len(self.steps)

    def __len__(self) -> int:
        return len(self.steps)

    def __getitem__(self, index: int) -> TrajectoryStep:
        return self.steps[index]


class TrajectoryError(ValueError):
    pass


def generate_expert_trajectory(
    net: Network,
    scenario: Iterable[tuple[np.ndarray, np.ndarray]],
    *,
    strict: bool = False,
) -> ExpertTrajectory:
    """Solve the OPF sequentially; each step is ramp-coupled to the previous step's optimum.

    The dispatch preceding step 0 is the ramp-free optimum of step 0's own loads.
    """
    loads = [(np.asarray(p, float), np.asarray(q, float)) for p, q in scenario]
    if len(loads) < 2:
        raise ValueError("scenario must have at least two steps")
    steps: list[TrajectoryStep] = []
    try:
        first = solve_acopf(net, loads[0], strict=strict)
    except OpfError as exc:
        raise OpfError(f"step 0 (initial dispatch): {exc}", exc.last) from exc
    prev = first
    for t, (pd, qd) in enumerate(loads):
        try:
            sol = solve_acopf(net, (pd, qd), prev.pg, warm_start=prev, strict=strict)
        except OpfError as exc:
            raise type(exc)(f"step {t}: {exc}", exc.last) from exc
        if not sol.feasible:
            log.warning("expert step %d flagged infeasible", t)
        steps.append(TrajectoryStep(pd, qd, prev.pg.copy(), prev.vg.copy(), sol))
        if sol.feasible:
            prev = sol
    return ExpertTrajectory(net.name, steps)


def trajectory_to_dict(traj: ExpertTrajectory, extra: dict | None = None) -> dict:
    doc = {
        "network_id": traj.network_id,
        "horizon": traj.horizon,
        "steps": [
            {
                "loads": {"pd": s.pd.tolist(), "qd": s.qd.tolist()},
                "prev_pg": s.prev_pg.tolist(),
                "prev_vg": s.prev_vg.tolist(),
                "pg": s.solution.pg.tolist(),
                "vg": s.solution.vg.tolist(),
                "objective": s.solution.objective,
                "feasible": bool(s.solution.feasible),
                "iterations": s.solution.iterations,
                "kkt_residual": s.solution.kkt_residual,
            }
            for s in traj.steps
        ],
    }
    if extra:
        doc.update(extra)
    return doc


def export_trajectory(traj: ExpertTrajectory, path: str | Path, extra: dict | None = None) -> None:
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    tmp.write_text(json.dumps(trajectory_to_dict(traj, extra), indent=1))
    tmp.replace(path)


def _vec(step: dict, key: str, n: int, where: str) -> np.ndarray:
    try:
        arr = np.asarray(step[key], dtype=float)
    except (KeyError, TypeError, ValueError):
        raise TrajectoryError(f"{where}.{key}: missing or not numeric") from None
    if arr.shape != (n,):
        raise TrajectoryError(f"{where}.{key}: expected {n} values, got shape {arr.shape}")
    return arr


def trajectory_from_dict(doc: dict, net: Network, *, check_physics: bool = True, tol: float = 1e-5) -> ExpertTrajectory:
    """Rebuild and validate a trajectory against ``net``."""
    if doc.get("network_id") and net.name and doc["network_id"] != net.name:
        raise TrajectoryError(f"network mismatch: file is for {doc['network_id']!r}, not {net.name!r}")
    raw_steps = doc.get("steps")
    if not isinstance(raw_steps, list) or not raw_steps:
        raise TrajectoryError("steps: missing or empty")
    if "horizon" in doc and int(doc["horizon"]) != len(raw_steps):
        raise TrajectoryError("horizon: does not match number of steps")
    nb, ng = net.n_bus, net.n_gen
    pmin, pmax = net.gen_array("pmin"), net.gen_array("pmax")
    vmin, vmax = net.bus_array("vmin")[net.gen_bus], net.bus_array("vmax")[net.gen_bus]
    steps = []
    for t, s in enumerate(raw_steps):
        where = f"steps[{t}]"
        loads = s.get("loads", s)
        pd, qd = _vec(loads, "pd", nb, where), _vec(loads, "qd", nb, where)
        prev_pg, pg, vg = _vec(s, "prev_pg", ng, where), _vec(s, "pg", ng, where), _vec(s, "vg", ng, where)
        prev_vg = _vec(s, "prev_vg", ng, where) if "prev_vg" in s else vg.copy()
        feasible = bool(s.get("feasible", True))
        sol = OpfSolution(pg=pg, vg=vg, objective=float(s["objective"]), feasible=feasible,
                          iterations=int(s.get("iterations", 0)), kkt_residual=float(s.get("kkt_residual", 0.0)))
        if feasible:
            lo, hi = ramp_box(net, prev_pg)
            if np.any(pg < pmin - tol * net.base_mva) or np.any(pg > pmax + tol * net.base_mva):
                raise TrajectoryError(f"{where}: active output outside generator limits")
            if np.any(pg < lo - tol * net.base_mva) or np.any(pg > hi + tol * net.base_mva):
                raise TrajectoryError(f"{where}: ramp limit violated")
            if np.any(vg < vmin - tol) or np.any(vg > vmax + tol):
                raise TrajectoryError(f"{where}: voltage set-point outside bus limits")
            if check_physics:
                try:
                    pf = solve_nr(net, DispatchSetpoints(pg, vg), (pd, qd))
                except NonConvergence:
                    raise TrajectoryError(f"{where}: power flow does not converge at the recorded set-points") from None
                viol = violations(net, pf)
                if viol.total > tol:
                    raise TrajectoryError(f"{where}: recorded set-points violate operating limits ({viol})")
                sol.vm, sol.va, sol.qg = pf.vm, pf.va, pf.qg
        if t > 0 and steps[-1].solution.feasible:
            if not np.allclose(prev_pg, steps[-1].solution.pg, atol=1e-6):
                raise TrajectoryError(f"{where}.prev_pg: does not match the previous step's dispatch")
        steps.append(TrajectoryStep(pd, qd, prev_pg, prev_vg, sol))
    return ExpertTrajectory(str(doc.get("network_id", net.name)), steps)


def import_trajectory(path: str | Path, net: Network, **kwargs) -> ExpertTrajectory:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as exc:
        raise TrajectoryError(f"invalid trajectory document: {exc}") from None
    return trajectory_from_dict(doc, net, **kwargs)


def step_objectives(traj: ExpertTrajectory) -> Sequence[float]:
    return [s.solution.objective for s in traj.steps]
