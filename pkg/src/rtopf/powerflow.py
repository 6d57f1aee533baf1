"""Polar Newton-Raphson AC power flow and operating-limit violation measures."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .grid_model import Network

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 20


class NonConvergence(RuntimeError):
    def __init__(self, iterations: int, max_mismatch: float):
        super().__init__(f"power flow did not converge after {iterations} iterations "
                         f"(max mismatch {max_mismatch:.3e} pu)")
        self.iterations = iterations
        self.max_mismatch = max_mismatch


@dataclass(frozen=True)
class DispatchSetpoints:
    pg: np.ndarray  # MW per generator
    vg: np.ndarray  # pu per generator bus

    def __post_init__(self) -> None:
        object.__setattr__(self, "pg", np.asarray(self.pg, dtype=float))
        object.__setattr__(self, "vg", np.asarray(self.vg, dtype=float))
        if self.pg.shape != self.vg.shape:
            raise ValueError("pg and vg must have one entry per generator")
        if not (np.all(np.isfinite(self.pg)) and np.all(np.isfinite(self.vg))):
            raise ValueError("setpoints must be finite")

    @classmethod
    def from_network(cls, net: Network) -> DispatchSetpoints:
        return cls(net.gen_array("pg"), net.gen_array("vg"))


@dataclass(frozen=True)
class PowerFlowSolution:
    vm: np.ndarray
    va: np.ndarray
    qg: np.ndarray  # MVAr per generator
    pg_solved: np.ndarray  # MW per generator, slack re-dispatched
    flow_from: np.ndarray  # complex MVA per branch
    flow_to: np.ndarray
    converged: bool
    iterations: int
    max_mismatch: float

    @property
    def voltage(self) -> np.ndarray:
        return self.vm * np.exp(1j * self.va)


@dataclass(frozen=True)
class ViolationVector:
    c_pg: float = 0.0
    c_qg: float = 0.0
    c_vg: float = 0.0
    c_flow: float = 0.0

    def as_array(self) -> np.ndarray:
        return np.array([self.c_pg, self.c_qg, self.c_vg, self.c_flow])

    @property
    def total(self) -> float:
        return self.c_pg + self.c_qg + self.c_vg + self.c_flow

    @classmethod
    def ceiling(cls, value: float) -> ViolationVector:
        return cls(value, value, value, value)


def base_loads(net: Network) -> tuple[np.ndarray, np.ndarray]:
    return net.bus_array("pd"), net.bus_array("qd")


def dsbus_dv(ybus: np.ndarray, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Partial derivatives of complex bus injections w.r.t. voltage angle and magnitude."""
    ibus = ybus @ v
    vnorm = v / np.abs(v)
    diag = slice(None, None, len(v) + 1)
    ds_dvm = v[:, None] * np.conj(ybus * vnorm[None, :])
    ds_dvm.flat[diag] += np.conj(ibus) * vnorm
    ds_dva = -1j * v[:, None] * np.conj(ybus * v[None, :])
    ds_dva.flat[diag] += 1j * v * np.conj(ibus)
    return ds_dva, ds_dvm


def bus_types(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Indices of PV and PQ buses. Generator buses other than the slack are PV."""
    return net.bus_roles


def scheduled_injection(net: Network, pg: np.ndarray, pd: np.ndarray, qd: np.ndarray) -> np.ndarray:
    """Specified complex injection per bus in pu (generator reactive output left out)."""
    s = -(np.asarray(pd, float) + 1j * np.asarray(qd, float))
    np.add.at(s, net.gen_bus, np.asarray(pg, float) + 0j)
    return s / net.base_mva


def mismatch_vector(ybus, v, sbus, pv, pq) -> np.ndarray:
    mis = v * np.conj(ybus @ v) - sbus
    return np.concatenate([mis[np.concatenate([pv, pq])].real, mis[pq].imag])


def newton_jacobian(ybus, v, pv, pq) -> np.ndarray:
    """[[dP/dVa, dP/dVm], [dQ/dVa, dQ/dVm]] over (PV+PQ angles, PQ magnitudes)."""
    ds_dva, ds_dvm = dsbus_dv(ybus, v)
    pvpq = np.concatenate([pv, pq])
    rows = np.concatenate([pvpq, pq])
    stacked = np.concatenate([ds_dva[:, pvpq], ds_dvm[:, pq]], axis=1)[rows]
    n = len(pvpq)
    return np.concatenate([stacked[:n].real, stacked[n:].imag])


def solve_nr(
    net: Network,
    sp: DispatchSetpoints,
    loads: tuple[np.ndarray, np.ndarray] | None = None,
    *,
    ybus: np.ndarray | None = None,
    v0: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_iter: int = DEFAULT_MAX_ITER,
) -> PowerFlowSolution:
    """Solve the AC power-flow equations for given set-points and bus loads (MW/MVAr).

    Generator buses hold their voltage set-point; reactive limits are not enforced
    here, excursions are reported by :func:`violations` instead.
    """
    if len(sp.pg) != net.n_gen:
        raise ValueError("setpoints must have one entry per generator")
    pd, qd = base_loads(net) if loads is None else (np.asarray(loads[0], float), np.asarray(loads[1], float))
    if ybus is None:
        ybus = net.ybus
    pv, pq = bus_types(net)
    pvpq = np.concatenate([pv, pq])
    npvpq = len(pvpq)

    if v0 is None:
        vm = np.ones(net.n_bus)
        va = np.zeros(net.n_bus)
    else:
        vm, va = np.abs(v0).astype(float), np.angle(v0).astype(float)
    vm[net.gen_bus] = sp.vg
    va[net.slack] = 0.0
    v = vm * np.exp(1j * va)
    sbus = scheduled_injection(net, sp.pg, pd, qd)

    f = mismatch_vector(ybus, v, sbus, pv, pq)
    norm = float(np.max(np.abs(f))) if f.size else 0.0
    it = 0
    while norm >= tol and it < max_iter:
        it += 1
        jac = newton_jacobian(ybus, v, pv, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError:
            raise NonConvergence(it, norm) from None
        va[pvpq] += dx[:npvpq]
        vm[pq] += dx[npvpq:]
        v = vm * np.exp(1j * va)
        f = mismatch_vector(ybus, v, sbus, pv, pq)
        norm = float(np.max(np.abs(f)))
        if not np.isfinite(norm):
            raise NonConvergence(it, norm)
    if norm >= tol:
        raise NonConvergence(it, norm)

    s_inj = v * np.conj(ybus @ v) * net.base_mva
    pg_solved = sp.pg.copy()
    pg_solved[net.slack_gen] = s_inj[net.slack].real + pd[net.slack]
    qg = s_inj[net.gen_bus].imag + qd[net.gen_bus]
    sf, st = _flows(net, v)
    return PowerFlowSolution(
        vm=np.abs(v), va=np.angle(v), qg=qg, pg_solved=pg_solved, flow_from=sf, flow_to=st,
        converged=True, iterations=it, max_mismatch=norm,
    )


def _flows(net: Network, v: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    yf, yt = net.branch_matrices
    f, t = net.branch_ends
    sf = v[f] * np.conj(yf @ v) * net.base_mva
    st = v[t] * np.conj(yt @ v) * net.base_mva
    return sf, st


def branch_flows(net: Network, sol: PowerFlowSolution) -> tuple[np.ndarray, np.ndarray]:
    """Complex power (MVA) entering each branch at its from and to ends."""
    if not sol.converged:
        raise ValueError("branch flows requested for a non-converged solution")
    return _flows(net, sol.voltage)


def violations(net: Network, sol: PowerFlowSolution) -> ViolationVector:
    """Summed per-unit excursions beyond generator, voltage and branch-rating limits."""
    base = net.base_mva
    pg = sol.pg_solved
    c_pg = np.sum(np.maximum(0.0, pg - net.gen_array("pmax")) + np.maximum(0.0, net.gen_array("pmin") - pg)) / base
    qg = sol.qg
    c_qg = np.sum(np.maximum(0.0, qg - net.gen_array("qmax")) + np.maximum(0.0, net.gen_array("qmin") - qg)) / base
    vm = sol.vm
    c_vg = np.sum(np.maximum(0.0, vm - net.bus_array("vmax")) + np.maximum(0.0, net.bus_array("vmin") - vm))
    rated = (net.smax > 0) & net.in_service
    smag = np.maximum(np.abs(sol.flow_from), np.abs(sol.flow_to))
    c_flow = np.sum(np.maximum(0.0, smag[rated] - net.smax[rated])) / base
    return ViolationVector(float(c_pg), float(c_qg), float(c_vg), float(c_flow))
