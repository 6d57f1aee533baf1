import time

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from conftest import bus, gen, line, make_net, two_bus
from rtopf.powerflow import (
    DispatchSetpoints,
    NonConvergence,
    PowerFlowSolution,
    ViolationVector,
    bus_types,
    mismatch_vector,
    newton_jacobian,
    scheduled_injection,
    solve_nr,
    violations,
)


def reference_setpoints(entry):
    return DispatchSetpoints(entry["pg"], entry["vg"])


@pytest.mark.parametrize("name", ["ieee9", "ieee30"])
def test_matches_reference_solution(name, golden, case9, case30):
    net = {"ieee9": case9, "ieee30": case30}[name]
    ref = golden[name]["pf"]
    sol = solve_nr(net, reference_setpoints(ref))
    np.testing.assert_allclose(sol.vm, ref["vm"], atol=1e-6)
    np.testing.assert_allclose(np.degrees(sol.va), ref["va_deg"], atol=1e-5)
    np.testing.assert_allclose(sol.pg_solved, ref["pg_solved"], atol=1e-4)
    np.testing.assert_allclose(sol.qg, ref["qg"], atol=1e-4)
    np.testing.assert_allclose(sol.flow_from.real, ref["pf"], atol=1e-4)
    np.testing.assert_allclose(sol.flow_from.imag, ref["qf"], atol=1e-4)
    np.testing.assert_allclose(sol.flow_to.real, ref["pt"], atol=1e-4)
    np.testing.assert_allclose(sol.flow_to.imag, ref["qt"], atol=1e-4)


def test_case9_slack_output(case9, golden):
    sol = solve_nr(case9, reference_setpoints(golden["ieee9"]["pf"]))
    assert sol.pg_solved[0] == pytest.approx(71.9547, abs=1e-4)
    # slack output equals the power leaving bus 1 in the reference branch flows
    f, t = case9.branch_ends
    ref = golden["ieee9"]["pf"]
    out = np.sum(np.asarray(ref["pf"])[f == 0]) + np.sum(np.asarray(ref["pt"])[t == 0])
    assert sol.pg_solved[0] == pytest.approx(out, abs=1e-4)
    assert sol.iterations <= 10


def test_two_bus_lossless_closed_form():
    p, x = 50.0, 0.1
    sol = solve_nr(two_bus(pd=p, x=x), DispatchSetpoints([0.0], [1.0]))
    theta = -0.5 * np.arcsin(2 * (p / 100) * x)
    assert sol.va[1] == pytest.approx(theta, abs=1e-10)
    assert sol.vm[1] == pytest.approx(np.cos(theta), abs=1e-10)
    assert sol.pg_solved[0] == pytest.approx(p, abs=1e-8)
    assert sol.qg[0] == pytest.approx(100 * np.sin(theta) ** 2 / x, abs=1e-8)


def test_flat_network_without_load_solves_immediately():
    sol = solve_nr(two_bus(pd=0.0), DispatchSetpoints([0.0], [1.0]))
    assert sol.iterations == 0
    np.testing.assert_allclose(sol.vm, 1.0)


def test_excessive_load_raises():
    with pytest.raises(NonConvergence) as info:
        solve_nr(two_bus(pd=2000.0, x=0.5), DispatchSetpoints([0.0], [1.0]))
    assert info.value.iterations > 0


def test_wrong_setpoint_length(case9):
    with pytest.raises(ValueError):
        solve_nr(case9, DispatchSetpoints([1.0, 2.0], [1.0, 1.0]))


def test_setpoints_reject_nan():
    with pytest.raises(ValueError):
        DispatchSetpoints([np.nan], [1.0])


def test_bus_roles(case9):
    pv, pq = bus_types(case9)
    assert sorted(pv.tolist()) == [1, 2]
    assert len(pq) == 6


def test_warm_start_agrees(case30, golden):
    sp = reference_setpoints(golden["ieee30"]["pf"])
    cold = solve_nr(case30, sp)
    warm = solve_nr(case30, sp, v0=cold.voltage)
    assert warm.iterations <= 1
    np.testing.assert_allclose(warm.vm, cold.vm, atol=1e-8)


def _perturbed_voltage(net, rng):
    return (1 + 0.05 * rng.standard_normal(net.n_bus)) * np.exp(1j * 0.1 * rng.standard_normal(net.n_bus))


@pytest.mark.parametrize("seed", range(3))
def test_jacobian_matches_finite_differences(case30, seed):
    rng = np.random.default_rng(seed)
    y = case30.ybus
    pv, pq = bus_types(case30)
    v = _perturbed_voltage(case30, rng)
    sbus = scheduled_injection(case30, case30.gen_array("pg"), case30.bus_array("pd"), case30.bus_array("qd"))
    pvpq = np.concatenate([pv, pq])
    va, vm = np.angle(v), np.abs(v)

    def f(z):
        a, m = va.copy(), vm.copy()
        a[pvpq] = z[:len(pvpq)]
        m[pq] = z[len(pvpq):]
        return mismatch_vector(y, m * np.exp(1j * a), sbus, pv, pq)

    z0 = np.concatenate([va[pvpq], vm[pq]])
    h = 1e-6
    num = np.empty((len(z0), len(z0)))
    for k in range(len(z0)):
        e = np.zeros_like(z0)
        e[k] = h
        num[:, k] = (f(z0 + e) - f(z0 - e)) / (2 * h)
    np.testing.assert_allclose(newton_jacobian(y, v, pv, pq), num, atol=1e-6)


def _solution(net, **kw):
    base = dict(vm=np.ones(net.n_bus), va=np.zeros(net.n_bus), qg=np.zeros(net.n_gen),
                pg_solved=np.zeros(net.n_gen), flow_from=np.zeros(net.n_branch, complex),
                flow_to=np.zeros(net.n_branch, complex), converged=True, iterations=0, max_mismatch=0.0)
    base.update(kw)
    return PowerFlowSolution(**base)


def test_violation_arithmetic():
    net = make_net([bus(1, "slack", vmax=1.05), bus(2, vmin=0.95)], [line(1, 2, rate_a=40.0)],
                   [gen(1, pmin=10.0, pmax=100.0, qmin=-20.0, qmax=20.0)])
    sol = _solution(net, pg_solved=np.array([120.0]), qg=np.array([-50.0]), vm=np.array([1.07, 0.90]),
                    flow_from=np.array([30 + 40j]), flow_to=np.array([-30 - 30j]))
    v = violations(net, sol)
    assert v.c_pg == pytest.approx(0.2)
    assert v.c_qg == pytest.approx(0.3)
    assert v.c_vg == pytest.approx(0.07)
    assert v.c_flow == pytest.approx(0.1)
    assert v.total == pytest.approx(0.67)
    np.testing.assert_allclose(v.as_array(), [0.2, 0.3, 0.07, 0.1])


def test_no_violation_inside_limits(case9):
    assert violations(case9, _solution(case9, pg_solved=case9.gen_array("pmin") + 1)).total == 0.0


def test_ceiling_vector():
    assert ViolationVector.ceiling(2.0).total == 8.0


@settings(max_examples=30, deadline=None)
@given(st.floats(1.0, 150.0), st.floats(-30.0, 30.0), st.floats(0.0, 0.05), st.floats(0.05, 0.3))
def test_power_balance_two_bus(pd, qd, r, x):
    """Generation equals load plus series losses."""
    net = two_bus(pd=pd, qd=qd, r=r, x=x)
    try:
        sol = solve_nr(net, DispatchSetpoints([0.0], [1.0]))
    except NonConvergence:
        return
    loss = sol.flow_from[0] + sol.flow_to[0]
    assert sol.pg_solved[0] == pytest.approx(pd + loss.real, abs=1e-6)
    assert loss.real >= -1e-9


def test_case9_solve_is_fast(case9, golden):
    sp = reference_setpoints(golden["ieee9"]["pf"])
    t0 = time.perf_counter()
    for _ in range(20):
        solve_nr(case9, sp)
    assert (time.perf_counter() - t0) / 20 < 0.05


def test_voltage_excess_matches_per_bus_sum(case9):
    sp = DispatchSetpoints(np.array([72.0, 163.0, 85.0]), np.full(3, 1.10))
    sol = solve_nr(case9, sp)
    vmax, vmin = case9.bus_array("vmax"), case9.bus_array("vmin")
    expect = 0.0
    for k in range(case9.n_bus):
        if sol.vm[k] > vmax[k]:
            expect += sol.vm[k] - vmax[k]
        elif sol.vm[k] < vmin[k]:
            expect += vmin[k] - sol.vm[k]
    assert expect > 0
    assert violations(case9, sol).c_vg == pytest.approx(expect, abs=1e-14)


@settings(max_examples=25, deadline=None)
@given(st.floats(0.0, 0.04), st.floats(0.0, 0.2), st.floats(0.0, 19.0), st.floats(0.0, 30.0))
def test_tightening_limits_never_lowers_violations(dv, dp, dq, ds):
    def net_with(shrink):
        return make_net([bus(1, "slack", vmin=0.95 + dv * shrink, vmax=1.05 - dv * shrink), bus(2, vmin=0.95)],
                        [line(1, 2, rate_a=40.0 - ds * shrink)],
                        [gen(1, pmin=10.0 + dp * 100 * shrink, pmax=100.0 - dp * 100 * shrink,
                             qmin=-20.0 + dq * shrink, qmax=20.0 - dq * shrink)])

    loose, tight = net_with(0.0), net_with(1.0)
    sol = _solution(loose, pg_solved=np.array([60.0]), qg=np.array([5.0]), vm=np.array([1.0, 0.97]),
                    flow_from=np.array([30 + 20j]), flow_to=np.array([-30 - 18j]))
    assert np.all(violations(tight, sol).as_array() >= violations(loose, sol).as_array())
