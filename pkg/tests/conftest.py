import json
from pathlib import Path

import numpy as np
import pytest

from rtopf.grid_model import load_bundled, network_from_dict

GOLDEN = Path(__file__).parent / "golden"


@pytest.fixture(scope="session")
def case9():
    return load_bundled("ieee9")


@pytest.fixture(scope="session")
def case30():
    return load_bundled("ieee30")


@pytest.fixture(scope="session")
def golden():
    return json.loads((GOLDEN / "reference.json").read_text())


def bus(i, kind="pq", pd=0.0, qd=0.0, vmin=0.9, vmax=1.1, **kw):
    return {"id": i, "type": kind, "pd": pd, "qd": qd, "vmin": vmin, "vmax": vmax, **kw}


def line(f, t, r=0.0, x=0.1, b=0.0, rate_a=0.0, status=1):
    return {"from": f, "to": t, "r": r, "x": x, "b": b, "rate_a": rate_a, "status": status}


def gen(at, pmin=0.0, pmax=200.0, qmin=-100.0, qmax=100.0, pg=0.0, vg=1.0, **kw):
    return {"bus": at, "pmin": pmin, "pmax": pmax, "qmin": qmin, "qmax": qmax, "pg": pg, "vg": vg, **kw}


def cost(c2=0.01, c1=10.0, c0=0.0):
    return {"c2": c2, "c1": c1, "c0": c0}


def make_net(buses, branches, gens, costs=None, base_mva=100.0, name="toy"):
    return network_from_dict({"name": name, "base_mva": base_mva, "buses": buses, "branches": branches,
                              "generators": gens, "gencosts": costs or [cost() for _ in gens]})


def two_bus(pd=50.0, qd=0.0, x=0.1, r=0.0, **kw):
    """Slack at bus 1, load at bus 2, one line."""
    return make_net([bus(1, "slack"), bus(2, pd=pd, qd=qd)], [line(1, 2, r=r, x=x, **kw)], [gen(1)])


def complex_matrix(block):
    return np.asarray(block["real"]) + 1j * np.asarray(block["imag"])


@pytest.fixture(scope="session")
def case9_trajectory(case9):
    from rtopf.cmdp_env import DatasetConfig, generate_dataset
    from rtopf.opf_expert import generate_expert_trajectory

    scen = generate_dataset(case9, DatasetConfig(horizon=12, seed=3))
    return generate_expert_trajectory(case9, scen, strict=True)


# one line per acceptance criterion, repeated in the terminal summary
ACCEPTANCE: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE:
            terminalreporter.write_line(line)
