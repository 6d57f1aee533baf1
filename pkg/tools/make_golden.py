"""Regenerate tests/golden/*.json from an independent reference toolbox (PYPOWER).

Not part of the package. Run once with PYPOWER importable:

    pip install --target /tmp/oracle pypower
    PYTHONPATH=/tmp/oracle python tools/make_golden.py
"""

import json
from pathlib import Path

import numpy as np
from pypower.api import case9, case30, ppoption, runopf, runpf
from pypower.ext2int import ext2int
from pypower.makeYbus import makeYbus

OUT = Path(__file__).resolve().parents[1] / "tests" / "golden"
OPT = ppoption(VERBOSE=0, OUT_ALL=0)
RAMP_FRACTION = 0.25


def as_float(case):
    # some bundled cases store integer arrays, which would truncate solved values
    out = dict(case)
    for key in ("bus", "gen", "branch", "gencost"):
        out[key] = np.asarray(case[key], dtype=float)
    return out


def ybus_of(case):
    ppc = ext2int(case)
    ybus, _, _ = makeYbus(ppc["baseMVA"], ppc["bus"], ppc["branch"])
    y = ybus.toarray()
    return {"real": y.real.tolist(), "imag": y.imag.tolist()}


def pf_of(case):
    res, ok = runpf(case, OPT)
    assert ok
    return {
        "pg": case["gen"][:, 1].tolist(),
        "vg": case["gen"][:, 5].tolist(),
        "vm": res["bus"][:, 7].tolist(),
        "va_deg": res["bus"][:, 8].tolist(),
        "pg_solved": res["gen"][:, 1].tolist(),
        "qg": res["gen"][:, 2].tolist(),
        "pf": res["branch"][:, 13].tolist(),
        "qf": res["branch"][:, 14].tolist(),
        "pt": res["branch"][:, 15].tolist(),
        "qt": res["branch"][:, 16].tolist(),
    }


def opf_of(case):
    res = runopf(case, OPT)
    assert res["success"]
    return {
        "objective": float(res["f"]),
        "pg": res["gen"][:, 1].tolist(),
        "vg": res["bus"][res["gen"][:, 0].astype(int) - 1, 7].tolist(),
    }


def reference_trajectory(case, factors):
    """Sequential OPF with ramp limits imposed by tightening generator bounds."""
    base = case["bus"][:, 2:4].copy()
    pmin0, pmax0 = case["gen"][:, 9].copy(), case["gen"][:, 8].copy()
    ramp = RAMP_FRACTION * (pmax0 - pmin0)
    steps = []
    prev_pg = None
    prev_vg = None
    for t, factor in enumerate(factors):
        c = {k: (v.copy() if hasattr(v, "copy") else v) for k, v in case.items()}
        c["bus"][:, 2:4] = base * factor
        if prev_pg is None:
            r0 = runopf(c, OPT)
            prev_pg = r0["gen"][:, 1].copy()
            prev_vg = r0["bus"][r0["gen"][:, 0].astype(int) - 1, 7].copy()
        c["gen"][:, 9] = np.maximum(pmin0, prev_pg - ramp)
        c["gen"][:, 8] = np.minimum(pmax0, prev_pg + ramp)
        r = runopf(c, OPT)
        assert r["success"]
        pg = r["gen"][:, 1].copy()
        vg = r["bus"][r["gen"][:, 0].astype(int) - 1, 7].copy()
        loads = c["bus"][:, 2:4]
        steps.append({
            "loads": {"pd": loads[:, 0].tolist(), "qd": loads[:, 1].tolist()},
            "prev_pg": prev_pg.tolist(), "prev_vg": prev_vg.tolist(),
            "pg": pg.tolist(), "vg": vg.tolist(), "objective": float(r["f"]), "feasible": True,
        })
        prev_pg, prev_vg = pg, vg
    return {"network_id": "ieee9", "horizon": len(steps), "steps": steps}


def main():
    OUT.mkdir(parents=True, exist_ok=True)
    golden = {}
    for name, fn in [("ieee9", case9), ("ieee30", case30)]:
        golden[name] = {"ybus": ybus_of(as_float(fn())), "pf": pf_of(as_float(fn())), "opf": opf_of(as_float(fn()))}
    (OUT / "reference.json").write_text(json.dumps(golden))
    traj = reference_trajectory(as_float(case9()), [1.0, 1.2, 0.8, 1.25, 0.75, 1.0])
    (OUT / "ieee9_reference_trajectory.json").write_text(json.dumps(traj, indent=1))


if __name__ == "__main__":
    main()
