"""Electrical network model: case parsing, validation and bus admittance matrix."""

from __future__ import annotations

import json
from dataclasses import dataclass, field, replace
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

BUS_KINDS = ("slack", "pv", "pq")
BUNDLED_CASES = ("ieee9", "ieee30")


class CaseError(ValueError):
    """Raised when a case document violates the schema or a network invariant."""


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str
    pd: float
    qd: float
    vmin: float
    vmax: float
    gsh: float = 0.0
    bsh: float = 0.0


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    b_ch: float = 0.0
    smax: float = 0.0  # MVA; 0 means unconstrained
    status: bool = True

    @property
    def series_admittance(self) -> complex:
        return 1.0 / complex(self.r, self.x)


@dataclass(frozen=True)
class Generator:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    r_up: float
    r_down: float
    pg: float = 0.0
    vg: float = 1.0


@dataclass(frozen=True)
class GenCost:
    c2: float
    c1: float
    c0: float


@dataclass(frozen=True)
class Network:
    """Immutable bus-branch model. Loads and limits in MW/MVAr, shunts in per-unit."""

    base_mva: float
    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    generators: tuple[Generator, ...]
    gencosts: tuple[GenCost, ...]
    name: str = field(default="", compare=False)

    def __post_init__(self) -> None:
        _validate(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @property
    def n_branch(self) -> int:
        return len(self.branches)

    @property
    def n_gen(self) -> int:
        return len(self.generators)

    @cached_property
    def bus_index(self) -> dict[int, int]:
        """Map from external bus id to 0-based position."""
        return {b.id: i for i, b in enumerate(self.buses)}

    @cached_property
    def slack(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @cached_property
    def gen_bus(self) -> np.ndarray:
        return np.array([self.bus_index[g.bus] for g in self.generators], dtype=int)

    @cached_property
    def slack_gen(self) -> int:
        return int(np.flatnonzero(self.gen_bus == self.slack)[0])

    @cached_property
    def branch_ends(self) -> tuple[np.ndarray, np.ndarray]:
        f = np.array([self.bus_index[br.from_bus] for br in self.branches], dtype=int)
        t = np.array([self.bus_index[br.to_bus] for br in self.branches], dtype=int)
        return f, t

    @cached_property
    def _array_cache(self) -> dict:
        return {}

    def _column(self, group: str, items, name: str) -> np.ndarray:
        key = (group, name)
        arr = self._array_cache.get(key)
        if arr is None:
            arr = np.array([getattr(x, name) for x in items], dtype=float)
            arr.setflags(write=False)
            self._array_cache[key] = arr
        return arr

    def bus_array(self, name: str) -> np.ndarray:
        """Read-only vector of one bus field."""
        return self._column("bus", self.buses, name)

    def gen_array(self, name: str) -> np.ndarray:
        return self._column("gen", self.generators, name)

    def cost_array(self, name: str) -> np.ndarray:
        return self._column("cost", self.gencosts, name)

    @cached_property
    def bus_roles(self) -> tuple[np.ndarray, np.ndarray]:
        """Indices of PV and PQ buses; generator buses other than the slack are PV."""
        gen_buses = set(int(i) for i in self.gen_bus)
        pv = np.array([i for i in range(self.n_bus) if i in gen_buses and i != self.slack], dtype=int)
        pq = np.array([i for i in range(self.n_bus) if i not in gen_buses], dtype=int)
        return pv, pq

    @cached_property
    def smax(self) -> np.ndarray:
        return np.array([br.smax for br in self.branches], dtype=float)

    @cached_property
    def in_service(self) -> np.ndarray:
        return np.array([br.status for br in self.branches], dtype=bool)

    @cached_property
    def ybus(self) -> np.ndarray:
        """Read-only cached admittance matrix."""
        y = build_ybus(self)
        y.setflags(write=False)
        return y

    @cached_property
    def branch_matrices(self) -> tuple[np.ndarray, np.ndarray]:
        yf, yt = build_branch_matrices(self)
        yf.setflags(write=False)
        yt.setflags(write=False)
        return yf, yt

    def generation_cost(self, pg_mw: np.ndarray) -> float:
        """Total quadratic generation cost in $/h for active outputs in MW."""
        pg = np.asarray(pg_mw, dtype=float)
        return float(np.sum(self.cost_array("c2") * pg**2 + self.cost_array("c1") * pg + self.cost_array("c0")))

    def with_branch_status(self, index: int, status: bool) -> Network:
        branches = list(self.branches)
        branches[index] = replace(branches[index], status=status)
        return replace(self, branches=tuple(branches))


def _validate(net: Network) -> None:
    if net.base_mva <= 0:
        raise CaseError("base_mva: must be positive")
    seen: set[int] = set()
    for i, b in enumerate(net.buses):
        if b.id in seen:
            raise CaseError(f"buses[{i}].id: duplicate bus id {b.id}")
        seen.add(b.id)
        if b.kind not in BUS_KINDS:
            raise CaseError(f"buses[{i}].type: unknown bus type {b.kind!r}")
        if not 0 < b.vmin < b.vmax:
            raise CaseError(f"buses[{i}].vmin/vmax: require 0 < vmin < vmax")
    n_slack = sum(b.kind == "slack" for b in net.buses)
    if n_slack == 0:
        raise CaseError("buses: missing slack bus")
    if n_slack > 1:
        raise CaseError("buses: multiple slack buses")
    for i, br in enumerate(net.branches):
        for end in ("from_bus", "to_bus"):
            if getattr(br, end) not in seen:
                raise CaseError(f"branches[{i}].{end}: unknown bus {getattr(br, end)}")
        if br.r == 0 and br.x == 0:
            raise CaseError(f"branches[{i}]: zero impedance")
        if br.smax < 0:
            raise CaseError(f"branches[{i}].rate_a: must be nonnegative")
    if not net.generators:
        raise CaseError("generators: at least one generator required")
    if len(net.gencosts) != len(net.generators):
        raise CaseError("gencosts: length must equal number of generators")
    gen_buses: set[int] = set()
    for i, g in enumerate(net.generators):
        if g.bus not in seen:
            raise CaseError(f"generators[{i}].bus: unknown bus {g.bus}")
        if g.bus in gen_buses:
            raise CaseError(f"generators[{i}].bus: more than one generator at bus {g.bus}")
        gen_buses.add(g.bus)
        if g.pmin > g.pmax:
            raise CaseError(f"generators[{i}]: pmin > pmax")
        if g.qmin > g.qmax:
            raise CaseError(f"generators[{i}]: qmin > qmax")
        if g.r_up < 0 or g.r_down < 0:
            raise CaseError(f"generators[{i}]: negative ramp limit")
    slack_id = next(b.id for b in net.buses if b.kind == "slack")
    if slack_id not in gen_buses:
        raise CaseError("generators: slack bus has no generator")
    for i, c in enumerate(net.gencosts):
        if c.c2 < 0:
            raise CaseError(f"gencosts[{i}].c2: must be nonnegative")


def _get(obj: dict, key: str, path: str, default=None):
    if key in obj:
        value = obj[key]
    elif default is not None:
        return default
    else:
        raise CaseError(f"{path}.{key}: missing field")
    if isinstance(value, bool) or not isinstance(value, (int, float, str)):
        raise CaseError(f"{path}.{key}: expected a scalar, got {value!r}")
    return value


def _num(obj: dict, key: str, path: str, default: float | None = None) -> float:
    value = _get(obj, key, path, default)
    try:
        return float(value)
    except (TypeError, ValueError):
        raise CaseError(f"{path}.{key}: not a number: {value!r}") from None


def network_from_dict(doc: dict) -> Network:
    """Build a Network from a case document (see README for the schema)."""
    if not isinstance(doc, dict):
        raise CaseError("case: top level must be an object")
    for key in ("base_mva", "buses", "branches", "generators", "gencosts"):
        if key not in doc:
            raise CaseError(f"{key}: missing field")
    base = _num(doc, "base_mva", "case")
    if base <= 0:
        raise CaseError("base_mva: must be positive")

    buses = []
    for i, b in enumerate(doc["buses"]):
        p = f"buses[{i}]"
        kind = str(_get(b, "type", p))
        if "gsh" in b or "bsh" in b:
            gsh, bsh = _num(b, "gsh", p, 0.0), _num(b, "bsh", p, 0.0)
        else:
            gsh, bsh = _num(b, "gs", p, 0.0) / base, _num(b, "bs", p, 0.0) / base
        buses.append(Bus(
            id=int(_num(b, "id", p)), kind=kind, pd=_num(b, "pd", p, 0.0), qd=_num(b, "qd", p, 0.0),
            vmin=_num(b, "vmin", p), vmax=_num(b, "vmax", p), gsh=gsh, bsh=bsh,
        ))

    branches = []
    for i, br in enumerate(doc["branches"]):
        p = f"branches[{i}]"
        tap = _num(br, "tap", p, 1.0)
        if tap not in (0.0, 1.0):
            raise CaseError(f"{p}.tap: off-nominal taps are not supported (got {tap})")
        if _num(br, "shift", p, 0.0) != 0.0:
            raise CaseError(f"{p}.shift: phase shifters are not supported")
        branches.append(Branch(
            from_bus=int(_num(br, "from", p)), to_bus=int(_num(br, "to", p)),
            r=_num(br, "r", p), x=_num(br, "x", p), b_ch=_num(br, "b", p, 0.0),
            smax=_num(br, "rate_a", p, 0.0), status=bool(_num(br, "status", p, 1.0)),
        ))

    generators = []
    for i, g in enumerate(doc["generators"]):
        p = f"generators[{i}]"
        pmin, pmax = _num(g, "pmin", p), _num(g, "pmax", p)
        default_ramp = 0.25 * (pmax - pmin)
        generators.append(Generator(
            bus=int(_num(g, "bus", p)), pmin=pmin, pmax=pmax,
            qmin=_num(g, "qmin", p), qmax=_num(g, "qmax", p),
            r_up=_num(g, "ramp_up", p, default_ramp), r_down=_num(g, "ramp_down", p, default_ramp),
            pg=_num(g, "pg", p, 0.0), vg=_num(g, "vg", p, 1.0),
        ))

    gencosts = []
    for i, c in enumerate(doc["gencosts"]):
        p = f"gencosts[{i}]"
        gencosts.append(GenCost(c2=_num(c, "c2", p), c1=_num(c, "c1", p), c0=_num(c, "c0", p)))

    return Network(
        base_mva=base, buses=tuple(buses), branches=tuple(branches),
        generators=tuple(generators), gencosts=tuple(gencosts), name=str(doc.get("name", "")),
    )


def network_to_dict(net: Network) -> dict:
    return {
        "name": net.name,
        "base_mva": net.base_mva,
        "buses": [
            {"id": b.id, "type": b.kind, "pd": b.pd, "qd": b.qd, "gsh": b.gsh, "bsh": b.bsh,
             "vmin": b.vmin, "vmax": b.vmax}
            for b in net.buses
        ],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r": br.r, "x": br.x, "b": br.b_ch,
             "rate_a": br.smax, "tap": 1.0, "status": int(br.status)}
            for br in net.branches
        ],
        "generators": [
            {"bus": g.bus, "pg": g.pg, "vg": g.vg, "pmin": g.pmin, "pmax": g.pmax, "qmin": g.qmin,
             "qmax": g.qmax, "ramp_up": g.r_up, "ramp_down": g.r_down}
            for g in net.generators
        ],
        "gencosts": [{"c2": c.c2, "c1": c.c1, "c0": c.c0} for c in net.gencosts],
    }


def dump_case(net: Network) -> str:
    return json.dumps(network_to_dict(net), indent=1)


def parse_case(path: str | Path) -> Network:
    """Read a case file. ``path`` may also name a bundled case ("ieee9", "ieee30")."""
    text = _read_case_text(path)
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        raise CaseError(f"case: invalid document: {exc}") from None
    return network_from_dict(doc)


def _read_case_text(path: str | Path) -> str:
    if str(path) in BUNDLED_CASES:
        return resources.files("rtopf.data").joinpath(f"{path}.case").read_text()
    p = Path(path)
    if not p.exists():
        raise CaseError(f"case: file not found: {p}")
    return p.read_text()


def load_bundled(name: str) -> Network:
    return parse_case(name)


def branch_admittances(net: Network) -> tuple[np.ndarray, np.ndarray, np.ndarray, np.ndarray]:
    """Per-branch two-port admittances (yff, yft, ytf, ytt); zero for out-of-service branches."""
    ys = np.array([br.series_admittance for br in net.branches], dtype=complex)
    bc = np.array([br.b_ch for br in net.branches], dtype=float)
    on = net.in_service.astype(float)
    ytt = (ys + 0.5j * bc) * on
    yff = ytt.copy()
    yft = -ys * on
    ytf = -ys * on
    return yff, yft, ytf, ytt


def build_branch_matrices(net: Network) -> tuple[np.ndarray, np.ndarray]:
    """Dense Yf, Yt (n_branch x n_bus): branch-end currents from bus voltages."""
    yff, yft, ytf, ytt = branch_admittances(net)
    f, t = net.branch_ends
    rows = np.arange(net.n_branch)
    yf = np.zeros((net.n_branch, net.n_bus), dtype=complex)
    yt = np.zeros_like(yf)
    np.add.at(yf, (rows, f), yff)
    np.add.at(yf, (rows, t), yft)
    np.add.at(yt, (rows, f), ytf)
    np.add.at(yt, (rows, t), ytt)
    return yf, yt


def build_ybus(net: Network) -> np.ndarray:
    """Dense bus admittance matrix in per-unit."""
    yff, yft, ytf, ytt = branch_admittances(net)
    f, t = net.branch_ends
    n = net.n_bus
    ybus = np.zeros((n, n), dtype=complex)
    np.add.at(ybus, (f, f), yff)
    np.add.at(ybus, (f, t), yft)
    np.add.at(ybus, (t, f), ytf)
    np.add.at(ybus, (t, t), ytt)
    ybus[np.diag_indices(n)] += net.bus_array("gsh") + 1j * net.bus_array("bsh")
    return ybus


def is_connected(net: Network) -> bool:
    """True when in-service branches connect every bus."""
    f, t = net.branch_ends
    adjacency: dict[int, list[int]] = {i: [] for i in range(net.n_bus)}
    for a, b, on in zip(f, t, net.in_service):
        if on:
            adjacency[int(a)].append(int(b))
            adjacency[int(b)].append(int(a))
    seen = {net.slack}
    stack = [net.slack]
    while stack:
        for nxt in adjacency[stack.pop()]:
            if nxt not in seen:
                seen.add(nxt)
                stack.append(nxt)
    return len(seen) == net.n_bus
