"""Static feeder model: buses, branches, devices, per-unit helpers and JSON I/O."""

from __future__ import annotations

import json
from collections import deque
from dataclasses import dataclass, field
from functools import cached_property
from importlib import resources
from pathlib import Path

import numpy as np

from .exceptions import NetworkValidationError

#: ``i_max`` used when a branch carries no current rating.
I_MAX_SENTINEL = 1.0e6

BUNDLED = ("ieee33", "ieee123", "toy6")


@dataclass(frozen=True)
class Bus:
    id: int
    kind: str = "pq"
    v_min: float = 0.95
    v_max: float = 1.05
    base_kv: float = 12.66


@dataclass(frozen=True)
class Branch:
    from_bus: int
    to_bus: int
    r: float
    x: float
    i_max: float = I_MAX_SENTINEL


@dataclass(frozen=True)
class PvUnit:
    bus: int
    p_rated: float
    s_apparent: float


@dataclass(frozen=True)
class SvcUnit:
    bus: int
    q_min: float = -0.3
    q_max: float = 0.3


@dataclass(frozen=True)
class Network:
    """Immutable radial feeder.

    ``load_p``/``load_q`` hold the base load per bus (MW / MVar), aligned with
    ``buses``.  Construction validates every structural invariant.
    """

    buses: tuple[Bus, ...]
    branches: tuple[Branch, ...]
    pvs: tuple[PvUnit, ...] = ()
    svcs: tuple[SvcUnit, ...] = ()
    s_base: float = 1.0
    load_p: tuple[float, ...] = ()
    load_q: tuple[float, ...] = ()
    name: str = field(default="", compare=False)

    def __post_init__(self):
        n = len(self.buses)
        if not self.load_p:
            object.__setattr__(self, "load_p", (0.0,) * n)
        if not self.load_q:
            object.__setattr__(self, "load_q", (0.0,) * n)
        validate_network(self)

    @property
    def n_bus(self) -> int:
        return len(self.buses)

    @cached_property
    def bus_ids(self) -> np.ndarray:
        return np.array([b.id for b in self.buses], dtype=int)

    @cached_property
    def _index(self) -> dict[int, int]:
        return {b.id: i for i, b in enumerate(self.buses)}

    def index_of(self, bus_id: int) -> int:
        try:
            return self._index[int(bus_id)]
        except KeyError:
            raise KeyError(f"unknown bus id {bus_id}") from None

    @cached_property
    def slack_index(self) -> int:
        return next(i for i, b in enumerate(self.buses) if b.kind == "slack")

    @cached_property
    def pq_indices(self) -> np.ndarray:
        return np.array([i for i in range(self.n_bus) if i != self.slack_index], dtype=int)

    @cached_property
    def v_min(self) -> np.ndarray:
        return np.array([b.v_min for b in self.buses])

    @cached_property
    def v_max(self) -> np.ndarray:
        return np.array([b.v_max for b in self.buses])

    @cached_property
    def branch_ends(self) -> tuple[np.ndarray, np.ndarray]:
        f = np.array([self.index_of(br.from_bus) for br in self.branches], dtype=int)
        t = np.array([self.index_of(br.to_bus) for br in self.branches], dtype=int)
        return f, t

    @cached_property
    def i_max(self) -> np.ndarray:
        return np.array([br.i_max for br in self.branches])

    @cached_property
    def pv_bus_index(self) -> np.ndarray:
        return np.array([self.index_of(pv.bus) for pv in self.pvs], dtype=int)

    @cached_property
    def svc_bus_index(self) -> np.ndarray:
        return np.array([self.index_of(s.bus) for s in self.svcs], dtype=int)

    def with_loads(self, load_p, load_q) -> "Network":
        return Network(self.buses, self.branches, self.pvs, self.svcs, self.s_base,
                       tuple(float(v) for v in load_p), tuple(float(v) for v in load_q),
                       name=self.name)


@dataclass(frozen=True, eq=False)
class AdmittanceMatrix:
    g: np.ndarray
    b: np.ndarray

    @property
    def complex(self) -> np.ndarray:
        return self.g + 1j * self.b


def _is_connected(n, edges):
    adj = [[] for _ in range(n)]
    for u, v in edges:
        adj[u].append(v)
        adj[v].append(u)
    seen = [False] * n
    seen[0] = True
    queue = deque([0])
    while queue:
        u = queue.popleft()
        for v in adj[u]:
            if not seen[v]:
                seen[v] = True
                queue.append(v)
    return all(seen)


def validate_network(net: Network) -> None:
    """Raise :class:`NetworkValidationError` naming the first failing rule."""
    if net.s_base <= 0:
        raise NetworkValidationError("s_base must be > 0")
    ids = [b.id for b in net.buses]
    if len(set(ids)) != len(ids):
        raise NetworkValidationError("duplicate bus ids")
    n_slack = sum(b.kind == "slack" for b in net.buses)
    if n_slack != 1:
        raise NetworkValidationError(f"exactly one slack bus required, found {n_slack}")
    for b in net.buses:
        if b.kind not in ("slack", "pq"):
            raise NetworkValidationError(f"bus {b.id}: unknown kind {b.kind!r}")
        if not 0 < b.v_min < b.v_max:
            raise NetworkValidationError(f"bus {b.id}: requires 0 < v_min < v_max")
    known = set(ids)
    for br in net.branches:
        if br.from_bus not in known or br.to_bus not in known:
            raise NetworkValidationError(
                f"branch {br.from_bus}-{br.to_bus} references an unknown bus")
        if br.from_bus == br.to_bus:
            raise NetworkValidationError(f"branch {br.from_bus}-{br.to_bus} is a self loop")
        if br.r < 0 or br.x <= 0 or br.i_max <= 0:
            raise NetworkValidationError(
                f"branch {br.from_bus}-{br.to_bus}: requires r >= 0, x > 0, i_max > 0")
    if len(net.branches) != len(net.buses) - 1:
        raise NetworkValidationError(
            f"not radial: {len(net.branches)} branches for {len(net.buses)} buses")
    index = {b: i for i, b in enumerate(ids)}
    edges = [(index[br.from_bus], index[br.to_bus]) for br in net.branches]
    if not _is_connected(len(ids), edges):
        raise NetworkValidationError("not radial: branch graph is disconnected")
    for pv in net.pvs:
        if pv.bus not in known:
            raise NetworkValidationError(f"PV references unknown bus {pv.bus}")
        if not pv.s_apparent >= pv.p_rated > 0:
            raise NetworkValidationError(f"PV at bus {pv.bus}: requires s_mva >= p_rated_mw > 0")
    for svc in net.svcs:
        if svc.bus not in known:
            raise NetworkValidationError(f"SVC references unknown bus {svc.bus}")
        if not svc.q_min <= 0 <= svc.q_max:
            raise NetworkValidationError(f"SVC at bus {svc.bus}: requires q_min <= 0 <= q_max")
    if len(net.load_p) != len(ids) or len(net.load_q) != len(ids):
        raise NetworkValidationError("load vectors must have one entry per bus")


def build_admittance(net: Network) -> AdmittanceMatrix:
    """Bus admittance matrix from series branch impedances (no shunts)."""
    n = net.n_bus
    g = np.zeros((n, n))
    b = np.zeros((n, n))
    f, t = net.branch_ends
    for k, br in enumerate(net.branches):
        y = 1.0 / complex(br.r, br.x)
        i, j = f[k], t[k]
        g[i, j] -= y.real
        g[j, i] -= y.real
        b[i, j] -= y.imag
        b[j, i] -= y.imag
        g[i, i] += y.real
        g[j, j] += y.real
        b[i, i] += y.imag
        b[j, j] += y.imag
    return AdmittanceMatrix(g, b)


def to_per_unit(net: Network, value):
    """Convert MW or MVar to per-unit on the network power base."""
    return value / net.s_base


# --- JSON I/O ---------------------------------------------------------------

def network_from_dict(doc: dict, name: str = "") -> Network:
    try:
        base_kv = float(doc.get("base_kv", 12.66))
        buses = tuple(
            Bus(int(b["id"]), b.get("kind", "pq"), float(b.get("v_min", 0.95)),
                float(b.get("v_max", 1.05)), base_kv)
            for b in doc["buses"]
        )
        branches = tuple(
            Branch(int(br["from"]), int(br["to"]), float(br["r_pu"]), float(br["x_pu"]),
                   float(br.get("i_max_pu", I_MAX_SENTINEL)))
            for br in doc["branches"]
        )
        pvs = tuple(PvUnit(int(p["bus"]), float(p["p_rated_mw"]), float(p["s_mva"]))
                    for p in doc.get("pvs", []))
        svcs = tuple(SvcUnit(int(s["bus"]), float(s["q_min_mvar"]), float(s["q_max_mvar"]))
                     for s in doc.get("svcs", []))
        s_base = float(doc.get("s_base_mva", 1.0))
        loads = doc.get("loads", [])
    except (KeyError, TypeError, ValueError) as exc:
        raise NetworkValidationError(f"malformed network document: {exc!r}") from exc

    index = {b.id: i for i, b in enumerate(buses)}
    load_p = [0.0] * len(buses)
    load_q = [0.0] * len(buses)
    for ld in loads:
        bus = int(ld["bus"])
        if bus not in index:
            raise NetworkValidationError(f"load references unknown bus {bus}")
        load_p[index[bus]] += float(ld.get("p_mw", 0.0))
        load_q[index[bus]] += float(ld.get("q_mvar", 0.0))
    return Network(buses, branches, pvs, svcs, s_base, tuple(load_p), tuple(load_q), name=name)


def network_to_dict(net: Network) -> dict:
    return {
        "s_base_mva": net.s_base,
        "base_kv": net.buses[0].base_kv,
        "buses": [{"id": b.id, "kind": b.kind, "v_min": b.v_min, "v_max": b.v_max}
                  for b in net.buses],
        "branches": [
            {"from": br.from_bus, "to": br.to_bus, "r_pu": br.r, "x_pu": br.x,
             **({} if br.i_max == I_MAX_SENTINEL else {"i_max_pu": br.i_max})}
            for br in net.branches
        ],
        "loads": [{"bus": b.id, "p_mw": p, "q_mvar": q}
                  for b, p, q in zip(net.buses, net.load_p, net.load_q) if p or q],
        "pvs": [{"bus": p.bus, "p_rated_mw": p.p_rated, "s_mva": p.s_apparent} for p in net.pvs],
        "svcs": [{"bus": s.bus, "q_min_mvar": s.q_min, "q_max_mvar": s.q_max} for s in net.svcs],
    }


def load_network(path) -> Network:
    """Read and validate a network JSON file.

    ``path`` may also be the name of a bundled feeder (``"ieee33"``,
    ``"ieee123"``, ``"toy6"``).
    """
    if str(path) in BUNDLED or str(path) in {f"{b}.json" for b in BUNDLED}:
        return bundled_network(str(path).removesuffix(".json"))
    path = Path(path)
    text = path.read_text()
    try:
        doc = json.loads(text)
    except json.JSONDecodeError as exc:
        line = text.splitlines()[exc.lineno - 1] if text.splitlines() else ""
        raise NetworkValidationError(
            f"{path}: parse error at line {exc.lineno}, column {exc.colno}: {exc.msg}: {line.strip()!r}"
        ) from exc
    return network_from_dict(doc, name=path.stem)


def save_network(net: Network, path) -> None:
    Path(path).write_text(json.dumps(network_to_dict(net), indent=1) + "\n")


def bundled_network(name: str) -> Network:
    text = resources.files("gridvolt").joinpath("data", f"{name}.json").read_text()
    return network_from_dict(json.loads(text), name=name)


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("gridvolt").joinpath("data", f"{name}.json")))
