"""Volt-var Markov game: scenario profiles, agent layout, observations, stepping."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .exceptions import (ConfigurationError, MissingAgentAction, NonConvergence,
                         SingularJacobian, UnknownAgent)
from .netmodel import Network, build_admittance
from .powerflow import (Injections, PowerFlowSolution, ViolationReport, check_limits,
                        solve_power_flow)

PROFILE_HEADER = ["t", "bus_or_pv_id", "kind", "p_mw", "q_mvar"]


@dataclass(eq=False)
class ScenarioProfile:
    """Exogenous inputs for one episode; arrays are ``(T, n_bus)`` / ``(T, n_pv)`` in MW, MVar."""

    load_p: np.ndarray
    load_q: np.ndarray
    pv_avail: np.ndarray
    dt: float = 3600.0
    kind: str = "daily"

    @property
    def T(self) -> int:
        return self.load_p.shape[0]

    def validate(self, net: Network) -> "ScenarioProfile":
        if self.load_p.shape != (self.T, net.n_bus) or self.load_q.shape != (self.T, net.n_bus):
            raise ValueError("load series must be (T, n_bus)")
        if self.pv_avail.shape != (self.T, len(net.pvs)):
            raise ValueError("PV series must be (T, n_pv)")
        rated = np.array([pv.p_rated for pv in net.pvs])
        if np.any(self.pv_avail < 0) or np.any(self.pv_avail > rated + 1e-12):
            raise ValueError("PV availability must lie in [0, p_rated]")
        return self


# --- profile generation -----------------------------------------------------

def _solar_shape(hours, sunrise=6.0, sunset=19.0):
    x = (hours - sunrise) / (sunset - sunrise)
    shape = np.where((x > 0) & (x < 1), np.sin(np.pi * np.clip(x, 0, 1)), 0.0)
    return shape ** 1.3


def _load_shape(hours):
    base = 0.52
    morning = 0.22 * np.exp(-0.5 * ((hours - 8.0) / 1.6) ** 2)
    midday = 0.10 * np.exp(-0.5 * ((hours - 13.0) / 2.5) ** 2)
    evening = 0.42 * np.exp(-0.5 * ((hours - 19.5) / 2.0) ** 2)
    return base + morning + midday + evening


def _daily_profile(net, rng, load_scale, pv_scale):
    T = 24
    hours = np.arange(T) + 0.5
    rated = np.array([pv.p_rated for pv in net.pvs])
    n_pv = len(rated)

    day_load = load_scale * rng.uniform(0.85, 1.05)
    shape = _load_shape(hours)
    noise = 1.0 + 0.03 * rng.standard_normal((T, net.n_bus))
    mult = day_load * shape[:, None] * noise
    load_p = mult * np.asarray(net.load_p)[None, :]
    load_q = mult * np.asarray(net.load_q)[None, :]

    clearness = rng.uniform(0.45, 1.0)
    cloud = 1.0 - (1.0 - clearness) * rng.uniform(0.0, 1.0, size=(T, 1))
    pv_noise = 1.0 + 0.05 * rng.standard_normal((T, n_pv))
    pv = pv_scale * rated[None, :] * _solar_shape(hours)[:, None] * cloud * pv_noise
    pv = np.clip(pv, 0.0, rated[None, :])
    return ScenarioProfile(load_p, load_q, pv, dt=3600.0, kind="daily")


def cloud_ramp(T=60):
    """PV output (MW) at t = 1..T seconds rising 0.33 -> 0.65 -> 0.33."""
    t = np.arange(1, T + 1, dtype=float)
    half = 30.0
    up = 0.33 + (0.65 - 0.33) * (t - 1.0) / (half - 1.0)
    down = 0.65 - (0.65 - 0.33) * (t - half) / (T - half)
    return np.where(t <= half, up, down)


def _transient_profile(net, rng, load_scale, pv_scale, jitter=0.005):
    T = 60
    rated = np.array([pv.p_rated for pv in net.pvs])
    ramp = pv_scale * cloud_ramp(T)
    pv = ramp[:, None] * (1.0 + jitter * rng.standard_normal((T, len(rated))))
    pv = np.clip(pv, 0.0, rated[None, :])
    load_p = np.tile(load_scale * np.asarray(net.load_p), (T, 1))
    load_q = np.tile(load_scale * np.asarray(net.load_q), (T, 1))
    return ScenarioProfile(load_p, load_q, pv, dt=1.0, kind="cloud_transient")


DAILY_LOAD_SCALE = 0.9
TRANSIENT_LOAD_SCALE = 0.3


def generate_profiles(net: Network, kind="daily", count=1, seed=0,
                      load_scale=None, pv_scale=1.0) -> list[ScenarioProfile]:
    """Seeded synthetic scenarios.

    ``daily``: 24 hourly steps, solar bell curve with day-level clearness and
    cloud jitter, load curve with morning and evening peaks.
    ``cloud_transient``: 60 one-second steps with the 0.33 -> 0.65 -> 0.33 MW
    PV ramp and loads held at ``load_scale`` times base.
    """
    if count < 1:
        raise ValueError("count must be >= 1")
    rng = np.random.default_rng(seed)
    if kind == "daily":
        scale = DAILY_LOAD_SCALE if load_scale is None else load_scale
        return [_daily_profile(net, rng, scale, pv_scale).validate(net) for _ in range(count)]
    if kind == "cloud_transient":
        scale = TRANSIENT_LOAD_SCALE if load_scale is None else load_scale
        return [_transient_profile(net, rng, scale, pv_scale).validate(net) for _ in range(count)]
    raise ValueError(f"unknown profile kind {kind!r}")


def write_profile_csv(net: Network, profile: ScenarioProfile, path=None, header_lines=()) -> str:
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    buf.write(f"# dt={profile.dt:g}\n# profile_kind={profile.kind}\n")
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(PROFILE_HEADER)
    for t in range(profile.T):
        for k, bus in enumerate(net.buses):
            writer.writerow([t, bus.id, "load", repr(float(profile.load_p[t, k])),
                             repr(float(profile.load_q[t, k]))])
        for k, pv in enumerate(net.pvs):
            writer.writerow([t, pv.bus, "pv", repr(float(profile.pv_avail[t, k])), "0.0"])
    text = buf.getvalue()
    if path is not None:
        Path(path).write_text(text)
    return text


def read_profile_csv(net: Network, path) -> ScenarioProfile:
    lines = Path(path).read_text().splitlines()
    meta = {}
    body = []
    for line in lines:
        if line.startswith("#"):
            key, _, value = line[1:].strip().partition("=")
            meta[key.strip()] = value.strip()
        elif line.strip():
            body.append(line)
    reader = csv.DictReader(body)
    if reader.fieldnames != PROFILE_HEADER:
        raise ValueError(f"{path}: expected header {','.join(PROFILE_HEADER)}")
    rows = list(reader)
    T = 1 + max(int(r["t"]) for r in rows)
    load_p = np.zeros((T, net.n_bus))
    load_q = np.zeros((T, net.n_bus))
    pv_avail = np.zeros((T, len(net.pvs)))
    pv_pos = {pv.bus: k for k, pv in enumerate(net.pvs)}
    for r in rows:
        t = int(r["t"])
        ident = int(r["bus_or_pv_id"])
        if r["kind"] == "load":
            k = net.index_of(ident)
            load_p[t, k] = float(r["p_mw"])
            load_q[t, k] = float(r["q_mvar"])
        elif r["kind"] == "pv":
            pv_avail[t, pv_pos[ident]] = float(r["p_mw"])
        else:
            raise ValueError(f"{path}: unknown row kind {r['kind']!r}")
    return ScenarioProfile(load_p, load_q, pv_avail, dt=float(meta.get("dt", 3600.0)),
                           kind=meta.get("profile_kind", "daily")).validate(net)


# --- agent layout -----------------------------------------------------------

@dataclass(frozen=True, eq=False)
class AgentSpec:
    """Buses and devices owned by one agent (indices into ``net`` arrays)."""

    agent_id: int
    bus_rows: np.ndarray
    svc_idx: np.ndarray
    pv_idx: np.ndarray

    @property
    def obs_dim(self) -> int:
        return 2 * len(self.bus_rows) + len(self.pv_idx)

    @property
    def act_dim(self) -> int:
        return len(self.svc_idx) + len(self.pv_idx)


@dataclass(frozen=True, eq=False)
class AgentLayout:
    agents: tuple[AgentSpec, ...]
    obs_offsets: np.ndarray = field(default=None)
    act_offsets: np.ndarray = field(default=None)

    def __post_init__(self):
        object.__setattr__(self, "obs_offsets",
                           np.concatenate([[0], np.cumsum([a.obs_dim for a in self.agents])]))
        object.__setattr__(self, "act_offsets",
                           np.concatenate([[0], np.cumsum([a.act_dim for a in self.agents])]))

    def __len__(self):
        return len(self.agents)

    def __iter__(self):
        return iter(self.agents)

    def __getitem__(self, j) -> AgentSpec:
        return self.agents[j]

    @property
    def obs_dim(self) -> int:
        return int(self.obs_offsets[-1])

    @property
    def act_dim(self) -> int:
        return int(self.act_offsets[-1])

    def obs_slice(self, j) -> slice:
        return slice(int(self.obs_offsets[j]), int(self.obs_offsets[j + 1]))

    def act_slice(self, j) -> slice:
        return slice(int(self.act_offsets[j]), int(self.act_offsets[j + 1]))

    def signature(self) -> list:
        return [[a.bus_rows.tolist(), a.svc_idx.tolist(), a.pv_idx.tolist()] for a in self.agents]

    @classmethod
    def from_clusters(cls, net: Network, clusters) -> "AgentLayout":
        """Build agents from lists of bus ids; every cluster needs a device."""
        specs = []
        seen = set()
        for j, members in enumerate(clusters):
            ids = [int(b) for b in members]
            if seen.intersection(ids):
                raise ConfigurationError(f"cluster {j} overlaps an earlier cluster")
            seen.update(ids)
            rows = np.array(sorted(net.index_of(b) for b in ids), dtype=int)
            if net.slack_index in set(rows.tolist()):
                raise ConfigurationError("the slack bus cannot belong to an agent")
            id_set = set(ids)
            svc = np.array([k for k, s in enumerate(net.svcs) if s.bus in id_set], dtype=int)
            pv = np.array([k for k, p in enumerate(net.pvs) if p.bus in id_set], dtype=int)
            if len(svc) + len(pv) == 0:
                raise ConfigurationError(
                    f"cluster {j} (buses {sorted(ids)}) has no controllable device")
            specs.append(AgentSpec(j, rows, svc, pv))
        missing = set(net.bus_ids[net.pq_indices].tolist()) - seen
        if missing:
            raise ConfigurationError(f"buses not assigned to any agent: {sorted(missing)}")
        return cls(tuple(specs))

    @classmethod
    def from_signature(cls, signature) -> "AgentLayout":
        return cls(tuple(AgentSpec(j, np.array(rows, dtype=int), np.array(svc, dtype=int),
                                   np.array(pv, dtype=int))
                         for j, (rows, svc, pv) in enumerate(signature)))

    @classmethod
    def from_partition(cls, net: Network, result) -> "AgentLayout":
        return cls.from_clusters(net, result.clusters())


# --- stepping ---------------------------------------------------------------

def device_setpoints(net: Network, pv_avail_mw: np.ndarray, svc_actions: np.ndarray,
                     pv_actions: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Normalized actions -> (SVC Q, PV Q) in MVar, respecting device limits."""
    svc_actions = np.clip(np.asarray(svc_actions, dtype=float), -1.0, 1.0)
    pv_actions = np.clip(np.asarray(pv_actions, dtype=float), -1.0, 1.0)
    q_min = np.array([s.q_min for s in net.svcs])
    q_max = np.array([s.q_max for s in net.svcs])
    q_svc = q_min + (svc_actions + 1.0) / 2.0 * (q_max - q_min)
    s_rated = np.array([p.s_apparent for p in net.pvs])
    headroom = np.sqrt(np.maximum(0.0, s_rated ** 2 - np.asarray(pv_avail_mw) ** 2))
    return q_svc, pv_actions * headroom


def injections_from_setpoints(net: Network, load_p, load_q, pv_p, q_svc, q_pv) -> Injections:
    p = -np.asarray(load_p, dtype=float).copy()
    q = -np.asarray(load_q, dtype=float).copy()
    np.add.at(p, net.pv_bus_index, pv_p)
    np.add.at(q, net.pv_bus_index, q_pv)
    np.add.at(q, net.svc_bus_index, q_svc)
    return Injections(p / net.s_base, q / net.s_base)


def split_actions(layout: AgentLayout, net: Network, actions) -> tuple[np.ndarray, np.ndarray]:
    """Per-agent action vectors -> (SVC actions, PV actions) in device order."""
    if len(actions) != len(layout):
        raise MissingAgentAction(f"expected {len(layout)} action vectors, got {len(actions)}")
    svc = np.zeros(len(net.svcs))
    pv = np.zeros(len(net.pvs))
    for spec, a in zip(layout, actions):
        if a is None:
            raise MissingAgentAction(f"agent {spec.agent_id} supplied no action")
        a = np.clip(np.asarray(a, dtype=float).reshape(-1), -1.0, 1.0)
        if a.shape[0] != spec.act_dim:
            raise MissingAgentAction(
                f"agent {spec.agent_id}: expected {spec.act_dim} actions, got {a.shape[0]}")
        n_svc = len(spec.svc_idx)
        svc[spec.svc_idx] = a[:n_svc]
        pv[spec.pv_idx] = a[n_svc:]
    return svc, pv


def map_actions(net: Network, layout: AgentLayout, profile: ScenarioProfile, t: int,
                actions) -> Injections:
    svc_a, pv_a = split_actions(layout, net, actions)
    pv_p = profile.pv_avail[t]
    q_svc, q_pv = device_setpoints(net, pv_p, svc_a, pv_a)
    return injections_from_setpoints(net, profile.load_p[t], profile.load_q[t], pv_p, q_svc, q_pv)


def total_deviation(v: np.ndarray, v0: float = 1.0) -> float:
    return float(np.sum(np.abs(v - v0)))


@dataclass(eq=False)
class StepOutcome:
    reward: float
    observations: list
    solution: PowerFlowSolution | None
    violations: ViolationReport | None
    done: bool
    failed: bool = False
    local_rewards: np.ndarray | None = None
    injections: Injections | None = None


class VoltVarEnv:
    """Single-owner episode cursor over one :class:`ScenarioProfile`.

    Observations never contain voltages: only cluster-local loads and PV
    availability, in per-unit.
    """

    def __init__(self, net: Network, layout: AgentLayout, v0: float = 1.0,
                 failure_reward: float = -10.0, limit_penalty: float = 0.0):
        self.net = net
        self.layout = layout
        self.y = build_admittance(net)
        self.v0 = v0
        self.failure_reward = failure_reward
        self.limit_penalty = limit_penalty
        self.profile = None
        self.t = 0
        self._cluster_rows = [spec.bus_rows for spec in layout]

    @property
    def n_agents(self) -> int:
        return len(self.layout)

    def reset(self, profile: ScenarioProfile) -> list[np.ndarray]:
        self.profile = profile.validate(self.net)
        self.t = 0
        return self.observations()

    def observe(self, j: int) -> np.ndarray:
        if not 0 <= j < len(self.layout):
            raise UnknownAgent(j)
        return self.observation_at(self.profile, self.t, j)

    def observation_at(self, profile, t, j) -> np.ndarray:
        spec = self.layout[j]
        s = self.net.s_base
        return np.concatenate([
            profile.load_p[t, spec.bus_rows] / s,
            profile.load_q[t, spec.bus_rows] / s,
            profile.pv_avail[t, spec.pv_idx] / s,
        ])

    def observations(self) -> list[np.ndarray]:
        t = min(self.t, self.profile.T - 1)
        return [self.observation_at(self.profile, t, j) for j in range(len(self.layout))]

    def global_state(self, observations=None) -> np.ndarray:
        obs = self.observations() if observations is None else observations
        return np.concatenate(obs)

    def reward_from_solution(self, solution: PowerFlowSolution) -> tuple[float, np.ndarray]:
        dev = np.abs(solution.v - self.v0)
        local = np.array([-float(np.sum(dev[rows])) for rows in self._cluster_rows])
        reward = -float(np.sum(dev))
        if self.limit_penalty:
            over = np.maximum(solution.v - self.net.v_max, 0) + np.maximum(self.net.v_min - solution.v, 0)
            reward -= self.limit_penalty * float(np.sum(over))
            local = local - np.array([self.limit_penalty * float(np.sum(over[rows]))
                                      for rows in self._cluster_rows])
        return reward, local

    def step(self, actions) -> StepOutcome:
        if self.profile is None:
            raise RuntimeError("call reset() before step()")
        if self.t >= self.profile.T:
            raise RuntimeError("episode already finished")
        inj = map_actions(self.net, self.layout, self.profile, self.t, actions)
        try:
            sol = solve_power_flow(self.net, self.y, inj, v_slack=self.v0)
        except (NonConvergence, SingularJacobian):
            self.t += 1
            fail_local = np.full(len(self.layout), self.failure_reward / len(self.layout))
            return StepOutcome(self.failure_reward, self.observations(), None, None,
                               done=True, failed=True, local_rewards=fail_local, injections=inj)
        reward, local = self.reward_from_solution(sol)
        self.t += 1
        done = self.t >= self.profile.T
        return StepOutcome(reward, self.observations(), sol, check_limits(self.net, sol),
                           done=done, local_rewards=local, injections=inj)
