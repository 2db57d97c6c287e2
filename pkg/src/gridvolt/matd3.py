"""Multi-agent TD3 with centralized twin critics and decentralized actors.

Each agent owns an actor over its cluster observation and two critics.  In
the default ``centralized`` mode the critics see the concatenated global
observation and every agent's action and regress the shared reward; the
``independent`` mode restricts each critic to its own observation, action
and cluster-local reward, which is the independent-learner baseline.
"""

from __future__ import annotations

import hashlib
import io
import json
import os
import tempfile
import time
import zipfile
from dataclasses import asdict, dataclass, field, fields

import numpy as np
from sklearn.base import BaseEstimator

from .env import AgentLayout, ScenarioProfile, VoltVarEnv
from .exceptions import CheckpointError, ConfigurationError, DimensionMismatch
from .netmodel import Network
from .neural import AdamState, Mlp, adam_step, soft_update
from .seeding import substream

MODES = ("centralized", "independent")
CURVE_HEADER = ["episode", "cumulative_reward", "mean_critic_loss", "wall_ms"]
CHECKPOINT_VERSION = 1
# Fixed member timestamp so identical state gives identical archive bytes.
_ZIP_DATE = (2020, 1, 1, 0, 0, 0)


@dataclass(frozen=True)
class TrainConfig:
    batch_size: int = 32
    gamma: float = 0.0
    tau: float = 0.001
    policy_delay: int = 2
    target_noise: float = 0.2
    noise_clip: float = 0.5
    explore_std: float = 0.1
    explore_final: float = 0.02
    explore_decay_frac: float = 0.5
    actor_lr: float = 1e-3
    critic_lr: float = 2e-3
    buffer_size: int = 48000
    warmup: int | None = None
    hidden: tuple = (100, 100)
    episodes: int = 200
    seed: int = 0
    mode: str = "centralized"
    normalize_obs: bool = False
    check_every: int = 100

    def __post_init__(self):
        object.__setattr__(self, "hidden", tuple(int(h) for h in self.hidden))
        problems = []
        if not 0.0 <= self.gamma <= 1.0:
            problems.append("gamma must lie in [0, 1]")
        if self.policy_delay < 1:
            problems.append("policy_delay must be >= 1")
        if self.noise_clip <= 0:
            problems.append("noise_clip must be > 0")
        if self.actor_lr <= 0 or self.critic_lr <= 0:
            problems.append("learning rates must be > 0")
        if not 0 < self.tau <= 1:
            problems.append("tau must lie in (0, 1]")
        if self.batch_size < 1 or self.buffer_size < self.batch_size:
            problems.append("need 1 <= batch_size <= buffer_size")
        if self.episodes < 0:
            problems.append("episodes must be >= 0")
        if self.mode not in MODES:
            problems.append(f"mode must be one of {MODES}")
        if problems:
            raise ConfigurationError("; ".join(problems))

    @property
    def warmup_size(self) -> int:
        return 10 * self.batch_size if self.warmup is None else int(self.warmup)

    def exploration_std(self, episode: int) -> float:
        horizon = self.explore_decay_frac * self.episodes
        frac = 1.0 if horizon <= 0 else min(1.0, episode / horizon)
        return self.explore_std + (self.explore_final - self.explore_std) * frac

    def to_dict(self) -> dict:
        out = asdict(self)
        out["hidden"] = list(self.hidden)
        return out

    @classmethod
    def from_dict(cls, data: dict) -> "TrainConfig":
        known = {f.name for f in fields(cls)}
        unknown = set(data) - known
        if unknown:
            raise ConfigurationError(f"unknown training options: {sorted(unknown)}")
        return cls(**data)


def config_hash(config: TrainConfig, layout: AgentLayout) -> str:
    """Identity of everything that fixes network shapes and semantics."""
    payload = {
        "mode": config.mode,
        "hidden": list(config.hidden),
        "normalize_obs": config.normalize_obs,
        "layout": layout.signature(),
    }
    return hashlib.sha256(json.dumps(payload, sort_keys=True).encode()).hexdigest()[:16]


# --- replay buffer ----------------------------------------------------------

@dataclass(eq=False)
class Batch:
    s: np.ndarray
    a: np.ndarray
    r: np.ndarray
    r_local: np.ndarray
    s2: np.ndarray
    done: np.ndarray


class ReplayBuffer:
    """FIFO ring of global transitions."""

    def __init__(self, capacity, obs_dim, act_dim, n_agents):
        self.capacity = int(capacity)
        self.s = np.zeros((self.capacity, obs_dim))
        self.a = np.zeros((self.capacity, act_dim))
        self.r = np.zeros(self.capacity)
        self.r_local = np.zeros((self.capacity, n_agents))
        self.s2 = np.zeros((self.capacity, obs_dim))
        self.done = np.zeros(self.capacity)
        self.cursor = 0
        self.size = 0

    def __len__(self):
        return self.size

    def add(self, s, a, r, r_local, s2, done):
        if not np.isfinite(r):
            raise ValueError("reward must be finite")
        k = self.cursor
        self.s[k], self.a[k], self.r[k] = s, a, r
        self.r_local[k], self.s2[k], self.done[k] = r_local, s2, float(done)
        self.cursor = (k + 1) % self.capacity
        self.size = min(self.size + 1, self.capacity)

    def take(self, idx) -> Batch:
        return Batch(self.s[idx], self.a[idx], self.r[idx], self.r_local[idx],
                     self.s2[idx], self.done[idx])

    def sample(self, batch_size, rng) -> Batch:
        if self.size == 0:
            raise ValueError("cannot sample from an empty buffer")
        return self.take(rng.integers(0, self.size, size=batch_size))

    def state_dict(self):
        n = self.size
        # Store in age order so a restored buffer has its cursor at the end.
        order = (np.arange(n) + (self.cursor if n == self.capacity else 0)) % self.capacity
        return {"buffer.s": self.s[order], "buffer.a": self.a[order], "buffer.r": self.r[order],
                "buffer.r_local": self.r_local[order], "buffer.s2": self.s2[order],
                "buffer.done": self.done[order]}

    def load_state_dict(self, state):
        n = len(state["buffer.r"])
        if n > self.capacity:
            raise CheckpointError("stored buffer exceeds capacity")
        for name in ("s", "a", "r", "r_local", "s2", "done"):
            getattr(self, name)[:n] = state[f"buffer.{name}"]
        self.size = n
        self.cursor = n % self.capacity


# --- agents -----------------------------------------------------------------

class Agent:
    """Actor, twin critics, their targets and optimizer states for one cluster."""

    def __init__(self, index, obs_slice, act_slice, obs_dim, act_dim, critic_obs, critic_act,
                 hidden, rng):
        self.index = index
        self.obs_slice = obs_slice
        self.act_slice = act_slice
        self.critic_obs = np.asarray(critic_obs, dtype=int)
        self.critic_act = np.asarray(critic_act, dtype=int)
        # Columns of this agent's own action inside the critic input.
        own = np.arange(act_slice.start, act_slice.stop)
        pos = {int(c): k for k, c in enumerate(self.critic_act)}
        self.own_action_cols = len(self.critic_obs) + np.array([pos[c] for c in own], dtype=int)
        critic_in = len(self.critic_obs) + len(self.critic_act)
        hidden = list(hidden)
        self.actor = Mlp([obs_dim] + hidden + [act_dim], "tanh", rng)
        self.q1 = Mlp([critic_in] + hidden + [1], "identity", rng)
        self.q2 = Mlp([critic_in] + hidden + [1], "identity", rng)
        self.actor_target = self.actor.copy()
        self.q1_target = self.q1.copy()
        self.q2_target = self.q2.copy()
        self.actor_opt = AdamState(self.actor)
        self.q1_opt = AdamState(self.q1)
        self.q2_opt = AdamState(self.q2)

    @property
    def obs_dim(self):
        return self.actor.in_dim

    @property
    def act_dim(self):
        return self.actor.out_dim

    def critic_input(self, s, a):
        return np.concatenate([s[:, self.critic_obs], a[:, self.critic_act]], axis=1)

    _NETS = ("actor", "actor_target", "q1", "q2", "q1_target", "q2_target")
    _OPTS = ("actor_opt", "q1_opt", "q2_opt")

    def state_dict(self):
        out = {}
        prefix = f"agent{self.index}."
        for name in self._NETS:
            out.update(getattr(self, name).state_dict(prefix + name + "."))
        for name in self._OPTS:
            out.update(getattr(self, name).state_dict(prefix + name + "."))
        return out

    def load_state_dict(self, state):
        prefix = f"agent{self.index}."
        for name in self._NETS:
            getattr(self, name).load_state_dict(state, prefix + name + ".")
        for name in self._OPTS:
            getattr(self, name).load_state_dict(state, prefix + name + ".")


class AgentTeam:
    """All agents plus the fixed observation normalizer."""

    def __init__(self, layout: AgentLayout, config: TrainConfig, rng, obs_mean=None, obs_std=None):
        self.layout = layout
        self.config = config
        n_obs, n_act = layout.obs_dim, layout.act_dim
        self.obs_mean = np.zeros(n_obs) if obs_mean is None else np.asarray(obs_mean, dtype=float)
        self.obs_std = np.ones(n_obs) if obs_std is None else np.asarray(obs_std, dtype=float)
        self.agents = []
        for j, spec in enumerate(layout):
            o_sl, a_sl = layout.obs_slice(j), layout.act_slice(j)
            if config.mode == "centralized":
                c_obs, c_act = np.arange(n_obs), np.arange(n_act)
            else:
                c_obs, c_act = np.arange(o_sl.start, o_sl.stop), np.arange(a_sl.start, a_sl.stop)
            self.agents.append(Agent(j, o_sl, a_sl, spec.obs_dim, spec.act_dim, c_obs, c_act,
                                     config.hidden, rng))
        self.updates = 0

    def __len__(self):
        return len(self.agents)

    def __getitem__(self, j) -> Agent:
        return self.agents[j]

    def __iter__(self):
        return iter(self.agents)

    @property
    def hash(self) -> str:
        return config_hash(self.config, self.layout)

    def normalize(self, state):
        """Scale a global state; agent ``j`` only ever uses its own slice."""
        return (np.asarray(state, dtype=float) - self.obs_mean) / self.obs_std

    def normalize_local(self, j, obs):
        sl = self.agents[j].obs_slice
        return (np.asarray(obs, dtype=float) - self.obs_mean[sl]) / self.obs_std[sl]

    def state_dict(self):
        out = {"team.obs_mean": self.obs_mean, "team.obs_std": self.obs_std,
               "team.updates": np.array(self.updates)}
        for agent in self.agents:
            out.update(agent.state_dict())
        return out

    def load_state_dict(self, state):
        self.obs_mean = np.array(state["team.obs_mean"], dtype=float)
        self.obs_std = np.array(state["team.obs_std"], dtype=float)
        self.updates = int(state["team.updates"])
        for agent in self.agents:
            agent.load_state_dict(state)


def observation_stats(layout: AgentLayout, env: VoltVarEnv, profiles):
    """Per-feature mean and spread over the training profiles."""
    rows = []
    for profile in profiles:
        for t in range(profile.T):
            rows.append(np.concatenate([env.observation_at(profile, t, j) for j in range(len(layout))]))
    rows = np.array(rows)
    std = rows.std(axis=0)
    return rows.mean(axis=0), np.where(std > 1e-9, std, 1.0)


def select_action(agent: Agent, obs, explore=False, rng=None, std=0.1):
    """Actor output for a (normalized) local observation, optionally noised."""
    obs = np.asarray(obs, dtype=float)
    if obs.shape != (agent.obs_dim,):
        raise DimensionMismatch(f"agent {agent.index} expects observation dim {agent.obs_dim}, "
                                f"got shape {obs.shape}")
    a = agent.actor.forward(obs)
    if explore:
        a = np.clip(a + rng.normal(0.0, std, size=a.shape), -1.0, 1.0)
    return a


# --- TD3 updates ------------------------------------------------------------

@dataclass(eq=False)
class TargetInfo:
    """Intermediates kept for invariant checks."""

    y: list
    q1: list
    q2: list
    q_min: list
    perturbation: np.ndarray
    rewards: list


def smoothed_next_actions(team: AgentTeam, s2, config: TrainConfig, rng):
    """Target-actor actions on ``S'`` with clipped Gaussian smoothing.

    Returns ``(smoothed, clean, noise)`` where ``smoothed = clip(clean + noise)``.
    """
    n = s2.shape[0]
    clean = np.zeros((n, team.layout.act_dim))
    for agent in team:
        clean[:, agent.act_slice] = agent.actor_target.forward(s2[:, agent.obs_slice])
    noise = np.clip(rng.normal(0.0, config.target_noise, size=clean.shape),
                    -config.noise_clip, config.noise_clip)
    return np.clip(clean + noise, -1.0, 1.0), clean, noise


def compute_target(team: AgentTeam, batch: Batch, config: TrainConfig, rng) -> TargetInfo:
    a2, _, noise = smoothed_next_actions(team, batch.s2, config, rng)
    info = TargetInfo([], [], [], [], noise, [])
    keep = 1.0 - batch.done
    for j, agent in enumerate(team):
        x2 = agent.critic_input(batch.s2, a2)
        q1 = agent.q1_target.forward(x2)[:, 0]
        q2 = agent.q2_target.forward(x2)[:, 0]
        q_min = np.minimum(q1, q2)
        r = batch.r if config.mode == "centralized" else batch.r_local[:, j]
        info.y.append(r + config.gamma * keep * q_min)
        info.q1.append(q1)
        info.q2.append(q2)
        info.q_min.append(q_min)
        info.rewards.append(r)
    return info


def critic_loss_and_grads(critic: Mlp, x, y):
    pred = critic.forward(x)[:, 0]
    err = pred - y
    loss = float(np.mean(err * err))
    grads, _ = critic.backward(x, (2.0 / len(y)) * err[:, None])
    return loss, grads


def critic_update(agent: Agent, batch: Batch, y, config: TrainConfig):
    """One Adam step of each critic on mean squared TD error; pre-update losses."""
    x = agent.critic_input(batch.s, batch.a)
    losses = []
    for critic, opt in ((agent.q1, agent.q1_opt), (agent.q2, agent.q2_opt)):
        loss, grads = critic_loss_and_grads(critic, x, y)
        adam_step(critic, grads, opt, config.critic_lr)
        losses.append(loss)
    return tuple(losses)


def actor_objective_and_grads(agent: Agent, batch: Batch):
    """Mean Q1 with this agent's batch action replaced by its actor output."""
    obs = batch.s[:, agent.obs_slice]
    a_own = agent.actor.forward(obs)
    a = batch.a.copy()
    a[:, agent.act_slice] = a_own
    x = agent.critic_input(batch.s, a)
    n = x.shape[0]
    q = agent.q1.forward(x)[:, 0]
    _, dq_dx = agent.q1.backward(x, np.full((n, 1), 1.0 / n))
    grads, _ = agent.actor.backward(obs, dq_dx[:, agent.own_action_cols])
    return float(np.mean(q)), grads


def actor_update(agent: Agent, batch: Batch, config: TrainConfig) -> float:
    objective, grads = actor_objective_and_grads(agent, batch)
    adam_step(agent.actor, grads, agent.actor_opt, config.actor_lr, maximize=True)
    return objective


def update_targets(agent: Agent, tau: float):
    soft_update(agent.actor_target, agent.actor, tau)
    soft_update(agent.q1_target, agent.q1, tau)
    soft_update(agent.q2_target, agent.q2, tau)


# --- invariant monitor ------------------------------------------------------

@dataclass
class InvariantReport:
    checks: int = 0
    violations: dict = field(default_factory=lambda: {
        "twin_min": 0, "smoothing_clip": 0, "soft_update": 0, "zero_discount": 0})

    @property
    def total_violations(self) -> int:
        return sum(self.violations.values())

    def record(self, kind, ok):
        if not ok:
            self.violations[kind] += 1


def check_target_invariants(report: InvariantReport, info: TargetInfo, config: TrainConfig):
    report.checks += 1
    for q1, q2, q_min, y, r in zip(info.q1, info.q2, info.q_min, info.y, info.rewards):
        report.record("twin_min", bool(np.all(q_min <= q1) and np.all(q_min <= q2)))
        if config.gamma == 0.0:
            report.record("zero_discount", bool(np.array_equal(y, r)))
    report.record("smoothing_clip", bool(np.all(np.abs(info.perturbation) <= config.noise_clip)))


def check_soft_update(report: InvariantReport, before, after, online, tau, atol=1e-12):
    ok = all(np.max(np.abs(a - (tau * o + (1.0 - tau) * b)), initial=0.0) <= atol
             for b, a, o in zip(before, after, online))
    report.record("soft_update", ok)


def _target_params(agent):
    return [p for net in (agent.actor_target, agent.q1_target, agent.q2_target) for p in net.params]


def _online_params(agent):
    return [p for net in (agent.actor, agent.q1, agent.q2) for p in net.params]


def gradient_step(team: AgentTeam, buffer: ReplayBuffer, config: TrainConfig, rng,
                  report: InvariantReport | None = None):
    """Sample, compute targets, update critics and (every ``d`` steps) actors."""
    batch = buffer.sample(config.batch_size, rng)
    info = compute_target(team, batch, config, rng)
    team.updates += 1
    monitor = report is not None and team.updates % config.check_every == 0
    if monitor:
        check_target_invariants(report, info, config)
    losses = []
    for j, agent in enumerate(team):
        losses.extend(critic_update(agent, batch, info.y[j], config))
    if team.updates % config.policy_delay == 0:
        # Actor updates after the critic step; soft updates after all actors.
        for agent in team:
            actor_update(agent, batch, config)
        for agent in team:
            before = [p.copy() for p in _target_params(agent)] if monitor else None
            update_targets(agent, config.tau)
            if monitor:
                check_soft_update(report, before, _target_params(agent), _online_params(agent),
                                  config.tau)
    return float(np.mean(losses))


# --- training ---------------------------------------------------------------

@dataclass
class TrainingState:
    """Everything needed to resume a run bit for bit."""

    team: AgentTeam
    buffer: ReplayBuffer
    rng: np.random.Generator
    episode: int = 0
    curve: list = field(default_factory=list)
    report: InvariantReport = field(default_factory=InvariantReport)


def init_training(net: Network, layout: AgentLayout, profiles, config: TrainConfig,
                  env: VoltVarEnv | None = None) -> TrainingState:
    if not profiles:
        raise ConfigurationError("need at least one training profile")
    env = VoltVarEnv(net, layout) if env is None else env
    mean, std = observation_stats(layout, env, profiles) if config.normalize_obs else (None, None)
    team = AgentTeam(layout, config, substream(config.seed, "init"), mean, std)
    buffer = ReplayBuffer(config.buffer_size, layout.obs_dim, layout.act_dim, len(layout))
    # One stream drives day choice, exploration noise, minibatches and smoothing noise.
    return TrainingState(team, buffer, substream(config.seed, "exploration"))


def run_episode(state: TrainingState, env: VoltVarEnv, profile: ScenarioProfile,
                config: TrainConfig, timing=False):
    team, rng = state.team, state.rng
    std = config.exploration_std(state.episode)
    start = time.perf_counter()
    obs = env.reset(profile)
    total, losses = 0.0, []
    while True:
        s = team.normalize(np.concatenate(obs))
        acts = [select_action(agent, s[agent.obs_slice], True, rng, std) for agent in team]
        out = env.step(acts)
        s2 = team.normalize(np.concatenate(out.observations))
        state.buffer.add(s, np.concatenate(acts), out.reward, out.local_rewards, s2, out.done)
        total += out.reward
        if len(state.buffer) >= config.warmup_size:
            losses.append(gradient_step(team, state.buffer, config, rng, state.report))
        obs = out.observations
        if out.done:
            break
    wall = (time.perf_counter() - start) * 1000.0 if timing else float("nan")
    mean_loss = float(np.mean(losses)) if losses else float("nan")
    state.curve.append((state.episode, total, mean_loss, wall))
    state.episode += 1


def train(net: Network, layout: AgentLayout, profiles, config: TrainConfig,
          state: TrainingState | None = None, checkpoint_path=None, checkpoint_every=100,
          timing=False, progress=None) -> TrainingState:
    """Run episodes until ``config.episodes`` have completed.

    Passing a restored ``state`` resumes where it stopped.  With a
    ``checkpoint_path`` the full training state is written every
    ``checkpoint_every`` episodes, at the end, and on interruption.
    """
    env = VoltVarEnv(net, layout)
    if state is None:
        state = init_training(net, layout, profiles, config, env)
    try:
        while state.episode < config.episodes:
            profile = profiles[int(state.rng.integers(len(profiles)))]
            run_episode(state, env, profile, config, timing)
            if progress is not None:
                progress(state)
            if checkpoint_path and state.episode % checkpoint_every == 0:
                save_training_state(state, checkpoint_path)
    except KeyboardInterrupt:
        if checkpoint_path:
            save_training_state(state, checkpoint_path)
        raise
    if checkpoint_path:
        save_training_state(state, checkpoint_path)
    return state


def curve_csv(curve, header_lines=()) -> str:
    lines = [f"# {line}" for line in header_lines]
    lines.append(",".join(CURVE_HEADER))
    for episode, reward, loss, wall in curve:
        loss_s = "" if np.isnan(loss) else f"{loss:.10g}"
        wall_s = "" if np.isnan(wall) else f"{wall:.3f}"
        lines.append(f"{episode},{reward:.10g},{loss_s},{wall_s}")
    return "\n".join(lines) + "\n"


# --- execution --------------------------------------------------------------

@dataclass(eq=False)
class Rollout:
    actions: np.ndarray
    rewards: np.ndarray
    voltages: np.ndarray
    solutions: list
    failures: int
    step_time: float


def rollout_greedy(team: AgentTeam, env: VoltVarEnv, profile: ScenarioProfile) -> Rollout:
    """Noise-free execution: agent ``j`` reads only its own observation."""
    obs = env.reset(profile)
    actions, rewards, volts, sols = [], [], [], []
    failures = 0
    elapsed = 0.0
    while True:
        start = time.perf_counter()
        acts = [select_action(agent, team.normalize_local(j, obs[j]))
                for j, agent in enumerate(team)]
        elapsed += time.perf_counter() - start
        out = env.step(acts)
        actions.append(np.concatenate(acts))
        rewards.append(out.reward)
        sols.append(out.solution)
        if out.failed:
            failures += 1
        else:
            volts.append(out.solution.v)
        obs = out.observations
        if out.done:
            break
    return Rollout(np.array(actions), np.array(rewards), np.array(volts), sols, failures,
                   elapsed / max(len(actions), 1))


# --- checkpoints ------------------------------------------------------------
#
# A checkpoint is a zip archive holding ``meta.json`` (format version, config,
# layout signature, config hash, SHA-256 of the array payload) and
# ``arrays.npz`` (named parameter, optimizer and optionally buffer arrays).

def _npz_bytes(arrays: dict) -> bytes:
    buf = io.BytesIO()
    np.savez(buf, **{k: arrays[k] for k in sorted(arrays)})
    return buf.getvalue()


def _write_archive(path, meta: dict, arrays: dict):
    payload = _npz_bytes(arrays)
    meta = dict(meta, version=CHECKPOINT_VERSION, sha256=hashlib.sha256(payload).hexdigest())
    path = os.fspath(path)
    folder = os.path.dirname(os.path.abspath(path))
    os.makedirs(folder, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=folder, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh, zipfile.ZipFile(fh, "w", zipfile.ZIP_DEFLATED) as zf:
            for name, data in (("meta.json", json.dumps(meta, sort_keys=True).encode()),
                               ("arrays.npz", payload)):
                info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
                info.compress_type = zipfile.ZIP_DEFLATED
                info.external_attr = 0o644 << 16
                zf.writestr(info, data)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def _read_archive(path):
    path = os.fspath(path)
    if not os.path.exists(path):
        raise CheckpointError(f"checkpoint not found: {path}")
    try:
        with zipfile.ZipFile(path) as zf:
            meta = json.loads(zf.read("meta.json"))
            payload = zf.read("arrays.npz")
    except (zipfile.BadZipFile, KeyError, json.JSONDecodeError, OSError, EOFError) as exc:
        raise CheckpointError(f"unreadable checkpoint {path}: {exc}") from exc
    if meta.get("version") != CHECKPOINT_VERSION:
        raise CheckpointError(f"unsupported checkpoint version {meta.get('version')}")
    if hashlib.sha256(payload).hexdigest() != meta.get("sha256"):
        raise CheckpointError(f"checkpoint payload checksum mismatch: {path}")
    with np.load(io.BytesIO(payload)) as data:
        arrays = {k: data[k] for k in data.files}
    return meta, arrays


def _team_meta(team: AgentTeam) -> dict:
    return {"config": team.config.to_dict(), "layout": team.layout.signature(),
            "config_hash": team.hash}


def save_checkpoint(team: AgentTeam, path):
    _write_archive(path, dict(_team_meta(team), kind="agents"), team.state_dict())


def _restore_team(meta, arrays, layout, expected_hash):
    config = TrainConfig.from_dict(meta["config"])
    if layout is None:
        layout = AgentLayout.from_signature(meta["layout"])
    actual = config_hash(config, layout)
    if meta.get("config_hash") != actual or (expected_hash and expected_hash != actual):
        raise CheckpointError("checkpoint config hash does not match the partition/config in use")
    team = AgentTeam(layout, config, np.random.default_rng(0))
    try:
        team.load_state_dict(arrays)
    except (KeyError, DimensionMismatch) as exc:
        raise CheckpointError(f"checkpoint arrays do not match the agent layout: {exc}") from exc
    return team


def load_checkpoint(path, layout: AgentLayout | None = None, expected_hash=None) -> AgentTeam:
    """Agents from either checkpoint kind; ``layout`` defaults to the stored one."""
    meta, arrays = _read_archive(path)
    return _restore_team(meta, arrays, layout, expected_hash)


def save_training_state(state: TrainingState, path):
    arrays = state.team.state_dict()
    arrays.update(state.buffer.state_dict())
    curve = np.array(state.curve, dtype=float).reshape(-1, 4)
    arrays["train.curve"] = curve
    meta = dict(_team_meta(state.team), kind="training", episode=state.episode,
                rng=state.rng.bit_generator.state,
                report={"checks": state.report.checks, "violations": state.report.violations})
    _write_archive(path, meta, arrays)


def load_training_state(path, layout: AgentLayout | None = None, episodes=None) -> TrainingState:
    """Restore a run; ``episodes`` may extend the original horizon."""
    meta, arrays = _read_archive(path)
    if meta.get("kind") != "training":
        raise CheckpointError("checkpoint holds agents only, not a resumable training state")
    if episodes is not None:
        meta["config"] = dict(meta["config"], episodes=int(episodes))
    team = _restore_team(meta, arrays, layout, None)
    layout = team.layout
    buffer = ReplayBuffer(team.config.buffer_size, layout.obs_dim, layout.act_dim, len(layout))
    buffer.load_state_dict(arrays)
    rng = np.random.default_rng()
    rng.bit_generator.state = meta["rng"]
    curve = [(int(e), float(r), float(loss), float(w)) for e, r, loss, w in arrays["train.curve"]]
    report = InvariantReport(meta["report"]["checks"], dict(meta["report"]["violations"]))
    return TrainingState(team, buffer, rng, int(meta["episode"]), curve, report)


# --- estimator wrappers -----------------------------------------------------

class MATD3Controller(BaseEstimator):
    """Fit on training profiles, predict greedy per-step actions."""

    _mode = "centralized"

    def __init__(self, net=None, layout=None, episodes=200, seed=0, batch_size=32, gamma=0.0,
                 tau=0.001, policy_delay=2, actor_lr=1e-3, critic_lr=2e-3, hidden=(100, 100)):
        self.net = net
        self.layout = layout
        self.episodes = episodes
        self.seed = seed
        self.batch_size = batch_size
        self.gamma = gamma
        self.tau = tau
        self.policy_delay = policy_delay
        self.actor_lr = actor_lr
        self.critic_lr = critic_lr
        self.hidden = hidden

    def _config(self):
        return TrainConfig(batch_size=self.batch_size, gamma=self.gamma, tau=self.tau,
                           policy_delay=self.policy_delay, actor_lr=self.actor_lr,
                           critic_lr=self.critic_lr, hidden=self.hidden,
                           episodes=self.episodes, seed=self.seed, mode=self._mode)

    def fit(self, profiles, y=None):
        if self.net is None or self.layout is None:
            raise ConfigurationError("net and layout must be set before fit")
        state = train(self.net, self.layout, list(profiles), self._config())
        self.team_ = state.team
        self.curve_ = state.curve
        self.invariants_ = state.report
        return self

    def predict(self, profile: ScenarioProfile) -> np.ndarray:
        if not hasattr(self, "team_"):
            raise ConfigurationError("controller is not fitted")
        return rollout_greedy(self.team_, VoltVarEnv(self.net, self.layout), profile).actions

    def rollout(self, profile: ScenarioProfile) -> Rollout:
        return rollout_greedy(self.team_, VoltVarEnv(self.net, self.layout), profile)


class IndependentTD3Controller(MATD3Controller):
    """Same learner with local critics and cluster-local rewards."""

    _mode = "independent"

