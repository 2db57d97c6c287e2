"""Baselines, Table-V style metrics, the ERR score and the transient stress test."""

from __future__ import annotations

import csv
import io
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace

import numpy as np
from sklearn.base import BaseEstimator

from .env import (AgentLayout, ScenarioProfile, VoltVarEnv, device_setpoints,
                  generate_profiles, injections_from_setpoints)
from .exceptions import DegenerateDenominator, NonConvergence, SingularJacobian
from .netmodel import Network, build_admittance
from .matd3 import AgentTeam, TrainConfig, rollout_greedy, train
from .powerflow import compute_vq_sensitivity, solve_power_flow

RESULT_HEADER = ["method", "average_pct", "max_rise_pct", "max_drop_pct", "per_step_time_s"]


@dataclass(frozen=True)
class DeviationMetrics:
    """Percent deviations from ``v0`` over all buses and steps."""

    average: float
    max_rise: float
    max_drop: float
    per_step_time: float = float("nan")
    failures: int = 0
    steps: int = 0

    @classmethod
    def from_voltages(cls, voltages, v0=1.0, per_step_time=float("nan"), failures=0):
        v = np.atleast_2d(np.asarray(voltages, dtype=float))
        d = v - v0
        return cls(
            average=100.0 * float(np.mean(np.abs(d))),
            max_rise=100.0 * float(max(d.max(), 0.0)),
            max_drop=100.0 * float(max((-d).max(), 0.0)),
            per_step_time=per_step_time,
            failures=failures,
            steps=v.shape[0],
        )


def compute_err(pro: DeviationMetrics, cen: DeviationMetrics, ori: DeviationMetrics) -> float:
    """Optimality gap of ``pro`` relative to the centralized benchmark, percent."""
    denom = abs(cen.average - ori.average)
    if denom == 0:
        raise DegenerateDenominator("centralized and original averages coincide")
    return abs(pro.average - cen.average) / denom * 100.0


def _solve(net, y, profile, t, svc_a, pv_a, v0=1.0, warm=None):
    pv_p = profile.pv_avail[t]
    q_svc, q_pv = device_setpoints(net, pv_p, svc_a, pv_a)
    inj = injections_from_setpoints(net, profile.load_p[t], profile.load_q[t], pv_p, q_svc, q_pv)
    if warm is None:
        return solve_power_flow(net, y, inj, v_slack=v0), q_svc, q_pv
    return solve_power_flow(net, y, inj, v0=warm.v, theta0=warm.theta, v_slack=v0), q_svc, q_pv


def eval_no_control(net: Network, profiles, v0=1.0, y=None):
    """Every device at zero reactive output; returns ``(metrics, voltages)``."""
    y = build_admittance(net) if y is None else y
    volts = []
    failures = 0
    zeros_svc = np.zeros(len(net.svcs))
    zeros_pv = np.zeros(len(net.pvs))
    for profile in profiles:
        for t in range(profile.T):
            try:
                sol, _, _ = _solve(net, y, profile, t, zeros_svc, zeros_pv, v0)
            except (NonConvergence, SingularJacobian):
                failures += 1
                continue
            volts.append(sol.v)
    return DeviationMetrics.from_voltages(volts, v0, failures=failures), np.array(volts)


# --- centralized benchmark --------------------------------------------------

@dataclass(frozen=True, eq=False)
class OracleSolution:
    q_svc: np.ndarray
    q_pv: np.ndarray
    svc_actions: np.ndarray
    pv_actions: np.ndarray
    deviation: float
    v: np.ndarray
    iterations: int


def _action_scale(net, pv_p):
    q_min = np.array([s.q_min for s in net.svcs])
    q_max = np.array([s.q_max for s in net.svcs])
    s_rated = np.array([p.s_apparent for p in net.pvs])
    headroom = np.sqrt(np.maximum(0.0, s_rated ** 2 - pv_p ** 2))
    return np.concatenate([(q_max - q_min) / 2.0, headroom]) / net.s_base


def centralized_oracle(net: Network, profile: ScenarioProfile, t: int, y=None, v0=1.0,
                       starts=None, max_iter=200, tol=1e-9,
                       smoothing=(1e-3, 1e-4, 1e-5)) -> OracleSolution:
    """Minimize summed voltage deviation at step ``t`` over all device setpoints.

    Projected gradient descent in normalized setpoint space.  The gradient is
    the V-Q sensitivity at the current iterate (re-linearized every
    iteration) weighted by smoothed deviation signs; every candidate is checked
    with a full power flow and the step length backtracks on failure.
    Projection onto the box is exact in normalized coordinates, which is the
    SVC range and the PV apparent-power disc at fixed active power.
    """
    y = build_admittance(net) if y is None else y
    n_svc, n_pv = len(net.svcs), len(net.pvs)
    n_dev = n_svc + n_pv
    dev_rows = np.concatenate([net.svc_bus_index, net.pv_bus_index]).astype(int)
    pq = net.pq_indices
    pos_in_pq = {int(r): k for k, r in enumerate(pq)}
    dev_cols = np.array([pos_in_pq[r] for r in dev_rows], dtype=int)
    scale = _action_scale(net, profile.pv_avail[t])
    if starts is None:
        starts = [np.zeros(n_dev), np.full(n_dev, 0.5), np.full(n_dev, -0.5)]

    def evaluate(a, warm=None):
        sol, _, _ = _solve(net, y, profile, t, a[:n_svc], a[n_svc:], v0, warm)
        return float(np.sum(np.abs(sol.v - v0))), sol

    best = None
    total_iter = 0
    for a0 in starts:
        a = np.clip(np.asarray(a0, dtype=float), -1.0, 1.0)
        try:
            f, sol = evaluate(a)
        except (NonConvergence, SingularJacobian):
            continue
        # The objective has kinks wherever a bus crosses v0; a smoothed sign
        # weight avoids zig-zagging there, and the width is narrowed in stages.
        for width in smoothing:
            step = 0.5
            for _ in range(max_iter):
                total_iter += 1
                sens = compute_vq_sensitivity(net, y, sol).s
                weight = np.clip((sol.v[pq] - v0) / width, -1.0, 1.0) if width > 0 \
                    else np.sign(sol.v[pq] - v0)
                grad = (weight @ sens[:, dev_cols]) * scale
                # Coordinates pinned at a bound with an outward gradient cannot move.
                free = ~(((a >= 1.0) & (grad < 0)) | ((a <= -1.0) & (grad > 0)))
                grad = np.where(free, grad, 0.0)
                gmax = np.max(np.abs(grad)) if n_dev else 0.0
                if gmax == 0:
                    break
                direction = grad / gmax
                gain = 0.0
                while step >= 1e-7:
                    cand = np.clip(a - step * direction, -1.0, 1.0)
                    try:
                        f_c, sol_c = evaluate(cand, sol)
                    except (NonConvergence, SingularJacobian):
                        step *= 0.5
                        continue
                    if f_c < f:
                        gain = f - f_c
                        a, f, sol = cand, f_c, sol_c
                        step = min(2.0 * step, 1.0)
                        break
                    step *= 0.5
                if gain < tol:
                    break
        if best is None or f < best[0] - 1e-15:
            best = (f, a, sol)
    if best is None:
        raise NonConvergence("oracle found no feasible starting point")
    f, a, sol = best
    q_svc, q_pv = device_setpoints(net, profile.pv_avail[t], a[:n_svc], a[n_svc:])
    return OracleSolution(q_svc, q_pv, a[:n_svc].copy(), a[n_svc:].copy(), f, sol.v.copy(),
                          total_iter)


def grid_search_oracle(net: Network, profile: ScenarioProfile, t: int, points=21, y=None, v0=1.0,
                       zoom=0):
    """Exhaustive lattice search over normalized setpoints (tiny cases only).

    Each ``zoom`` level repeats the search on a ``points``-wide lattice
    spanning one coarse cell either side of the current best point.
    """
    y = build_admittance(net) if y is None else y
    n_svc, n_pv = len(net.svcs), len(net.pvs)
    lo, hi = np.full(n_svc + n_pv, -1.0), np.full(n_svc + n_pv, 1.0)
    best_f, best_a = np.inf, None
    for _ in range(zoom + 1):
        axes = [np.linspace(a, b, points) for a, b in zip(lo, hi)]
        grids = np.meshgrid(*axes, indexing="ij")
        for a in np.stack([g.ravel() for g in grids], axis=1):
            sol, _, _ = _solve(net, y, profile, t, a[:n_svc], a[n_svc:], v0)
            f = float(np.sum(np.abs(sol.v - v0)))
            if f < best_f:
                best_f, best_a = f, a
        cell = (hi - lo) / (points - 1)
        lo, hi = np.maximum(best_a - cell, -1.0), np.minimum(best_a + cell, 1.0)
    return best_f, best_a


class CentralizedOracle(BaseEstimator):
    """Per-step benchmark with full network knowledge."""

    def __init__(self, net=None, max_iter=200, tol=1e-9, v0=1.0):
        self.net = net
        self.max_iter = max_iter
        self.tol = tol
        self.v0 = v0

    def fit(self, profiles=None, y=None):
        self.y_ = build_admittance(self.net)
        return self

    def predict(self, profile: ScenarioProfile) -> list[OracleSolution]:
        y = getattr(self, "y_", None) or build_admittance(self.net)
        return [centralized_oracle(self.net, profile, t, y=y, v0=self.v0,
                                   max_iter=self.max_iter, tol=self.tol)
                for t in range(profile.T)]


def eval_oracle(net: Network, profiles, v0=1.0, y=None, timing=False, jobs=1):
    """Oracle over every step; ``jobs > 1`` solves steps on a thread pool.

    Results are gathered in step order, so output does not depend on ``jobs``.
    """
    y = build_admittance(net) if y is None else y
    tasks = [(profile, t) for profile in profiles for t in range(profile.T)]

    def solve(task):
        start = time.perf_counter()
        sol = centralized_oracle(net, task[0], task[1], y=y, v0=v0)
        return sol, time.perf_counter() - start

    if jobs > 1:
        with ThreadPoolExecutor(max_workers=jobs) as pool:
            results = list(pool.map(solve, tasks))
    else:
        results = [solve(task) for task in tasks]
    solutions = [r[0] for r in results]
    volts = [sol.v for sol in solutions]
    per_step = float(np.mean([r[1] for r in results])) if timing and results else float("nan")
    return DeviationMetrics.from_voltages(volts, v0, per_step), np.array(volts), solutions


# --- learned controllers ----------------------------------------------------

def train_independent_td3(net: Network, layout: AgentLayout, profiles, config: TrainConfig, **kwargs):
    """Same learner as MATD3 with local critics and cluster-local rewards."""
    return train(net, layout, profiles, replace(config, mode="independent"), **kwargs)


def eval_agents(team: AgentTeam, net: Network, layout: AgentLayout, profiles, v0=1.0, timing=False):
    """Greedy rollouts over ``profiles``; returns ``(metrics, voltages)``."""
    env = VoltVarEnv(net, layout, v0=v0)
    volts, times, failures = [], [], 0
    for profile in profiles:
        out = rollout_greedy(team, env, profile)
        volts.extend(out.voltages)
        times.append(out.step_time)
        failures += out.failures
    per_step = float(np.mean(times)) if timing else float("nan")
    return (DeviationMetrics.from_voltages(volts, v0, per_step, failures), np.array(volts))


# --- transient stress test --------------------------------------------------

STRESS_HEADER = ["t_s", "method", "v_pu"]
IEEE33_MONITORED_BUS = 18


@dataclass(eq=False)
class StressResult:
    profile: ScenarioProfile
    monitored_bus: object
    row: int
    t_s: np.ndarray
    voltages: dict          # method -> (T, n_bus)

    def trace(self, method) -> np.ndarray:
        return self.voltages[method][:, self.row]

    def variance(self, method) -> float:
        return float(np.var(self.trace(method)))

    def to_csv(self, header_lines=()) -> str:
        buf = io.StringIO()
        for line in header_lines:
            buf.write(f"# {line}\n")
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(STRESS_HEADER)
        for method in self.voltages:
            for t, v in zip(self.t_s, self.trace(method)):
                writer.writerow([f"{t:g}", method, f"{v:.10f}"])
        return buf.getvalue()


def frozen_actions(net: Network, profile: ScenarioProfile, t: int, q_svc, q_pv):
    """Normalized actions that reproduce fixed MVar setpoints at step ``t``.

    PV setpoints are clipped to the inverter disc at the current output.
    """
    q_min = np.array([s.q_min for s in net.svcs])
    q_max = np.array([s.q_max for s in net.svcs])
    svc_a = 2.0 * (np.asarray(q_svc) - q_min) / np.where(q_max > q_min, q_max - q_min, 1.0) - 1.0
    s_rated = np.array([p.s_apparent for p in net.pvs])
    headroom = np.sqrt(np.maximum(0.0, s_rated ** 2 - profile.pv_avail[t] ** 2))
    pv_a = np.divide(np.asarray(q_pv), headroom, out=np.zeros(len(net.pvs)), where=headroom > 0)
    return np.clip(svc_a, -1.0, 1.0), np.clip(pv_a, -1.0, 1.0)


def default_monitored_bus(net: Network, no_control_v: np.ndarray):
    ids = list(net.bus_ids)
    if net.name == "ieee33" and IEEE33_MONITORED_BUS in ids:
        return IEEE33_MONITORED_BUS
    return ids[int(np.argmax(no_control_v.max(axis=0)))]


def stress_test_transient(net: Network, layout: AgentLayout, teams: dict, seed=0, profile=None,
                          monitored_bus=None, v0=1.0) -> StressResult:
    """Minute-long PV ramp at one-second resolution.

    ``teams`` maps method names (e.g. ``"independent_td3"``, ``"matd3"``) to
    trained :class:`AgentTeam` objects.  The frozen-setpoint method holds the
    oracle's MVar setpoints from the first second for the whole minute.
    """
    if profile is None:
        profile = generate_profiles(net, "cloud_transient", 1, seed=seed)[0]
    y = build_admittance(net)
    T = profile.T
    zeros_svc, zeros_pv = np.zeros(len(net.svcs)), np.zeros(len(net.pvs))
    out = {"original": np.array([_solve(net, y, profile, t, zeros_svc, zeros_pv, v0)[0].v
                                 for t in range(T)])}
    oracle = [centralized_oracle(net, profile, t, y=y, v0=v0) for t in range(T)]
    first = oracle[0]
    frozen = []
    for t in range(T):
        svc_a, pv_a = frozen_actions(net, profile, t, first.q_svc, first.q_pv)
        frozen.append(_solve(net, y, profile, t, svc_a, pv_a, v0)[0].v)
    out["frozen_setpoint"] = np.array(frozen)
    env = VoltVarEnv(net, layout, v0=v0)
    for name, team in teams.items():
        roll = rollout_greedy(team, env, profile)
        if roll.failures:
            raise NonConvergence(f"{name} rollout failed on {roll.failures} transient steps")
        out[name] = roll.voltages
    out["oracle"] = np.array([o.v for o in oracle])
    bus = default_monitored_bus(net, out["original"]) if monitored_bus is None else monitored_bus
    return StressResult(profile, bus, net.index_of(bus), np.arange(1, T + 1) * profile.dt, out)


def results_csv(rows, err=None, header_lines=()) -> str:
    """``rows``: list of ``(method, DeviationMetrics)``."""
    buf = io.StringIO()
    for line in header_lines:
        buf.write(f"# {line}\n")
    writer = csv.writer(buf, lineterminator="\n")
    header = RESULT_HEADER + (["err_pct"] if err is not None else [])
    writer.writerow(header)
    for method, m in rows:
        timing = "" if np.isnan(m.per_step_time) else f"{m.per_step_time:.6g}"
        row = [method, f"{m.average:.6f}", f"{m.max_rise:.6f}", f"{m.max_drop:.6f}", timing]
        if err is not None:
            value = err.get(method)
            row.append("" if value is None else f"{value:.6f}")
        writer.writerow(row)
    return buf.getvalue()
