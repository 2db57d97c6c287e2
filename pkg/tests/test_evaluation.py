import numpy as np
import pytest

from gridvolt.env import AgentLayout, ScenarioProfile, VoltVarEnv, generate_profiles
from gridvolt.evaluation import (CentralizedOracle, DeviationMetrics, StressResult,
                                 centralized_oracle, compute_err, default_monitored_bus,
                                 eval_agents, eval_no_control, eval_oracle, frozen_actions,
                                 grid_search_oracle, results_csv, stress_test_transient,
                                 train_independent_td3)
from gridvolt.exceptions import DegenerateDenominator
from gridvolt.matd3 import AgentTeam, TrainConfig, rollout_greedy
from gridvolt.netmodel import build_admittance

SMALL = dict(hidden=(16, 16), batch_size=8)


def metrics(avg):
    return DeviationMetrics(avg, avg, avg)


@pytest.fixture(scope="module")
def toy_layout(toy6):
    return AgentLayout.from_clusters(toy6, [[2, 3, 4], [5, 6]])


@pytest.fixture(scope="module")
def toy_profiles(toy6):
    return generate_profiles(toy6, "daily", 3, seed=5)


def zero_profile(net, T=3):
    return ScenarioProfile(np.zeros((T, net.n_bus)), np.zeros((T, net.n_bus)),
                           np.zeros((T, len(net.pvs))))


def test_err_examples():
    assert compute_err(metrics(0.5), metrics(0.5), metrics(2.0)) == 0.0
    assert compute_err(metrics(2.0), metrics(0.5), metrics(2.0)) == 100.0
    assert compute_err(metrics(0.8), metrics(0.5), metrics(2.0)) == pytest.approx(20.0)
    with pytest.raises(DegenerateDenominator):
        compute_err(metrics(1.0), metrics(0.5), metrics(0.5))


def test_metric_definitions():
    v = np.array([[1.0, 1.02, 0.97], [1.0, 1.01, 0.99]])
    m = DeviationMetrics.from_voltages(v)
    assert m.average == pytest.approx(100 * 0.07 / 6)
    assert m.max_rise == pytest.approx(2.0)
    assert m.max_drop == pytest.approx(3.0)
    assert m.average <= max(m.max_rise, m.max_drop)
    flat = DeviationMetrics.from_voltages(np.full((2, 3), 0.98))
    assert flat.max_rise == 0.0 and flat.max_drop == pytest.approx(2.0)


def test_no_control_zero_load(ieee33):
    m, volts = eval_no_control(ieee33, [zero_profile(ieee33)])
    assert (m.average, m.max_rise, m.max_drop, m.failures) == (0.0, 0.0, 0.0, 0)
    assert volts.shape == (3, ieee33.n_bus)


def test_no_control_recomputed(toy6, toy_profiles):
    m, volts = eval_no_control(toy6, toy_profiles)
    again = DeviationMetrics.from_voltages(volts)
    assert (again.average, again.max_rise, again.max_drop) == (m.average, m.max_rise, m.max_drop)
    assert m.steps == 3 * 24


def test_oracle_no_load_is_zero(toy6):
    sol = centralized_oracle(toy6, zero_profile(toy6), 0)
    assert sol.deviation == 0.0
    assert np.all(sol.q_svc == 0) and np.all(sol.q_pv == 0)


def test_oracle_feasible_and_not_worse(toy6, toy_profiles):
    y = build_admittance(toy6)
    _, base = eval_no_control(toy6, toy_profiles[:1])
    q_min = np.array([s.q_min for s in toy6.svcs])
    q_max = np.array([s.q_max for s in toy6.svcs])
    s_rated = np.array([p.s_apparent for p in toy6.pvs])
    for t in range(24):
        sol = centralized_oracle(toy6, toy_profiles[0], t, y=y)
        assert sol.deviation <= np.sum(np.abs(base[t] - 1.0)) + 1e-12
        assert np.all(sol.q_svc >= q_min) and np.all(sol.q_svc <= q_max)
        p = toy_profiles[0].pv_avail[t]
        assert np.all(p ** 2 + sol.q_pv ** 2 <= s_rated ** 2 + 1e-12)


def test_oracle_matches_grid_on_toy(toy6, toy_profiles):
    y = build_admittance(toy6)
    for t in (8, 12, 15):
        sol = centralized_oracle(toy6, toy_profiles[1], t, y=y)
        coarse, _ = grid_search_oracle(toy6, toy_profiles[1], t, y=y)
        fine, _ = grid_search_oracle(toy6, toy_profiles[1], t, y=y, zoom=1)
        assert sol.deviation <= coarse + 1e-3
        assert abs(sol.deviation - fine) <= 1e-3


def test_centralized_oracle_estimator(toy6, toy_profiles):
    est = CentralizedOracle(net=toy6).fit()
    sols = est.predict(toy_profiles[0])
    assert len(sols) == 24
    m, _, _ = eval_oracle(toy6, toy_profiles[:1])
    assert m.average == pytest.approx(100 * np.mean([np.abs(s.v - 1).mean() for s in sols]))


def test_eval_oracle_jobs_independent(toy6, toy_profiles):
    a = eval_oracle(toy6, toy_profiles[:1], jobs=1)[1]
    b = eval_oracle(toy6, toy_profiles[:1], jobs=3)[1]
    assert np.array_equal(a, b)


def test_local_rewards_sum_to_shared(toy6, toy_layout, toy_profiles, rng):
    env = VoltVarEnv(toy6, toy_layout)
    env.reset(toy_profiles[0])
    for _ in range(5):
        out = env.step([rng.uniform(-1, 1, size=s.act_dim) for s in toy_layout])
        assert out.local_rewards.sum() == pytest.approx(out.reward, abs=1e-12)


def test_reward_metric_consistency(toy6, toy_layout, toy_profiles):
    team = AgentTeam(toy_layout, TrainConfig(**SMALL), np.random.default_rng(0))
    env = VoltVarEnv(toy6, toy_layout)
    out = rollout_greedy(team, env, toy_profiles[0])
    m, _ = eval_agents(team, toy6, toy_layout, toy_profiles[:1])
    T, n = out.voltages.shape
    assert -out.rewards.sum() / (T * n) * 100 == pytest.approx(m.average, abs=1e-12)


def test_independent_training(toy6, toy_layout, toy_profiles):
    cfg = TrainConfig(episodes=2, **SMALL)
    a = train_independent_td3(toy6, toy_layout, toy_profiles, cfg)
    b = train_independent_td3(toy6, toy_layout, toy_profiles, cfg)
    assert a.team.config.mode == "independent"
    for agent, spec in zip(a.team, toy_layout):
        assert agent.q1.in_dim == spec.obs_dim + spec.act_dim
    np.testing.assert_array_equal(np.array(a.curve), np.array(b.curve))


def test_frozen_actions_reproduce_setpoints(toy6, toy_profiles):
    p = toy_profiles[0]
    sol = centralized_oracle(toy6, p, 12)
    svc_a, pv_a = frozen_actions(toy6, p, 12, sol.q_svc, sol.q_pv)
    assert np.allclose(svc_a, sol.svc_actions) and np.allclose(pv_a, sol.pv_actions)


def test_stress_test_on_toy(toy6, toy_layout):
    team = AgentTeam(toy_layout, TrainConfig(**SMALL), np.random.default_rng(0))
    profile = generate_profiles(toy6, "cloud_transient", 1, seed=0)[0]
    profile = ScenarioProfile(profile.load_p[:6], profile.load_q[:6], profile.pv_avail[:6],
                              profile.dt, profile.kind)
    res = stress_test_transient(toy6, toy_layout, {"matd3": team}, profile=profile)
    assert list(res.voltages) == ["original", "frozen_setpoint", "matd3", "oracle"]
    assert res.monitored_bus == default_monitored_bus(toy6, res.voltages["original"])
    dev = {m: np.abs(v - 1).sum(axis=1) for m, v in res.voltages.items()}
    for m in dev:
        assert np.all(dev["oracle"] <= dev[m] + 1e-9)
    lines = res.to_csv(["seed=0"]).splitlines()
    assert lines[:2] == ["# seed=0", "t_s,method,v_pu"]
    assert len(lines) == 2 + 4 * 6
    assert res.t_s[0] == 1.0
    assert isinstance(res, StressResult) and res.variance("oracle") >= 0


def test_results_csv():
    text = results_csv([("original", DeviationMetrics(2.0, 5.0, 7.0)),
                        ("matd3", DeviationMetrics(0.5, 1.0, 1.5, 0.0012))],
                       err={"matd3": 3.7}, header_lines=["seed=0"])
    assert text.splitlines() == [
        "# seed=0",
        "method,average_pct,max_rise_pct,max_drop_pct,per_step_time_s,err_pct",
        "original,2.000000,5.000000,7.000000,,",
        "matd3,0.500000,1.000000,1.500000,0.0012,3.700000",
    ]
