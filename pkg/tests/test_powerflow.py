import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridvolt.exceptions import NonConvergence
from gridvolt.netmodel import build_admittance
from gridvolt.powerflow import (Injections, base_case_sensitivity, check_limits, check_mismatch,
                                compute_jacobian, compute_vq_sensitivity, solve_power_flow)

from conftest import two_bus


def _fd_jacobian(net, y, sol, h=1e-6):
    """Central differences of the (P, Q) mismatch at non-slack buses."""
    pq = net.pq_indices
    ybus = y.complex

    def power(theta, v):
        volt = v * np.exp(1j * theta)
        s = volt * np.conj(ybus @ volt)
        return np.concatenate([s.real[pq], s.imag[pq]])

    m = len(pq)
    jac = np.zeros((2 * m, 2 * m))
    for k in range(2 * m):
        th_p, th_m = sol.theta.copy(), sol.theta.copy()
        v_p, v_m = sol.v.copy(), sol.v.copy()
        if k < m:
            th_p[pq[k]] += h
            th_m[pq[k]] -= h
        else:
            v_p[pq[k - m]] += h
            v_m[pq[k - m]] -= h
        jac[:, k] = (power(th_p, v_p) - power(th_m, v_m)) / (2 * h)
    return jac


def test_zero_injection_is_flat(ieee33):
    sol = solve_power_flow(ieee33, None, Injections.zeros(ieee33.n_bus))
    assert np.all(sol.v == 1.0) and np.all(sol.theta == 0.0)
    # Row sums of Y cancel only to rounding.
    assert sol.residual < 1e-12 and sol.iterations == 0


def test_two_bus_closed_form():
    # Lossless line, Q load 0.1: V^2 - V + 0.01 = 0, root nearest 1.
    net = two_bus(x=0.1)
    inj = Injections(np.zeros(2), np.array([0.0, -0.1]))
    sol = solve_power_flow(net, None, inj)
    expected = (1.0 + np.sqrt(1.0 - 0.04)) / 2.0
    assert sol.v[1] == pytest.approx(expected, abs=1e-10)
    assert sol.v[1] == pytest.approx(0.98990, abs=5e-6)


def test_ieee33_base_case(ieee33):
    y = build_admittance(ieee33)
    inj = Injections.from_loads(ieee33)
    sol = solve_power_flow(ieee33, y, inj)
    assert sol.iterations <= 10
    assert check_mismatch(ieee33, y, inj, sol.v, sol.theta) <= 1e-8
    # Published Baran-Wu base case: minimum 0.9131 p.u. at bus 18.
    assert sol.v.min() == pytest.approx(0.91309, abs=5e-5)
    assert ieee33.bus_ids[np.argmin(sol.v)] == 18


def test_ieee123_base_case(ieee123):
    y = build_admittance(ieee123)
    inj = Injections.from_loads(ieee123)
    sol = solve_power_flow(ieee123, y, inj)
    assert check_mismatch(ieee123, y, inj, sol.v, sol.theta) <= 1e-8
    assert 0.9 < sol.v.min() < 1.0


def test_nonconvergence_carries_residual(ieee33):
    inj = Injections.from_loads(ieee33, scale=12.0)
    with pytest.raises(NonConvergence) as info:
        solve_power_flow(ieee33, None, inj, max_iter=15)
    assert info.value.residual > 1e-8
    assert info.value.iterations == 15


def test_invalid_tolerance(ieee33):
    with pytest.raises(ValueError):
        solve_power_flow(ieee33, None, Injections.zeros(33), tol=0)


def test_deterministic(ieee33):
    inj = Injections.from_loads(ieee33)
    a = solve_power_flow(ieee33, None, inj)
    b = solve_power_flow(ieee33, None, inj)
    assert np.array_equal(a.v, b.v) and np.array_equal(a.theta, b.theta)


def test_jacobian_flat_two_bus():
    net = two_bus(x=0.1)
    sol = solve_power_flow(net, None, Injections.zeros(2))
    jac = compute_jacobian(net, build_admittance(net), sol)
    # dQ2/dV2 = -2 B22 V2 - B21 V1 = 20 - 10 at the flat point.
    assert jac[1, 1] == pytest.approx(10.0)


def test_two_bus_sensitivity_flat():
    net = two_bus(x=0.1)
    sol = solve_power_flow(net, None, Injections.zeros(2))
    s = compute_vq_sensitivity(net, build_admittance(net), sol).s
    assert s[0, 0] == pytest.approx(0.1)


@pytest.mark.parametrize("name", ["ieee33", "toy6"])
def test_jacobian_matches_finite_differences(name, request, rng):
    net = request.getfixturevalue(name)
    y = build_admittance(net)
    inj = Injections.from_loads(net, scale=rng.uniform(0.3, 1.2))
    sol = solve_power_flow(net, y, inj)
    jac = compute_jacobian(net, y, sol)
    fd = _fd_jacobian(net, y, sol)
    assert np.max(np.abs(jac - fd)) / np.max(np.abs(jac)) < 1e-6


def test_jacobian_permutation_symmetry(toy6):
    from gridvolt.netmodel import Network
    perm = [0, 3, 1, 5, 2, 4]
    buses = tuple(toy6.buses[i] for i in perm)
    shuffled = Network(buses, toy6.branches, toy6.pvs, toy6.svcs, toy6.s_base,
                       tuple(toy6.load_p[i] for i in perm), tuple(toy6.load_q[i] for i in perm))
    j1 = compute_jacobian(toy6, build_admittance(toy6),
                          solve_power_flow(toy6, None, Injections.from_loads(toy6)))
    j2 = compute_jacobian(shuffled, build_admittance(shuffled),
                          solve_power_flow(shuffled, None, Injections.from_loads(shuffled)))
    # Apply the same relabeling to the pq ordering of both theta and V blocks.
    ids1 = list(toy6.bus_ids[toy6.pq_indices])
    ids2 = list(shuffled.bus_ids[shuffled.pq_indices])
    order = [ids1.index(b) for b in ids2]
    m = len(order)
    full = order + [m + k for k in order]
    assert np.allclose(j1[np.ix_(full, full)], j2, atol=1e-12)


@pytest.mark.parametrize("name", ["ieee33", "ieee123"])
def test_sensitivity_diagonal_positive(name, request):
    net = request.getfixturevalue(name)
    s = base_case_sensitivity(net).s
    assert np.all(np.diag(s) > 0)


def test_sensitivity_predicts_resolve(ieee33, rng):
    y = build_admittance(ieee33)
    inj = Injections.from_loads(ieee33)
    sol = solve_power_flow(ieee33, y, inj)
    sens = compute_vq_sensitivity(ieee33, y, sol)
    pq = ieee33.pq_indices
    for k in rng.choice(len(pq), size=5, replace=False):
        q = inj.q.copy()
        q[pq[k]] += 1e-4
        after = solve_power_flow(ieee33, y, Injections(inj.p, q))
        dv = after.v[pq] - sol.v[pq]
        pred = sens.s[:, k] * 1e-4
        assert np.max(np.abs(pred - dv)) <= 1e-3 * np.max(np.abs(dv))


def _random_injections(net, draw):
    scale = draw(st.floats(0.0, 1.3))
    pv = draw(st.floats(0.0, 1.0))
    inj = Injections.from_loads(net, scale)
    p = inj.p.copy()
    for unit in net.pvs:
        p[net.index_of(unit.bus)] += pv * unit.p_rated / net.s_base
    return Injections(p, inj.q)


@settings(max_examples=30, deadline=None)
@given(st.data())
def test_mismatch_property_ieee33(ieee33, data):
    y = build_admittance(ieee33)
    inj = _random_injections(ieee33, data.draw)
    sol = solve_power_flow(ieee33, y, inj)
    assert check_mismatch(ieee33, y, inj, sol.v, sol.theta) <= 1e-8


def test_limits_report(toy6):
    sol = solve_power_flow(toy6, None, Injections.from_loads(toy6, scale=1.0))
    report = check_limits(toy6, sol)
    under = report.by_type("under_voltage")
    assert under and report.worst_under_voltage == pytest.approx(max(v.magnitude for v in under))
    assert report.to_csv().splitlines()[0] == "bus_id,type,magnitude"
    assert len(report.to_csv().splitlines()) == len(report) + 1


def test_no_limits_at_zero_load(ieee33):
    sol = solve_power_flow(ieee33, None, Injections.zeros(33))
    assert not check_limits(ieee33, sol)


def test_overcurrent_detected():
    from gridvolt.netmodel import Branch, Bus, Network
    net = Network((Bus(1, "slack"), Bus(2)), (Branch(1, 2, 0.01, 0.05, i_max=0.05),),
                  load_p=(0.0, 0.2), load_q=(0.0, 0.1))
    sol = solve_power_flow(net, None, Injections.from_loads(net))
    report = check_limits(net, sol)
    assert [v.element for v in report.by_type("overcurrent")] == ["1-2"]
