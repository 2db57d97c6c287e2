"""Newton-Raphson AC power flow, Jacobian, V-Q sensitivity and limit checks."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .exceptions import NonConvergence, SingularJacobian
from .netmodel import AdmittanceMatrix, Network, build_admittance

DEFAULT_TOL = 1e-8
DEFAULT_MAX_ITER = 50


@dataclass(frozen=True, eq=False)
class Injections:
    """Net per-unit injections per bus (generation minus load)."""

    p: np.ndarray
    q: np.ndarray

    @classmethod
    def zeros(cls, n):
        return cls(np.zeros(n), np.zeros(n))

    @classmethod
    def from_loads(cls, net: Network, scale=1.0):
        p = -scale * np.asarray(net.load_p) / net.s_base
        q = -scale * np.asarray(net.load_q) / net.s_base
        return cls(p, q)


@dataclass(frozen=True, eq=False)
class PowerFlowSolution:
    v: np.ndarray
    theta: np.ndarray
    branch_i: np.ndarray
    residual: float
    iterations: int

    @property
    def voltage(self) -> np.ndarray:
        return self.v * np.exp(1j * self.theta)


@dataclass(frozen=True, eq=False)
class SensitivityMatrix:
    """dV/dQ at non-slack buses, rows/columns ordered as ``net.pq_indices``."""

    s: np.ndarray
    operating_point: PowerFlowSolution
    bus_index: np.ndarray = field(default=None)


def _calc_power(y: np.ndarray, voltage: np.ndarray) -> np.ndarray:
    return voltage * np.conj(y @ voltage)


def branch_currents(net: Network, voltage: np.ndarray) -> np.ndarray:
    f, t = net.branch_ends
    y_series = np.array([1.0 / complex(br.r, br.x) for br in net.branches])
    return np.abs(y_series) * np.abs(voltage[f] - voltage[t])


def solve_power_flow(net: Network, y: AdmittanceMatrix | None, inj: Injections,
                     tol: float = DEFAULT_TOL, max_iter: int = DEFAULT_MAX_ITER,
                     v0=None, theta0=None, v_slack: float = 1.0) -> PowerFlowSolution:
    """Full Newton-Raphson in polar coordinates from a flat (or warm) start.

    Raises :class:`NonConvergence` carrying the last residual when the
    mismatch does not fall below ``tol`` within ``max_iter`` iterations.
    """
    if tol <= 0:
        raise ValueError("tol must be > 0")
    if y is None:
        y = build_admittance(net)
    ybus = y.complex
    n = net.n_bus
    pq = net.pq_indices
    slack = net.slack_index
    npq = len(pq)

    v = np.ones(n) if v0 is None else np.array(v0, dtype=float)
    theta = np.zeros(n) if theta0 is None else np.array(theta0, dtype=float)
    v[slack] = v_slack
    theta[slack] = 0.0
    s_spec = np.asarray(inj.p, dtype=float) + 1j * np.asarray(inj.q, dtype=float)

    iterations = 0
    while True:
        voltage = v * np.exp(1j * theta)
        mis = _calc_power(ybus, voltage) - s_spec
        f = np.concatenate([mis.real[pq], mis.imag[pq]])
        residual = float(np.max(np.abs(f))) if npq else 0.0
        if residual <= tol:
            break
        if iterations >= max_iter:
            raise NonConvergence(
                f"power flow did not converge in {max_iter} iterations (residual {residual:.3e})",
                residual=residual, iterations=iterations)
        jac = _jacobian(ybus, voltage, pq)
        try:
            dx = np.linalg.solve(jac, -f)
        except np.linalg.LinAlgError as exc:
            raise SingularJacobian(str(exc)) from exc
        if not np.all(np.isfinite(dx)):
            raise SingularJacobian("non-finite Newton step")
        theta[pq] += dx[:npq]
        v[pq] += dx[npq:]
        iterations += 1

    return PowerFlowSolution(v=v, theta=theta, branch_i=branch_currents(net, voltage),
                             residual=residual, iterations=iterations)


def _jacobian(ybus, voltage, pq):
    vm = np.abs(voltage)
    current = ybus @ voltage
    diag_v = np.diag(voltage)
    ds_dvm = diag_v @ np.conj(ybus @ np.diag(voltage / vm)) + np.diag(np.conj(current) * voltage / vm)
    ds_dva = 1j * diag_v @ np.conj(np.diag(current) - ybus @ diag_v)
    sub = np.ix_(pq, pq)
    return np.block([
        [ds_dva[sub].real, ds_dvm[sub].real],
        [ds_dva[sub].imag, ds_dvm[sub].imag],
    ])


def compute_jacobian(net: Network, y: AdmittanceMatrix, solution: PowerFlowSolution) -> np.ndarray:
    """d(P, Q)/d(theta, V) at non-slack buses, shape ``2(N-1) x 2(N-1)``."""
    return _jacobian(y.complex, solution.voltage, net.pq_indices)


def compute_vq_sensitivity(net: Network, y: AdmittanceMatrix,
                           solution: PowerFlowSolution) -> SensitivityMatrix:
    """dV/dQ via the Schur complement that eliminates the angle equations."""
    jac = compute_jacobian(net, y, solution)
    m = len(net.pq_indices)
    j_pt, j_pv = jac[:m, :m], jac[:m, m:]
    j_qt, j_qv = jac[m:, :m], jac[m:, m:]
    try:
        reduced = j_qv - j_qt @ np.linalg.solve(j_pt, j_pv)
        s = np.linalg.inv(reduced)
    except np.linalg.LinAlgError as exc:
        raise SingularJacobian(str(exc)) from exc
    return SensitivityMatrix(s=s, operating_point=solution, bus_index=net.pq_indices.copy())


def base_case_sensitivity(net: Network, y: AdmittanceMatrix | None = None) -> SensitivityMatrix:
    """Sensitivity at base load with every device at zero output."""
    y = build_admittance(net) if y is None else y
    sol = solve_power_flow(net, y, Injections.from_loads(net))
    return compute_vq_sensitivity(net, y, sol)


def check_mismatch(net: Network, y: AdmittanceMatrix, inj: Injections,
                   v: np.ndarray, theta: np.ndarray) -> float:
    """Max |P|, |Q| balance error at non-slack buses, evaluated term by term.

    Deliberately written from the trigonometric balance equations rather
    than the solver's complex form so it can audit solver output.
    """
    g, b = y.g, y.b
    worst = 0.0
    for i in net.pq_indices:
        p_calc = 0.0
        q_calc = 0.0
        for j in range(net.n_bus):
            if g[i, j] == 0.0 and b[i, j] == 0.0:
                continue
            dt = theta[i] - theta[j]
            p_calc += v[j] * (g[i, j] * np.cos(dt) + b[i, j] * np.sin(dt))
            q_calc += v[j] * (g[i, j] * np.sin(dt) - b[i, j] * np.cos(dt))
        worst = max(worst, abs(v[i] * p_calc - inj.p[i]), abs(v[i] * q_calc - inj.q[i]))
    return worst


# --- limit checks -----------------------------------------------------------

@dataclass(frozen=True)
class Violation:
    element: str
    type: str
    magnitude: float


@dataclass(frozen=True)
class ViolationReport:
    violations: tuple[Violation, ...] = ()
    worst_over_voltage: float = 0.0
    worst_under_voltage: float = 0.0
    worst_overcurrent: float = 0.0

    def __bool__(self):
        return bool(self.violations)

    def __len__(self):
        return len(self.violations)

    def by_type(self, kind):
        return [v for v in self.violations if v.type == kind]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["bus_id", "type", "magnitude"])
        for v in self.violations:
            writer.writerow([v.element, v.type, f"{v.magnitude:.10g}"])
        return buf.getvalue()


def check_limits(net: Network, solution: PowerFlowSolution) -> ViolationReport:
    over = solution.v - net.v_max
    under = net.v_min - solution.v
    amps = solution.branch_i - net.i_max
    found = []
    for k, bus in enumerate(net.buses):
        if over[k] > 0:
            found.append(Violation(str(bus.id), "over_voltage", float(over[k])))
        elif under[k] > 0:
            found.append(Violation(str(bus.id), "under_voltage", float(under[k])))
    for k, br in enumerate(net.branches):
        if amps[k] > 0:
            found.append(Violation(f"{br.from_bus}-{br.to_bus}", "overcurrent", float(amps[k])))
    return ViolationReport(
        violations=tuple(found),
        worst_over_voltage=float(max(over.max(initial=0.0), 0.0)),
        worst_under_voltage=float(max(under.max(initial=0.0), 0.0)),
        worst_overcurrent=float(max(amps.max(initial=0.0), 0.0)),
    )
