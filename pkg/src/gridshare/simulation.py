"""Closed-loop simulation: fixed-step integration, Newton equilibrium
solving, trajectory recording, and the scenario metrics.

One simulation owns all its mutable state; everything here is
deterministic (fixed grids, fixed iteration orders, no randomness), so
identical configurations reproduce bit-identical trajectories.
"""

from __future__ import annotations

import logging
import time as _time
from dataclasses import dataclass, field

import numpy as np

from . import controllers as ctrl_mod
from . import graph as graph_mod
from . import model as model_mod
from ._core import backend, backend_name
from .controllers import ControllerSpec, ConsensusOperators, Variant
from .model import CplSingularityError, DisturbanceProfile, GridParameters

__all__ = [
    "SimulationAbort",
    "NewtonError",
    "RunContext",
    "Trajectory",
    "EquilibriumResult",
    "ScenarioResult",
    "integrate_rk4",
    "solve_equilibrium",
    "simulate_closed_loop_grid",
    "finalize_trajectory",
    "consensus_metrics",
    "run_scenario",
]

log = logging.getLogger(__name__)


class SimulationAbort(RuntimeError):
    """Integration produced a non-finite state."""


class NewtonError(RuntimeError):
    """Equilibrium iteration failed to converge."""


def integrate_rk4(f, x0, t0, t_end, h, check_finite=True):
    """Classical fixed-step RK4 for a generic closure x' = f(t, x).

    Returns (times, states, derivs) with the derivative re-evaluated at
    every grid point (so trajectories carry consistent rate channels).
    """
    if h <= 0:
        raise ValueError("step size must be positive")
    x = np.atleast_1d(np.asarray(x0, dtype=float)).copy()
    n_steps = int(round((t_end - t0) / h))
    times = t0 + h * np.arange(n_steps + 1)
    states = np.empty((n_steps + 1, x.size))
    derivs = np.empty((n_steps + 1, x.size))
    for i in range(n_steps + 1):
        t = times[i]
        states[i] = x
        k1 = np.asarray(f(t, x), dtype=float)
        derivs[i] = k1
        if check_finite and not np.all(np.isfinite(x)):
            raise SimulationAbort(f"non-finite state at t = {t:.6g}")
        if i == n_steps:
            break
        k2 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k1), dtype=float)
        k3 = np.asarray(f(t + 0.5 * h, x + 0.5 * h * k2), dtype=float)
        k4 = np.asarray(f(t + h, x + h * k3), dtype=float)
        x = x + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
    return times, states, derivs


@dataclass(frozen=True)
class RunContext:
    """Everything a closed-loop run (and its certificates) needs."""

    params: GridParameters
    topology: graph_mod.Topology
    spec: ControllerSpec
    ops: ConsensusOperators
    incidence: np.ndarray
    profile: DisturbanceProfile = None
    d_ext: np.ndarray = None
    v_guard: float = model_mod.V_GUARD_DEFAULT

    @classmethod
    def build(cls, params, topology, spec, profile=None, d_ext=None,
              v_guard=model_mod.V_GUARD_DEFAULT, comm_weights=None):
        ops = ctrl_mod.build_operators(spec, topology.comm_edges, nu=topology.nu,
                                       weights=comm_weights)
        incidence = graph_mod.build_incidence(topology)
        if d_ext is None:
            d_ext = np.zeros(params.dim)
        return cls(params=params, topology=topology, spec=spec, ops=ops,
                   incidence=incidence, profile=profile,
                   d_ext=np.asarray(d_ext, dtype=float), v_guard=v_guard)


# ---------------------------------------------------------------------------
# equilibrium solving


@dataclass
class EquilibriumResult:
    x: np.ndarray           # plant state
    w: np.ndarray           # integral-channel value (controller u or -M^T E xi)
    alpha: float            # consensus level of the weighted output
    u_total: np.ndarray     # total plant input at the equilibrium
    xi: np.ndarray          # xi consistent with w (xi-variants, else None)
    rho: np.ndarray         # rho = y at the equilibrium (rho-variants, else None)
    residual: float
    iterations: int
    loads: tuple            # (gl, il, pl) the point was solved for

    def controller_state(self, spec: ControllerSpec) -> ctrl_mod.ControllerState:
        v = spec.variant
        return ctrl_mod.ControllerState(
            u=None if v.uses_xi else self.w.copy(),
            xi=self.xi.copy() if v.uses_xi else None,
            rho=self.rho.copy() if v.uses_rho else None,
        )


def _cpl_term(pl, v):
    out = np.zeros_like(v)
    np.divide(pl, v, out=out, where=pl != 0)
    return out


def _plant_residual(x, u_tot, params, incidence, loads, d_ext):
    """vector_field with frozen loads and a CPL term that is zero where
    PL is zero (so the zero-load origin is solvable)."""
    nu = params.nu
    gl, il, pl = loads
    phi, q, phit = x[:nu], x[nu:2 * nu], x[2 * nu:]
    v = q / params.c
    y = phi / params.l
    i_line = phit / params.lt
    dphi = -params.r * y - v + u_tot
    dq = y + incidence @ i_line - gl * v - il - _cpl_term(pl, v)
    dphit = -(incidence.T @ v) - params.rt * i_line
    return np.concatenate([dphi, dq, dphit]) + d_ext


def _input_gain_wrt_y(ctx: RunContext):
    """Jacobian of the total input with respect to y at fixed integral state."""
    spec, ops, params = ctx.spec, ctx.ops, ctx.params
    gain = np.zeros((params.nu, params.nu))
    if spec.u_bar_mode == "voltage":
        gain += np.diag(params.r)
    if spec.variant in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        gain -= ops.mte @ ops.g_damping @ ops.etm
    if spec.variant is Variant.SHIFTED_XI_DAMPED_FILTERED:
        gain -= spec.k_gain
    return gain


def _equilibrium_input(ctx: RunContext, w, y):
    """Total plant input at an equilibrium candidate (rho = y there)."""
    spec, ops, params = ctx.spec, ctx.ops, ctx.params
    u = w.copy()
    if spec.variant in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        u -= ops.mte @ (ops.g_damping @ (ops.etm @ y))
    if spec.variant is Variant.SHIFTED_XI_DAMPED_FILTERED:
        u -= spec.k_gain @ y
    return u + ctrl_mod.u_bar(spec, y, params)


def solve_equilibrium(ctx: RunContext, loads=None, conservation=0.0,
                      v_init=None, tol=1e-11, max_iter=100) -> EquilibriumResult:
    """Newton solve of the closed-loop steady state.

    Unknowns are (x, w, alpha) where w is the integral channel of the
    active controller.  Equations: plant residual zero, M y = alpha 1,
    and the integral-channel invariant (M^-1 1)^T w = conservation (the
    quantity the consensus dynamics conserve; zero for the default
    all-zero controller initialization, which with the voltage-regulating
    feedforward pins the steady-state voltage average at Vref).
    """
    params, spec, ops = ctx.params, ctx.spec, ctx.ops
    nu, dim = params.nu, params.dim
    if loads is None:
        loads = (params.gl, params.il, params.pl)
    gl, il, pl = (np.asarray(v, dtype=float) for v in loads)
    m = spec.m_weight
    try:
        minv_ones = np.linalg.solve(m, np.ones(nu))
    except np.linalg.LinAlgError as exc:
        raise NewtonError("equilibrium solver needs an invertible weight matrix") from exc

    v_ref = spec.v_ref if spec.u_bar_mode == "voltage" else 380.0
    v0 = np.full(nu, v_ref if v_init is None else v_init, dtype=float)
    load_i = gl * v0 + il + _cpl_term(pl, v0)
    alpha0 = float(np.sum(load_i) / np.sum(np.linalg.solve(m.T, np.ones(nu)))) \
        if nu > 1 else float(load_i[0])
    y0 = np.linalg.solve(m, alpha0 * np.ones(nu))
    flows, *_ = np.linalg.lstsq(ctx.incidence, load_i - y0, rcond=None)
    x = np.concatenate([params.l * y0, params.c * v0, params.lt * flows])
    w = np.zeros(nu)
    alpha = alpha0

    gain_y = _input_gain_wrt_y(ctx)
    n_unknown = dim + nu + 1
    it = 0
    res_norm = np.inf
    for it in range(1, max_iter + 1):
        y = x[:nu] / params.l
        u_tot = _equilibrium_input(ctx, w, y)
        f1 = _plant_residual(x, u_tot, params, ctx.incidence, (gl, il, pl), ctx.d_ext)
        f2 = m @ y - alpha
        f3 = np.array([minv_ones @ w - conservation])
        res = np.concatenate([f1, f2, f3])
        res_norm = float(np.abs(res).max())
        if res_norm < tol:
            break

        jac = np.zeros((n_unknown, n_unknown))
        q = x[nu:2 * nu]
        jac_f = np.zeros((dim, dim))
        jac_f[:nu, :nu] = np.diag(-params.r / params.l)
        jac_f[:nu, nu:2 * nu] = np.diag(-1.0 / params.c)
        jac_f[nu:2 * nu, :nu] = np.diag(1.0 / params.l)
        v = q / params.c
        cpl_slope = np.zeros(nu)
        np.divide(pl * params.c, q**2, out=cpl_slope, where=pl != 0)
        jac_f[nu:2 * nu, nu:2 * nu] = np.diag(-gl / params.c + cpl_slope)
        jac_f[nu:2 * nu, 2 * nu:] = ctx.incidence / params.lt
        jac_f[2 * nu:, nu:2 * nu] = -(ctx.incidence.T) / params.c
        jac_f[2 * nu:, 2 * nu:] = np.diag(-params.rt / params.lt)
        jac[:dim, :dim] = jac_f
        jac[:nu, :nu] += gain_y / params.l
        jac[:nu, dim:dim + nu] = np.eye(nu)
        jac[dim:dim + nu, :nu] = m / params.l
        jac[dim:dim + nu, dim + nu] = -1.0
        jac[dim + nu, dim:dim + nu] = minv_ones

        try:
            step = np.linalg.solve(jac, -res)
        except np.linalg.LinAlgError as exc:
            raise NewtonError(f"singular Jacobian at iteration {it}") from exc

        # damped update: backtrack while the residual grows
        lam = 1.0
        for _ in range(10):
            x_n = x + lam * step[:dim]
            w_n = w + lam * step[dim:dim + nu]
            a_n = alpha + lam * step[dim + nu]
            y_n = x_n[:nu] / params.l
            u_n = _equilibrium_input(ctx, w_n, y_n)
            f1n = _plant_residual(x_n, u_n, params, ctx.incidence, (gl, il, pl), ctx.d_ext)
            f2n = m @ y_n - a_n
            f3n = np.array([minv_ones @ w_n - conservation])
            new_norm = float(np.abs(np.concatenate([f1n, f2n, f3n])).max())
            if new_norm < res_norm or not np.isfinite(res_norm):
                break
            lam *= 0.5
        x, w, alpha = x_n, w_n, a_n
    else:
        raise NewtonError(
            f"no convergence in {max_iter} iterations (residual {res_norm:.3e})"
        )

    y = x[:nu] / params.l
    u_tot = _equilibrium_input(ctx, w, y)
    xi = rho = None
    if spec.variant.uses_xi:
        rhs = -np.linalg.solve(m.T, w)
        xi, *_ = np.linalg.lstsq(ops.e_mat, rhs, rcond=None)
        if np.abs(ops.e_mat @ xi - rhs).max() > 1e-8 * (1 + np.abs(w).max()):
            raise NewtonError("integral channel is not realizable by the edge state")
    if spec.variant.uses_rho:
        rho = y.copy()
    return EquilibriumResult(x=x, w=w, alpha=float(alpha), u_total=u_tot, xi=xi,
                             rho=rho, residual=res_norm, iterations=it,
                             loads=(gl, il, pl))


# ---------------------------------------------------------------------------
# closed-loop runs


@dataclass
class Trajectory:
    """Logged closed-loop run plus full-grid metric channels."""

    h: float
    stride: int
    variant: Variant
    times: np.ndarray
    states: np.ndarray
    ctrl_states: np.ndarray
    consensus_error_full: np.ndarray
    voltage_avg_full: np.ndarray
    currents_full: np.ndarray
    # derived on the logged grid (finalize_trajectory)
    y: np.ndarray = None
    u: np.ndarray = None
    xdot: np.ndarray = None
    udot: np.ndarray = None
    ydot: np.ndarray = None
    consensus_error: np.ndarray = None
    voltage_avg: np.ndarray = None
    voltages: np.ndarray = None
    # certificate channels (NaN when not evaluated)
    v_k: np.ndarray = None
    w_k: np.ndarray = None
    h_s: np.ndarray = None
    margin_k: np.ndarray = None
    margin_s: np.ndarray = None

    @property
    def t_end(self) -> float:
        return float(self.times[-1])

    def full_times(self) -> np.ndarray:
        return self.times[0] + self.h * np.arange(self.consensus_error_full.size)


def _kernel_call(ctx: RunContext, x0, w0, t0, h, n_steps, stride):
    params, spec, ops = ctx.params, ctx.spec, ctx.ops
    profile = ctx.profile
    nu = params.nu
    n_e = ops.n_edges
    if profile is None:
        profile = DisturbanceProfile(nu=nu, step_time=np.inf)
    sins = profile.sinusoids
    tails = np.array([e[0] for e in ctx.topology.phys_edges], dtype=np.int64)
    heads = np.array([e[1] for e in ctx.topology.phys_edges], dtype=np.int64)
    g_damp = ops.g_damping if ops.g_damping is not None else np.zeros((n_e, n_e))
    k_gain = ctx.spec.k_gain if ctx.spec.k_gain is not None else np.zeros((nu, nu))
    ubar_mode = {"none": 0, "constant": 1, "voltage": 2}[spec.u_bar_mode]
    ubar_const = spec.u_bar_const if spec.u_bar_const is not None else np.zeros(nu)
    c = np.ascontiguousarray

    return backend.integrate_grid(
        c(x0, dtype=float), c(w0, dtype=float), float(t0), float(h),
        int(n_steps), int(stride),
        c(params.r), c(params.l), c(params.c), c(params.rt), c(params.lt),
        c(params.gl), c(params.il), c(params.pl),
        c(profile.dgl), c(profile.dil), c(profile.dpl), float(profile.step_time),
        np.array([s.node for s in sins], dtype=np.int64),
        np.array([s.amplitude for s in sins], dtype=float),
        np.array([s.decay for s in sins], dtype=float),
        np.array([s.frequency for s in sins], dtype=float),
        np.array([s.onset for s in sins], dtype=float),
        c(ctx.d_ext), tails, heads,
        spec.variant.kernel_id, c(spec.m_weight),
        c(ctx.ops.mlm), c(ctx.ops.mte), c(ctx.ops.etm),
        c(g_damp), c(k_gain),
        ubar_mode, c(ubar_const, dtype=float), float(spec.v_ref),
        float(ctx.v_guard),
    )


def stiffness_time_constants(params: GridParameters) -> np.ndarray:
    taus = [params.l / params.r, params.lt / params.rt]
    if np.any(params.gl > 0):
        taus.append(params.c[params.gl > 0] / params.gl[params.gl > 0])
    return np.concatenate(taus)


def simulate_closed_loop_grid(ctx: RunContext, x0, w0, t0, t_end, h,
                              stride=None, max_log_rows=20001) -> Trajectory:
    """Run the compiled (or fallback) kernel and wrap the result."""
    n_steps = int(round((t_end - t0) / h))
    if n_steps < 1:
        raise ValueError("horizon shorter than one step")
    if stride is None:
        stride = max(1, int(np.ceil(n_steps / (max_log_rows - 1))))
    tau_min = float(stiffness_time_constants(ctx.params).min())
    if h > 0.2 * tau_min:
        log.warning(
            "step %.3g s exceeds 0.2x the fastest time constant %.3g s; "
            "fixed-step integration accuracy should be confirmed by halving h",
            h, tau_min,
        )
    out = _kernel_call(ctx, x0, w0, t0, h, n_steps, stride)
    if out["status"] == 1:
        t_fail = t0 + out["steps_done"] * h
        raise CplSingularityError(
            f"node voltage fell below {ctx.v_guard:.1f} V at t = {t_fail:.6f} s"
        )
    if out["status"] == 2:
        t_fail = t0 + out["steps_done"] * h
        raise SimulationAbort(f"non-finite state at t = {t_fail:.6f} s")
    return Trajectory(
        h=h, stride=stride, variant=ctx.spec.variant,
        times=out["times"], states=out["states"], ctrl_states=out["ctrl"],
        consensus_error_full=out["cons_err"], voltage_avg_full=out["v_avg"],
        currents_full=out["currents"],
    )


def loads_on_grid(times, params, profile):
    """Instantaneous load triple on a time grid, vectorized."""
    n = times.size
    gl = np.tile(params.gl, (n, 1))
    il = np.tile(params.il, (n, 1))
    pl = np.tile(params.pl, (n, 1))
    if profile is not None:
        mask = times >= profile.step_time
        gl[mask] += profile.dgl
        il[mask] += profile.dil
        pl[mask] += profile.dpl
        for s in profile.sinusoids:
            on = times >= s.onset
            pl[on, s.node] += (s.amplitude * np.exp(-s.decay * (times[on] - s.onset))
                               * np.sin(s.frequency * times[on]))
    return gl, il, pl


def finalize_trajectory(traj: Trajectory, ctx: RunContext) -> Trajectory:
    """Fill the derived logged channels (outputs, inputs, rates)."""
    params, spec, ops = ctx.params, ctx.spec, ctx.ops
    nu = params.nu
    t = traj.times
    x = traj.states
    w = traj.ctrl_states
    phi, q, phit = x[:, :nu], x[:, nu:2 * nu], x[:, 2 * nu:]
    y = phi / params.l
    v = q / params.c

    # controller output, batch form of controllers.controller_output
    var = spec.variant
    n_e = ops.n_edges
    if var.uses_u:
        u_alg = w[:, :nu].copy()
    else:
        xi = w[:, :n_e]
        if var is Variant.SHIFTED_XI:
            u_alg = -(xi @ ops.mte.T)
        else:
            u_alg = -((xi + (y @ ops.etm.T) @ ops.g_damping.T) @ ops.mte.T)
            if var is Variant.SHIFTED_XI_DAMPED_FILTERED:
                u_alg -= w[:, n_e:] @ spec.k_gain.T
    if spec.u_bar_mode == "voltage":
        u = u_alg + spec.v_ref + y * params.r
    elif spec.u_bar_mode == "constant":
        u = u_alg + spec.u_bar_const
    else:
        u = u_alg

    gl, il, pl = loads_on_grid(t, params, ctx.profile)
    i_line = phit / params.lt
    xdot = np.empty_like(x)
    xdot[:, :nu] = -y * params.r - v + u + ctx.d_ext[:nu]
    xdot[:, nu:2 * nu] = (y + i_line @ ctx.incidence.T - gl * v - il - pl / v
                          + ctx.d_ext[nu:2 * nu])
    xdot[:, 2 * nu:] = -(v @ ctx.incidence) - i_line * params.rt + ctx.d_ext[2 * nu:]
    ydot = xdot[:, :nu] / params.l

    # d/dt of the total input, batch form of controllers.input_derivative
    udot = -(y @ ops.mlm.T)
    if var is Variant.KRASOVSKII_EXTENDED:
        udot += (w[:, nu:] - y) @ spec.k_gain.T
    elif var in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        udot -= (ydot @ ops.etm.T) @ ops.g_damping.T @ ops.mte.T
        if var is Variant.SHIFTED_XI_DAMPED_FILTERED:
            udot -= (y - w[:, n_e:]) @ spec.k_gain.T
    if spec.u_bar_mode == "voltage":
        udot += ydot * params.r

    z = y @ spec.m_weight.T
    traj.y = y
    traj.u = u
    traj.xdot = xdot
    traj.udot = udot
    traj.ydot = ydot
    traj.voltages = v
    traj.consensus_error = z.max(axis=1) - z.min(axis=1)
    traj.voltage_avg = v.mean(axis=1)
    n = t.size
    nan = np.full(n, np.nan)
    for name in ("v_k", "w_k", "h_s", "margin_k", "margin_s"):
        if getattr(traj, name) is None:
            setattr(traj, name, nan.copy())
    return traj


def consensus_metrics(y_series: np.ndarray, m_weight: np.ndarray):
    """Per-sample consensus error (max pairwise spread of the weighted
    output) and estimated consensus level (its mean)."""
    z = np.atleast_2d(y_series) @ np.asarray(m_weight, dtype=float).T
    return z.max(axis=1) - z.min(axis=1), z.mean(axis=1)


# ---------------------------------------------------------------------------
# scenario running


@dataclass
class ScenarioResult:
    scenario: object
    trajectory: Trajectory
    summary: dict
    equilibrium_pre: EquilibriumResult
    equilibrium_post: EquilibriumResult = None


def _window_mask(times, t_lo, t_hi):
    return (times >= t_lo) & (times <= t_hi)


def _scenario_checks(scenario, summary, profile, t_end):
    """Scenario-specific quantitative checks (strict-mode gates)."""
    checks = {}
    term = summary["terminal"]

    def add(name, value, threshold, kind="lt"):
        ok = bool(value < threshold) if kind == "lt" else bool(abs(value) < threshold)
        checks[name] = {"value": float(value), "threshold": float(threshold),
                        "pass": ok}

    if scenario in (1, 2):
        add("terminal_current_spread_A", term["current_spread"], 0.01)
    if scenario == 1:
        add("voltage_avg_deviation_V", abs(term["voltage_avg"] - 380.0), 0.5)
    if scenario == 2:
        add("final_second_current_p2p_A", summary["windows"]["current_p2p_last_1s"], 0.02)
    if scenario == 3:
        add("consensus_rejection_ratio", summary["windows"]["rejection_ratio"], 0.01)
    if scenario == 4:
        add("weighted_ratio_deviation", abs(term["ratio_node3_node1"] - 1.25), 1e-3)
        add("unweighted_current_spread_A", term["spread_nodes_124"], 0.01)
    return checks


def run_scenario(config) -> ScenarioResult:
    """Simulate one scenario from a resolved RunConfig.

    Initializes at the Newton equilibrium of the pre-step loads, runs the
    disturbance profile, and assembles metrics plus (optionally) the
    passivity-certificate report.
    """
    from . import certificates as cert_mod

    t_start = _time.perf_counter()
    ctx = config.context()
    params, spec, profile = ctx.params, ctx.spec, ctx.profile

    eq_pre = solve_equilibrium(ctx)
    state0 = eq_pre.controller_state(spec)
    w0 = ctrl_mod.pack_state(spec, state0)
    traj = simulate_closed_loop_grid(ctx, eq_pre.x, w0, 0.0, config.t_end,
                                     config.dt, stride=config.stride(),
                                     max_log_rows=config.max_log_rows)
    finalize_trajectory(traj, ctx)

    nu = params.nu
    y_T = traj.currents_full[-1]
    z_T = spec.m_weight @ y_T
    terminal = {
        "t": float(config.t_end),
        "consensus_error_weighted": float(traj.consensus_error_full[-1]),
        "current_spread": float(y_T.max() - y_T.min()),
        "currents": y_T.tolist(),
        "voltages": (traj.states[-1, nu:2 * nu] / params.c).tolist(),
        "voltage_avg": float(traj.voltage_avg_full[-1]),
        "weighted_outputs": z_T.tolist(),
    }
    if nu >= 4:
        others = y_T[[0, 1, 3]]
        terminal["ratio_node3_node1"] = float(y_T[2] / y_T[0])
        terminal["spread_nodes_124"] = float(others.max() - others.min())

    t_full = traj.full_times()
    windows = {}
    if profile is not None and np.isfinite(profile.step_time):
        t_step = profile.step_time
        m_last = _window_mask(t_full, config.t_end - 1.0, config.t_end)
        p2p = traj.currents_full[m_last].max(axis=0) - traj.currents_full[m_last].min(axis=0)
        windows["current_p2p_last_1s"] = float(p2p.max())
        m_peak = _window_mask(t_full, t_step, t_step + 0.5)
        m_tail = _window_mask(t_full, config.t_end - 2.0, config.t_end)
        peak = float(traj.consensus_error_full[m_peak].max()) if m_peak.any() else np.nan
        tail = float(traj.consensus_error_full[m_tail].max()) if m_tail.any() else np.nan
        windows["consensus_peak_post_step"] = peak
        windows["consensus_max_last_2s"] = tail
        windows["rejection_ratio"] = tail / peak if peak and np.isfinite(peak) else np.nan

    summary = {
        "scenario": config.scenario,
        "backend": backend_name(),
        "controller": spec.variant.value,
        "h": config.dt,
        "t_end": config.t_end,
        "stride": traj.stride,
        "terminal": terminal,
        "windows": windows,
        "equilibrium_pre": {
            "alpha": eq_pre.alpha,
            "residual": eq_pre.residual,
            "iterations": eq_pre.iterations,
            "voltages": (eq_pre.x[nu:2 * nu] / params.c).tolist(),
            "currents": (eq_pre.x[:nu] / params.l).tolist(),
        },
    }

    eq_post = None
    if config.certificates_enabled():
        # the decrease identities are exact only for piecewise-constant
        # loads; under load oscillation the residual carries the load-rate
        # term, so those reports are informational rather than gates
        loads_steady = profile is None or not profile.sinusoids
        cert_report = {}
        if config.cert_krasovskii:
            rep = cert_mod.verify_inequality_along_trajectory(traj, "krasovskii", ctx)
            cert_report["krasovskii"] = {**rep.as_dict(), "gated": loads_steady}
            traj.v_k = rep.storage_raw
            traj.w_k = rep.dissipation_raw
            traj.margin_k = rep.margin
        if config.cert_shifted:
            if profile is not None and profile.persistent:
                cert_report["shifted"] = {
                    "applicable": False,
                    "reason": "persistent load oscillation: no constant equilibrium",
                }
            elif not spec.variant.uses_xi:
                cert_report["shifted"] = {
                    "applicable": False,
                    "reason": f"{spec.variant.value} has no edge state",
                }
            else:
                limit = profile.limit_loads(params) if profile is not None else None
                eq_post = solve_equilibrium(ctx, loads=limit)
                rep = cert_mod.verify_inequality_along_trajectory(
                    traj, "shifted", ctx, equilibrium=eq_post,
                    t_from=profile.step_time if profile is not None else 0.0)
                cert_report["shifted"] = {**rep.as_dict(), "gated": loads_steady}
                traj.h_s = rep.storage_raw
                traj.margin_s = rep.margin
        if config.cert_gamma:
            dom = cert_mod.verify_domain_gamma(traj, ctx)
            cert_report["gamma_domain"] = {**dom.as_dict(), "gated": True}
        summary["certificates"] = cert_report
        if eq_post is not None:
            summary["equilibrium_post"] = {
                "alpha": eq_post.alpha,
                "residual": eq_post.residual,
                "iterations": eq_post.iterations,
                "voltages": (eq_post.x[nu:2 * nu] / params.c).tolist(),
                "currents": (eq_post.x[:nu] / params.l).tolist(),
            }

    summary["checks"] = _scenario_checks(config.scenario, summary, profile,
                                         config.t_end)
    if "certificates" in summary:
        for name, rep in summary["certificates"].items():
            if rep.get("applicable", True) and rep.get("gated") and "pass" in rep:
                summary["checks"][f"certificate_{name}"] = {
                    "value": rep.get("max_margin", rep.get("worst_margin")),
                    "threshold": rep.get("tol", 0.0),
                    "pass": rep["pass"],
                }
    summary["all_checks_pass"] = all(c["pass"] for c in summary["checks"].values())
    summary["runtime_s"] = _time.perf_counter() - t_start
    return ScenarioResult(scenario=config.scenario, trajectory=traj,
                          summary=summary, equilibrium_pre=eq_pre,
                          equilibrium_post=eq_post)
