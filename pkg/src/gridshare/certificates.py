"""Storage/dissipation functions and numerical inequality checks.

Two certificate families are evaluated along closed-loop trajectories:

* velocity form: storage in the state rate, V = |x'|^2_{H''}/2, paired
  with the composite |M y|^2_L / 2 coupling energy (plus a |rho - y|^2_K
  term for the filtered laws);
* shifted form: Bregman storage of the stored energy about a solved
  equilibrium, paired with |xi - xi*|^2 / 2 (plus |rho - y*|^2_K).

Both composites obey exact decrease identities along the simulated
closed loops, so the per-point residual d/dt(storage) + dissipation is
roundoff-small; the checks report the worst residual against the
tolerance tol * (1 + |storage|).

When the voltage-regulating feedforward is active its R*y term exactly
cancels the filter-resistance drop, so the loop dissipates through the
loads and lines only; the effective dissipation used in the identities
then excludes the R block.  The raw (full-R) functions remain available
for the open-loop supply-rate checks.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .controllers import Variant
from .model import GridParameters

__all__ = [
    "krasovskii_storage",
    "krasovskii_dissipation",
    "shifted_storage",
    "shifted_dissipation",
    "MarginReport",
    "DomainCheck",
    "verify_inequality_along_trajectory",
    "verify_domain_gamma",
    "auto_gamma",
    "exponential_decay_bound",
    "effective_filter_resistance",
    "DEFAULT_TOL",
]

DEFAULT_TOL = 1e-6


def effective_filter_resistance(spec, params: GridParameters) -> np.ndarray:
    """Filter resistance as seen by the closed loop (zero when the
    voltage-regulating feedforward cancels it)."""
    if spec.u_bar_mode == "voltage":
        return np.zeros(params.nu)
    return params.r


# ---------------------------------------------------------------------------
# pointwise storage / dissipation


def krasovskii_storage(xdot, params: GridParameters) -> float:
    """Velocity-form storage |x'|^2 weighted by the energy Hessian, halved."""
    xdot = np.asarray(xdot, dtype=float)
    nu = params.nu
    return 0.5 * float(xdot[:nu] @ (xdot[:nu] / params.l)
                       + xdot[nu:2 * nu] @ (xdot[nu:2 * nu] / params.c)
                       + xdot[2 * nu:] @ (xdot[2 * nu:] / params.lt))


def krasovskii_dissipation(xdot, q, params: GridParameters, pl=None, gl=None,
                           r_filter=None) -> float:
    """Velocity-form dissipation; the constant-power loads contribute the
    indefinite -sum P q'^2 / q^2 correction."""
    xdot = np.asarray(xdot, dtype=float)
    q = np.asarray(q, dtype=float)
    nu = params.nu
    pl = params.pl if pl is None else np.asarray(pl, dtype=float)
    gl = params.gl if gl is None else np.asarray(gl, dtype=float)
    r = params.r if r_filter is None else np.asarray(r_filter, dtype=float)
    dphi, dq, dphit = xdot[:nu], xdot[nu:2 * nu], xdot[2 * nu:]
    return float(np.sum(r * (dphi / params.l) ** 2)
                 + np.sum(gl * (dq / params.c) ** 2)
                 + np.sum(params.rt * (dphit / params.lt) ** 2)
                 - np.sum(pl * dq**2 / q**2))


def shifted_storage(x, x_star, params: GridParameters) -> float:
    """Bregman divergence of the stored energy about x_star (computed from
    the definition, not the quadratic shortcut)."""
    from .model import grad_hamiltonian, hamiltonian

    x = np.asarray(x, dtype=float)
    x_star = np.asarray(x_star, dtype=float)
    e = x - x_star
    return hamiltonian(x, params) - hamiltonian(x_star, params) \
        - float(grad_hamiltonian(x_star, params) @ e)


def shifted_dissipation(e, q, q_star, params: GridParameters, pl=None, gl=None,
                        r_filter=None) -> float:
    """Shifted dissipation; the load correction carries q * q* denominators."""
    e = np.asarray(e, dtype=float)
    nu = params.nu
    pl = params.pl if pl is None else np.asarray(pl, dtype=float)
    gl = params.gl if gl is None else np.asarray(gl, dtype=float)
    r = params.r if r_filter is None else np.asarray(r_filter, dtype=float)
    e_phi, e_q, e_t = e[:nu], e[nu:2 * nu], e[2 * nu:]
    return float(np.sum(r * (e_phi / params.l) ** 2)
                 + np.sum(gl * (e_q / params.c) ** 2)
                 + np.sum(params.rt * (e_t / params.lt) ** 2)
                 - np.sum(pl * e_q**2 / (np.asarray(q) * np.asarray(q_star))))


# ---------------------------------------------------------------------------
# trajectory-level checks


@dataclass
class MarginReport:
    kind: str
    tol: float
    times: np.ndarray
    margin: np.ndarray              # d/dt storage + dissipation (NaN off-mask)
    storage_composite: np.ndarray
    dissipation_composite: np.ndarray
    storage_raw: np.ndarray         # V_K or the Bregman value
    dissipation_raw: np.ndarray     # W alone, no coupling/filter extras
    mask: np.ndarray
    max_margin: float
    max_margin_rel: float           # max of margin / (1 + |storage|)
    frac_violating: float
    passed: bool
    fd_max_dev: float = None        # analytic-vs-differenced d/dt storage
    fd_rel_dev: float = None        # same, scaled by 1 + |rate|

    def as_dict(self) -> dict:
        return {
            "applicable": True,
            "kind": self.kind,
            "tol": self.tol,
            "max_margin": self.max_margin,
            "max_margin_rel": self.max_margin_rel,
            "frac_violating": self.frac_violating,
            "pass": self.passed,
            "fd_max_dev": self.fd_max_dev,
            "fd_rel_dev": self.fd_rel_dev,
            "points": int(self.mask.sum()),
        }


def _finish_report(kind, tol, times, margin, v_comp, w_comp, v_raw, w_raw,
                   mask, stride_dense):
    valid = mask & np.isfinite(margin)
    scale = 1.0 + np.abs(v_comp)
    rel = np.where(valid, margin / scale, -np.inf)
    max_rel = float(rel.max()) if valid.any() else float("nan")
    max_abs = float(margin[valid].max()) if valid.any() else float("nan")
    viol = float(np.mean(margin[valid] > tol * scale[valid])) if valid.any() else 0.0
    fd_dev = fd_rel = None
    if stride_dense and valid.sum() >= 5:
        # central-difference cross-check of the analytic rate; needs the
        # dense grid (undersampled logs alias the fast transients)
        idx = np.where(valid)[0]
        run = idx[(idx > 0) & (idx < times.size - 1)]
        run = run[np.isin(run - 1, idx) & np.isin(run + 1, idx)]
        if run.size:
            dt2 = times[run + 1] - times[run - 1]
            fd = (v_comp[run + 1] - v_comp[run - 1]) / dt2
            analytic = margin[run] - w_comp[run]
            dev = np.abs(fd - analytic)
            fd_dev = float(dev.max())
            fd_rel = float((dev / (1.0 + np.abs(analytic))).max())
    margin_out = np.where(mask, margin, np.nan)
    return MarginReport(
        kind=kind, tol=tol, times=times, margin=margin_out,
        storage_composite=v_comp, dissipation_composite=w_comp,
        storage_raw=v_raw, dissipation_raw=w_raw,
        mask=valid, max_margin=max_abs, max_margin_rel=max_rel,
        frac_violating=viol, passed=bool(max_rel <= tol) if valid.any() else False,
        fd_max_dev=fd_dev, fd_rel_dev=fd_rel,
    )


def _batch_loads(traj, ctx):
    from .simulation import loads_on_grid

    return loads_on_grid(traj.times, ctx.params, ctx.profile)


def _power_rate_on_grid(times, profile):
    rate = np.zeros((times.size, profile.nu)) if profile is not None else None
    if profile is None:
        return None
    for s in profile.sinusoids:
        on = times >= s.onset
        env = s.amplitude * np.exp(-s.decay * (times[on] - s.onset))
        rate[on, s.node] += env * (s.frequency * np.cos(s.frequency * times[on])
                                   - s.decay * np.sin(s.frequency * times[on]))
    return rate


def _xddot(traj, ctx, gl_t, pl_t):
    """Second state derivative from the model Jacobian and the input rate."""
    params = ctx.params
    nu = params.nu
    x, xd = traj.states, traj.xdot
    q = x[:, nu:2 * nu]
    v = q / params.c
    dphi, dq, dphit = xd[:, :nu], xd[:, nu:2 * nu], xd[:, 2 * nu:]
    out = np.empty_like(xd)
    out[:, :nu] = -dphi * (params.r / params.l) - dq / params.c + traj.udot
    out[:, nu:2 * nu] = (dphi / params.l
                         + (dphit / params.lt) @ ctx.incidence.T
                         + dq * (-gl_t / params.c + pl_t * params.c / q**2))
    out[:, 2 * nu:] = -(dq / params.c) @ ctx.incidence - dphit * (params.rt / params.lt)
    rate = _power_rate_on_grid(traj.times, ctx.profile)
    if rate is not None:
        out[:, nu:2 * nu] -= rate / v
    return out


def _verify_krasovskii(traj, ctx, tol):
    params, spec, ops = ctx.params, ctx.spec, ctx.ops
    nu = params.nu
    gl_t, _, pl_t = _batch_loads(traj, ctx)
    r_eff = effective_filter_resistance(spec, params)
    xd = traj.xdot
    q = traj.states[:, nu:2 * nu]
    dphi, dq, dphit = xd[:, :nu], xd[:, nu:2 * nu], xd[:, 2 * nu:]

    v_k = 0.5 * (np.sum(dphi**2 / params.l, axis=1)
                 + np.sum(dq**2 / params.c, axis=1)
                 + np.sum(dphit**2 / params.lt, axis=1))
    w_eff = (np.sum(r_eff * (dphi / params.l) ** 2, axis=1)
             + np.sum(gl_t * (dq / params.c) ** 2, axis=1)
             + np.sum(params.rt * (dphit / params.lt) ** 2, axis=1)
             - np.sum(pl_t * dq**2 / q**2, axis=1))

    z = traj.y @ spec.m_weight.T
    zd = traj.ydot @ spec.m_weight.T
    coupling = 0.5 * np.einsum("ij,jk,ik->i", z, ops.l_mat, z)
    d_coupling = np.einsum("ij,jk,ik->i", z, ops.l_mat, zd)

    v_comp = v_k + coupling
    w_comp = w_eff.copy()
    d_extra = np.zeros_like(v_k)
    var = spec.variant
    if var.uses_rho:
        n_e = ops.n_edges
        rho = traj.ctrl_states[:, nu:] if var.uses_u else traj.ctrl_states[:, n_e:]
        err = rho - traj.y
        kq = err @ spec.k_gain.T
        v_comp = v_comp + 0.5 * np.sum(err * kq, axis=1)
        w_comp = w_comp + np.sum(err * kq, axis=1)
        rhod = traj.y - rho
        d_extra += np.sum((rhod - traj.ydot) * kq, axis=1)
    if var in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        ey = traj.ydot @ ops.etm.T
        w_comp = w_comp + np.sum(ey * (ey @ ops.g_damping.T), axis=1)

    xdd = _xddot(traj, ctx, gl_t, pl_t)
    dv_k = (np.sum(dphi * xdd[:, :nu] / params.l, axis=1)
            + np.sum(dq * xdd[:, nu:2 * nu] / params.c, axis=1)
            + np.sum(dphit * xdd[:, 2 * nu:] / params.lt, axis=1))
    dv_comp = dv_k + d_coupling + d_extra

    margin = dv_comp + w_comp
    mask = np.ones_like(v_k, dtype=bool)
    return _finish_report("krasovskii", tol, traj.times, margin, v_comp,
                          w_comp, v_k, w_eff, mask, traj.stride == 1)


def _verify_shifted(traj, ctx, equilibrium, t_from, tol):
    params, spec, ops = ctx.params, ctx.spec, ctx.ops
    nu = params.nu
    if not spec.variant.uses_xi:
        raise ValueError("shifted composite needs an edge-state controller")
    if equilibrium is None:
        raise ValueError("shifted check needs a solved equilibrium")
    gl_t, _, pl_t = _batch_loads(traj, ctx)
    r_eff = effective_filter_resistance(spec, params)
    x_star = equilibrium.x
    xi_star = equilibrium.xi
    q_star = x_star[nu:2 * nu]
    y_star = x_star[:nu] / params.l

    e = traj.states - x_star
    e_phi, e_q, e_t = e[:, :nu], e[:, nu:2 * nu], e[:, 2 * nu:]
    q = traj.states[:, nu:2 * nu]
    h_s = 0.5 * (np.sum(e_phi**2 / params.l, axis=1)
                 + np.sum(e_q**2 / params.c, axis=1)
                 + np.sum(e_t**2 / params.lt, axis=1))
    w_eff = (np.sum(r_eff * (e_phi / params.l) ** 2, axis=1)
             + np.sum(gl_t * (e_q / params.c) ** 2, axis=1)
             + np.sum(params.rt * (e_t / params.lt) ** 2, axis=1)
             - np.sum(pl_t * e_q**2 / (q * q_star), axis=1))

    n_e = ops.n_edges
    xi_err = traj.ctrl_states[:, :n_e] - xi_star
    v_comp = h_s + 0.5 * np.sum(xi_err**2, axis=1)
    w_comp = w_eff.copy()
    xi_dot = traj.y @ ops.etm.T
    dv_comp = (np.sum(e_phi * traj.xdot[:, :nu] / params.l, axis=1)
               + np.sum(e_q * traj.xdot[:, nu:2 * nu] / params.c, axis=1)
               + np.sum(e_t * traj.xdot[:, 2 * nu:] / params.lt, axis=1)
               + np.sum(xi_err * xi_dot, axis=1))
    var = spec.variant
    if var in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        ey = traj.y @ ops.etm.T
        w_comp = w_comp + np.sum(ey * (ey @ ops.g_damping.T), axis=1)
    if var is Variant.SHIFTED_XI_DAMPED_FILTERED:
        rho = traj.ctrl_states[:, n_e:]
        err = rho - y_star
        kq = err @ spec.k_gain.T
        v_comp = v_comp + 0.5 * np.sum(err * kq, axis=1)
        w_comp = w_comp + np.sum(err * kq, axis=1)
        dv_comp = dv_comp + np.sum((traj.y - rho) * kq, axis=1)

    margin = dv_comp + w_comp
    mask = traj.times >= (t_from if t_from is not None else traj.times[0])
    return _finish_report("shifted", tol, traj.times, margin, v_comp,
                          w_comp, h_s, w_eff, mask, traj.stride == 1)


def verify_inequality_along_trajectory(traj, kind, ctx, equilibrium=None,
                                       t_from=None, tol=DEFAULT_TOL) -> MarginReport:
    """Residual report for one certificate family along a finalized
    trajectory.  'krasovskii' checks the velocity composite on the whole
    run; 'shifted' checks the Bregman composite from t_from on, against
    the supplied equilibrium."""
    if traj.y is None:
        raise ValueError("trajectory is missing derived channels; finalize it first")
    if kind == "krasovskii":
        return _verify_krasovskii(traj, ctx, tol)
    if kind == "shifted":
        return _verify_shifted(traj, ctx, equilibrium, t_from, tol)
    raise ValueError(f"unknown certificate kind {kind!r}")


def krasovskii_supply_residual(traj, ctx):
    """Open-loop supply-rate residual dV + W_full - y'^T u' (full R);
    zero up to roundoff for piecewise-constant loads."""
    params = ctx.params
    nu = params.nu
    gl_t, _, pl_t = _batch_loads(traj, ctx)
    xd = traj.xdot
    q = traj.states[:, nu:2 * nu]
    dphi, dq, dphit = xd[:, :nu], xd[:, nu:2 * nu], xd[:, 2 * nu:]
    w_full = (np.sum(params.r * (dphi / params.l) ** 2, axis=1)
              + np.sum(gl_t * (dq / params.c) ** 2, axis=1)
              + np.sum(params.rt * (dphit / params.lt) ** 2, axis=1)
              - np.sum(pl_t * dq**2 / q**2, axis=1))
    xdd = _xddot(traj, ctx, gl_t, pl_t)
    dv_k = (np.sum(dphi * xdd[:, :nu] / params.l, axis=1)
            + np.sum(dq * xdd[:, nu:2 * nu] / params.c, axis=1)
            + np.sum(dphit * xdd[:, 2 * nu:] / params.lt, axis=1))
    supply = np.sum(traj.ydot * traj.udot, axis=1)
    return dv_k + w_full - supply


@dataclass
class DomainCheck:
    gamma: float
    worst_margin: float
    t_worst: float
    node_worst: int
    passed: bool

    def as_dict(self) -> dict:
        return {
            "applicable": True,
            "gamma": self.gamma,
            "worst_margin": self.worst_margin,
            "t_worst": self.t_worst,
            "node_worst": self.node_worst,
            "pass": self.passed,
        }


def auto_gamma(params: GridParameters, profile=None, v_ref: float = 380.0) -> float:
    """Half the smallest load-conductance margin at the reference voltage,
    taking the largest power load each node can see under the profile."""
    p_max = params.pl.copy()
    if profile is not None:
        p_max = p_max + np.maximum(profile.dpl, 0.0)
        for s in profile.sinusoids:
            p_max[s.node] += abs(s.amplitude)
    margins = params.gl - p_max / v_ref**2
    worst = float(margins.min())
    if worst <= 0:
        raise ValueError(
            f"no positive conductance margin at {v_ref:.0f} V (min {worst:.3e} S); "
            "the strictness condition cannot hold near the operating point"
        )
    return 0.5 * worst


def verify_domain_gamma(traj, ctx, gamma: float = None) -> DomainCheck:
    """Worst trajectory margin of GL - diag(C^2 P / q^2) - gamma I."""
    params = ctx.params
    nu = params.nu
    if gamma is None:
        gamma = auto_gamma(params, ctx.profile,
                           ctx.spec.v_ref if ctx.spec.u_bar_mode == "voltage" else 380.0)
    gl_t, _, pl_t = _batch_loads(traj, ctx)
    q = traj.states[:, nu:2 * nu]
    margins = gl_t - pl_t * params.c**2 / q**2 - gamma
    flat = int(np.argmin(margins))
    row, node = divmod(flat, nu)
    worst = float(margins[row, node])
    return DomainCheck(gamma=float(gamma), worst_margin=worst,
                       t_worst=float(traj.times[row]), node_worst=node,
                       passed=bool(worst > 0))


def exponential_decay_bound(traj, ctx, t_from, slack=1e-6):
    """Gronwall-type decay check on the velocity storage after t_from:

        2 V(t) <= exp(-c (t - t0)) * (2 V(t0) + |M y(t0)|^2_L)

    with c taken as the worst pointwise dissipation-to-storage ratio on
    the segment.  Returns the estimated rate and whether the bound held.
    """
    rep = _verify_krasovskii(traj, ctx, DEFAULT_TOL)
    sel = traj.times >= t_from
    idx = np.where(sel)[0]
    v_k = rep.storage_raw[idx]
    w = rep.dissipation_composite[idx]
    z = traj.y[idx] @ ctx.spec.m_weight.T
    coupling0 = float(np.einsum("j,jk,k->", z[0], ctx.ops.l_mat, z[0]))
    live = v_k > 1e-12 * max(v_k.max(), 1.0)
    if not live.any():
        return {"rate": 0.0, "passed": True, "max_overshoot": 0.0}
    c = float(np.min(w[live] / v_k[live]))
    c = max(c, 0.0)
    t_rel = traj.times[idx] - traj.times[idx[0]]
    bound = np.exp(-c * t_rel) * (2.0 * v_k[0] + coupling0)
    lhs = 2.0 * v_k
    over = lhs - bound * (1.0 + slack)
    return {
        "rate": c,
        "passed": bool(np.all(over <= slack * (1.0 + bound))),
        "max_overshoot": float(over.max()),
    }
