"""Pure-numpy integration kernels (fallback backend).

Semantics match gridshare._core._grid_cy step for step: classical RK4 on
a fixed grid, loads re-evaluated at every stage time, guards checked at
accepted grid points.  Status codes: 0 ok, 1 voltage guard tripped,
2 non-finite state.
"""

from __future__ import annotations

import math

import numpy as np

STATUS_OK = 0
STATUS_GUARD = 1
STATUS_NONFINITE = 2

BACKEND_NAME = "numpy"


def _load_triple(t, gl, il, pl, dgl, dil, dpl, t_step,
                 sin_node, sin_amp, sin_decay, sin_freq, sin_onset):
    if t >= t_step:
        gl_t = gl + dgl
        il_t = il + dil
        pl_t = pl + dpl
    else:
        gl_t, il_t, pl_t = gl, il, pl.copy()
    hit = False
    for j in range(sin_node.shape[0]):
        if t >= sin_onset[j]:
            if not hit:
                pl_t = pl_t.copy() if pl_t is pl else pl_t
                hit = True
            pl_t[sin_node[j]] += (sin_amp[j]
                                  * math.exp(-sin_decay[j] * (t - sin_onset[j]))
                                  * math.sin(sin_freq[j] * t))
    return gl_t, il_t, pl_t


def integrate_grid(x0, w0, t0, h, n_steps, stride,
                   r, l, c, rt, lt,
                   gl, il, pl,
                   dgl, dil, dpl, t_step,
                   sin_node, sin_amp, sin_decay, sin_freq, sin_onset,
                   d_ext, tails, heads,
                   variant, m_weight, mlm, mte, etm, g_damp, k_gain,
                   ubar_mode, ubar_const, v_ref, v_guard):
    """Closed-loop DC-network integration; returns a channel dict."""
    nu = r.shape[0]
    mu = rt.shape[0]
    dim = 2 * nu + mu
    nw = w0.shape[0]
    n_e = etm.shape[0]

    dmat = np.zeros((nu, mu))
    for k in range(mu):
        dmat[tails[k], k] = 1.0
        dmat[heads[k], k] = -1.0

    def rhs(t, x, w):
        phi = x[:nu]
        q = x[nu:2 * nu]
        phit = x[2 * nu:]
        v = q / c
        y = phi / l
        # controller output
        if variant <= 2:
            u_alg = w[:nu]
        elif variant == 3:
            u_alg = -(mte @ w[:n_e])
        else:
            u_alg = -(mte @ (w[:n_e] + g_damp @ (etm @ y)))
            if variant == 5:
                u_alg = u_alg - k_gain @ w[n_e:]
        if ubar_mode == 2:
            u_tot = u_alg + v_ref + r * y
        elif ubar_mode == 1:
            u_tot = u_alg + ubar_const
        else:
            u_tot = u_alg
        # plant
        gl_t, il_t, pl_t = _load_triple(t, gl, il, pl, dgl, dil, dpl, t_step,
                                        sin_node, sin_amp, sin_decay, sin_freq,
                                        sin_onset)
        i_line = phit / lt
        dx = np.empty(dim)
        dx[:nu] = -r * y - v + u_tot
        dx[nu:2 * nu] = y + dmat @ i_line - gl_t * v - il_t - pl_t / v
        dx[2 * nu:] = -(dmat.T @ v) - rt * i_line
        dx += d_ext
        # controller state derivative
        dw = np.empty(nw)
        if variant <= 2:
            dw[:nu] = -(mlm @ y)
            if variant == 2:
                rho = w[nu:]
                dw[:nu] += k_gain @ (rho - y)
                dw[nu:] = y - rho
        else:
            dw[:n_e] = etm @ y
            if variant == 5:
                dw[n_e:] = y - w[n_e:]
        return dx, dw

    n_log_max = n_steps // stride + 2
    times = np.empty(n_log_max)
    x_log = np.empty((n_log_max, dim))
    w_log = np.empty((n_log_max, nw))
    cons_err = np.empty(n_steps + 1)
    v_avg = np.empty(n_steps + 1)
    currents = np.empty((n_steps + 1, nu))

    x = x0.astype(float).copy()
    w = w0.astype(float).copy()
    status = STATUS_OK
    n_log = 0
    i = 0
    while True:
        t = t0 + i * h
        v = x[nu:2 * nu] / c
        y = x[:nu] / l
        if not (np.all(np.isfinite(x)) and np.all(np.isfinite(w))):
            status = STATUS_NONFINITE
            break
        if np.abs(v).min() < v_guard:
            status = STATUS_GUARD
            break
        z = m_weight @ y
        cons_err[i] = z.max() - z.min()
        v_avg[i] = v.mean()
        currents[i] = y
        if i % stride == 0 or i == n_steps:
            times[n_log] = t
            x_log[n_log] = x
            w_log[n_log] = w
            n_log += 1
        if i == n_steps:
            break
        k1x, k1w = rhs(t, x, w)
        k2x, k2w = rhs(t + 0.5 * h, x + 0.5 * h * k1x, w + 0.5 * h * k1w)
        k3x, k3w = rhs(t + 0.5 * h, x + 0.5 * h * k2x, w + 0.5 * h * k2w)
        k4x, k4w = rhs(t + h, x + h * k3x, w + h * k3w)
        x = x + (h / 6.0) * (k1x + 2.0 * k2x + 2.0 * k3x + k4x)
        w = w + (h / 6.0) * (k1w + 2.0 * k2w + 2.0 * k3w + k4w)
        i += 1

    return {
        "status": status,
        "steps_done": i,
        "times": times[:n_log].copy(),
        "states": x_log[:n_log].copy(),
        "ctrl": w_log[:n_log].copy(),
        "cons_err": cons_err[:i + 1].copy() if status == STATUS_OK else cons_err[:i].copy(),
        "v_avg": v_avg[:i + 1].copy() if status == STATUS_OK else v_avg[:i].copy(),
        "currents": currents[:i + 1].copy() if status == STATUS_OK else currents[:i].copy(),
    }


def integrate_affine(a_mat, c_vec, z0, t0, h, n_steps, stride):
    """RK4 for z' = A z + c on a fixed grid; returns (status, z_log, times)."""
    a_mat = np.ascontiguousarray(a_mat, dtype=float)
    c_vec = np.ascontiguousarray(c_vec, dtype=float)
    z = np.asarray(z0, dtype=float).copy()
    n_log_max = n_steps // stride + 2
    times = np.empty(n_log_max)
    z_log = np.empty((n_log_max, z.size))
    status = STATUS_OK
    n_log = 0
    i = 0
    while True:
        if not np.all(np.isfinite(z)):
            status = STATUS_NONFINITE
            break
        if i % stride == 0 or i == n_steps:
            times[n_log] = t0 + i * h
            z_log[n_log] = z
            n_log += 1
        if i == n_steps:
            break
        k1 = a_mat @ z + c_vec
        k2 = a_mat @ (z + 0.5 * h * k1) + c_vec
        k3 = a_mat @ (z + 0.5 * h * k2) + c_vec
        k4 = a_mat @ (z + h * k3) + c_vec
        z = z + (h / 6.0) * (k1 + 2.0 * k2 + 2.0 * k3 + k4)
        i += 1
    return status, z_log[:n_log].copy(), times[:n_log].copy()
