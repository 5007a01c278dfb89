# cython: boundscheck=False, wraparound=False, cdivision=True, initializedcheck=False
"""Compiled integration kernels (hot path).

Mirrors gridshare._core._grid_np step for step; see that module for the
reference semantics and status codes.
"""

import numpy as np

from libc.math cimport exp, fabs, isfinite, sin

STATUS_OK = 0
STATUS_GUARD = 1
STATUS_NONFINITE = 2

BACKEND_NAME = "cython"


cdef void _rhs(double t,
               double[::1] x, double[::1] w,
               double[::1] dx, double[::1] dw,
               int nu, int mu, int ne, int nw,
               double[::1] r, double[::1] l, double[::1] c,
               double[::1] rt, double[::1] lt,
               double[::1] gl, double[::1] il, double[::1] pl,
               double[::1] dgl, double[::1] dil, double[::1] dpl, double t_step,
               long[::1] sin_node, double[::1] sin_amp, double[::1] sin_decay,
               double[::1] sin_freq, double[::1] sin_onset,
               double[::1] d_ext, long[::1] tails, long[::1] heads,
               int variant,
               double[:, ::1] mlm, double[:, ::1] mte, double[:, ::1] etm,
               double[:, ::1] g_damp, double[:, ::1] k_gain,
               int ubar_mode, double[::1] ubar_const, double v_ref,
               double[::1] ybuf, double[::1] vbuf, double[::1] ubuf,
               double[::1] plbuf, double[::1] etmy, double[::1] gvbuf):
    cdef int i, j, k, node
    cdef double acc, flow, stepped

    for i in range(nu):
        ybuf[i] = x[i] / l[i]
        vbuf[i] = x[nu + i] / c[i]

    # controller output
    if variant <= 2:
        for i in range(nu):
            ubuf[i] = w[i]
    elif variant == 3:
        for i in range(nu):
            acc = 0.0
            for j in range(ne):
                acc += mte[i, j] * w[j]
            ubuf[i] = -acc
    else:
        for j in range(ne):
            acc = 0.0
            for i in range(nu):
                acc += etm[j, i] * ybuf[i]
            etmy[j] = acc
        for j in range(ne):
            acc = 0.0
            for k in range(ne):
                acc += g_damp[j, k] * etmy[k]
            gvbuf[j] = w[j] + acc
        for i in range(nu):
            acc = 0.0
            for j in range(ne):
                acc += mte[i, j] * gvbuf[j]
            ubuf[i] = -acc
        if variant == 5:
            for i in range(nu):
                acc = 0.0
                for j in range(nu):
                    acc += k_gain[i, j] * w[ne + j]
                ubuf[i] -= acc
    if ubar_mode == 2:
        for i in range(nu):
            ubuf[i] += v_ref + r[i] * ybuf[i]
    elif ubar_mode == 1:
        for i in range(nu):
            ubuf[i] += ubar_const[i]

    # instantaneous power loads
    stepped = 1.0 if t >= t_step else 0.0
    for i in range(nu):
        plbuf[i] = pl[i] + stepped * dpl[i]
    for k in range(sin_node.shape[0]):
        if t >= sin_onset[k]:
            node = sin_node[k]
            plbuf[node] += (sin_amp[k]
                            * exp(-sin_decay[k] * (t - sin_onset[k]))
                            * sin(sin_freq[k] * t))

    # plant blocks
    for i in range(nu):
        dx[i] = -r[i] * ybuf[i] - vbuf[i] + ubuf[i] + d_ext[i]
        dx[nu + i] = (ybuf[i]
                      - (gl[i] + stepped * dgl[i]) * vbuf[i]
                      - (il[i] + stepped * dil[i])
                      - plbuf[i] / vbuf[i]
                      + d_ext[nu + i])
    for k in range(mu):
        flow = x[2 * nu + k] / lt[k]
        dx[nu + tails[k]] += flow
        dx[nu + heads[k]] -= flow
        dx[2 * nu + k] = (-(vbuf[tails[k]] - vbuf[heads[k]])
                          - rt[k] * flow + d_ext[2 * nu + k])

    # controller state derivative
    if variant <= 2:
        for i in range(nu):
            acc = 0.0
            for j in range(nu):
                acc += mlm[i, j] * ybuf[j]
            dw[i] = -acc
        if variant == 2:
            for i in range(nu):
                acc = 0.0
                for j in range(nu):
                    acc += k_gain[i, j] * (w[nu + j] - ybuf[j])
                dw[i] += acc
                dw[nu + i] = ybuf[i] - w[nu + i]
    else:
        for j in range(ne):
            acc = 0.0
            for i in range(nu):
                acc += etm[j, i] * ybuf[i]
            dw[j] = acc
        if variant == 5:
            for i in range(nu):
                dw[ne + i] = ybuf[i] - w[ne + i]


def integrate_grid(double[::1] x0, double[::1] w0, double t0, double h,
                   long n_steps, long stride,
                   double[::1] r, double[::1] l, double[::1] c,
                   double[::1] rt, double[::1] lt,
                   double[::1] gl, double[::1] il, double[::1] pl,
                   double[::1] dgl, double[::1] dil, double[::1] dpl, double t_step,
                   long[::1] sin_node, double[::1] sin_amp, double[::1] sin_decay,
                   double[::1] sin_freq, double[::1] sin_onset,
                   double[::1] d_ext, long[::1] tails, long[::1] heads,
                   int variant, double[:, ::1] m_weight,
                   double[:, ::1] mlm, double[:, ::1] mte, double[:, ::1] etm,
                   double[:, ::1] g_damp, double[:, ::1] k_gain,
                   int ubar_mode, double[::1] ubar_const, double v_ref,
                   double v_guard):
    """Closed-loop DC-network integration; returns a channel dict."""
    cdef int nu = r.shape[0]
    cdef int mu = rt.shape[0]
    cdef int dim = 2 * nu + mu
    cdef int nw = w0.shape[0]
    cdef int ne = etm.shape[0]
    cdef long n_log_max = n_steps // stride + 2

    times_a = np.empty(n_log_max)
    x_log_a = np.empty((n_log_max, dim))
    w_log_a = np.empty((n_log_max, nw))
    cons_a = np.empty(n_steps + 1)
    vavg_a = np.empty(n_steps + 1)
    curr_a = np.empty((n_steps + 1, nu))
    cdef double[::1] times = times_a
    cdef double[:, ::1] x_log = x_log_a
    cdef double[:, ::1] w_log = w_log_a
    cdef double[::1] cons = cons_a
    cdef double[::1] vavg = vavg_a
    cdef double[:, ::1] curr = curr_a

    x_a = np.array(x0, dtype=float)
    w_a = np.array(w0, dtype=float)
    cdef double[::1] x = x_a
    cdef double[::1] w = w_a
    scratch = np.zeros((8, dim))
    cdef double[:, ::1] kx = scratch[:4]
    cdef double[::1] xs = scratch[4]
    wscratch = np.zeros((5, max(nw, 1)))
    cdef double[:, ::1] kw = wscratch[:4]
    cdef double[::1] ws = wscratch[4]
    bufs = np.zeros((4, nu))
    cdef double[::1] ybuf = bufs[0]
    cdef double[::1] vbuf = bufs[1]
    cdef double[::1] ubuf = bufs[2]
    cdef double[::1] plbuf = bufs[3]
    ebufs = np.zeros((2, max(ne, 1)))
    cdef double[::1] etmy = ebufs[0]
    cdef double[::1] gvbuf = ebufs[1]

    cdef int status = STATUS_OK
    cdef long i = 0, n_log = 0
    cdef int j, jj, ok
    cdef double t, vmin, av, zmin, zmax, zi, w6 = h / 6.0

    while True:
        t = t0 + i * h
        ok = 1
        for j in range(dim):
            if not isfinite(x[j]):
                ok = 0
        for j in range(nw):
            if not isfinite(w[j]):
                ok = 0
        if not ok:
            status = STATUS_NONFINITE
            break
        vmin = fabs(x[nu] / c[0])
        av = 0.0
        for j in range(nu):
            vbuf[j] = x[nu + j] / c[j]
            ybuf[j] = x[j] / l[j]
            if fabs(vbuf[j]) < vmin:
                vmin = fabs(vbuf[j])
            av += vbuf[j]
        if vmin < v_guard:
            status = STATUS_GUARD
            break
        zmin = 0.0
        zmax = 0.0
        for j in range(nu):
            zi = 0.0
            for jj in range(nu):
                zi += m_weight[j, jj] * ybuf[jj]
            if j == 0:
                zmin = zi
                zmax = zi
            else:
                if zi < zmin:
                    zmin = zi
                if zi > zmax:
                    zmax = zi
            curr[i, j] = ybuf[j]
        cons[i] = zmax - zmin
        vavg[i] = av / nu
        if i % stride == 0 or i == n_steps:
            times[n_log] = t
            for j in range(dim):
                x_log[n_log, j] = x[j]
            for j in range(nw):
                w_log[n_log, j] = w[j]
            n_log += 1
        if i == n_steps:
            break

        _rhs(t, x, w, kx[0], kw[0], nu, mu, ne, nw, r, l, c, rt, lt,
             gl, il, pl, dgl, dil, dpl, t_step,
             sin_node, sin_amp, sin_decay, sin_freq, sin_onset,
             d_ext, tails, heads, variant, mlm, mte, etm, g_damp, k_gain,
             ubar_mode, ubar_const, v_ref,
             ybuf, vbuf, ubuf, plbuf, etmy, gvbuf)
        for j in range(dim):
            xs[j] = x[j] + 0.5 * h * kx[0, j]
        for j in range(nw):
            ws[j] = w[j] + 0.5 * h * kw[0, j]
        _rhs(t + 0.5 * h, xs, ws, kx[1], kw[1], nu, mu, ne, nw, r, l, c, rt, lt,
             gl, il, pl, dgl, dil, dpl, t_step,
             sin_node, sin_amp, sin_decay, sin_freq, sin_onset,
             d_ext, tails, heads, variant, mlm, mte, etm, g_damp, k_gain,
             ubar_mode, ubar_const, v_ref,
             ybuf, vbuf, ubuf, plbuf, etmy, gvbuf)
        for j in range(dim):
            xs[j] = x[j] + 0.5 * h * kx[1, j]
        for j in range(nw):
            ws[j] = w[j] + 0.5 * h * kw[1, j]
        _rhs(t + 0.5 * h, xs, ws, kx[2], kw[2], nu, mu, ne, nw, r, l, c, rt, lt,
             gl, il, pl, dgl, dil, dpl, t_step,
             sin_node, sin_amp, sin_decay, sin_freq, sin_onset,
             d_ext, tails, heads, variant, mlm, mte, etm, g_damp, k_gain,
             ubar_mode, ubar_const, v_ref,
             ybuf, vbuf, ubuf, plbuf, etmy, gvbuf)
        for j in range(dim):
            xs[j] = x[j] + h * kx[2, j]
        for j in range(nw):
            ws[j] = w[j] + h * kw[2, j]
        _rhs(t + h, xs, ws, kx[3], kw[3], nu, mu, ne, nw, r, l, c, rt, lt,
             gl, il, pl, dgl, dil, dpl, t_step,
             sin_node, sin_amp, sin_decay, sin_freq, sin_onset,
             d_ext, tails, heads, variant, mlm, mte, etm, g_damp, k_gain,
             ubar_mode, ubar_const, v_ref,
             ybuf, vbuf, ubuf, plbuf, etmy, gvbuf)
        for j in range(dim):
            x[j] = x[j] + w6 * (kx[0, j] + 2.0 * kx[1, j] + 2.0 * kx[2, j] + kx[3, j])
        for j in range(nw):
            w[j] = w[j] + w6 * (kw[0, j] + 2.0 * kw[1, j] + 2.0 * kw[2, j] + kw[3, j])
        i += 1

    cdef long n_metric = i + 1 if status == STATUS_OK else i
    return {
        "status": status,
        "steps_done": i,
        "times": times_a[:n_log].copy(),
        "states": x_log_a[:n_log].copy(),
        "ctrl": w_log_a[:n_log].copy(),
        "cons_err": cons_a[:n_metric].copy(),
        "v_avg": vavg_a[:n_metric].copy(),
        "currents": curr_a[:n_metric].copy(),
    }


def integrate_affine(double[:, ::1] a_mat, double[::1] c_vec, double[::1] z0,
                     double t0, double h, long n_steps, long stride):
    """RK4 for z' = A z + c on a fixed grid; returns (status, z_log, times)."""
    cdef int n = z0.shape[0]
    cdef long n_log_max = n_steps // stride + 2
    times_a = np.empty(n_log_max)
    z_log_a = np.empty((n_log_max, n))
    cdef double[::1] times = times_a
    cdef double[:, ::1] z_log = z_log_a
    z_a = np.array(z0, dtype=float)
    cdef double[::1] z = z_a
    scratch = np.zeros((5, n))
    cdef double[:, ::1] kz = scratch[:4]
    cdef double[::1] zs = scratch[4]

    cdef int status = STATUS_OK
    cdef long i = 0, n_log = 0
    cdef int j, jj, ok, stage
    cdef double acc, w6 = h / 6.0
    cdef double[::1] src

    while True:
        ok = 1
        for j in range(n):
            if not isfinite(z[j]):
                ok = 0
        if not ok:
            status = STATUS_NONFINITE
            break
        if i % stride == 0 or i == n_steps:
            times[n_log] = t0 + i * h
            for j in range(n):
                z_log[n_log, j] = z[j]
            n_log += 1
        if i == n_steps:
            break
        for stage in range(4):
            if stage == 0:
                src = z
            else:
                if stage == 3:
                    for j in range(n):
                        zs[j] = z[j] + h * kz[2, j]
                else:
                    for j in range(n):
                        zs[j] = z[j] + 0.5 * h * kz[stage - 1, j]
                src = zs
            for j in range(n):
                acc = c_vec[j]
                for jj in range(n):
                    acc += a_mat[j, jj] * src[jj]
                kz[stage, j] = acc
        for j in range(n):
            z[j] = z[j] + w6 * (kz[0, j] + 2.0 * kz[1, j] + 2.0 * kz[2, j] + kz[3, j])
        i += 1
    return status, z_log_a[:n_log].copy(), times_a[:n_log].copy()
