"""Linear passive plants: certificate checking and the closed-form
consensus value.

For a certified plant (P A + A^T P <= -Q, P B = H^T, P, Q > 0, B full
column rank) driven by the integral consensus law, the steady-state
output level and state are available in closed form; this module is the
exact oracle the closed-loop simulations are checked against.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import graph as graph_mod
from ._core import backend

__all__ = [
    "LinearPlant",
    "PassivityCheck",
    "ConsensusPoint",
    "check_passivity",
    "consensus_value",
    "closed_loop_system",
    "simulate_closed_loop",
    "simulate_and_compare",
    "random_certified_plant",
]


@dataclass(frozen=True)
class LinearPlant:
    """x' = A x + B u + d, y = H x with constant disturbance d."""

    a: np.ndarray
    b: np.ndarray
    h: np.ndarray
    d: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=float))
        b = np.atleast_2d(np.asarray(self.b, dtype=float))
        hm = np.atleast_2d(np.asarray(self.h, dtype=float))
        d = np.asarray(self.d, dtype=float)
        n = a.shape[0]
        if a.shape != (n, n):
            raise ValueError("A must be square")
        if b.shape[0] != n or hm.shape[1] != n or d.shape != (n,):
            raise ValueError("B, H, d dimensions must match A")
        if np.linalg.matrix_rank(b) < b.shape[1]:
            raise ValueError("B must have full column rank")
        for name, v in (("a", a), ("b", b), ("h", hm), ("d", d)):
            object.__setattr__(self, name, v)

    @property
    def n(self) -> int:
        return self.a.shape[0]

    @property
    def m(self) -> int:
        return self.b.shape[1]


@dataclass(frozen=True)
class PassivityCheck:
    certified: bool
    max_eig: float          # largest eigenvalue of P A + A^T P + Q
    pb_deviation: float     # max-abs of P B - H^T
    witness: np.ndarray = None  # eigenvector violating the matrix inequality


def _check_pd(name, mat):
    mat = np.atleast_2d(np.asarray(mat, dtype=float))
    if not np.allclose(mat, mat.T, atol=1e-10 * (1 + np.abs(mat).max())):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")
    return mat


def check_passivity(plant: LinearPlant, p: np.ndarray, q: np.ndarray) -> PassivityCheck:
    """Verify the supplied (P, Q) certificate.

    Feasibility only: checks lambda_max(P A + A^T P + Q) <= eps and
    ||P B - H^T||_max <= eps with eps = 1e-9 * (1 + matrix scale).
    """
    p = _check_pd("P", p)
    q = _check_pd("Q", q)
    lyap = p @ plant.a + plant.a.T @ p + q
    lyap = 0.5 * (lyap + lyap.T)
    eigs, vecs = np.linalg.eigh(lyap)
    max_eig = float(eigs[-1])
    pb_dev = float(np.abs(p @ plant.b - plant.h.T).max())
    eps = 1e-9 * (1.0 + max(np.abs(lyap).max(), np.abs(plant.h).max()))
    certified = max_eig <= eps and pb_dev <= eps
    witness = None if certified else vecs[:, -1]
    return PassivityCheck(certified=certified, max_eig=max_eig,
                          pb_deviation=pb_dev, witness=witness)


@dataclass(frozen=True)
class ConsensusPoint:
    alpha: float
    x_star: np.ndarray
    u_star: np.ndarray      # steady-state plant input (u_bar included)
    e_xi_star: np.ndarray   # steady-state value of E xi


def consensus_value(plant: LinearPlant, u_bar=None) -> ConsensusPoint:
    """Closed-form consensus level and equilibrium of the consensus loop.

    Requires A and H A^-1 B nonsingular; for a certified plant with full
    column rank B the latter is automatic, so a singular product is
    reported as a certificate inconsistency.
    """
    n, m = plant.n, plant.m
    u_bar = np.zeros(m) if u_bar is None else np.asarray(u_bar, dtype=float)
    try:
        a_inv_b = np.linalg.solve(plant.a, plant.b)
        a_inv_dbar = np.linalg.solve(plant.a, plant.b @ u_bar + plant.d)
    except np.linalg.LinAlgError as exc:
        raise ValueError("A is singular; no unique forced equilibrium") from exc
    hab = plant.h @ a_inv_b
    cond = np.linalg.cond(hab)
    if not np.isfinite(cond) or cond > 1e12:
        raise ValueError(
            "H A^-1 B is (numerically) singular, which contradicts a valid "
            f"passivity certificate with full-rank B (cond = {cond:.2e})"
        )
    hab_inv = np.linalg.inv(hab)
    ones = np.ones(m)
    alpha = -float(ones @ hab_inv @ (plant.h @ a_inv_dbar)) / float(ones @ hab_inv @ ones)
    # x* = A^-1 B (H A^-1 B)^-1 (alpha 1 + H A^-1 (B u_bar + d)) - A^-1 (B u_bar + d)
    x_star = a_inv_b @ (hab_inv @ (alpha * ones + plant.h @ a_inv_dbar)) - a_inv_dbar
    e_xi_star = hab_inv @ (alpha * ones + plant.h @ a_inv_dbar)
    u_star = u_bar - e_xi_star
    return ConsensusPoint(alpha=alpha, x_star=x_star, u_star=u_star,
                          e_xi_star=e_xi_star)


def closed_loop_system(plant: LinearPlant, comm_edges, form="integral",
                       m_weight=None, u_bar=None):
    """Stacked affine closed loop z' = A_cl z + c for either controller form.

    form 'integral': z = (x, u_int), u = u_bar + u_int, u_int' = -M^T L M y.
    form 'xi':       z = (x, xi),    u = u_bar - M^T E xi, xi' = E^T M y.
    """
    n, m = plant.n, plant.m
    u_bar = np.zeros(m) if u_bar is None else np.asarray(u_bar, dtype=float)
    if m_weight is None:
        m_weight = np.eye(m)
    factor = graph_mod.factor_laplacian(comm_edges, m)
    if form == "integral":
        mlm = m_weight.T @ factor.l_mat @ m_weight
        a_cl = np.zeros((n + m, n + m))
        a_cl[:n, :n] = plant.a
        a_cl[:n, n:] = plant.b
        a_cl[n:, :n] = -mlm @ plant.h
        c = np.concatenate([plant.b @ u_bar + plant.d, np.zeros(m)])
    elif form == "xi":
        mte = m_weight.T @ factor.e_mat
        etm = factor.e_mat.T @ m_weight
        n_e = factor.n_edges
        a_cl = np.zeros((n + n_e, n + n_e))
        a_cl[:n, :n] = plant.a
        a_cl[:n, n:] = -plant.b @ mte
        a_cl[n:, :n] = etm @ plant.h
        c = np.concatenate([plant.b @ u_bar + plant.d, np.zeros(n_e)])
    else:
        raise ValueError("form must be 'integral' or 'xi'")
    return a_cl, c


@dataclass(frozen=True)
class ClosedLoopRun:
    converged: bool
    t_end: float
    x_end: np.ndarray
    y_end: np.ndarray
    z_end: np.ndarray
    rate_end: float  # ||z'||_inf at the end


def simulate_closed_loop(plant: LinearPlant, comm_edges, form="integral",
                         m_weight=None, u_bar=None, h=None, chunk=25.0,
                         t_max=2000.0, rate_tol=1e-11) -> ClosedLoopRun:
    """Integrate the consensus loop until the state derivative dies out."""
    a_cl, c = closed_loop_system(plant, comm_edges, form=form,
                                 m_weight=m_weight, u_bar=u_bar)
    if h is None:
        # keep h lambda_max well inside the RK4 stability region
        h = min(0.02, 0.5 / max(1.0, np.linalg.norm(a_cl, 2)))
    z = np.zeros(a_cl.shape[0])
    t = 0.0
    n_steps = max(1, int(round(chunk / h)))
    scale = 1.0 + float(np.abs(c).max())
    while t < t_max:
        status, z_log, _ = backend.integrate_affine(a_cl, c, z, t, h, n_steps, n_steps)
        if status != 0:
            raise RuntimeError(f"closed-loop integration diverged (status {status})")
        z = z_log[-1]
        t += n_steps * h
        rate = float(np.abs(a_cl @ z + c).max())
        if rate < rate_tol * scale:
            x_end = z[: plant.n]
            return ClosedLoopRun(True, t, x_end, plant.h @ x_end, z, rate)
    x_end = z[: plant.n]
    return ClosedLoopRun(False, t, x_end, plant.h @ x_end, z,
                         float(np.abs(a_cl @ z + c).max()))


def simulate_and_compare(plant: LinearPlant, comm_edges, form="integral",
                         m_weight=None, u_bar=None, h=None) -> dict:
    """Run the loop to steady state and compare with the closed form."""
    point = consensus_value(plant, u_bar=u_bar)
    run = simulate_closed_loop(plant, comm_edges, form=form,
                               m_weight=m_weight, u_bar=u_bar, h=h)
    if not run.converged:
        raise RuntimeError(
            f"no convergence by t = {run.t_end:.1f} (||z'|| = {run.rate_end:.2e}); "
            "plant may not satisfy the certificate assumptions"
        )
    y_dev = float(np.abs(run.y_end - point.alpha).max())
    x_dev = float(np.abs(run.x_end - point.x_star).max())
    return {
        "alpha": point.alpha,
        "x_star": point.x_star,
        "y_end": run.y_end,
        "x_end": run.x_end,
        "y_deviation": y_dev,
        "x_deviation": x_dev,
        "t_end": run.t_end,
    }


def random_certified_plant(rng: np.random.Generator, n: int = None, m: int = None):
    """Random plant certified by construction: A = S - N with S skew and
    N symmetric PD, P = I, H = B^T, Q = N (then P A + A^T P = -2N <= -Q)."""
    if n is None:
        n = int(rng.integers(2, 6))
    if m is None:
        m = int(rng.integers(2, n + 1)) if n >= 2 else 2
    m = min(m, n)
    w = rng.standard_normal((n, n))
    nmat = w @ w.T + n * np.eye(n)          # eigenvalues >= n
    s = rng.standard_normal((n, n))
    s = 0.5 * (s - s.T)
    a = s - nmat
    # well-conditioned full-column-rank B via QR
    qmat, _ = np.linalg.qr(rng.standard_normal((n, m)))
    b = qmat * (1.0 + rng.random(m))
    d = rng.standard_normal(n) * 2.0
    plant = LinearPlant(a=a, b=b, h=b.T, d=d)
    return plant, np.eye(n), nmat
