"""Distributed output-consensus controller laws.

Six interchangeable variants, all driven by the current output y and
coupled through the communication graph:

  integral_laplacian          u' = -M^T L M y                  (state u)
  krasovskii_weighted         u' = -M^T L M y                  (state u)
  krasovskii_extended         rho' = -rho + y
                              u'   = -M^T L M y + K (rho - y)  (state u, rho)
  shifted_xi                  xi' = E^T M y,  u = -M^T E xi    (state xi)
  shifted_xi_damped           xi' = E^T M y,
                              u = -M^T E (xi + G E^T M y)      (state xi)
  shifted_xi_damped_filtered  adds rho' = -(rho - y) and -K rho (state xi, rho)

integral_laplacian and krasovskii_weighted share one law; the former is
kept as the plain unweighted entry point (M defaults to identity there).
An optional feedforward u_bar is added to every variant's output: either
a constant vector, or the voltage-regulating feedback Vref + R*y that
pins the steady-state voltage average at Vref.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field

import numpy as np

from . import graph as graph_mod
from .model import GridParameters

__all__ = [
    "Variant",
    "ControllerSpec",
    "ControllerState",
    "ConsensusOperators",
    "build_operators",
    "u_bar",
    "controller_output",
    "controller_derivative",
    "input_derivative",
    "initial_state",
    "state_size",
    "pack_state",
    "unpack_state",
    "equivalence_check",
]


class Variant(enum.Enum):
    INTEGRAL_LAPLACIAN = "integral_laplacian"
    KRASOVSKII_WEIGHTED = "krasovskii_weighted"
    KRASOVSKII_EXTENDED = "krasovskii_extended"
    SHIFTED_XI = "shifted_xi"
    SHIFTED_XI_DAMPED = "shifted_xi_damped"
    SHIFTED_XI_DAMPED_FILTERED = "shifted_xi_damped_filtered"

    @property
    def kernel_id(self) -> int:
        return _KERNEL_IDS[self]

    @property
    def uses_xi(self) -> bool:
        return self in (Variant.SHIFTED_XI, Variant.SHIFTED_XI_DAMPED,
                        Variant.SHIFTED_XI_DAMPED_FILTERED)

    @property
    def uses_rho(self) -> bool:
        return self in (Variant.KRASOVSKII_EXTENDED, Variant.SHIFTED_XI_DAMPED_FILTERED)

    @property
    def uses_u(self) -> bool:
        return not self.uses_xi


_KERNEL_IDS = {
    Variant.INTEGRAL_LAPLACIAN: 0,
    Variant.KRASOVSKII_WEIGHTED: 1,
    Variant.KRASOVSKII_EXTENDED: 2,
    Variant.SHIFTED_XI: 3,
    Variant.SHIFTED_XI_DAMPED: 4,
    Variant.SHIFTED_XI_DAMPED_FILTERED: 5,
}

U_BAR_MODES = ("none", "constant", "voltage")


@dataclass(frozen=True)
class ControllerSpec:
    """Controller law selection plus gains.

    m_weight may be singular (a zero row drops that output from the
    consensus coupling).  k_gain and g_damping must be positive definite
    where the variant uses them.  consensus_subset restricts the coupling
    to the listed nodes; the communication edges must then connect
    exactly that subset.
    """

    variant: Variant
    m_weight: np.ndarray
    k_gain: np.ndarray = None
    g_damping: np.ndarray = None
    u_bar_mode: str = "none"
    u_bar_const: np.ndarray = None
    v_ref: float = 380.0
    consensus_subset: tuple = None

    def __post_init__(self):
        if isinstance(self.variant, str):
            object.__setattr__(self, "variant", Variant(self.variant))
        m = np.atleast_2d(np.asarray(self.m_weight, dtype=float))
        if m.shape[0] != m.shape[1]:
            raise ValueError("m_weight must be square")
        object.__setattr__(self, "m_weight", m)
        if self.u_bar_mode not in U_BAR_MODES:
            raise ValueError(f"u_bar_mode must be one of {U_BAR_MODES}")
        nu = m.shape[0]
        if self.k_gain is not None:
            k = np.asarray(self.k_gain, dtype=float)
            k = np.diag(np.full(nu, float(k))) if k.ndim == 0 else np.atleast_2d(k)
            _require_pd("k_gain", k)
            object.__setattr__(self, "k_gain", k)
        if self.g_damping is not None:
            g = np.asarray(self.g_damping, dtype=float)
            if g.ndim == 0:
                g = float(g) * np.eye(1)  # resized against N in build_operators
            object.__setattr__(self, "g_damping", np.atleast_2d(g))
        if self.u_bar_const is not None:
            object.__setattr__(self, "u_bar_const", np.asarray(self.u_bar_const, dtype=float))
        if self.u_bar_mode == "constant" and self.u_bar_const is None:
            raise ValueError("u_bar_mode 'constant' needs u_bar_const")
        if self.consensus_subset is not None:
            sub = tuple(int(i) for i in self.consensus_subset)
            if len(set(sub)) != len(sub):
                raise ValueError("consensus_subset has repeated indices")
            if any(i < 0 or i >= nu for i in sub):
                raise ValueError("consensus_subset index out of range")
            object.__setattr__(self, "consensus_subset", sub)
        if self.variant.uses_rho and self.k_gain is None:
            raise ValueError(f"{self.variant.value} needs k_gain")

    @property
    def nu(self) -> int:
        return self.m_weight.shape[0]


def _require_pd(name, mat):
    mat = np.atleast_2d(mat)
    if not np.allclose(mat, mat.T, atol=1e-12):
        raise ValueError(f"{name} must be symmetric")
    if np.linalg.eigvalsh(mat)[0] <= 0:
        raise ValueError(f"{name} must be positive definite")


@dataclass(frozen=True)
class ConsensusOperators:
    """Communication matrices with objects the laws actually apply:
    mlm = M^T L M, mte = M^T E, etm = E^T M."""

    l_mat: np.ndarray
    e_mat: np.ndarray
    mlm: np.ndarray
    mte: np.ndarray
    etm: np.ndarray
    g_damping: np.ndarray = None

    @property
    def n_edges(self) -> int:
        return self.e_mat.shape[1]


def build_operators(spec: ControllerSpec, comm_edges, nu: int = None,
                    weights=None) -> ConsensusOperators:
    """Assemble the coupling matrices for a controller over a comm graph."""
    nu = spec.nu if nu is None else nu
    if nu != spec.nu:
        raise ValueError("m_weight dimension does not match node count")
    factor = graph_mod.factor_laplacian(comm_edges, nu, weights=weights,
                                        subset=spec.consensus_subset)
    m = spec.m_weight
    n = factor.n_edges
    g = spec.g_damping
    if g is not None:
        if g.shape == (1, 1):
            g = float(g[0, 0]) * np.eye(n)
        if g.shape != (n, n):
            raise ValueError(f"g_damping must be {n}x{n}")
        _require_pd("g_damping", g)
    elif spec.variant in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        raise ValueError(f"{spec.variant.value} needs g_damping")
    return ConsensusOperators(
        l_mat=factor.l_mat,
        e_mat=factor.e_mat,
        mlm=m.T @ factor.l_mat @ m,
        mte=m.T @ factor.e_mat,
        etm=factor.e_mat.T @ m,
        g_damping=g,
    )


@dataclass
class ControllerState:
    """Internal state; only the fields used by the active variant are live."""

    u: np.ndarray = None
    xi: np.ndarray = None
    rho: np.ndarray = None

    def copy(self) -> "ControllerState":
        return ControllerState(
            u=None if self.u is None else self.u.copy(),
            xi=None if self.xi is None else self.xi.copy(),
            rho=None if self.rho is None else self.rho.copy(),
        )


def initial_state(spec: ControllerSpec, ops: ConsensusOperators) -> ControllerState:
    """All-zero controller state (the default initialization)."""
    nu, n = spec.nu, ops.n_edges
    v = spec.variant
    return ControllerState(
        u=np.zeros(nu) if v.uses_u else None,
        xi=np.zeros(n) if v.uses_xi else None,
        rho=np.zeros(nu) if v.uses_rho else None,
    )


def state_size(spec: ControllerSpec, ops: ConsensusOperators) -> int:
    v = spec.variant
    base = ops.n_edges if v.uses_xi else spec.nu
    return base + (spec.nu if v.uses_rho else 0)


def pack_state(spec: ControllerSpec, state: ControllerState) -> np.ndarray:
    parts = []
    if spec.variant.uses_xi:
        parts.append(state.xi)
    else:
        parts.append(state.u)
    if spec.variant.uses_rho:
        parts.append(state.rho)
    return np.concatenate(parts)


def unpack_state(spec: ControllerSpec, ops: ConsensusOperators, w: np.ndarray) -> ControllerState:
    w = np.asarray(w, dtype=float)
    v = spec.variant
    base = ops.n_edges if v.uses_xi else spec.nu
    head, tail = w[:base], w[base:]
    return ControllerState(
        u=None if v.uses_xi else head.copy(),
        xi=head.copy() if v.uses_xi else None,
        rho=tail.copy() if v.uses_rho else None,
    )


def u_bar(spec: ControllerSpec, y: np.ndarray, params: GridParameters) -> np.ndarray:
    """Feedforward term added to the controller output.

    Voltage-regulating mode: Vref + R*y, i.e. the reference voltage plus
    the filter resistance drop reconstructed from the measured current.
    """
    if spec.u_bar_mode == "none":
        return np.zeros(spec.nu)
    if spec.u_bar_mode == "constant":
        return spec.u_bar_const
    return spec.v_ref + params.r * y


def controller_output(spec: ControllerSpec, ops: ConsensusOperators,
                      state: ControllerState, y: np.ndarray,
                      params: GridParameters) -> np.ndarray:
    """Plant input produced by the active variant (feedforward included)."""
    v = spec.variant
    if v.uses_u:
        u = state.u.copy()
    elif v is Variant.SHIFTED_XI:
        u = -(ops.mte @ state.xi)
    else:
        u = -(ops.mte @ (state.xi + ops.g_damping @ (ops.etm @ y)))
        if v is Variant.SHIFTED_XI_DAMPED_FILTERED:
            u -= spec.k_gain @ state.rho
    return u + u_bar(spec, y, params)


def controller_derivative(spec: ControllerSpec, ops: ConsensusOperators,
                          state: ControllerState, y: np.ndarray) -> ControllerState:
    """Time derivative of the controller state."""
    v = spec.variant
    du = dxi = drho = None
    if v.uses_xi:
        dxi = ops.etm @ y
    else:
        du = -(ops.mlm @ y)
        if v is Variant.KRASOVSKII_EXTENDED:
            du = du + spec.k_gain @ (state.rho - y)
    if v.uses_rho:
        drho = y - state.rho
    return ControllerState(u=du, xi=dxi, rho=drho)


def input_derivative(spec: ControllerSpec, ops: ConsensusOperators,
                     state: ControllerState, y: np.ndarray, ydot: np.ndarray,
                     params: GridParameters) -> np.ndarray:
    """Time derivative of the total plant input (used by the certificate
    checks, which need d/dt of the supplied u along a trajectory)."""
    v = spec.variant
    du = -(ops.mlm @ y)
    if v is Variant.KRASOVSKII_EXTENDED:
        du = du + spec.k_gain @ (state.rho - y)
    elif v in (Variant.SHIFTED_XI_DAMPED, Variant.SHIFTED_XI_DAMPED_FILTERED):
        du = du - ops.mte @ (ops.g_damping @ (ops.etm @ ydot))
        if v is Variant.SHIFTED_XI_DAMPED_FILTERED:
            du = du - spec.k_gain @ (y - state.rho)
    if spec.u_bar_mode == "voltage":
        du = du + params.r * ydot
    return du


def equivalence_check(a_mat, b_mat, h_mat, d, comm_edges, m_weight=None,
                      horizon: float = 1.0, h: float = 1e-4):
    """Integrate a linear plant under the integral-Laplacian and the
    xi-factor forms of the consensus law and return their max input gap.

    The two closed loops are algebraically identical when u(0) = -M^T E xi(0);
    both start from zero here.  Uses the shared fixed-step integrator on the
    stacked affine systems.
    """
    from ._core import backend

    a_mat = np.asarray(a_mat, dtype=float)
    b_mat = np.asarray(b_mat, dtype=float)
    h_mat = np.asarray(h_mat, dtype=float)
    d = np.asarray(d, dtype=float)
    n, m = b_mat.shape
    if m_weight is None:
        m_weight = np.eye(m)
    factor = graph_mod.factor_laplacian(comm_edges, m)
    mlm = m_weight.T @ factor.l_mat @ m_weight
    mte = m_weight.T @ factor.e_mat
    etm = factor.e_mat.T @ m_weight
    n_e = factor.n_edges

    # integral form: z = (x, u)
    a1 = np.zeros((n + m, n + m))
    a1[:n, :n] = a_mat
    a1[:n, n:] = b_mat
    a1[n:, :n] = -mlm @ h_mat
    c1 = np.concatenate([d, np.zeros(m)])
    # xi form: z = (x, xi)
    a2 = np.zeros((n + n_e, n + n_e))
    a2[:n, :n] = a_mat
    a2[:n, n:] = -b_mat @ mte
    a2[n:, :n] = etm @ h_mat
    c2 = np.concatenate([d, np.zeros(n_e)])

    n_steps = int(round(horizon / h))
    _, log1, _ = backend.integrate_affine(a1, c1, np.zeros(n + m), 0.0, h, n_steps, 1)
    _, log2, _ = backend.integrate_affine(a2, c2, np.zeros(n + n_e), 0.0, h, n_steps, 1)
    u1 = log1[:, n:]
    u2 = -(log2[:, n:] @ mte.T)
    return float(np.abs(u1 - u2).max())
