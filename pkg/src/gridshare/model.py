"""Islanded DC network dynamics with constant-power loads.

State x = (phi, q, phi_t): node fluxes (Wb), node charges (C), and line
fluxes (Wb).  Stored energy is quadratic, H(x) = (|phi|^2_{L^-1} +
|q|^2_{C^-1} + |phi_t|^2_{Lt^-1}) / 2, so its Hessian is the constant
diagonal diag(1/L, 1/C, 1/Lt).  Each node feeds a ZIP-style load whose
constant-power branch draws P/V, the destabilizing nonlinearity.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "CplSingularityError",
    "GridParameters",
    "GridState",
    "Sinusoid",
    "DisturbanceProfile",
    "hamiltonian",
    "grad_hamiltonian",
    "hessian_diagonal",
    "output",
    "load_current",
    "vector_field",
    "vector_field_jacobian",
    "eval_disturbance",
    "V_GUARD_DEFAULT",
]

# Abort threshold for node voltages (V): the P/V load current blows up as
# V -> 0, far outside the intended 380 V operating region.
V_GUARD_DEFAULT = 50.0


class CplSingularityError(RuntimeError):
    """A node voltage fell below the constant-power-load guard threshold."""


def _positive_vector(name, value, size):
    v = np.asarray(value, dtype=float)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    if np.any(v <= 0):
        raise ValueError(f"{name} must be strictly positive entrywise")
    return v


def _nonnegative_vector(name, value, size):
    v = np.asarray(value, dtype=float)
    if v.shape != (size,):
        raise ValueError(f"{name} must have shape ({size},), got {v.shape}")
    if np.any(v < 0):
        raise ValueError(f"{name} must be nonnegative entrywise")
    return v


@dataclass(frozen=True)
class GridParameters:
    """Per-node filter (R, L, C), per-line (Rt, Lt), and load triple (GL, IL, PL).

    Units are SI throughout: ohm, henry, farad, siemens, ampere, watt.
    """

    r: np.ndarray
    l: np.ndarray
    c: np.ndarray
    rt: np.ndarray
    lt: np.ndarray
    gl: np.ndarray
    il: np.ndarray
    pl: np.ndarray

    def __post_init__(self):
        nu = np.asarray(self.r).size
        mu = np.asarray(self.rt).size
        object.__setattr__(self, "r", _positive_vector("r", self.r, nu))
        object.__setattr__(self, "l", _positive_vector("l", self.l, nu))
        object.__setattr__(self, "c", _positive_vector("c", self.c, nu))
        object.__setattr__(self, "rt", _positive_vector("rt", self.rt, mu))
        object.__setattr__(self, "lt", _positive_vector("lt", self.lt, mu))
        object.__setattr__(self, "gl", _nonnegative_vector("gl", self.gl, nu))
        object.__setattr__(self, "il", _nonnegative_vector("il", self.il, nu))
        object.__setattr__(self, "pl", _nonnegative_vector("pl", self.pl, nu))

    @property
    def nu(self) -> int:
        return self.r.size

    @property
    def mu(self) -> int:
        return self.rt.size

    @property
    def dim(self) -> int:
        return 2 * self.nu + self.mu


@dataclass
class GridState:
    """Stacked state (phi, q, phi_t) with voltage/current views."""

    phi: np.ndarray
    q: np.ndarray
    phit: np.ndarray

    @classmethod
    def from_vector(cls, x: np.ndarray, params: GridParameters) -> "GridState":
        nu, mu = params.nu, params.mu
        x = np.asarray(x, dtype=float)
        if x.shape != (2 * nu + mu,):
            raise ValueError(f"state must have shape ({2 * nu + mu},), got {x.shape}")
        return cls(phi=x[:nu].copy(), q=x[nu:2 * nu].copy(), phit=x[2 * nu:].copy())

    def vector(self) -> np.ndarray:
        return np.concatenate([self.phi, self.q, self.phit])

    def voltage(self, params: GridParameters) -> np.ndarray:
        return self.q / params.c

    def current(self, params: GridParameters) -> np.ndarray:
        return self.phi / params.l


@dataclass(frozen=True)
class Sinusoid:
    """Sinusoidal power-load component amp * exp(-decay*(t-onset)) * sin(freq*t),
    active for t >= onset.  decay = 0 gives a persistent oscillation."""

    node: int
    amplitude: float  # W
    frequency: float  # rad/s
    decay: float = 0.0  # 1/s
    onset: float = 0.0  # s

    def value(self, t: float) -> float:
        if t < self.onset:
            return 0.0
        return self.amplitude * math.exp(-self.decay * (t - self.onset)) * math.sin(self.frequency * t)

    def rate(self, t: float) -> float:
        if t < self.onset:
            return 0.0
        env = self.amplitude * math.exp(-self.decay * (t - self.onset))
        return env * (self.frequency * math.cos(self.frequency * t)
                      - self.decay * math.sin(self.frequency * t))


@dataclass(frozen=True)
class DisturbanceProfile:
    """Per-node load deltas: a simultaneous step plus optional P-sinusoids.

    The step applies (dgl, dil, dpl) for t >= step_time; sinusoids add to
    the power loads only.
    """

    nu: int
    step_time: float = 0.0
    dgl: np.ndarray = None
    dil: np.ndarray = None
    dpl: np.ndarray = None
    sinusoids: tuple = field(default_factory=tuple)

    def __post_init__(self):
        for name in ("dgl", "dil", "dpl"):
            v = getattr(self, name)
            v = np.zeros(self.nu) if v is None else np.asarray(v, dtype=float)
            if v.shape != (self.nu,):
                raise ValueError(f"{name} must have shape ({self.nu},)")
            object.__setattr__(self, name, v)
        for s in self.sinusoids:
            if not (0 <= s.node < self.nu):
                raise ValueError(f"sinusoid node {s.node} out of range")

    def eval(self, t: float):
        """Load-triple deltas (dGL, dIL, dPL) at time t."""
        if t >= self.step_time:
            dgl, dil, dpl = self.dgl.copy(), self.dil.copy(), self.dpl.copy()
        else:
            dgl = np.zeros(self.nu)
            dil = np.zeros(self.nu)
            dpl = np.zeros(self.nu)
        for s in self.sinusoids:
            dpl[s.node] += s.value(t)
        return dgl, dil, dpl

    def power_rate(self, t: float) -> np.ndarray:
        """dPL/dt at time t (zero a.e. for pure steps)."""
        rate = np.zeros(self.nu)
        for s in self.sinusoids:
            rate[s.node] += s.rate(t)
        return rate

    @property
    def persistent(self) -> bool:
        """True when some oscillation never decays (no constant limit loads)."""
        return any(s.decay == 0.0 and s.amplitude != 0.0 for s in self.sinusoids)

    def limit_loads(self, params: GridParameters):
        """Post-step load triple once all converging components have died out."""
        if self.persistent:
            raise ValueError("persistent oscillation: loads have no constant limit")
        return params.gl + self.dgl, params.il + self.dil, params.pl + self.dpl


def eval_disturbance(t: float, profile: DisturbanceProfile):
    """Module-level alias for DisturbanceProfile.eval."""
    return profile.eval(t)


def hamiltonian(x: np.ndarray, params: GridParameters) -> float:
    """Stored energy (J)."""
    nu, mu = params.nu, params.mu
    x = np.asarray(x, dtype=float)
    if x.shape != (2 * nu + mu,):
        raise ValueError(f"state must have shape ({2 * nu + mu},), got {x.shape}")
    phi, q, phit = x[:nu], x[nu:2 * nu], x[2 * nu:]
    return 0.5 * float(phi @ (phi / params.l) + q @ (q / params.c) + phit @ (phit / params.lt))


def hessian_diagonal(params: GridParameters) -> np.ndarray:
    """Diagonal of the (constant) energy Hessian: (1/L, 1/C, 1/Lt)."""
    return np.concatenate([1.0 / params.l, 1.0 / params.c, 1.0 / params.lt])


def grad_hamiltonian(x: np.ndarray, params: GridParameters) -> np.ndarray:
    return hessian_diagonal(params) * np.asarray(x, dtype=float)


def output(x: np.ndarray, params: GridParameters) -> np.ndarray:
    """Generated node currents y_i = phi_i / L_i (A); the consensus output."""
    return np.asarray(x, dtype=float)[: params.nu] / params.l


def load_current(v: np.ndarray, gl: np.ndarray, il: np.ndarray, pl: np.ndarray) -> np.ndarray:
    """Node load current G*V + I + P/V (A)."""
    return gl * v + il + pl / v


def _loads_at(t, params, disturbance):
    if disturbance is None:
        return params.gl, params.il, params.pl
    dgl, dil, dpl = disturbance.eval(t)
    return params.gl + dgl, params.il + dil, params.pl + dpl


def vector_field(t, x, u, params, incidence, disturbance=None, d_ext=None,
                 v_guard=V_GUARD_DEFAULT):
    """Right-hand side of the network ODE.

    phi'   = -R/L phi - q/C + u
    q'     =  phi/L + D (phit/Lt) - GL q/C - IL - PL * C/q
    phit'  = -D^T (q/C) - Rt/Lt phit

    plus an optional additive disturbance d_ext on all channels.  The
    control input enters the phi block only.
    """
    nu, mu = params.nu, params.mu
    x = np.asarray(x, dtype=float)
    u = np.asarray(u, dtype=float)
    if x.shape != (2 * nu + mu,):
        raise ValueError(f"state must have shape ({2 * nu + mu},), got {x.shape}")
    if u.shape != (nu,):
        raise ValueError(f"input must have shape ({nu},), got {u.shape}")
    phi, q, phit = x[:nu], x[nu:2 * nu], x[2 * nu:]
    v = q / params.c
    if np.any(np.abs(v) < v_guard):
        bad = int(np.argmin(np.abs(v)))
        raise CplSingularityError(
            f"node {bad} voltage {v[bad]:.3f} V below guard {v_guard:.1f} V at t={t:.6f}"
        )
    gl, il, pl = _loads_at(t, params, disturbance)
    i_gen = phi / params.l
    i_line = phit / params.lt

    dphi = -params.r * i_gen - v + u
    dq = i_gen + incidence @ i_line - gl * v - il - pl / v
    dphit = -(incidence.T @ v) - params.rt * i_line
    dx = np.concatenate([dphi, dq, dphit])
    if d_ext is not None:
        dx = dx + np.asarray(d_ext, dtype=float)
    return dx


def vector_field_jacobian(t, x, params, incidence, disturbance=None):
    """Jacobian of vector_field with respect to the state (input held fixed)."""
    nu, mu = params.nu, params.mu
    x = np.asarray(x, dtype=float)
    q = x[nu:2 * nu]
    gl, _, pl = _loads_at(t, params, disturbance)

    jac = np.zeros((2 * nu + mu, 2 * nu + mu))
    sl_phi = slice(0, nu)
    sl_q = slice(nu, 2 * nu)
    sl_t = slice(2 * nu, 2 * nu + mu)

    jac[sl_phi, sl_phi] = np.diag(-params.r / params.l)
    jac[sl_phi, sl_q] = np.diag(-1.0 / params.c)
    jac[sl_q, sl_phi] = np.diag(1.0 / params.l)
    # d/dq of (-GL q/C - PL C/q) = -GL/C + PL C/q^2
    jac[sl_q, sl_q] = np.diag(-gl / params.c + pl * params.c / q**2)
    jac[sl_q, sl_t] = incidence / params.lt
    jac[sl_t, sl_q] = -(incidence.T) / params.c
    jac[sl_t, sl_t] = np.diag(-params.rt / params.lt)
    return jac
