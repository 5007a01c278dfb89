"""Run configuration: scenario presets, YAML parsing, flag overrides.

Built-in scenarios target a 4-node ring microgrid with a 3-edge
communication path.  All numeric defaults live here and every one of
them can be overridden from the config file; power values in the file
are kilowatts and get converted to SI on load.
"""

from __future__ import annotations

import os
from dataclasses import dataclass, field, replace

import numpy as np
import yaml

from .controllers import ControllerSpec, Variant
from .graph import Topology
from .model import DisturbanceProfile, GridParameters, Sinusoid, V_GUARD_DEFAULT
from .simulation import RunContext

__all__ = ["RunConfig", "ConfigError", "load_config", "scenario_description",
           "DEFAULT_GRID", "DEFAULT_LOADS"]


class ConfigError(ValueError):
    """Configuration file or override rejected (message carries the key path)."""


# 4-node ring; lines oriented as drawn, communication along a path.
DEFAULT_TOPOLOGY = {
    "nodes": 4,
    "phys_edges": [(0, 1), (1, 2), (2, 3), (0, 3)],
    "comm_edges": [(0, 1), (1, 2), (2, 3)],
}

# Filter/line values: representative low-voltage DC hardware of the same
# order as the published converter test systems; override freely.
DEFAULT_GRID = {
    "r_filter_ohm": [0.2, 0.2, 0.2, 0.2],
    "l_filter_h": [1.8e-3, 1.8e-3, 1.8e-3, 1.8e-3],
    "c_filter_f": [2.2e-3, 2.2e-3, 2.2e-3, 2.2e-3],
    "r_line_ohm": [0.070, 0.050, 0.080, 0.060],
    "l_line_h": [2.1e-6, 2.3e-6, 2.0e-6, 1.8e-6],
}

DEFAULT_LOADS = {
    "power_kw": [1.0, 2.5, 1.5, 5.0],
    "conductance_s": [0.08, 0.04, 0.02, 0.08],
    "current_a": [12.5, 7.5, 5.0, 15.0],
    "power_step_kw": [4.0, 1.0, 1.0, -4.0],
    "conductance_step_s": [0.0, 0.0, 0.0, 0.0],
    "current_step_a": [0.0, 0.0, 0.0, 0.0],
    "step_time_s": 5.0,
}

DEFAULT_CONTROLLER = {
    "variant": "shifted_xi",
    "m_diag": [100.0, 100.0, 100.0, 100.0],
    "k_gain": 0.2,
    "g_damping": 1.0,
    "u_bar": "voltage",
    "v_ref": 380.0,
}

DEFAULT_INTEGRATOR = {"dt": 1.0e-5, "t_end": 15.0}

# scenario id -> (controller variant, node-3 power sinusoid)
SCENARIO_PRESETS = {
    1: {"variant": "shifted_xi", "sinusoid": None},
    2: {"variant": "shifted_xi",
        "sinusoid": {"node": 2, "amplitude_kw": 0.1, "decay": 0.25,
                     "frequency": 4.0, "onset_s": 5.0}},
    # g_damping: the damped law feeds -M^T E G E^T M y back proportionally;
    # with M = 100 I the default G = I would put the fastest closed-loop
    # eigenvalue (~1.9e7 1/s) far outside RK4 stability at the 10 us step,
    # so the preset picks a G that keeps h*lambda below 1.
    3: {"variant": "shifted_xi_damped", "g_damping": 0.005,
        "sinusoid": {"node": 2, "amplitude_kw": 0.1, "decay": 0.0,
                     "frequency": 4.0, "onset_s": 5.0}},
    4: {"variant": "krasovskii_extended", "sinusoid": None,
        "m_diag": [100.0, 100.0, 80.0, 100.0]},
}


def scenario_description(scenario) -> str:
    return {
        1: "current sharing with constant loads (power step at 5 s)",
        2: "current sharing with a converging load oscillation at node 3",
        3: "current sharing with a persistent load oscillation at node 3",
        4: "weighted current sharing (node 3 runs 25% above the others)",
        "custom": "user-defined configuration",
    }[scenario]


@dataclass(frozen=True)
class RunConfig:
    scenario: object
    topology: Topology
    params: GridParameters
    spec: ControllerSpec
    profile: DisturbanceProfile
    dt: float = 1.0e-5
    t_end: float = 15.0
    out_dir: str = "out"
    downsample: object = "auto"
    max_log_rows: int = 20001
    cert_krasovskii: bool = True
    cert_shifted: bool = True
    cert_gamma: bool = True
    v_guard: float = V_GUARD_DEFAULT
    strict: bool = False

    def __post_init__(self):
        if self.dt <= 0:
            raise ConfigError("integrator.dt must be positive")
        if self.t_end <= self.dt:
            raise ConfigError("integrator.t_end must exceed one step")

    def context(self) -> RunContext:
        return RunContext.build(self.params, self.topology, self.spec,
                                profile=self.profile, v_guard=self.v_guard)

    def stride(self):
        if self.downsample in ("auto", None):
            return None  # simulate_closed_loop_grid picks from max_log_rows
        s = int(self.downsample)
        if s < 1:
            raise ConfigError("output.downsample must be >= 1")
        return s

    def certificates_enabled(self) -> bool:
        return self.cert_krasovskii or self.cert_shifted or self.cert_gamma

    def resolved_dict(self) -> dict:
        """Round-trippable snapshot of everything the run used."""
        spec = self.spec
        prof = self.profile
        return {
            "scenario": self.scenario,
            "topology": {
                "nodes": self.topology.nu,
                "phys_edges": [list(e) for e in self.topology.phys_edges],
                "comm_edges": [list(e) for e in self.topology.comm_edges],
            },
            "grid": {
                "r_filter_ohm": self.params.r.tolist(),
                "l_filter_h": self.params.l.tolist(),
                "c_filter_f": self.params.c.tolist(),
                "r_line_ohm": self.params.rt.tolist(),
                "l_line_h": self.params.lt.tolist(),
            },
            "loads": {
                "power_kw": (self.params.pl / 1e3).tolist(),
                "conductance_s": self.params.gl.tolist(),
                "current_a": self.params.il.tolist(),
                "power_step_kw": (prof.dpl / 1e3).tolist(),
                "conductance_step_s": prof.dgl.tolist(),
                "current_step_a": prof.dil.tolist(),
                "step_time_s": float(prof.step_time),
                "sinusoids": [
                    {"node": s.node, "amplitude_kw": s.amplitude / 1e3,
                     "decay": s.decay, "frequency": s.frequency,
                     "onset_s": s.onset}
                    for s in prof.sinusoids
                ],
            },
            "controller": {
                "variant": spec.variant.value,
                "m_weight": spec.m_weight.tolist(),
                "k_gain": spec.k_gain.tolist() if spec.k_gain is not None else None,
                "g_damping": spec.g_damping.tolist() if spec.g_damping is not None else None,
                "u_bar": spec.u_bar_mode,
                "u_bar_const": spec.u_bar_const.tolist() if spec.u_bar_const is not None else None,
                "v_ref": spec.v_ref,
                "consensus_subset": list(spec.consensus_subset) if spec.consensus_subset else None,
            },
            "integrator": {"dt": self.dt, "t_end": self.t_end},
            "output": {"directory": self.out_dir, "downsample": self.downsample,
                       "max_log_rows": self.max_log_rows},
            "certificates": {"krasovskii": self.cert_krasovskii,
                             "shifted": self.cert_shifted,
                             "gamma": self.cert_gamma},
            "v_guard": self.v_guard,
        }


_KNOWN_SECTIONS = {"scenario", "topology", "grid", "loads", "controller",
                   "integrator", "output", "certificates", "v_guard"}
_KNOWN_KEYS = {
    "topology": {"nodes", "phys_edges", "comm_edges"},
    "grid": set(DEFAULT_GRID),
    "loads": set(DEFAULT_LOADS) | {"sinusoids"},
    "controller": {"variant", "m_diag", "m_weight", "k_gain", "g_damping",
                   "u_bar", "u_bar_const", "v_ref", "consensus_subset"},
    "integrator": {"dt", "t_end"},
    "output": {"directory", "downsample", "max_log_rows"},
    "certificates": {"krasovskii", "shifted", "gamma"},
}


def _reject_unknown(data: dict, strict: bool):
    if not strict:
        return
    for key in data:
        if key not in _KNOWN_SECTIONS:
            raise ConfigError(f"unknown top-level key {key!r}")
    for section, known in _KNOWN_KEYS.items():
        sub = data.get(section) or {}
        if not isinstance(sub, dict):
            continue
        for key in sub:
            if key not in known:
                raise ConfigError(f"unknown key {section}.{key!r}")


def _vector(section, key, raw, size, positive=False):
    try:
        v = np.asarray(raw, dtype=float)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"{section}.{key}: not numeric ({exc})") from exc
    if v.ndim == 0:
        v = np.full(size, float(v))
    if v.shape != (size,):
        raise ConfigError(f"{section}.{key}: expected {size} values, got {v.shape}")
    if positive and np.any(v <= 0):
        raise ConfigError(f"{section}.{key}: entries must be positive")
    return v


def load_config(path=None, scenario=None, overrides=None, strict=False) -> RunConfig:
    """Resolve a RunConfig from (optional) YAML file + (optional) overrides.

    Precedence: scenario preset < YAML file < overrides dict.  The
    overrides dict uses the same nesting as the file (e.g.
    {"integrator": {"dt": 2e-5}}).
    """
    data = {}
    if path is not None:
        try:
            with open(path) as fh:
                data = yaml.safe_load(fh) or {}
        except yaml.YAMLError as exc:
            raise ConfigError(f"{path}: invalid YAML ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"{path}: top level must be a mapping")
    if overrides:
        data = _merge(data, overrides)

    scenario = data.get("scenario", scenario)
    if scenario is None:
        scenario = 1
    if scenario != "custom":
        try:
            scenario = int(scenario)
        except (TypeError, ValueError):
            raise ConfigError(f"scenario must be 1-4 or 'custom', got {scenario!r}")
        if scenario not in SCENARIO_PRESETS:
            raise ConfigError(f"scenario must be 1-4 or 'custom', got {scenario}")
    _reject_unknown(data, strict)

    top = {**DEFAULT_TOPOLOGY, **(data.get("topology") or {})}
    nu = int(top["nodes"])
    topology = Topology(nu=nu, phys_edges=top["phys_edges"],
                        comm_edges=top["comm_edges"])

    grid = {**DEFAULT_GRID, **(data.get("grid") or {})}
    loads = {**DEFAULT_LOADS, **(data.get("loads") or {})}
    mu = topology.mu
    params = GridParameters(
        r=_vector("grid", "r_filter_ohm", grid["r_filter_ohm"], nu, positive=True),
        l=_vector("grid", "l_filter_h", grid["l_filter_h"], nu, positive=True),
        c=_vector("grid", "c_filter_f", grid["c_filter_f"], nu, positive=True),
        rt=_vector("grid", "r_line_ohm", grid["r_line_ohm"], mu, positive=True),
        lt=_vector("grid", "l_line_h", grid["l_line_h"], mu, positive=True),
        gl=_vector("loads", "conductance_s", loads["conductance_s"], nu),
        il=_vector("loads", "current_a", loads["current_a"], nu),
        pl=_vector("loads", "power_kw", loads["power_kw"], nu) * 1e3,
    )

    preset = SCENARIO_PRESETS.get(scenario, {})
    sinusoids = []
    preset_sin = preset.get("sinusoid")
    raw_sins = loads.get("sinusoids")
    if raw_sins is None:
        raw_sins = [preset_sin] if preset_sin else []
    for s in raw_sins:
        try:
            sinusoids.append(Sinusoid(
                node=int(s["node"]),
                amplitude=float(s.get("amplitude_kw", 0.0)) * 1e3,
                frequency=float(s["frequency"]),
                decay=float(s.get("decay", 0.0)),
                onset=float(s.get("onset_s", 0.0)),
            ))
        except (KeyError, TypeError, ValueError) as exc:
            raise ConfigError(f"loads.sinusoids: bad entry {s!r} ({exc})") from exc
    profile = DisturbanceProfile(
        nu=nu,
        step_time=float(loads["step_time_s"]),
        dgl=_vector("loads", "conductance_step_s", loads["conductance_step_s"], nu),
        dil=_vector("loads", "current_step_a", loads["current_step_a"], nu),
        dpl=_vector("loads", "power_step_kw", loads["power_step_kw"], nu) * 1e3,
        sinusoids=tuple(sinusoids),
    )

    ctl = {**DEFAULT_CONTROLLER, **(data.get("controller") or {})}
    given = data.get("controller") or {}
    for key in ("m_diag", "variant", "g_damping"):
        if key not in given and key in preset:
            ctl[key] = preset[key]
    if ctl.get("m_weight") is not None:
        m = np.asarray(ctl["m_weight"], dtype=float)
        if m.shape != (nu, nu):
            raise ConfigError(f"controller.m_weight must be {nu}x{nu}")
    else:
        m = np.diag(_vector("controller", "m_diag", ctl["m_diag"], nu))
    try:
        variant = Variant(ctl["variant"])
    except ValueError:
        raise ConfigError(
            f"controller.variant must be one of "
            f"{[v.value for v in Variant]}, got {ctl['variant']!r}")
    u_bar_const = ctl.get("u_bar_const")
    k_raw = np.asarray(ctl["k_gain"], dtype=float)
    k_gain = k_raw if k_raw.ndim == 2 \
        else np.diag(_vector("controller", "k_gain", ctl["k_gain"], nu))
    try:
        spec = ControllerSpec(
            variant=variant,
            m_weight=m,
            k_gain=k_gain,
            g_damping=np.asarray(ctl["g_damping"], dtype=float),
            u_bar_mode=ctl["u_bar"],
            u_bar_const=None if u_bar_const is None
            else _vector("controller", "u_bar_const", u_bar_const, nu),
            v_ref=float(ctl["v_ref"]),
            consensus_subset=ctl.get("consensus_subset"),
        )
    except ValueError as exc:
        raise ConfigError(f"controller: {exc}") from exc

    integ = {**DEFAULT_INTEGRATOR, **(data.get("integrator") or {})}
    out = data.get("output") or {}
    certs = data.get("certificates") or {}
    out_dir = os.environ.get("GRIDSHARE_OUT", out.get("directory", "out"))
    try:
        return RunConfig(
            scenario=scenario,
            topology=topology,
            params=params,
            spec=spec,
            profile=profile,
            dt=float(integ["dt"]),
            t_end=float(integ["t_end"]),
            out_dir=out_dir,
            downsample=out.get("downsample", "auto"),
            max_log_rows=int(out.get("max_log_rows", 20001)),
            cert_krasovskii=bool(certs.get("krasovskii", True)),
            cert_shifted=bool(certs.get("shifted", True)),
            cert_gamma=bool(certs.get("gamma", True)),
            v_guard=float(data.get("v_guard", V_GUARD_DEFAULT)),
            strict=strict,
        )
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def _merge(base: dict, extra: dict) -> dict:
    out = dict(base)
    for key, val in extra.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        elif val is not None:
            out[key] = val
    return out
