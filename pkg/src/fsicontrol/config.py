"""Scenario configuration: a flat, sectioned key=value file format.

Grammar (diff-friendly, line oriented):
  - comments start with '#' and run to end of line; blank lines ignored
  - '[section]' opens a section; 'key = value' assigns within it
  - rectangles are four floats 'x0 x1 y0 y1'; 'none' disables an optional item
  - unknown sections or keys are hard errors with line diagnostics

Sections: [geometry] [physics] [time] [functional] [solver] [run].
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .fem import LpsConfig
from .forms import FormFlags, PhysicsParams
from .mesh import GeometrySpec, build_scenario_mesh
from .problem import FunctionalConfig, Problem, SolverConfig, TargetSpec, ThetaScheme


class ConfigError(ValueError):
    pass


_SCHEMA = {
    "geometry": {
        "channel", "flag", "block", "notch", "control_segment", "obs", "inflow",
        "extra_x", "extra_y", "target_h", "levels", "degree",
    },
    "physics": {
        "rho_f", "nu_f", "rho_s", "mu_s", "lambda_s", "ale_coupling", "convection",
        "solid_model", "inflow_mean", "inflow_ramp",
    },
    "time": {"t_end", "k", "theta_shift", "theta"},
    "functional": {"alpha", "u_target", "u_component", "v_target"},
    "solver": {
        "newton_tol", "newton_max", "line_search_max", "reassembly_gamma",
        "gmres_tol", "gmres_max", "gmres_restart", "mg_smooth_steps", "vanka_omega",
        "richardson_tol", "richardson_max", "update_mode", "lps_delta0",
    },
    "run": {"out", "seed", "threads", "store", "figures", "report_point"},
}


def parse_config_text(text: str) -> dict:
    """Parse into {section: {key: (value_str, line_no)}} with validation."""
    out: dict = {s: {} for s in _SCHEMA}
    section = None
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section not in _SCHEMA:
                raise ConfigError(f"line {ln}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected 'key = value', got {raw!r}")
        if section is None:
            raise ConfigError(f"line {ln}: assignment outside any [section]")
        key, value = (p.strip() for p in line.split("=", 1))
        if key not in _SCHEMA[section]:
            raise ConfigError(f"line {ln}: unknown key '{key}' in [{section}]")
        if key in out[section]:
            raise ConfigError(f"line {ln}: duplicate key '{key}' in [{section}]")
        out[section][key] = (value, ln)
    return out


class _Section:
    def __init__(self, name, data):
        self.name = name
        self.data = data

    def _get(self, key, default):
        if key in self.data:
            return self.data[key][0], self.data[key][1]
        return default, None

    def _fail(self, key, ln, msg):
        where = f"line {ln}: " if ln else ""
        raise ConfigError(f"{where}[{self.name}] {key}: {msg}")

    def floatv(self, key, default=None):
        v, ln = self._get(key, default)
        try:
            return float(v)
        except (TypeError, ValueError):
            self._fail(key, ln, f"expected a number, got {v!r}")

    def intv(self, key, default=None):
        v, ln = self._get(key, default)
        try:
            return int(v)
        except (TypeError, ValueError):
            self._fail(key, ln, f"expected an integer, got {v!r}")

    def boolv(self, key, default=None):
        v, ln = self._get(key, default)
        if isinstance(v, bool):
            return v
        s = str(v).strip().lower()
        if s in ("true", "yes", "on", "1"):
            return True
        if s in ("false", "no", "off", "0"):
            return False
        self._fail(key, ln, f"expected true/false, got {v!r}")

    def strv(self, key, default=None):
        v, _ = self._get(key, default)
        return v

    def rect(self, key, default=None):
        v, ln = self._get(key, default)
        if v is None or (isinstance(v, str) and v.strip().lower() == "none"):
            return None
        if isinstance(v, tuple):
            return v
        parts = str(v).split()
        if len(parts) != 4:
            self._fail(key, ln, "expected 'x0 x1 y0 y1' or 'none'")
        try:
            return tuple(float(p) for p in parts)
        except ValueError:
            self._fail(key, ln, f"non-numeric rectangle {v!r}")

    def pair(self, key, default=None):
        v, ln = self._get(key, default)
        if v is None or (isinstance(v, str) and v.strip().lower() == "none"):
            return None
        if isinstance(v, tuple):
            return v
        parts = str(v).split()
        if len(parts) != 2:
            self._fail(key, ln, "expected 'a b' or 'none'")
        return tuple(float(p) for p in parts)

    def floats(self, key, default=()):
        v, ln = self._get(key, default)
        if isinstance(v, tuple):
            return v
        if v is None or str(v).strip().lower() in ("", "none"):
            return ()
        return tuple(float(p) for p in str(v).split())

    def target(self, key):
        """'none' | 'zero' | 'const <value>' | 'sine <amp> <freq> <t_on>'"""
        v, ln = self._get(key, "none")
        parts = str(v).split()
        kind = parts[0].lower()
        if kind == "none":
            return None
        try:
            if kind == "zero":
                return TargetSpec(kind="zero")
            if kind == "const":
                return TargetSpec(kind="const", amplitude=float(parts[1]))
            if kind == "sine":
                return TargetSpec(kind="sine", amplitude=float(parts[1]),
                                  frequency=float(parts[2]), t_on=float(parts[3]))
        except (IndexError, ValueError):
            self._fail(key, ln, f"malformed target spec {v!r}")
        self._fail(key, ln, f"unknown target kind {kind!r}")


@dataclass
class ScenarioConfig:
    """Fully parsed scenario: everything needed to build a Problem."""

    geometry: GeometrySpec
    target_h: float
    n_levels: int
    degree: int
    physics: PhysicsParams
    flags: FormFlags
    inflow_mean: float
    inflow_ramp: float
    scheme: ThetaScheme
    functional: FunctionalConfig
    solver: SolverConfig
    lps: LpsConfig
    out_dir: str = "out"
    seed: int = 0
    threads: int = 1
    store: str = "memory"
    figures: bool = True
    report_point: tuple[float, float] | None = None


def load_config(path: str) -> ScenarioConfig:
    with open(path) as f:
        return build_scenario_config(parse_config_text(f.read()))


def load_config_text(text: str) -> ScenarioConfig:
    return build_scenario_config(parse_config_text(text))


def build_scenario_config(tree: dict) -> ScenarioConfig:
    g = _Section("geometry", tree["geometry"])
    geo = GeometrySpec(
        channel=g.rect("channel", (0.0, 1.5, 0.0, 0.41)),
        flag=g.rect("flag", (0.25, 0.6, 0.19, 0.21)),
        block=g.rect("block", (0.15, 0.25, 0.15, 0.25)),
        notch=g.rect("notch", (0.2, 0.35, -0.1, 0.0)),
        control_segment=g.pair("control_segment", None),
        obs=g.rect("obs", (0.525, 0.6, 0.19, 0.21)),
        inflow=g.boolv("inflow", True),
        extra_x=g.floats("extra_x"),
        extra_y=g.floats("extra_y"),
    )
    target_h = g.floatv("target_h", 0.1)
    n_levels = g.intv("levels", 2)
    degree = g.intv("degree", 2)
    if degree not in (1, 2):
        raise ConfigError("[geometry] degree must be 1 or 2")

    p = _Section("physics", tree["physics"])
    prm = PhysicsParams(
        rho_f=p.floatv("rho_f", 1000.0),
        nu_f=p.floatv("nu_f", 1e-3),
        rho_s=p.floatv("rho_s", 1000.0),
        mu_s=p.floatv("mu_s", 0.5e6),
        lam_s=p.floatv("lambda_s", 2.0e6),
    )
    flags = FormFlags(
        ale_coupling=p.boolv("ale_coupling", True),
        convection=p.boolv("convection", True),
        solid_model=p.strv("solid_model", "stvk"),
    )
    if flags.solid_model not in ("stvk", "linear"):
        raise ConfigError("[physics] solid_model must be stvk or linear")
    inflow_mean = p.floatv("inflow_mean", 0.2)
    inflow_ramp = p.floatv("inflow_ramp", 2.0)

    t = _Section("time", tree["time"])
    t_end = t.floatv("t_end", 3.0)
    k = t.floatv("k", 0.02)
    n_steps = int(round(t_end / k))
    if abs(n_steps * k - t_end) > 1e-9 * max(1.0, t_end):
        raise ConfigError("[time] t_end must be an integer multiple of k")
    if "theta" in tree["time"]:
        theta = t.floatv("theta")
    else:
        theta = 0.5 + t.floatv("theta_shift", 2.0) * k
    scheme = ThetaScheme(k=k, n_steps=n_steps, theta=theta)

    f = _Section("functional", tree["functional"])
    comp = f.strv("u_component", "y").lower()
    if comp not in ("x", "y"):
        raise ConfigError("[functional] u_component must be x or y")
    fc = FunctionalConfig(
        alpha=f.floatv("alpha", 1e-17),
        u_target=f.target("u_target"),
        u_component=0 if comp == "x" else 1,
        v_target=f.target("v_target"),
    )

    s = _Section("solver", tree["solver"])
    solver = SolverConfig(
        newton_tol=s.floatv("newton_tol", 1e-6),
        newton_max_iter=s.intv("newton_max", 20),
        line_search_max=s.intv("line_search_max", 8),
        reassembly_gamma=s.floatv("reassembly_gamma", 0.05),
        gmres_tol=s.floatv("gmres_tol", 1e-4),
        gmres_max_iter=s.intv("gmres_max", 100),
        gmres_restart=s.intv("gmres_restart", 100),
        mg_smooth_steps=s.intv("mg_smooth_steps", 2),
        vanka_omega=s.floatv("vanka_omega", 1.0),
        richardson_tol=s.floatv("richardson_tol", 1e-6),
        richardson_max_iter=s.intv("richardson_max", 30),
        update_by_vector_addition=(s.strv("update_mode", "gmres") == "vector_addition"),
    )
    if s.strv("update_mode", "gmres") not in ("gmres", "vector_addition"):
        raise ConfigError("[solver] update_mode must be gmres or vector_addition")
    lps = LpsConfig(delta0=s.floatv("lps_delta0", 0.1))

    r = _Section("run", tree["run"])
    return ScenarioConfig(
        geometry=geo, target_h=target_h, n_levels=n_levels, degree=degree,
        physics=prm, flags=flags, inflow_mean=inflow_mean, inflow_ramp=inflow_ramp,
        scheme=scheme, functional=fc, solver=solver, lps=lps,
        out_dir=r.strv("out", "out"), seed=r.intv("seed", 0),
        threads=r.intv("threads", 1), store=r.strv("store", "memory"),
        figures=r.boolv("figures", True), report_point=r.pair("report_point", None),
    )


def make_inflow_profile(cfg: ScenarioConfig):
    if not cfg.geometry.inflow:
        return None
    y0, y1 = cfg.geometry.channel[2], cfg.geometry.channel[3]
    vbar = cfg.inflow_mean
    ramp_t = cfg.inflow_ramp

    def profile(t, y):
        ramp = 1.0 if ramp_t <= 0 or t >= ramp_t else 0.5 * (1.0 - math.cos(math.pi * t / ramp_t))
        yr = (y - y0) / (y1 - y0)
        return ramp * 6.0 * vbar * yr * (1.0 - yr)

    return profile


def build_problem(cfg: ScenarioConfig) -> Problem:
    hierarchy = build_scenario_mesh(cfg.geometry, cfg.target_h, cfg.n_levels)
    return Problem(
        hierarchy=hierarchy, degree=cfg.degree, prm=cfg.physics, flags=cfg.flags,
        scheme=cfg.scheme, functional=cfg.functional, solver=cfg.solver, lps=cfg.lps,
        inflow_profile=make_inflow_profile(cfg),
    )


def default_report_point(cfg: ScenarioConfig) -> tuple[float, float] | None:
    if cfg.report_point is not None:
        return cfg.report_point
    if cfg.geometry.obs is None or cfg.geometry.flag is None:
        return None
    ox0, ox1, _, _ = cfg.geometry.obs
    _, _, fy0, fy1 = cfg.geometry.flag
    return (0.5 * (ox0 + ox1), 0.5 * (fy0 + fy1))


# ----------------------------------------------------------------------------
# shipped presets


DESK_2D = """\
# 2d channel-flow control scenario at desk scale: rectangular obstacle with an
# elastic flag, pressure control on the bottom recess, displacement tracking
# at the flag tip.
[geometry]
channel = 0 1.5 0 0.41
flag = 0.25 0.6 0.19 0.21
block = 0.15 0.25 0.15 0.25
notch = 0.2 0.35 -0.1 0
obs = 0.525 0.6 0.19 0.21
extra_y = 0.2
inflow = true
target_h = 0.1
levels = 2
degree = 2

[physics]
rho_f = 1000
nu_f = 0.001
rho_s = 1000
mu_s = 0.5e6
lambda_s = 2.0e6
inflow_mean = 0.2
inflow_ramp = 2.0

[time]
t_end = 3.0
k = 0.02
theta_shift = 2.0

[functional]
alpha = 1e-17
u_target = sine 0.01 1.0 2.0
u_component = y

[solver]
gmres_tol = 1e-4
newton_tol = 1e-6
richardson_tol = 1e-6

[run]
out = out/desk2d
seed = 0
store = memory
figures = true
"""

TINY_2D = """\
# Tiny flag-in-a-box configuration for gradient verification: 8x4 fluid cells,
# 4x1 solid flag clamped to the left wall, control on part of the floor.
[geometry]
channel = 0 1 0 0.5
flag = 0 0.5 0.25 0.375
block = none
notch = none
control_segment = 0.25 0.75
obs = 0.25 0.5 0.25 0.375
inflow = false
target_h = 0.125
levels = 1
degree = 1

[physics]
rho_f = 1.0
nu_f = 0.1
rho_s = 1.2
mu_s = 2.0e4
lambda_s = 8.0e4
inflow_mean = 0
inflow_ramp = 0

[time]
t_end = 0.5
k = 0.05
theta_shift = 2.0

[functional]
alpha = 1e-2
u_target = sine 0.01 2.0 0.0
u_component = y

[solver]
gmres_tol = 1e-6
newton_tol = 1e-8
richardson_tol = 1e-8

[run]
out = out/tiny
seed = 0
store = memory
figures = false
"""
