"""JSON experiment configuration: defaults, overrides and object construction."""
from __future__ import annotations

import copy
import json
import math
from pathlib import Path

from .coefficients import AssumptionConstants, FeasibleSetSpec, make_family, parse_source
from .errors import ConfigError
from .full_model import SolverOptions
from .geometry import CrossSection, EpsFamily, Regime, classify_regime
from .study import MeshControls, StudyConfig, Tolerances

DEFAULTS = {
    "geometry": {
        "section": {"kind": "square", "half_width": 0.5, "radius": 0.5},
        "r_rule": "eps**(2/3)",
        "t_rule": "r**2",
        "eps_list": [0.25, 0.125, 0.0625, 0.03125],
        "eps": None,
        "mu": None,
        "nu": None,
    },
    "coefficients": {
        "family": "saturating",
        "params": {},
        "source": "4*(1-Abs(x1))",
        "assumptions": {
            "C1": 1.0,
            "C2": 0.0,
            "q1": 1.5,
            "k1_bound": 0.0,
            "C_growth": 2.0,
            "alpha_bound": 0.0,
            "eta_range": [-10.0, 10.0],
            "samples": 10000,
        },
    },
    "feasible_set": {"kind": "nonnegative", "obstacle": None},
    "mesh": {
        "n_axial": 64,
        "n_cross": 8,
        "notch_refine": 2,
        "cross_grid": "fitted",
        "n_notch_cross": None,
        "grade_to_notch": True,
        "max_dofs": 60000,
        "h_1d": 1.0 / 64,
        "n_cross_limit": 4,
        "n_notch_axial": 16,
    },
    "solver": {
        "omega": 1.5,
        "tol": 1e-10,
        "max_iter": 200000,
        "warm_start": "direct",
        "damping": 1.0,
        "tol_outer": 1e-9,
        "max_outer": 100,
    },
    "study": {
        "ball_radius": None,
        "energy_bound": 10.0,
        "decrease_slack": 0.05,
        "main_ratio": 0.5,
        "sigma0_bound": 10.0,
        "zframe_subdivisions": 12,
    },
}


def defaults():
    return copy.deepcopy(DEFAULTS)


def _merge(base, extra, prefix=""):
    for k, v in extra.items():
        key = f"{prefix}{k}"
        if k not in base:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        if isinstance(base[k], dict) and k not in ("params",):
            if not isinstance(v, dict):
                raise ConfigError(f"config key {key!r} must be an object", key=key)
            _merge(base[k], v, key + ".")
        else:
            base[k] = v


def load_config(path=None, overrides=()):
    """Defaults merged with the JSON file at ``path`` and ``key=value`` overrides."""
    cfg = defaults()
    if path is not None:
        p = Path(path)
        try:
            text = p.read_text(encoding="utf-8")
        except OSError as exc:
            raise ConfigError(f"cannot read config file {str(p)!r}: {exc.strerror}", key=str(p))
        try:
            data = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {str(p)!r} is not valid JSON: {exc}", key=str(p))
        if not isinstance(data, dict):
            raise ConfigError(f"config file {str(p)!r} must hold a JSON object", key=str(p))
        _merge(cfg, data)
    for item in overrides:
        apply_override(cfg, item)
    return cfg


def apply_override(cfg, item: str):
    if "=" not in item:
        raise ConfigError(f"override {item!r} must look like section.key=value", key=item)
    key, raw = item.split("=", 1)
    parts = key.strip().split(".")
    node = cfg
    for part in parts[:-1]:
        if not isinstance(node, dict) or part not in node:
            raise ConfigError(f"unknown config key {key!r}", key=key)
        node = node[part]
    if not isinstance(node, dict) or parts[-1] not in node:
        raise ConfigError(f"unknown config key {key!r}", key=key)
    try:
        value = json.loads(raw)
    except json.JSONDecodeError:
        value = raw
    node[parts[-1]] = value


def _wrap(key, fn):
    try:
        return fn()
    except ConfigError:
        raise
    except (ValueError, TypeError, KeyError) as exc:
        raise ConfigError(f"{key}: {exc}", key=key) from exc


def section_of(cfg):
    s = cfg["geometry"]["section"]
    return _wrap("geometry.section", lambda: CrossSection(s["kind"], s["half_width"], s["radius"]))


def family_of(cfg):
    g = cfg["geometry"]
    return _wrap(
        "geometry.eps_list",
        lambda: EpsFamily.from_expressions(g["r_rule"], g["t_rule"], g["eps_list"]),
    )


def geometry_of(cfg, eps=None):
    g = cfg["geometry"]
    eps = eps if eps is not None else g["eps"]
    if eps is None:
        eps = g["eps_list"][-1]
    fam = family_of(cfg)
    return _wrap("geometry.eps", lambda: fam.geometry(float(eps), section_of(cfg)))


def regime_of(cfg) -> Regime:
    g = cfg["geometry"]
    if g["mu"] is not None or g["nu"] is not None:
        mu = _as_float(g["mu"], "geometry.mu")
        nu = _as_float(g["nu"], "geometry.nu")
        return Regime(mu, nu)
    return classify_regime(family_of(cfg))


def _as_float(v, key):
    if v is None:
        raise ConfigError(f"{key} must be given together with its partner", key=key)
    if isinstance(v, str) and v.lower() in ("inf", "infinity"):
        return math.inf
    return _wrap(key, lambda: float(v))


def coefficients_of(cfg):
    c = cfg["coefficients"]
    src = c["source"]
    source = _wrap("coefficients.source", lambda: parse_source(str(src))) if src else None
    return _wrap(
        "coefficients.family", lambda: make_family(c["family"], source, **(c["params"] or {}))
    )


def constants_of(cfg):
    a = dict(cfg["coefficients"]["assumptions"])
    a.pop("samples", None)
    a["eta_range"] = tuple(a["eta_range"])
    return _wrap("coefficients.assumptions", lambda: AssumptionConstants(**a))


def feasible_of(cfg):
    f = cfg["feasible_set"]
    obstacle = None
    if f["obstacle"] is not None:
        obstacle = _wrap("feasible_set.obstacle", lambda: parse_source(str(f["obstacle"])))
    return _wrap("feasible_set.kind", lambda: FeasibleSetSpec(f["kind"], obstacle))


def solver_of(cfg):
    return _wrap("solver", lambda: SolverOptions(**cfg["solver"]))


def mesh_controls_of(cfg):
    return _wrap("mesh", lambda: MeshControls(**cfg["mesh"]))


def study_config_of(cfg, threads=1):
    s = cfg["study"]
    tol = _wrap(
        "study",
        lambda: Tolerances(s["energy_bound"], s["decrease_slack"], s["main_ratio"], s["sigma0_bound"]),
    )
    return StudyConfig(
        family=family_of(cfg),
        cset=coefficients_of(cfg),
        feas=feasible_of(cfg),
        consts=constants_of(cfg),
        mesh=mesh_controls_of(cfg),
        ball_radius=s["ball_radius"],
        tolerances=tol,
        solver=solver_of(cfg),
        section=section_of(cfg),
        threads=threads,
        zframe_subdivisions=int(s["zframe_subdivisions"]),
    )
